//! `nsch-homog`: cell problems, micro and macro runs, epsilon studies and
//! unfolding diagnostics from a TOML configuration.

mod config;

use clap::{Parser, Subcommand};
use config::{ConfigError, RunConfig};
use nsch_homog::cell_problems::{check_tensors, effective_tensors, EffectiveTensors};
use nsch_homog::dynamics::{EnergyTrace, FlowState};
use nsch_homog::fields::{Grid, ScalarField, VectorField};
use nsch_homog::geometry::{porosity, FaceLabel};
use nsch_homog::macro_solver::{MacroParams, MacroSolver};
use nsch_homog::micro::{MicroParams, MicroSolver};
use nsch_homog::snapshot::{decode_raw, encode_raw, scalar_snapshot, vector_snapshot, write_vtk, SnapshotHeader};
use nsch_homog::unfolding::{extend, run_study, unfold, StudySpec};
use nsch_homog::{Error, VERSION};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nsch-homog", version, about = "Two-phase flow in perforated domains and its homogenized limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for initial data and coercivity sampling (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Solve the cell problems and report the effective tensors.
    Cell,
    /// Run the perforated-domain solver.
    Micro,
    /// Run the homogenized solver.
    Macro,
    /// Epsilon-convergence study.
    Study,
    /// Unfold a scalar field and check integral and isometry.
    Unfold,
    /// Dump the voxel geometry.
    Geometry,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Cell => "cell",
            Self::Micro => "micro",
            Self::Macro => "macro",
            Self::Study => "study",
            Self::Unfold => "unfold",
            Self::Geometry => "geometry",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("gate failed: {0}")]
    Gate(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Solver(_) => 1,
            Self::Config(_) => 2,
            Self::Gate(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Unsupported(_) => Self::Config(e.to_string()),
            _ => Self::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Solver(format!("i/o: {e}"))
    }
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    threads: Option<usize>,
    command: Command,
}

impl Ctx {
    /// Writes `bytes` to `out/name` through a temporary file and a rename.
    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.out.join(name);
        let dir = path.parent().unwrap_or(&self.out);
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Solver(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn report(&self, name: &str, pass: bool, result: Value) -> Result<(), Failure> {
        let env = json!({
            "version": VERSION,
            "config_hash": self.hash,
            "command": self.command.name(),
            "seed": self.cfg.seed,
            "threads": self.threads,
            "pass": pass,
            "result": result,
        });
        self.write_json(name, &env)
    }

    fn raw(&self, stem: &str, header: &SnapshotHeader, values: &[f64]) -> Result<(), Failure> {
        self.write(&format!("{stem}.raw"), &encode_raw(values))?;
        self.write_json(&format!("{stem}.json"), header)
    }

    fn scalar(&self, stem: &str, f: &ScalarField, eps: Option<f64>) -> Result<(), Failure> {
        let (h, v) = scalar_snapshot(f, eps);
        self.raw(stem, &h, &v)
    }

    fn vector(&self, stem: &str, u: &VectorField, eps: Option<f64>) -> Result<(), Failure> {
        let (h, v) = vector_snapshot(u, eps);
        self.raw(stem, &h, &v)
    }

    fn state(&self, prefix: &str, step: usize, st: &FlowState, eps: Option<f64>) -> Result<(), Failure> {
        let stem = format!("snapshots/{prefix}_{step:06}");
        self.scalar(&format!("{stem}_phi"), &st.phi, eps)?;
        self.scalar(&format!("{stem}_mu"), &st.mu, eps)?;
        self.scalar(&format!("{stem}_p"), &st.p, eps)?;
        self.vector(&format!("{stem}_u"), &st.u, eps)?;
        if self.cfg.numerics.vtk {
            let mut buf = Vec::new();
            write_vtk(&mut buf, st, &format!("{prefix} step {step} t {:e}", st.t))?;
            self.write(&format!("{stem}.vtk"), &buf)?;
        }
        Ok(())
    }

    fn trace(&self, name: &str, trace: &EnergyTrace) -> Result<(), Failure> {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        self.write(name, &buf)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("nsch-homog {}: {f}", cli.command.name());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate_geometry(cli.command == Command::Geometry)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Solver(format!("thread pool: {e}")))?;
    }
    let out = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx { hash: cfg.hash(), cfg, out, threads: cli.threads, command: cli.command };
    let (pass, what) = match cli.command {
        Command::Cell => cmd_cell(&ctx)?,
        Command::Micro => cmd_micro(&ctx)?,
        Command::Macro => cmd_macro(&ctx)?,
        Command::Study => cmd_study(&ctx)?,
        Command::Unfold => cmd_unfold(&ctx)?,
        Command::Geometry => cmd_geometry(&ctx)?,
    };
    if pass {
        Ok(())
    } else {
        Err(Failure::Gate(what))
    }
}

fn cmd_cell(ctx: &Ctx) -> Result<(bool, String), Failure> {
    let cfg = &ctx.cfg;
    let cell = cfg.cell()?;
    let model = cfg.physics.viscosity.model();
    let (t, set) = effective_tensors(&cell, &model, 0.0, &cfg.numerics.cell_options())?;
    let n = &cfg.numerics;
    let checks = check_tensors(&t, n.coercivity_samples, cfg.seed);
    let pass = checks.pass(n.bc_tol, n.flux_tol, n.sym_tol);
    if n.write_correctors {
        for (i, f) in set.chi2.iter().enumerate() {
            ctx.scalar(&format!("correctors/chi2_{i}"), f, None)?;
        }
        for (i, f) in set.chi3.iter().enumerate() {
            ctx.scalar(&format!("correctors/chi3_{i}"), f, None)?;
        }
        for (k, (u, p)) in set.chi1.iter().zip(&set.pi1).enumerate() {
            ctx.vector(&format!("correctors/chi1_{k}"), u, None)?;
            ctx.scalar(&format!("correctors/pi1_{k}"), p, None)?;
        }
    }
    let result = json!({
        "n_y": cell.n_y(),
        "porosity": t.porosity,
        "a_hom_voigt": t.a_hom.voigt(),
        "a_hom_mandel": t.a_hom.mandel(),
        "b_hom": t.b_hom,
        "c_hom": t.c_hom,
        "b_energy": t.b_energy,
        "residuals": {
            "stokes_divergence": set.stokes_div_residual,
            "stokes_momentum": set.stokes_momentum_residual,
            "scalar": set.scalar_residual,
        },
        "checks": checks,
        "tensors": t,
    });
    ctx.report("cell_report.json", pass, result)?;
    Ok((pass, "tensor invariants".into()))
}

/// Gate of a single run: divergence always, energy decay when unforced.
#[derive(Serialize)]
struct RunGate {
    unforced: bool,
    initial_energy: f64,
    final_energy: f64,
    max_energy_increase: f64,
    max_dissipation_residual: f64,
    max_div_residual: f64,
    max_convection_work: f64,
    pass: bool,
}

fn run_gate(ctx: &Ctx, trace: &EnergyTrace, unforced: bool) -> RunGate {
    let n = &ctx.cfg.numerics;
    let r = &trace.records;
    let t0 = r.first().map_or(0.0, |x| x.total);
    let max_diss = r.iter().skip(1).map(|x| x.diss_residual).fold(f64::NEG_INFINITY, f64::max);
    let max_div = r.iter().map(|x| x.div_residual).fold(0.0, f64::max);
    let max_increase = trace.max_increase();
    let slack = n.energy_slack * t0;
    let mut pass = max_div <= n.div_tol;
    if unforced {
        pass &= max_increase <= slack && (r.len() < 2 || max_diss <= slack / n.dt);
    }
    RunGate {
        unforced,
        initial_energy: t0,
        final_energy: r.last().map_or(0.0, |x| x.total),
        max_energy_increase: max_increase,
        max_dissipation_residual: if r.len() < 2 { 0.0 } else { max_diss },
        max_div_residual: max_div,
        max_convection_work: r.iter().map(|x| x.convection_work.abs()).fold(0.0, f64::max),
        pass,
    }
}

fn snapshot_due(every: usize, step: usize) -> bool {
    every > 0 && step % every == 0
}

fn cmd_micro(ctx: &Ctx) -> Result<(bool, String), Failure> {
    let cfg = &ctx.cfg;
    let domain = cfg.domain()?;
    let eps = domain.eps();
    let ph = &cfg.physics;
    let n = &cfg.numerics;
    let params = MicroParams {
        lambda_eps: cfg.lambda_eps(),
        viscosity: ph.viscosity.model(),
        source: ph.source,
        force: ph.force,
        dt: n.dt,
        t_end: n.t_end,
        s0: n.s0,
        u0: ph.u0,
        phi0: ph.phi0,
        seed: cfg.seed,
    };
    params.validate()?;
    let mut solver = MicroSolver::new(&domain, params)?;
    let mut last = 0;
    let run = solver.run_with(|k, st| {
        last = k;
        if snapshot_due(n.snapshot_every, k) {
            ctx.state("micro", k, st, Some(eps)).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        }
        Ok(())
    })?;
    if !snapshot_due(n.snapshot_every, last) {
        ctx.state("micro", last, &run.state, Some(eps))?;
    }
    ctx.trace("micro_trace.csv", &run.trace)?;
    let gate = run_gate(ctx, &run.trace, ph.force.is_zero());
    let pass = gate.pass;
    let result = json!({
        "eps": eps,
        "m": domain.m(),
        "n": domain.n(),
        "lambda_eps": cfg.lambda_eps(),
        "porosity": porosity(&domain),
        "steps": last,
        "t_end": run.state.t,
        "gate": gate,
    });
    ctx.report("micro_report.json", pass, result)?;
    Ok((pass, "micro energy/divergence gate".into()))
}

fn load_tensors(ctx: &Ctx) -> Result<(EffectiveTensors, String), Failure> {
    let cfg = &ctx.cfg;
    match &cfg.macro_.cell_report {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| Failure::Config(format!("cannot read cell report {}: {e}", path.display())))?;
            let v: Value = serde_json::from_slice(&bytes)
                .map_err(|e| Failure::Config(format!("cell report {}: {e}", path.display())))?;
            let t: EffectiveTensors = serde_json::from_value(v["result"]["tensors"].clone())
                .map_err(|e| Failure::Config(format!("cell report {} has no tensors: {e}", path.display())))?;
            Ok((t, format!("cell_report:{}", sha256_hex(&bytes))))
        }
        None => {
            let (t, _) = effective_tensors(&cfg.cell()?, &cfg.physics.viscosity.model(), 0.0, &cfg.numerics.cell_options())?;
            let json = serde_json::to_vec(&t).map_err(|e| Failure::Solver(e.to_string()))?;
            Ok((t, format!("inline:{}", sha256_hex(&json))))
        }
    }
}

fn cmd_macro(ctx: &Ctx) -> Result<(bool, String), Failure> {
    let cfg = &ctx.cfg;
    let ph = &cfg.physics;
    let n = &cfg.numerics;
    let (tensors, provenance) = load_tensors(ctx)?;
    let params = MacroParams {
        lambda: ph.lambda,
        tensors: vec![tensors],
        source: ph.source,
        force: ph.force,
        dt: n.dt,
        t_end: n.t_end,
        s0: n.s0,
        u0: ph.u0,
        phi0: ph.phi0,
        seed: cfg.seed,
        n: cfg.macro_.n,
        capillary: ph.capillary,
    };
    params.validate()?;
    let mut solver = MacroSolver::new(params)?;
    let has_transport = solver.has_transport();
    let mut last = 0;
    let run = solver.run_with(|k, st| {
        last = k;
        if snapshot_due(n.snapshot_every, k) {
            ctx.state("macro", k, st, None).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        }
        Ok(())
    })?;
    if !snapshot_due(n.snapshot_every, last) {
        ctx.state("macro", last, &run.state, None)?;
    }
    ctx.trace("macro_trace.csv", &run.trace)?;
    let gate = run_gate(ctx, &run.trace, ph.force.is_zero());
    let pass = gate.pass;
    let result = json!({
        "lambda": ph.lambda,
        "capillary": ph.capillary,
        "n": cfg.macro_.n,
        "has_transport": has_transport,
        "tensor_provenance": provenance,
        "steps": last,
        "t_end": run.state.t,
        "gate": gate,
    });
    ctx.report("macro_report.json", pass, result)?;
    Ok((pass, "macro energy/divergence gate".into()))
}

fn cmd_study(ctx: &Ctx) -> Result<(bool, String), Failure> {
    let cfg = &ctx.cfg;
    let ph = &cfg.physics;
    let n = &cfg.numerics;
    let spec = StudySpec {
        cell: cfg.cell()?,
        ms: cfg.study_ms()?,
        lambda: ph.lambda,
        viscosity: ph.viscosity.model(),
        source: ph.source,
        force: ph.force,
        dt: n.dt,
        t_end: n.t_end,
        s0: n.s0,
        u0: ph.u0,
        phi0: ph.phi0,
        seed: cfg.seed,
        macro_n: cfg.study.macro_n,
        capillary: ph.capillary,
        cell_options: n.cell_options(),
        slack: cfg.study.slack,
        well_prepared: cfg.study.well_prepared,
    };
    spec.validate()?;
    let report = run_study(&spec)?;
    for r in &report.rows {
        eprintln!("eps = {}: {:.1} s", r.eps, r.runtime_s);
    }
    eprintln!("macro: {:.1} s", report.macro_runtime_s);
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    ctx.write("study.csv", &buf)?;
    let pass = report.pass();
    ctx.report("study_report.json", pass, serde_json::to_value(&report).map_err(|e| Failure::Solver(e.to_string()))?)?;
    Ok((pass, "epsilon study monotonicity".into()))
}

fn read_input_field(path: &Path, grid: &std::sync::Arc<Grid>) -> Result<ScalarField, Failure> {
    let cfg_err = |m: String| Failure::Config(format!("{}: {m}", path.display()));
    let header_path = path.with_extension("json");
    let header: SnapshotHeader = serde_json::from_slice(
        &std::fs::read(&header_path).map_err(|e| cfg_err(format!("missing header {}: {e}", header_path.display())))?,
    )
    .map_err(|e| cfg_err(e.to_string()))?;
    let n = grid.n();
    if header.shape != [n, n] {
        return Err(cfg_err(format!("shape {:?} does not match the {n}x{n} domain grid", header.shape)));
    }
    let values = decode_raw(&std::fs::read(path).map_err(|e| cfg_err(e.to_string()))?)?;
    if values.len() != n * n {
        return Err(cfg_err(format!("{} values for a {n}x{n} grid", values.len())));
    }
    let pore: Vec<f64> = (0..grid.n_pore()).map(|d| values[grid.dof_cell(d)]).collect();
    if pore.iter().any(|v| !v.is_finite()) {
        return Err(cfg_err("non-finite value on a pore cell".into()));
    }
    Ok(ScalarField::from_values(grid, pore)?.with_role(header.role).with_time(header.t))
}

fn cmd_unfold(ctx: &Ctx) -> Result<(bool, String), Failure> {
    let cfg = &ctx.cfg;
    let domain = cfg.domain()?;
    let grid = Grid::walled(&domain)?;
    let field = match &cfg.unfold.input {
        Some(p) => read_input_field(p, &grid)?,
        None => cfg.physics.phi0.sample(&grid, cfg.seed),
    };
    let u = unfold(&field, &domain)?;
    let ext = extend(&field, &domain, cfg.unfold.extension)?;
    let scale = field.l2_norm().max(f64::MIN_POSITIVE);
    let integral_defect = (u.integral() - field.integral()).abs() / scale;
    let isometry_defect = (u.l2_norm() - field.l2_norm()).abs() / scale;
    let pass = integral_defect <= cfg.unfold.tol && isometry_defect <= cfg.unfold.tol;
    let ny = u.n_y;
    let header = SnapshotHeader {
        role: field.role,
        shape: vec![u.m, u.m, ny, ny],
        h: domain.h(),
        t: field.t,
        eps: Some(domain.eps()),
        dtype: "<f8".into(),
        fill: "nan".into(),
    };
    let values: Vec<f64> = u.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    ctx.raw("unfolded", &header, &values)?;
    let n = domain.n();
    let ext_header = SnapshotHeader { shape: vec![n, n], fill: "extension".into(), ..header };
    ctx.raw("extended", &ext_header, &ext)?;
    let result = json!({
        "eps": domain.eps(),
        "m": domain.m(),
        "n_y": ny,
        "extension": cfg.unfold.extension,
        "integral": field.integral(),
        "unfolded_integral": u.integral(),
        "l2": field.l2_norm(),
        "unfolded_l2": u.l2_norm(),
        "integral_defect": integral_defect,
        "isometry_defect": isometry_defect,
    });
    ctx.report("unfold_report.json", pass, result)?;
    Ok((pass, "unfolding integral/isometry".into()))
}

fn cmd_geometry(ctx: &Ctx) -> Result<(bool, String), Failure> {
    let domain = ctx.cfg.domain()?;
    if domain.dim() == 2 {
        let mut buf = Vec::new();
        domain.write_pgm(&mut buf)?;
        ctx.write("geometry.pgm", &buf)?;
    }
    let mut buf = Vec::new();
    domain.write_csv(&mut buf)?;
    ctx.write("geometry.csv", &buf)?;
    let result = json!({
        "dim": domain.dim(),
        "n": domain.n(),
        "m": domain.m(),
        "eps": domain.eps(),
        "porosity": porosity(&domain),
        "pore_volume": domain.pore_volume(),
        "faces": {
            "interior_pore": domain.count_faces(FaceLabel::InteriorPore),
            "outer_wall": domain.count_faces(FaceLabel::OuterWall),
            "obstacle_interface": domain.count_faces(FaceLabel::ObstacleInterface),
            "solid": domain.count_faces(FaceLabel::Solid),
        },
    });
    ctx.report("geometry_report.json", true, result)?;
    Ok((true, String::new()))
}
