//! Periodic unfolding, extension into the solid, micro/macro comparisons and
//! the epsilon-convergence study.

use crate::cell_problems::{effective_tensors, CellOptions, EffectiveTensors};
use crate::dynamics::{BodyForce, EnergyTrace, FlowState, InitialPhase, InitialVelocity, SourceModel};
use crate::error::{Error, Result};
use crate::fields::{Axis, Grid, ScalarField, VectorField};
use crate::geometry::{tile_domain, PerforatedDomain, UnitCell};
use crate::linalg::{conjugate_gradient, CsrMatrix};
use crate::macro_solver::{CapillaryScaling, MacroParams, MacroSolver};
use crate::micro::{MicroParams, MicroSolver};
use crate::viscosity::ViscosityModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

/// Values indexed by macro cell `kappa` and micro voxel `y`; `None` on solid voxels.
#[derive(Debug, Clone)]
pub struct UnfoldedField {
    pub eps: f64,
    pub m: usize,
    pub n_y: usize,
    /// `values[k * n_y^2 + y]`, `k = ky * m + kx`, `y = j * n_y + i`.
    pub values: Vec<Option<f64>>,
}

impl UnfoldedField {
    fn weight(&self) -> f64 {
        let s = self.eps / self.n_y as f64;
        s * s
    }

    /// Micro slice of macro cell `(kx, ky)`.
    pub fn slice(&self, kx: usize, ky: usize) -> &[Option<f64>] {
        let c = self.n_y * self.n_y;
        let k = ky * self.m + kx;
        &self.values[k * c..(k + 1) * c]
    }

    /// `int_Omega int_Y T(psi) dy dx`.
    pub fn integral(&self) -> f64 {
        self.values.iter().flatten().sum::<f64>() * self.weight()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().flatten().map(|v| v * v).sum::<f64>() * self.weight()).sqrt()
    }

    /// Mean over the pore voxels of one macro cell.
    pub fn cell_mean(&self, kx: usize, ky: usize) -> f64 {
        let s: Vec<f64> = self.slice(kx, ky).iter().flatten().copied().collect();
        s.iter().sum::<f64>() / s.len() as f64
    }
}

fn check_grid(grid: &Grid, domain: &PerforatedDomain) -> Result<()> {
    if grid.is_periodic() || grid.n() != domain.n() || grid.pore_mask() != domain.global_mask() {
        return Err(Error::Mismatch("field does not live on the domain grid".into()));
    }
    Ok(())
}

/// Re-indexes a full-grid array (one value per voxel) by `(kappa, y)`.
pub fn unfold_values(values: &[f64], pore: &[bool], domain: &PerforatedDomain) -> Result<UnfoldedField> {
    let n = domain.n();
    if values.len() != n * n || pore.len() != n * n {
        return Err(Error::Mismatch(format!("expected {} voxel values, got {}", n * n, values.len())));
    }
    let (m, ny) = (domain.m(), domain.cell().n_y());
    let mut out = vec![None; n * n];
    for jj in 0..n {
        for ii in 0..n {
            let g = jj * n + ii;
            if pore[g] {
                let k = (jj / ny) * m + ii / ny;
                let y = (jj % ny) * ny + ii % ny;
                out[k * ny * ny + y] = Some(values[g]);
            }
        }
    }
    Ok(UnfoldedField { eps: domain.eps(), m, n_y: ny, values: out })
}

/// Unfolding of a pore field: pure re-indexing of voxels.
pub fn unfold(field: &ScalarField, domain: &PerforatedDomain) -> Result<UnfoldedField> {
    check_grid(&field.grid, domain)?;
    unfold_values(&field.to_full(0.0), domain.global_mask(), domain)
}

/// How solid voxels are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionMode {
    /// Mean of the pore values of the same macro cell.
    #[default]
    CellMean,
    /// Discrete harmonic function with the pore values as boundary data.
    Harmonic,
}

impl std::str::FromStr for ExtensionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell_mean" => Ok(Self::CellMean),
            "harmonic" => Ok(Self::Harmonic),
            _ => Err(Error::InvalidParameter(format!("unknown extension mode '{s}'"))),
        }
    }
}

/// Values on every voxel of the domain grid; pore values are unchanged.
pub fn extend(field: &ScalarField, domain: &PerforatedDomain, mode: ExtensionMode) -> Result<Vec<f64>> {
    check_grid(&field.grid, domain)?;
    let n = domain.n();
    let pore = domain.global_mask();
    let mut full = field.to_full(0.0);
    if pore.iter().all(|&p| p) {
        return Ok(full);
    }
    match mode {
        ExtensionMode::CellMean => {
            let u = unfold(field, domain)?;
            let ny = domain.cell().n_y();
            for jj in 0..n {
                for ii in 0..n {
                    if !pore[jj * n + ii] {
                        full[jj * n + ii] = u.cell_mean(ii / ny, jj / ny);
                    }
                }
            }
        }
        ExtensionMode::Harmonic => {
            let solid: Vec<usize> = (0..n * n).filter(|&c| !pore[c]).collect();
            let mut index = vec![usize::MAX; n * n];
            for (k, &c) in solid.iter().enumerate() {
                index[c] = k;
            }
            let mut trip = Vec::new();
            let mut rhs = vec![0.0; solid.len()];
            for (k, &c) in solid.iter().enumerate() {
                let (i, j) = ((c % n) as isize, (c / n) as isize);
                for (a, b) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                    if a < 0 || b < 0 || a >= n as isize || b >= n as isize {
                        continue;
                    }
                    let nb = b as usize * n + a as usize;
                    trip.push((k, k, 1.0));
                    if pore[nb] {
                        rhs[k] += full[nb];
                    } else {
                        trip.push((k, index[nb], -1.0));
                    }
                }
            }
            let a = CsrMatrix::from_triplets(solid.len(), &trip);
            let mut x = vec![0.0; solid.len()];
            conjugate_gradient(&a, &rhs, &mut x, 1e-13, 100_000)?;
            for (k, &c) in solid.iter().enumerate() {
                full[c] = x[k];
            }
        }
    }
    Ok(full)
}

/// Bilinear interpolation of cell-centred values on an `n x n` box grid,
/// constant extrapolation in the outer half cells.
pub fn interpolate_cells(values: &[f64], n: usize, x: [f64; 2]) -> f64 {
    let pos = |v: f64| {
        let s = (v * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n.saturating_sub(2));
        (i, s - i as f64)
    };
    if n == 1 {
        return values[0];
    }
    let (i, a) = pos(x[0]);
    let (j, b) = pos(x[1]);
    let v = |i: usize, j: usize| values[j * n + i];
    (1.0 - a) * (1.0 - b) * v(i, j) + a * (1.0 - b) * v(i + 1, j) + (1.0 - a) * b * v(i, j + 1) + a * b * v(i + 1, j + 1)
}

/// Samples a field of the unperforated macro grid at the pore cell centres of `target`.
pub fn sample_onto(source: &ScalarField, target: &Arc<Grid>) -> Result<ScalarField> {
    let g = &source.grid;
    if g.n_pore() != g.n_cells() {
        return Err(Error::Mismatch("source must live on an unperforated grid".into()));
    }
    let full = source.to_full(0.0);
    let values = (0..target.n_pore())
        .map(|d| interpolate_cells(&full, g.n(), target.cell_center(target.dof_cell(d))))
        .collect();
    ScalarField::from_values(target, values)
}

fn sample_velocity(source: &VectorField, target: &Arc<Grid>) -> Vec<[f64; 2]> {
    let cc = source.cell_centered();
    let xs: Vec<f64> = cc.iter().map(|v| v[0]).collect();
    let ys: Vec<f64> = cc.iter().map(|v| v[1]).collect();
    let n = source.grid.n();
    (0..target.n_pore())
        .map(|d| {
            let x = target.cell_center(target.dof_cell(d));
            [interpolate_cells(&xs, n, x), interpolate_cells(&ys, n, x)]
        })
        .collect()
}

/// Errors of one micro run against the macro solution at a common time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub t: f64,
    /// `|| phi_eps - phi ||_{L2(pore)}`.
    pub phi_error: f64,
    pub phi_error_rel: f64,
    /// `|| u_eps / sqrt(lambda_eps) - u ||_{L2(pore)}` on cell centres.
    pub u_error: f64,
    pub u_error_rel: f64,
}

/// Compares micro and macro states at the same time.
pub fn compare_micro_macro(micro: &FlowState, macro_: &FlowState, lambda_eps: f64) -> Result<ErrorRow> {
    if (micro.t - macro_.t).abs() > 1e-9 * (1.0 + micro.t.abs()) {
        return Err(Error::Mismatch(format!("micro time {} differs from macro time {}", micro.t, macro_.t)));
    }
    let g = micro.grid();
    let h2 = g.h() * g.h();
    let phi_m = sample_onto(&macro_.phi, g)?;
    let diff = micro.phi.axpy(-1.0, &phi_m);
    let phi_error = diff.l2_norm();
    let phi_norm = phi_m.l2_norm();
    let um = sample_velocity(&macro_.u, g);
    let uc = micro.u.cell_centered();
    let s = 1.0 / lambda_eps.sqrt();
    let (mut e2, mut n2) = (0.0, 0.0);
    for (d, m) in um.iter().enumerate() {
        let c = g.dof_cell(d);
        let v = [uc[c][0] * s, uc[c][1] * s];
        e2 += ((v[0] - m[0]).powi(2) + (v[1] - m[1]).powi(2)) * h2;
        n2 += (m[0] * m[0] + m[1] * m[1]) * h2;
    }
    let rel = |e: f64, n: f64| if n > 0.0 { e / n } else { e };
    Ok(ErrorRow {
        t: micro.t,
        phi_error,
        phi_error_rel: rel(phi_error, phi_norm),
        u_error: e2.sqrt(),
        u_error_rel: rel(e2.sqrt(), n2.sqrt()),
    })
}

/// `d(eps, t) = |T_eps(t) / lambda_eps - |Y_p| T(t)|` over aligned traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyDeviation {
    pub times: Vec<f64>,
    pub deviation: Vec<f64>,
    pub sup: f64,
}

pub fn energy_convergence(
    micro: &EnergyTrace,
    lambda_eps: f64,
    macro_: &EnergyTrace,
    porosity: f64,
) -> Result<EnergyDeviation> {
    if micro.len() != macro_.len() {
        return Err(Error::Mismatch(format!("trace lengths {} and {} differ", micro.len(), macro_.len())));
    }
    let mut times = Vec::with_capacity(micro.len());
    let mut deviation = Vec::with_capacity(micro.len());
    for (a, b) in micro.records.iter().zip(&macro_.records) {
        if (a.t - b.t).abs() > 1e-9 * (1.0 + a.t.abs()) {
            return Err(Error::Mismatch(format!("trace times {} and {} differ", a.t, b.t)));
        }
        times.push(a.t);
        deviation.push((a.total / lambda_eps - porosity * b.total).abs());
    }
    let sup = deviation.iter().copied().fold(0.0, f64::max);
    Ok(EnergyDeviation { times, deviation, sup })
}

/// True when every entry is at most `(1 + slack)` times its predecessor.
pub fn non_increasing_within(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= (1.0 + slack) * w[0])
}

/// Configuration of an epsilon study: one cell solve, one macro run and one
/// micro run per `eps = 1/m`.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub cell: UnitCell,
    /// Cell counts per side, strictly increasing.
    pub ms: Vec<usize>,
    /// Limit capillarity; micro runs use `lambda + eps`.
    pub lambda: f64,
    pub viscosity: ViscosityModel,
    pub source: SourceModel,
    pub force: BodyForce,
    pub dt: f64,
    pub t_end: f64,
    pub s0: f64,
    pub u0: InitialVelocity,
    pub phi0: InitialPhase,
    pub seed: u64,
    pub macro_n: usize,
    pub capillary: CapillaryScaling,
    pub cell_options: CellOptions,
    /// Relative slack of the monotonicity verdicts.
    pub slack: f64,
    /// Start the micro runs from `phi0 + eps chi2(x / eps) . grad phi0`.
    pub well_prepared: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub eps: f64,
    pub m: usize,
    pub n: usize,
    pub lambda_eps: f64,
    pub errors: ErrorRow,
    pub energy_sup: f64,
    /// Wall time; kept out of serialized output so reports stay reproducible.
    #[serde(skip)]
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub lambda: f64,
    pub porosity: f64,
    pub tensors: EffectiveTensors,
    pub rows: Vec<StudyRow>,
    pub phi_monotone: bool,
    pub energy_monotone: bool,
    pub u_monotone: bool,
    #[serde(skip)]
    pub macro_runtime_s: f64,
}

impl StudyReport {
    /// Gate verdict: phase error and energy deviation non-increasing in `eps`.
    pub fn pass(&self) -> bool {
        self.phi_monotone && self.energy_monotone
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "eps,m,n,lambda_eps,phi_error,phi_error_rel,u_error,u_error_rel,energy_sup")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:e},{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.eps,
                r.m,
                r.n,
                r.lambda_eps,
                r.errors.phi_error,
                r.errors.phi_error_rel,
                r.errors.u_error,
                r.errors.u_error_rel,
                r.energy_sup
            )?;
        }
        Ok(())
    }
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.ms.is_empty() {
            return Err(Error::InvalidParameter("empty epsilon list".into()));
        }
        if self.ms.windows(2).any(|w| w[1] <= w[0]) || self.ms[0] == 0 {
            return Err(Error::InvalidParameter("epsilon values must be strictly decreasing".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }

    fn macro_params(&self, tensors: EffectiveTensors) -> MacroParams {
        MacroParams {
            lambda: self.lambda,
            tensors: vec![tensors],
            source: self.source,
            force: self.force,
            dt: self.dt,
            t_end: self.t_end,
            s0: self.s0,
            u0: self.u0,
            phi0: self.phi0,
            seed: self.seed,
            n: self.macro_n,
            capillary: self.capillary,
        }
    }

    fn micro_params(&self, eps: f64) -> MicroParams {
        MicroParams {
            lambda_eps: self.lambda + eps,
            viscosity: self.viscosity.clone(),
            source: self.source,
            force: self.force,
            dt: self.dt,
            t_end: self.t_end,
            s0: self.s0,
            u0: self.u0,
            phi0: self.phi0,
            seed: self.seed,
        }
    }
}

/// Runs the whole study. Micro runs execute concurrently.
pub fn run_study(spec: &StudySpec) -> Result<StudyReport> {
    spec.validate()?;
    let (tensors, set) = effective_tensors(&spec.cell, &spec.viscosity, 0.0, &spec.cell_options)?;
    let porosity = tensors.porosity;
    let mp = spec.macro_params(tensors.clone());
    // fail fast on invalid micro parameters before the long runs
    spec.micro_params(1.0 / spec.ms[0] as f64).validate()?;
    let start = Instant::now();
    let macro_run = MacroSolver::new(mp)?.run()?;
    let macro_runtime_s = start.elapsed().as_secs_f64();
    let rows = spec
        .ms
        .par_iter()
        .map(|&m| -> Result<StudyRow> {
            let eps = 1.0 / m as f64;
            let start = Instant::now();
            let domain = tile_domain(&spec.cell, m)?;
            let params = spec.micro_params(eps);
            let lambda_eps = params.lambda_eps;
            let seed = params.seed;
            let mut solver = MicroSolver::new(&domain, params)?;
            let run = if spec.well_prepared {
                let g = solver.grid().clone();
                let phi0 = well_prepared_phase(&spec.phi0, seed, &set.chi2, &domain, &g)?;
                let u0 = solver.initial_state().u;
                let st = solver.state_from(&u0, &phi0);
                solver.run_from(st)?
            } else {
                solver.run()?
            };
            let errors = compare_micro_macro(&run.state, &macro_run.state, lambda_eps)?;
            let energy = energy_convergence(&run.trace, lambda_eps, &macro_run.trace, porosity)?;
            Ok(StudyRow {
                eps,
                m,
                n: domain.n(),
                lambda_eps,
                errors,
                energy_sup: energy.sup,
                runtime_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let phi: Vec<f64> = rows.iter().map(|r| r.errors.phi_error).collect();
    let en: Vec<f64> = rows.iter().map(|r| r.energy_sup).collect();
    let uu: Vec<f64> = rows.iter().map(|r| r.errors.u_error).collect();
    Ok(StudyReport {
        lambda: spec.lambda,
        porosity,
        tensors,
        phi_monotone: non_increasing_within(&phi, spec.slack),
        energy_monotone: non_increasing_within(&en, spec.slack),
        u_monotone: non_increasing_within(&uu, spec.slack),
        rows,
        macro_runtime_s,
    })
}

/// Initial phase with the first-order cell correction,
/// `phi0 + eps sum_i chi2^i(x / eps) d_i phi0` on the pore cells of `grid`.
pub fn well_prepared_phase(
    phi0: &InitialPhase,
    seed: u64,
    chi2: &[ScalarField],
    domain: &PerforatedDomain,
    grid: &Arc<Grid>,
) -> Result<ScalarField> {
    check_grid(grid, domain)?;
    if chi2.len() != 2 {
        return Err(Error::Mismatch("need two scalar correctors".into()));
    }
    let cg = &chi2[0].grid;
    let ny = cg.n();
    if !cg.is_periodic() || ny != domain.cell().n_y() {
        return Err(Error::Mismatch("corrector must live on the periodic cell grid".into()));
    }
    let eps = domain.eps();
    let base = phi0.sample(grid, seed);
    let grad = phi0.gradient(grid, seed);
    let mut out = base.clone();
    for (d, v) in out.values.iter_mut().enumerate() {
        let (i, j) = grid.cell_ij(grid.dof_cell(d));
        let k = cg
            .cell_dof(cg.cell_index(i % ny, j % ny))
            .ok_or_else(|| Error::Mismatch("pore cell maps to a solid cell point".into()))?;
        *v += eps * (chi2[0].values[k] * grad[d][0] + chi2[1].values[k] * grad[d][1]);
    }
    Ok(out)
}

/// Copies a field of the periodic cell grid onto every cell of the domain,
/// `eps * chi(x / eps)` on the interior-pore faces.
pub fn tile_cell_velocity(chi: &VectorField, domain: &PerforatedDomain, grid: &Arc<Grid>) -> Result<VectorField> {
    check_grid(grid, domain)?;
    let cg = &chi.grid;
    let ny = cg.n();
    if !cg.is_periodic() || ny != domain.cell().n_y() {
        return Err(Error::Mismatch("corrector must live on the periodic cell grid".into()));
    }
    let eps = domain.eps();
    let values = (0..grid.n_active())
        .map(|d| {
            let (axis, i, j) = grid.face_ij(grid.dof_face(d));
            let (i, j) = ((i % ny) as isize, (j % ny) as isize);
            let f = match axis {
                Axis::X => cg.xface(i, j),
                Axis::Y => cg.yface(i, j),
            };
            eps * f.and_then(|f| cg.face_dof(f)).map_or(0.0, |k| chi.values[k])
        })
        .collect();
    VectorField::from_values(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_problems::solve_correctors;
    use crate::geometry::{build_unit_cell, Inclusion};
    use crate::ops;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn domain(r: f64, n_y: usize, m: usize) -> PerforatedDomain {
        tile_domain(&build_unit_cell(2, Inclusion::Ball { radius: r }, n_y).unwrap(), m).unwrap()
    }

    #[test]
    fn unfolding_constant_and_coordinates() {
        let d = domain(0.25, 8, 4);
        let g = Grid::walled(&d).unwrap();
        let u = unfold(&ScalarField::constant(&g, 2.5), &d).unwrap();
        assert!(u.values.iter().flatten().all(|&v| v == 2.5));
        let x = ScalarField::from_fn(&g, |x, _| x);
        let u = unfold(&x, &d).unwrap();
        let (eps, ny) = (0.25, 8usize);
        for kx in 0..4 {
            let s = u.slice(kx, 2);
            for (y, v) in s.iter().enumerate() {
                if let Some(v) = v {
                    let i = y % ny;
                    let want = eps * kx as f64 + eps * (i as f64 + 0.5) / ny as f64;
                    assert!((v - want).abs() < 1e-14);
                }
            }
        }
        // solid voxels stay empty
        let cell = d.cell();
        for (y, v) in u.slice(1, 1).iter().enumerate() {
            assert_eq!(v.is_some(), cell.pore_mask()[y]);
        }
    }

    #[test]
    fn unfolding_oscillation_becomes_cell_profile() {
        let cell = build_unit_cell(2, Inclusion::Ball { radius: 0.0 }, 16).unwrap();
        let d = tile_domain(&cell, 4).unwrap();
        let g = Grid::walled(&d).unwrap();
        let f = ScalarField::from_fn(&g, |x, _| (2.0 * std::f64::consts::PI * x * 4.0).sin());
        let u = unfold(&f, &d).unwrap();
        for ky in 0..4 {
            for kx in 0..4 {
                for (y, v) in u.slice(kx, ky).iter().enumerate() {
                    let yc = ((y % 16) as f64 + 0.5) / 16.0;
                    assert!((v.unwrap() - (2.0 * std::f64::consts::PI * yc).sin()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unfolding_preserves_integral_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in [2, 4] {
            let d = domain(0.25, 16, m);
            let g = Grid::walled(&d).unwrap();
            let f = ScalarField::from_values(&g, (0..g.n_pore()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let u = unfold(&f, &d).unwrap();
            assert!((u.integral() - f.integral()).abs() < 1e-13);
            assert!((u.l2_norm() - f.l2_norm()).abs() < 1e-13);
        }
    }

    #[test]
    fn unfolding_rejects_foreign_grid() {
        let d = domain(0.25, 8, 2);
        let other = Grid::unit_box(16).unwrap();
        assert!(unfold(&ScalarField::zeros(&other), &d).is_err());
    }

    #[test]
    fn extension_modes() {
        let d = domain(0.25, 16, 2);
        let g = Grid::walled(&d).unwrap();
        for mode in [ExtensionMode::CellMean, ExtensionMode::Harmonic] {
            let c = extend(&ScalarField::constant(&g, 1.5), &d, mode).unwrap();
            assert!(c.iter().all(|v| (v - 1.5).abs() < 1e-10));
            let f = ScalarField::from_fn(&g, |x, y| x + 2.0 * y);
            let e = extend(&f, &d, mode).unwrap();
            let full = f.to_full(0.0);
            for (k, &p) in d.global_mask().iter().enumerate() {
                if p {
                    assert_eq!(e[k], full[k]);
                }
            }
            let (lo, hi) = f.values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(e.iter().all(|&v| v >= lo - 1e-10 && v <= hi + 1e-10));
        }
        let all = tile_domain(&build_unit_cell(2, Inclusion::Ball { radius: 0.0 }, 8).unwrap(), 2).unwrap();
        let g = Grid::walled(&all).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| x * y);
        assert_eq!(extend(&f, &all, ExtensionMode::Harmonic).unwrap(), f.to_full(0.0));
        assert!("nearest".parse::<ExtensionMode>().is_err());
    }

    #[test]
    fn bilinear_sampling_is_exact_for_linear_data() {
        let g = Grid::unit_box(8).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| 1.0 + 2.0 * x - y);
        let d = domain(0.25, 8, 2);
        let tg = Grid::walled(&d).unwrap();
        let s = sample_onto(&f, &tg).unwrap();
        for dd in 0..tg.n_pore() {
            let [x, y] = tg.cell_center(tg.dof_cell(dd));
            if (1.0 / 16.0..=15.0 / 16.0).contains(&x) && (1.0 / 16.0..=15.0 / 16.0).contains(&y) {
                assert!((s.values[dd] - (1.0 + 2.0 * x - y)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn comparison_of_zero_states_is_zero() {
        let d = domain(0.25, 8, 2);
        let micro = MicroSolver::new(&d, MicroParams { phi0: InitialPhase::Uniform { value: 0.0 }, ..Default::default() }).unwrap();
        let mac = MacroSolver::new(MacroParams { n: 16, phi0: InitialPhase::Uniform { value: 0.0 }, ..Default::default() }).unwrap();
        let row = compare_micro_macro(&micro.initial_state(), &mac.initial_state(), 1.0).unwrap();
        assert_eq!(row.phi_error, 0.0);
        assert_eq!(row.u_error, 0.0);
        let mut late = mac.initial_state();
        late.t = 1.0;
        assert!(compare_micro_macro(&micro.initial_state(), &late, 1.0).is_err());
    }

    #[test]
    fn energy_floor_of_zero_data_matches() {
        let d = domain(0.25, 8, 2);
        let lam = 0.7;
        let mut micro = MicroSolver::new(
            &d,
            MicroParams { lambda_eps: lam, phi0: InitialPhase::Uniform { value: 0.0 }, t_end: 0.003, ..Default::default() },
        )
        .unwrap();
        let mut mac =
            MacroSolver::new(MacroParams { n: 16, phi0: InitialPhase::Uniform { value: 0.0 }, t_end: 0.003, ..Default::default() })
                .unwrap();
        let a = micro.run().unwrap();
        let b = mac.run().unwrap();
        let dev = energy_convergence(&a.trace, lam, &b.trace, d.cell().porosity()).unwrap();
        assert!(dev.sup < 1e-14, "{}", dev.sup);
        assert!((a.trace.records[0].total / lam - 0.25 * d.pore_volume()).abs() < 1e-14);
        let short = EnergyTrace { records: b.trace.records[..2].to_vec() };
        assert!(energy_convergence(&a.trace, lam, &short, 1.0).is_err());
    }

    #[test]
    fn monotone_verdicts() {
        assert!(non_increasing_within(&[1.0, 0.5, 0.52], 0.1));
        assert!(!non_increasing_within(&[1.0, 0.5, 0.6], 0.1));
        assert!(non_increasing_within(&[], 0.1));
    }

    #[test]
    fn empty_study_is_rejected() {
        let spec = StudySpec {
            cell: build_unit_cell(2, Inclusion::Ball { radius: 0.25 }, 8).unwrap(),
            ms: vec![],
            lambda: 1.0,
            viscosity: ViscosityModel::default(),
            source: SourceModel::default(),
            force: BodyForce::Zero,
            dt: 1e-3,
            t_end: 0.01,
            s0: 2.0,
            u0: InitialVelocity::Zero,
            phi0: InitialPhase::default(),
            seed: 0,
            macro_n: 16,
            capillary: CapillaryScaling::Unit,
            cell_options: CellOptions::default(),
            slack: 0.1,
            well_prepared: true,
        };
        assert!(matches!(run_study(&spec), Err(Error::InvalidParameter(_))));
        let bad = StudySpec { ms: vec![4, 2], ..spec };
        assert!(run_study(&bad).is_err());
    }

    #[test]
    fn unfolded_strain_splits_into_macro_and_cell_parts() {
        // modulated viscosity on an empty cell gives a non-trivial periodic corrector
        let cell = build_unit_cell(2, Inclusion::Ball { radius: 0.0 }, 16).unwrap();
        let model = ViscosityModel::Modulated { nu: 1.0, amplitude: 0.5 };
        let set = solve_correctors(&cell, &model, 0.0, &CellOptions::default()).unwrap();
        let m = 4;
        let d = tile_domain(&cell, m).unwrap();
        let g = Grid::walled(&d).unwrap();
        let xi = [0.3, -0.2, 0.5];
        let corr = crate::cell_problems::reconstruct_velocity_corrector(&set, &xi);
        let lin = VectorField::from_fn(&g, |x, y| [xi[0] * x + xi[2] * y, xi[2] * x + xi[1] * y]);
        let u = lin.axpy(1.0, &tile_cell_velocity(&corr, &d, &g).unwrap());
        let s = ops::strain(&u);
        let cell_strain = ops::strain(&corr);
        let n = d.n();
        // interior macro cells: unfolded strain = Xi + D_y chi
        for comp in 0..3 {
            let full: Vec<f64> = {
                let mut f = vec![0.0; n * n];
                for (k, v) in s.iter().enumerate() {
                    f[g.dof_cell(k)] = v[comp];
                }
                f
            };
            let un = unfold_values(&full, d.global_mask(), &d).unwrap();
            for (kx, ky) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
                for (y, v) in un.slice(kx, ky).iter().enumerate() {
                    let want = xi[comp] + cell_strain[y][comp];
                    assert!((v.unwrap() - want).abs() < 1e-10);
                }
                // the cell part averages out
                assert!((un.cell_mean(kx, ky) - xi[comp]).abs() < 1e-10);
            }
        }
        assert!(set.chi1.iter().map(|c| c.max_abs()).fold(0.0, f64::max) > 1e-4);
    }

    #[test]
    fn well_prepared_phase_carries_the_effective_gradient_energy() {
        let cell = build_unit_cell(2, Inclusion::Ball { radius: 0.25 }, 16).unwrap();
        let (t, set) = effective_tensors(&cell, &ViscosityModel::default(), 0.0, &CellOptions::default()).unwrap();
        let amp = 0.3;
        let phi0 = InitialPhase::Cosine { mean: 0.5, amplitude: amp, kx: 1, ky: 1 };
        // |Y_p| 1/2 int B grad phi0 . grad phi0 with int |d_i phi0|^2 = amp^2 pi^2 / 4
        let b = t.b_hom;
        let target = 0.5 * t.porosity * (b[0][0] + b[1][1]) * amp * amp * std::f64::consts::PI.powi(2) / 4.0;
        let energy = |f: &ScalarField| {
            let g = ops::grad(f);
            0.5 * g.dot(&g)
        };
        let d = tile_domain(&cell, 4).unwrap();
        let g = Grid::walled(&d).unwrap();
        let plain = phi0.sample(&g, 0);
        let wp = well_prepared_phase(&phi0, 0, &set.chi2, &d, &g).unwrap();
        let (ep, ew) = ((energy(&plain) - target).abs(), (energy(&wp) - target).abs());
        assert!(ew < 0.3 * ep, "plain {ep:e} prepared {ew:e}");
        // the correction is O(eps) and leaves the pore mean nearly unchanged
        assert!(wp.axpy(-1.0, &plain).max_abs() < 0.25 * amp * std::f64::consts::PI);
        assert!((wp.mean() - plain.mean()).abs() < 1e-3);
        // all-pore cells have no corrector
        let empty = build_unit_cell(2, Inclusion::Ball { radius: 0.0 }, 8).unwrap();
        let set0 = solve_correctors(&empty, &ViscosityModel::default(), 0.0, &CellOptions::default()).unwrap();
        let d0 = tile_domain(&empty, 2).unwrap();
        let g0 = Grid::walled(&d0).unwrap();
        let w0 = well_prepared_phase(&phi0, 0, &set0.chi2, &d0, &g0).unwrap();
        assert_eq!(w0.values, phi0.sample(&g0, 0).values);
    }
}
