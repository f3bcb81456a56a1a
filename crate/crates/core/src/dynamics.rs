//! Data models shared by the micro and macro time steppers: source terms,
//! forcing, initial data, energy traces and the split IMEX step itself.

use crate::error::{Error, Result};
use crate::fields::{Grid, Role, ScalarField, VectorField};
use crate::linalg::{CsrMatrix, ProfileFactor};
use crate::ops::{self, TensorDiffusion, ViscousOperator};
use crate::viscosity::ViscosityModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

/// Double-well potential `F(s) = (s^2 - 1)^2 / 4`.
pub fn double_well(s: f64) -> f64 {
    let a = s * s - 1.0;
    0.25 * a * a
}

/// `f = F'`.
pub fn double_well_prime(s: f64) -> f64 {
    s * s * s - s
}

/// Monotone source `G` with `G(0) = 0` and `c1 <= G' <= c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceModel {
    /// `G(s) = c s`.
    Linear { c: f64 },
    /// `G(s) = c1 s + (c2 - c1) tanh(s)`, so `G'` ranges over `(c1, c2]`.
    TanhBlend { c1: f64, c2: f64 },
}

impl Default for SourceModel {
    fn default() -> Self {
        Self::Linear { c: 1.0 }
    }
}

impl SourceModel {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Self::Linear { c } => c * s,
            Self::TanhBlend { c1, c2 } => c1 * s + (c2 - c1) * s.tanh(),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            Self::Linear { c } => c,
            Self::TanhBlend { c1, c2 } => {
                let t = s.tanh();
                c1 + (c2 - c1) * (1.0 - t * t)
            }
        }
    }

    pub fn c1(&self) -> f64 {
        match *self {
            Self::Linear { c } => c,
            Self::TanhBlend { c1, .. } => c1,
        }
    }

    pub fn c2(&self) -> f64 {
        match *self {
            Self::Linear { c } => c,
            Self::TanhBlend { c2, .. } => c2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c1, c2) = (self.c1(), self.c2());
        if !(c1 > 0.0 && c1 <= c2 && c2.is_finite()) {
            return Err(Error::InvalidParameter(format!("source bounds need 0 < c1 <= c2, got c1={c1}, c2={c2}")));
        }
        Ok(())
    }
}

/// Macroscopic body force `g(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BodyForce {
    #[default]
    Zero,
    Constant { g: [f64; 2] },
    /// `a cos(omega t) (sin^2(pi x) sin(2 pi y), -sin(2 pi x) sin^2(pi y))`, divergence free
    /// and vanishing on the box boundary.
    Vortex {
        amplitude: f64,
        #[serde(default)]
        omega: f64,
    },
}

/// Divergence-free vortex vanishing on the boundary of the unit box.
pub fn box_vortex(x: f64, y: f64) -> [f64; 2] {
    let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
    [sx * sx * (2.0 * PI * y).sin(), -(2.0 * PI * x).sin() * sy * sy]
}

impl BodyForce {
    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Zero => true,
            Self::Constant { g } => g == [0.0, 0.0],
            Self::Vortex { amplitude, .. } => amplitude == 0.0,
        }
    }

    pub fn eval(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        match *self {
            Self::Zero => [0.0, 0.0],
            Self::Constant { g } => g,
            Self::Vortex { amplitude, omega } => {
                let v = box_vortex(x[0], x[1]);
                let a = amplitude * (omega * t).cos();
                [a * v[0], a * v[1]]
            }
        }
    }

    pub fn sample(&self, grid: &Arc<Grid>, t: f64) -> VectorField {
        if self.is_zero() {
            return VectorField::zeros(grid);
        }
        VectorField::from_fn(grid, |x, y| self.eval(t, [x, y]))
    }
}

/// Initial phase field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPhase {
    Uniform { value: f64 },
    /// `mean + amplitude cos(kx pi x) cos(ky pi y)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        #[serde(default = "one")]
        kx: u32,
        #[serde(default = "one")]
        ky: u32,
    },
    /// Random cosine series with `1 <= k + l`, `k, l <= modes`, scaled to the given
    /// maximum amplitude; optionally shifted to zero pore mean.
    Random {
        amplitude: f64,
        #[serde(default = "four")]
        modes: u32,
        #[serde(default)]
        zero_mean: bool,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn one() -> u32 {
    1
}

fn four() -> u32 {
    4
}

impl Default for InitialPhase {
    fn default() -> Self {
        Self::Random { amplitude: 0.1, modes: 4, zero_mean: false, seed: None }
    }
}

fn random_coefficients(modes: u32, seed: u64) -> Vec<(u32, u32, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in 0..=modes {
        for l in 0..=modes {
            let a: f64 = rng.random_range(-1.0..1.0);
            if k + l > 0 {
                out.push((k, l, a / (1.0 + (k * k + l * l) as f64)));
            }
        }
    }
    out
}

impl InitialPhase {
    /// Samples the initial phase on `grid`; `seed` is used when the variant has none.
    pub fn sample(&self, grid: &Arc<Grid>, seed: u64) -> ScalarField {
        let s = match *self {
            Self::Uniform { value } => ScalarField::constant(grid, value),
            Self::Cosine { mean, amplitude, kx, ky } => ScalarField::from_fn(grid, |x, y| {
                mean + amplitude * (kx as f64 * PI * x).cos() * (ky as f64 * PI * y).cos()
            }),
            Self::Random { amplitude, modes, zero_mean, seed: own } => {
                let coef = random_coefficients(modes, own.unwrap_or(seed));
                let mut s = ScalarField::from_fn(grid, |x, y| {
                    coef.iter().map(|&(k, l, a)| a * (k as f64 * PI * x).cos() * (l as f64 * PI * y).cos()).sum()
                });
                if zero_mean {
                    s.subtract_mean();
                }
                let m = s.max_abs();
                if m > 0.0 {
                    s = s.map(|v| amplitude * v / m);
                }
                s
            }
        };
        s.with_role(Role::Phase)
    }

    /// Exact gradient of the sampled profile at the pore-cell centres of `grid`,
    /// including the amplitude normalisation of the random series.
    pub fn gradient(&self, grid: &Arc<Grid>, seed: u64) -> Vec<[f64; 2]> {
        let centres = || (0..grid.n_pore()).map(|d| grid.cell_center(grid.dof_cell(d)));
        match *self {
            Self::Uniform { .. } => vec![[0.0; 2]; grid.n_pore()],
            Self::Cosine { amplitude, kx, ky, .. } => {
                let (kp, lp) = (kx as f64 * PI, ky as f64 * PI);
                centres()
                    .map(|[x, y]| {
                        [
                            -amplitude * kp * (kp * x).sin() * (lp * y).cos(),
                            -amplitude * lp * (kp * x).cos() * (lp * y).sin(),
                        ]
                    })
                    .collect()
            }
            Self::Random { amplitude, modes, zero_mean, seed: own } => {
                let coef = random_coefficients(modes, own.unwrap_or(seed));
                let mut r = ScalarField::from_fn(grid, |x, y| {
                    coef.iter().map(|&(k, l, a)| a * (k as f64 * PI * x).cos() * (l as f64 * PI * y).cos()).sum()
                });
                if zero_mean {
                    r.subtract_mean();
                }
                let m = r.max_abs();
                let s = if m > 0.0 { amplitude / m } else { 0.0 };
                centres()
                    .map(|[x, y]| {
                        let mut g = [0.0, 0.0];
                        for &(k, l, a) in &coef {
                            let (kp, lp) = (k as f64 * PI, l as f64 * PI);
                            g[0] -= a * kp * (kp * x).sin() * (lp * y).cos();
                            g[1] -= a * lp * (kp * x).cos() * (lp * y).sin();
                        }
                        [s * g[0], s * g[1]]
                    })
                    .collect()
            }
        }
    }
}

/// Initial velocity before projection onto discretely divergence-free fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialVelocity {
    #[default]
    Zero,
    /// `amplitude` times [`box_vortex`].
    Vortex { amplitude: f64 },
    /// Random stream-function series `sum b_kl sin(k pi x) sin(l pi y)` scaled to
    /// the given maximum speed.
    Random {
        amplitude: f64,
        #[serde(default = "four")]
        modes: u32,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl InitialVelocity {
    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Zero => true,
            Self::Vortex { amplitude } | Self::Random { amplitude, .. } => amplitude == 0.0,
        }
    }

    /// Unprojected face samples.
    pub fn sample(&self, grid: &Arc<Grid>, seed: u64) -> VectorField {
        match *self {
            Self::Zero => VectorField::zeros(grid),
            Self::Vortex { amplitude } => VectorField::from_fn(grid, |x, y| {
                let v = box_vortex(x, y);
                [amplitude * v[0], amplitude * v[1]]
            }),
            Self::Random { amplitude, modes, seed: own } => {
                let coef: Vec<_> =
                    random_coefficients(modes, own.unwrap_or(seed)).into_iter().filter(|c| c.0 > 0 && c.1 > 0).collect();
                let u = VectorField::from_fn(grid, |x, y| {
                    let mut v = [0.0, 0.0];
                    for &(k, l, b) in &coef {
                        let (kp, lp) = (k as f64 * PI, l as f64 * PI);
                        v[0] += b * lp * (kp * x).sin() * (lp * y).cos();
                        v[1] -= b * kp * (kp * x).cos() * (lp * y).sin();
                    }
                    v
                });
                let m = u.max_abs();
                if m > 0.0 {
                    u.scale(amplitude / m)
                } else {
                    u
                }
            }
        }
    }
}

/// Complete set of unknowns at one time level.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub u: VectorField,
    /// Projection pressure, zero mean over the pore cells.
    pub p: ScalarField,
    pub phi: ScalarField,
    pub mu: ScalarField,
    pub t: f64,
}

impl FlowState {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.phi.grid
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.p.is_finite() && self.phi.is_finite() && self.mu.is_finite()
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub t: f64,
    pub total: f64,
    pub kinetic: f64,
    pub free: f64,
    pub phi_mean: f64,
    pub u_l2: f64,
    /// `(T^{n+1} - T^n)/dt + dissipation - force_work`.
    pub diss_residual: f64,
    pub div_residual: f64,
    /// Viscous, mobility and source dissipation of the step.
    pub dissipation: f64,
    pub force_work: f64,
    /// `dt <C(u^n, u^n), u^n>`, zero up to round-off.
    pub convection_work: f64,
}

/// Column order of the CSV trace.
pub const TRACE_COLUMNS: [&str; 8] =
    ["t", "T", "T_K", "T_F", "phi_mean", "u_l2", "diss_residual", "div_residual"];

/// Ordered energy records, one per accepted step plus the initial one.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub records: Vec<EnergyRecord>,
}

impl EnergyTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EnergyRecord> {
        self.records.last()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", TRACE_COLUMNS.join(","))?;
        for r in &self.records {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.t, r.total, r.kinetic, r.free, r.phi_mean, r.u_l2, r.diss_residual, r.div_residual
            )?;
        }
        Ok(())
    }

    /// Largest per-step energy increase `max(T^{n+1} - T^n, 0)`.
    pub fn max_increase(&self) -> f64 {
        self.records.windows(2).map(|w| (w[1].total - w[0].total).max(0.0)).fold(0.0, f64::max)
    }
}

/// Discrete energy budget between two consecutive records.
pub fn dissipation_residual(prev: &EnergyRecord, next: &EnergyRecord) -> f64 {
    let dt = next.t - prev.t;
    if dt <= 0.0 {
        return 0.0;
    }
    (next.total - prev.total) / dt + next.dissipation - next.force_work
}

/// Number of steps needed to reach `t_end`.
pub fn step_count(dt: f64, t_end: f64) -> usize {
    (t_end / dt - 1e-9).ceil().max(0.0) as usize
}

/// Checks shared by micro and macro parameters.
pub(crate) fn validate_common(dt: f64, t_end: f64, s0: f64, source: &SourceModel) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end must be non-negative, got {t_end}")));
    }
    source.validate()?;
    if dt * source.c2() > 0.5 {
        return Err(Error::InvalidParameter(format!(
            "dt * c2 = {} exceeds 0.5 for the explicit source",
            dt * source.c2()
        )));
    }
    // |f'| <= 2 on |phi| <= 1
    if s0 < 1.0 {
        return Err(Error::InvalidParameter(format!("stabilization S0 = {s0} below 1")));
    }
    Ok(())
}

/// How the capillary force is evaluated on faces.
#[derive(Debug, Clone, Copy)]
pub(crate) enum CapillaryFlux {
    /// Face-averaged `phi` times the face gradient of `mu`.
    Central,
    /// Face-averaged `phi` times the normal component of `K grad mu`.
    Tensor(TensorDiffusion),
}

/// Scalar coefficients of the transport and coupling terms.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Couplings {
    /// `None` removes the convection term entirely.
    pub convection: Option<f64>,
    /// `None` removes the phase advection entirely.
    pub advection: Option<f64>,
    pub capillary: f64,
    pub force: f64,
    /// Weight of the free energy in the total energy.
    pub free_weight: f64,
}

/// Quantities produced by one step besides the new state.
pub(crate) struct StepReport {
    pub dissipation: f64,
    pub force_work: f64,
    pub convection_work: f64,
    pub div_residual: f64,
}

/// Split IMEX stepper: convex-split Cahn-Hilliard, then a viscous predictor
/// and a pressure projection.
pub(crate) struct Engine {
    grid: Arc<Grid>,
    dt: f64,
    s0: f64,
    source: SourceModel,
    force: BodyForce,
    p_b: CsrMatrix,
    p_c: CsrMatrix,
    ch: ProfileFactor,
    viscous: ViscousOperator,
    viscous_factor: ProfileFactor,
    pressure: ProfileFactor,
    pin: usize,
    capillary: CapillaryFlux,
    cpl: Couplings,
}

pub(crate) struct EngineSpec {
    pub dt: f64,
    pub s0: f64,
    pub source: SourceModel,
    pub force: BodyForce,
    pub b: Option<TensorDiffusion>,
    pub c: Option<TensorDiffusion>,
    pub capillary: CapillaryFlux,
    pub couplings: Couplings,
}

fn viscous_system(op: &ViscousOperator, dt: f64) -> Result<ProfileFactor> {
    let g = op.grid();
    let n = g.n_active();
    let m = CsrMatrix::identity(n).add(1.0, op.form_matrix(), dt / (g.h() * g.h()));
    ProfileFactor::new(&m, true)
}

impl Engine {
    pub fn new(grid: &Arc<Grid>, model: &ViscosityModel, t: f64, spec: EngineSpec) -> Result<Self> {
        if grid.n_pore() == 0 {
            return Err(Error::InvalidParameter("grid without pore cells".into()));
        }
        let lap = ops::laplacian_matrix(grid);
        let p_b = match spec.b {
            Some(k) => k.matrix(grid),
            None => lap.clone(),
        };
        let p_c = match spec.c {
            Some(k) => k.matrix(grid),
            None => lap.clone(),
        };
        let symmetric = spec.b.is_none() && spec.c.is_none();
        let n = grid.n_pore();
        let pcb = p_c.matmul(&p_b);
        let ch_mat = CsrMatrix::identity(n).add(1.0, &pcb, spec.dt).add(1.0, &p_c, spec.dt * spec.s0);
        let ch = ProfileFactor::new(&ch_mat, symmetric)?;
        let viscous = ViscousOperator::new(grid, model, t);
        let viscous_factor = viscous_system(&viscous, spec.dt)?;
        let pin = 0;
        let pressure = ProfileFactor::new(&lap.pin(&[pin]), true)?;
        Ok(Self {
            grid: grid.clone(),
            dt: spec.dt,
            s0: spec.s0,
            source: spec.source,
            force: spec.force,
            p_b,
            p_c,
            ch,
            viscous,
            viscous_factor,
            pressure,
            pin,
            capillary: spec.capillary,
            cpl: spec.couplings,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn couplings(&self) -> &Couplings {
        &self.cpl
    }

    /// Reassembles the viscous operator, e.g. for a time-dependent tensor.
    pub fn set_viscosity(&mut self, model: &ViscosityModel, t: f64) -> Result<()> {
        self.viscous = ViscousOperator::new(&self.grid, model, t);
        self.viscous_factor = viscous_system(&self.viscous, self.dt)?;
        Ok(())
    }

    fn h2(&self) -> f64 {
        self.grid.h() * self.grid.h()
    }

    /// `mu = P_B phi + f(phi)`.
    pub fn chemical_potential(&self, phi: &ScalarField) -> ScalarField {
        let pb = self.p_b.mul_vec(&phi.values);
        let values = pb.iter().zip(&phi.values).map(|(a, &p)| a + double_well_prime(p)).collect();
        ScalarField { grid: self.grid.clone(), values, t: phi.t, role: Role::ChemicalPotential }
    }

    /// Leray projection: returns the divergence-free part and the pressure with
    /// `u = u* - dt grad p`.
    pub fn project(&self, ustar: &VectorField) -> (VectorField, ScalarField) {
        let d = ops::div(ustar);
        let mut rhs: Vec<f64> = d.values.iter().map(|v| -v / self.dt).collect();
        rhs[self.pin] = 0.0;
        let mut p = ScalarField {
            grid: self.grid.clone(),
            values: self.pressure.solve(&rhs),
            t: ustar.t,
            role: Role::Pressure,
        };
        p.subtract_mean();
        let u = ustar.axpy(-self.dt, &ops::grad(&p));
        (u, p)
    }

    /// Convex-split Cahn-Hilliard step.
    pub fn ch_substep(&self, u: &VectorField, phi: &ScalarField) -> (ScalarField, ScalarField) {
        let dt = self.dt;
        let n = phi.values.len();
        let mut rhs = phi.values.clone();
        if let Some(a) = self.cpl.advection {
            let adv = ops::advect_upwind(u, phi);
            for (r, v) in rhs.iter_mut().zip(&adv.values) {
                *r -= dt * a * v;
            }
        }
        let mut shifted = vec![0.0; n];
        for (i, &p) in phi.values.iter().enumerate() {
            rhs[i] -= dt * self.source.eval(p);
            shifted[i] = double_well_prime(p) - self.s0 * p;
        }
        let pc = self.p_c.mul_vec(&shifted);
        for (r, v) in rhs.iter_mut().zip(&pc) {
            *r -= dt * v;
        }
        let next = self.ch.solve(&rhs);
        let pb = self.p_b.mul_vec(&next);
        let mu: Vec<f64> = (0..n)
            .map(|i| pb[i] + double_well_prime(phi.values[i]) + self.s0 * (next[i] - phi.values[i]))
            .collect();
        let t = phi.t + dt;
        (
            ScalarField { grid: self.grid.clone(), values: next, t, role: Role::Phase },
            ScalarField { grid: self.grid.clone(), values: mu, t, role: Role::ChemicalPotential },
        )
    }

    fn capillary_force(&self, phi: &ScalarField, mu: &ScalarField) -> VectorField {
        match self.capillary {
            CapillaryFlux::Central => ops::korteweg_force(phi, mu),
            CapillaryFlux::Tensor(k) => {
                let g = &self.grid;
                let mut flux = k.flux(mu);
                for (d, v) in flux.values.iter_mut().enumerate() {
                    let (lo, hi) = g.face_cells(g.dof_face(d));
                    let a = g.cell_dof(lo.unwrap()).unwrap();
                    let b = g.cell_dof(hi.unwrap()).unwrap();
                    *v *= 0.5 * (phi.values[a] + phi.values[b]);
                }
                flux
            }
        }
    }

    /// Viscous predictor and projection. Returns `(u*, u^{n+1}, p^{n+1})`,
    /// the force work `<g, u*>` and `dt <C(u^n, u^n), u^n>`.
    pub fn ns_substep(
        &self,
        u: &VectorField,
        phi1: &ScalarField,
        mu1: &ScalarField,
        t: f64,
    ) -> (VectorField, VectorField, ScalarField, f64, f64) {
        let dt = self.dt;
        let mut rhs = u.values.clone();
        let mut conv_work = 0.0;
        if let Some(a) = self.cpl.convection {
            let c = ops::convect_skew(u, u);
            conv_work = dt * a * c.dot(u);
            for (r, v) in rhs.iter_mut().zip(&c.values) {
                *r -= dt * a * v;
            }
        }
        if self.cpl.capillary != 0.0 {
            let k = self.capillary_force(phi1, mu1);
            for (r, v) in rhs.iter_mut().zip(&k.values) {
                *r -= dt * self.cpl.capillary * v;
            }
        }
        let mut force = None;
        if !self.force.is_zero() && self.cpl.force != 0.0 {
            let g = self.force.sample(&self.grid, t).scale(self.cpl.force);
            for (r, v) in rhs.iter_mut().zip(&g.values) {
                *r += dt * v;
            }
            force = Some(g);
        }
        let ustar = VectorField { grid: self.grid.clone(), values: self.viscous_factor.solve(&rhs), t: t + dt };
        let work = force.map_or(0.0, |g| g.dot(&ustar));
        let (u1, p1) = self.project(&ustar);
        (ustar, u1, p1, work, conv_work)
    }

    /// Full step from `state`.
    pub fn step(&self, state: &FlowState) -> (FlowState, StepReport) {
        let (phi1, mu1) = self.ch_substep(&state.u, &state.phi);
        let (ustar, u1, p1, force_work, convection_work) = self.ns_substep(&state.u, &phi1, &mu1, state.t);
        let h2 = self.h2();
        let visc = self.viscous.form(&ustar, &ustar);
        let mob: f64 = self.p_c.mul_vec(&mu1.values).iter().zip(&mu1.values).map(|(a, b)| a * b).sum::<f64>() * h2;
        let src: f64 =
            state.phi.values.iter().zip(&mu1.values).map(|(&p, m)| self.source.eval(p) * m).sum::<f64>() * h2;
        let div_residual = ops::div(&u1).max_abs();
        let t = state.t + self.dt;
        let next = FlowState { u: u1, p: p1, phi: phi1.with_time(t), mu: mu1.with_time(t), t };
        let report = StepReport {
            dissipation: visc + self.cpl.free_weight * (mob + src),
            force_work,
            convection_work,
            div_residual,
        };
        (next, report)
    }

    /// `(T, T_K, T_F)`.
    pub fn energy(&self, u: &VectorField, phi: &ScalarField) -> (f64, f64, f64) {
        let h2 = self.h2();
        let tk = 0.5 * u.dot(u);
        let grad: f64 = self.p_b.mul_vec(&phi.values).iter().zip(&phi.values).map(|(a, b)| a * b).sum::<f64>() * h2;
        let pot: f64 = phi.values.iter().map(|&p| double_well(p)).sum::<f64>() * h2;
        let tf = self.cpl.free_weight * (0.5 * grad + pot);
        (tk + tf, tk, tf)
    }

    pub fn record(&self, state: &FlowState, prev: Option<&EnergyRecord>, rep: Option<&StepReport>) -> EnergyRecord {
        let (total, kinetic, free) = self.energy(&state.u, &state.phi);
        let mut r = EnergyRecord {
            t: state.t,
            total,
            kinetic,
            free,
            phi_mean: state.phi.mean(),
            u_l2: state.u.l2_norm(),
            diss_residual: 0.0,
            div_residual: rep.map_or_else(|| ops::div(&state.u).max_abs(), |r| r.div_residual),
            dissipation: rep.map_or(0.0, |r| r.dissipation),
            force_work: rep.map_or(0.0, |r| r.force_work),
            convection_work: rep.map_or(0.0, |r| r.convection_work),
        };
        if let Some(p) = prev {
            r.diss_residual = dissipation_residual(p, &r);
        }
        r
    }

    /// State at `t0` from initial data: velocity projected, `mu` consistent with `phi`.
    pub fn initial_state(&self, u0: &VectorField, phi0: &ScalarField, t0: f64) -> FlowState {
        let (u, _) = self.project(u0);
        let mut u = u;
        u.t = t0;
        let phi = phi0.clone().with_time(t0);
        let mu = self.chemical_potential(&phi);
        FlowState { u, p: ScalarField::zeros(&self.grid).with_role(Role::Pressure).with_time(t0), phi, mu, t: t0 }
    }
}
