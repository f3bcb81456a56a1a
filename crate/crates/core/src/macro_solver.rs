//! Homogenized two-phase flow on the unperforated box with effective tensors.

use crate::cell_problems::EffectiveTensors;
use crate::dynamics::{
    step_count, validate_common, BodyForce, CapillaryFlux, Couplings, Engine, EngineSpec, EnergyRecord,
    EnergyTrace, FlowState, InitialPhase, InitialVelocity, SourceModel,
};
use crate::error::{Error, Result};
use crate::fields::{Grid, ScalarField, VectorField};
use crate::ops::TensorDiffusion;
use crate::viscosity::ViscosityModel;
use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Coefficient of the capillary force `phi C grad mu` in the limit momentum balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CapillaryScaling {
    /// Coefficient 1.
    #[default]
    Unit,
    /// Coefficient `sqrt(lambda)`, consistent with the velocity normalization.
    SqrtLambda,
}

#[derive(Debug, Clone)]
pub struct MacroParams {
    /// Limit capillarity `lambda >= 0`; `0` selects the Stokes branch.
    pub lambda: f64,
    /// Tensor samples ordered by time; the sample with the largest `t <= t^n` is used.
    pub tensors: Vec<EffectiveTensors>,
    pub source: SourceModel,
    pub force: BodyForce,
    pub dt: f64,
    pub t_end: f64,
    pub s0: f64,
    pub u0: InitialVelocity,
    pub phi0: InitialPhase,
    pub seed: u64,
    /// Cells per side of the macro grid.
    pub n: usize,
    pub capillary: CapillaryScaling,
}

impl Default for MacroParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tensors: vec![crate::cell_problems::identity_tensors(Default::default())],
            source: SourceModel::default(),
            force: BodyForce::Zero,
            dt: 1e-3,
            t_end: 0.1,
            s0: 2.0,
            u0: InitialVelocity::Zero,
            phi0: InitialPhase::default(),
            seed: 0,
            n: 64,
            capillary: CapillaryScaling::Unit,
        }
    }
}

fn check_spd(m: &[[f64; 2]; 2], name: &str) -> Result<()> {
    if (m[0][1] - m[1][0]).abs() > 1e-8 * (m[0][0].abs() + m[1][1].abs()) {
        return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
    }
    let e = SymmetricEigen::new(Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])).eigenvalues;
    if e.min() <= 0.0 {
        return Err(Error::InvalidParameter(format!("{name} is not positive definite")));
    }
    Ok(())
}

impl MacroParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.tensors.is_empty() {
            return Err(Error::InvalidParameter("no effective tensors given".into()));
        }
        if self.tensors.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::InvalidParameter("tensor samples must have increasing times".into()));
        }
        for t in &self.tensors {
            if t.a_hom.eigen_bounds().0 <= 0.0 {
                return Err(Error::InvalidParameter("effective viscosity is not coercive".into()));
            }
            check_spd(&t.b_hom, "B_hom")?;
            check_spd(&t.c_hom, "C_hom")?;
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("macro grid needs n >= 2, got {}", self.n)));
        }
        validate_common(self.dt, self.t_end, self.s0, &self.source)
    }

    fn sample_index(&self, t: f64) -> usize {
        self.tensors.iter().rposition(|s| s.t <= t + 1e-12).unwrap_or(0)
    }
}

pub type MacroState = FlowState;

#[derive(Debug, Clone)]
pub struct MacroRun {
    pub state: MacroState,
    pub trace: EnergyTrace,
}

pub struct MacroSolver {
    grid: Arc<Grid>,
    engine: Engine,
    params: MacroParams,
    current: usize,
}

fn engine_for(grid: &Arc<Grid>, params: &MacroParams, k: usize) -> Result<Engine> {
    let t = &params.tensors[k];
    let transport = (params.lambda > 0.0).then(|| params.lambda.sqrt());
    let capillary = match params.capillary {
        CapillaryScaling::Unit => 1.0,
        CapillaryScaling::SqrtLambda => params.lambda.sqrt(),
    };
    let c = TensorDiffusion::new(t.c_hom);
    let spec = EngineSpec {
        dt: params.dt,
        s0: params.s0,
        source: params.source,
        force: params.force,
        b: Some(TensorDiffusion::new(t.b_hom)),
        c: Some(c),
        capillary: CapillaryFlux::Tensor(c),
        couplings: Couplings { convection: transport, advection: transport, capillary, force: 1.0, free_weight: 1.0 },
    };
    Engine::new(grid, &ViscosityModel::Constant(t.a_hom), t.t, spec)
}

impl MacroSolver {
    pub fn new(params: MacroParams) -> Result<Self> {
        params.validate()?;
        let grid = Grid::unit_box(params.n)?;
        let current = params.sample_index(0.0);
        let engine = engine_for(&grid, &params, current)?;
        Ok(Self { grid, engine, params, current })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn params(&self) -> &MacroParams {
        &self.params
    }

    /// False on the Stokes branch, where convection and advection are not assembled.
    pub fn has_transport(&self) -> bool {
        let c = self.engine.couplings();
        c.convection.is_some() || c.advection.is_some()
    }

    pub fn initial_state(&self) -> MacroState {
        let u0 = self.params.u0.sample(&self.grid, self.params.seed);
        let phi0 = self.params.phi0.sample(&self.grid, self.params.seed);
        self.engine.initial_state(&u0, &phi0, 0.0)
    }

    pub fn state_from(&self, u0: &VectorField, phi0: &ScalarField) -> MacroState {
        self.engine.initial_state(u0, phi0, 0.0)
    }

    /// `(T, T_K, T_F)` with the `B_hom`-weighted gradient energy.
    pub fn macro_energy(&self, state: &MacroState) -> (f64, f64, f64) {
        self.engine.energy(&state.u, &state.phi)
    }

    pub fn initial_record(&self, state: &MacroState) -> EnergyRecord {
        self.engine.record(state, None, None)
    }

    pub fn macro_step(&mut self, state: &MacroState, trace: &mut EnergyTrace) -> Result<MacroState> {
        let k = self.params.sample_index(state.t);
        if k != self.current {
            self.engine = engine_for(&self.grid, &self.params, k)?;
            self.current = k;
        }
        let (next, rep) = self.engine.step(state);
        if !next.is_finite() {
            return Err(Error::Breakdown(format!("non-finite state at t = {}", next.t)));
        }
        let rec = self.engine.record(&next, trace.last(), Some(&rep));
        trace.records.push(rec);
        Ok(next)
    }

    pub fn run(&mut self) -> Result<MacroRun> {
        self.run_with(|_, _| Ok(()))
    }

    pub fn run_with(&mut self, mut observer: impl FnMut(usize, &MacroState) -> Result<()>) -> Result<MacroRun> {
        let mut state = self.initial_state();
        let mut trace = EnergyTrace::default();
        trace.records.push(self.initial_record(&state));
        observer(0, &state)?;
        for n in 0..step_count(self.params.dt, self.params.t_end) {
            state = self.macro_step(&state, &mut trace)?;
            observer(n + 1, &state)?;
        }
        Ok(MacroRun { state, trace })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_problems::identity_tensors;
    use crate::ops;
    use crate::viscosity::Stiffness;

    fn aniso() -> EffectiveTensors {
        let mut t = identity_tensors(Stiffness::isotropic(0.8));
        t.b_hom = [[0.9, 0.05], [0.05, 0.7]];
        t.c_hom = [[0.9, 0.05], [0.05, 0.7]];
        t.porosity = 0.8;
        t
    }

    #[test]
    fn zero_data_is_a_fixed_point() {
        let p = MacroParams { n: 16, phi0: InitialPhase::Uniform { value: 0.0 }, ..Default::default() };
        let mut s = MacroSolver::new(p).unwrap();
        let st = s.initial_state();
        let mut tr = EnergyTrace::default();
        let next = s.macro_step(&st, &mut tr).unwrap();
        assert_eq!(next.phi.max_abs(), 0.0);
        assert_eq!(next.u.max_abs(), 0.0);
    }

    #[test]
    fn stokes_branch_ignores_velocity_scale() {
        let base = MacroParams {
            lambda: 0.0,
            tensors: vec![aniso()],
            n: 16,
            phi0: InitialPhase::Random { amplitude: 0.3, modes: 3, zero_mean: false, seed: Some(1) },
            ..Default::default()
        };
        let s = MacroSolver::new(base).unwrap();
        assert!(!s.has_transport());
        let st = s.initial_state();
        let u = VectorField::from_fn(s.grid(), |x, y| {
            let v = crate::dynamics::box_vortex(x, y);
            [v[0], v[1]]
        });
        let mut a = s.state_from(&u, &st.phi);
        let b = s.state_from(&u.scale(2.0), &st.phi);
        let mut s = s;
        let mut tr = EnergyTrace::default();
        let na = s.macro_step(&a, &mut tr).unwrap();
        let nb = s.macro_step(&b, &mut tr).unwrap();
        // phase update does not see the velocity at all
        assert_eq!(na.phi.values, nb.phi.values);
        a.u = a.u.scale(2.0);
        let nc = s.macro_step(&a, &mut tr).unwrap();
        assert_eq!(nc.phi.values, na.phi.values);
        let with = MacroSolver::new(MacroParams { lambda: 1.0, tensors: vec![aniso()], n: 16, ..Default::default() }).unwrap();
        assert!(with.has_transport());
    }

    #[test]
    fn mass_identity_and_energy_decay() {
        let p = MacroParams {
            lambda: 0.0,
            tensors: vec![aniso()],
            n: 32,
            dt: 1e-3,
            t_end: 0.05,
            phi0: InitialPhase::Random { amplitude: 0.5, modes: 4, zero_mean: false, seed: Some(5) },
            capillary: CapillaryScaling::SqrtLambda,
            ..Default::default()
        };
        let mut s = MacroSolver::new(p).unwrap();
        let mut st = s.initial_state();
        let mut tr = EnergyTrace::default();
        tr.records.push(s.initial_record(&st));
        for _ in 0..50 {
            let gm = st.phi.mean();
            let next = s.macro_step(&st, &mut tr).unwrap();
            assert!(((next.phi.mean() - gm) / 1e-3 + gm).abs() < 1e-10);
            st = next;
        }
        assert!(tr.max_increase() <= 1e-12, "{}", tr.max_increase());
        assert!(tr.records.iter().skip(1).all(|r| r.diss_residual <= 1e-10));
        assert!(ops::div(&st.u).max_abs() < 1e-9);
    }

    #[test]
    fn energy_uses_b_weighted_gradient() {
        let p = MacroParams {
            tensors: vec![aniso()],
            n: 32,
            phi0: InitialPhase::Cosine { mean: 0.0, amplitude: 0.2, kx: 1, ky: 0 },
            ..Default::default()
        };
        let s = MacroSolver::new(p).unwrap();
        let st = s.initial_state();
        let (t, tk, tf) = s.macro_energy(&st);
        assert_eq!(tk, 0.0);
        assert_eq!(t, tf);
        let grad = TensorDiffusion::new(aniso().b_hom).form(&st.phi, &st.phi);
        let pot: f64 = st.phi.values.iter().map(|&v| crate::dynamics::double_well(v)).sum::<f64>() / (32.0 * 32.0);
        assert!((tf - 0.5 * grad - pot).abs() < 1e-12);
        let one = MacroSolver::new(MacroParams { n: 8, phi0: InitialPhase::Uniform { value: 1.0 }, ..Default::default() }).unwrap();
        assert_eq!(one.macro_energy(&one.initial_state()).0, 0.0);
    }

    #[test]
    fn tensor_schedule_switches_samples() {
        let mut late = aniso();
        late.t = 0.005;
        let mut early = identity_tensors(Stiffness::isotropic(1.0));
        early.t = 0.0;
        let p = MacroParams { tensors: vec![early.clone(), late.clone()], n: 8, dt: 1e-3, t_end: 0.01, ..Default::default() };
        let mut s = MacroSolver::new(p).unwrap();
        s.run().unwrap();
        assert_eq!(s.current, 1);
        let bad = MacroParams { tensors: vec![late, early], n: 8, ..Default::default() };
        assert!(MacroSolver::new(bad).is_err());
    }

    #[test]
    fn rejects_indefinite_tensors() {
        let mut t = aniso();
        t.b_hom = [[1.0, 2.0], [2.0, 1.0]];
        assert!(MacroSolver::new(MacroParams { tensors: vec![t], n: 8, ..Default::default() }).is_err());
    }
}
