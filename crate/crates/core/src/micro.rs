//! Microscopic two-phase flow on the perforated domain.

use crate::dynamics::{
    step_count, validate_common, BodyForce, CapillaryFlux, Couplings, Engine, EngineSpec, EnergyRecord,
    EnergyTrace, FlowState, InitialPhase, InitialVelocity, SourceModel,
};
use crate::error::{Error, Result};
use crate::fields::{Grid, ScalarField, VectorField};
use crate::geometry::PerforatedDomain;
use crate::viscosity::ViscosityModel;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct MicroParams {
    /// Capillarity strength `lambda_eps > 0`.
    pub lambda_eps: f64,
    pub viscosity: ViscosityModel,
    pub source: SourceModel,
    /// Macroscopic force; the applied force is `sqrt(lambda_eps) g`.
    pub force: BodyForce,
    pub dt: f64,
    pub t_end: f64,
    pub s0: f64,
    /// Macroscopic initial velocity; the micro run starts from `sqrt(lambda_eps) u0`.
    pub u0: InitialVelocity,
    pub phi0: InitialPhase,
    pub seed: u64,
}

impl Default for MicroParams {
    fn default() -> Self {
        Self {
            lambda_eps: 1.0,
            viscosity: ViscosityModel::default(),
            source: SourceModel::default(),
            force: BodyForce::Zero,
            dt: 1e-3,
            t_end: 0.1,
            s0: 2.0,
            u0: InitialVelocity::Zero,
            phi0: InitialPhase::default(),
            seed: 0,
        }
    }
}

impl MicroParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_eps > 0.0 && self.lambda_eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda_eps must be positive, got {}", self.lambda_eps)));
        }
        if self.viscosity.kappa1() <= 0.0 {
            return Err(Error::InvalidParameter("viscosity tensor is not coercive".into()));
        }
        validate_common(self.dt, self.t_end, self.s0, &self.source)
    }
}

pub type MicroState = FlowState;

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct MicroRun {
    pub state: MicroState,
    pub trace: EnergyTrace,
}

/// Time stepper holding the factorized operators of one configuration.
pub struct MicroSolver {
    engine: Engine,
    params: MicroParams,
}

impl MicroSolver {
    pub fn new(domain: &PerforatedDomain, params: MicroParams) -> Result<Self> {
        Self::on_grid(&Grid::walled(domain)?, params)
    }

    /// Solver on an explicit walled grid.
    pub fn on_grid(grid: &Arc<Grid>, params: MicroParams) -> Result<Self> {
        params.validate()?;
        if grid.is_periodic() {
            return Err(Error::Unsupported("micro runs need a walled grid".into()));
        }
        let spec = EngineSpec {
            dt: params.dt,
            s0: params.s0,
            source: params.source,
            force: params.force,
            b: None,
            c: None,
            capillary: CapillaryFlux::Central,
            couplings: Couplings {
                convection: Some(1.0),
                advection: Some(1.0),
                capillary: params.lambda_eps,
                force: params.lambda_eps.sqrt(),
                free_weight: params.lambda_eps,
            },
        };
        let engine = Engine::new(grid, &params.viscosity, 0.0, spec)?;
        Ok(Self { engine, params })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.engine.grid()
    }

    pub fn params(&self) -> &MicroParams {
        &self.params
    }

    /// Initial state with `u = sqrt(lambda_eps) u0` projected and `mu` from `phi0`.
    pub fn initial_state(&self) -> MicroState {
        let g = self.grid();
        let u0 = self.params.u0.sample(g, self.params.seed).scale(self.params.lambda_eps.sqrt());
        let phi0 = self.params.phi0.sample(g, self.params.seed);
        self.engine.initial_state(&u0, &phi0, 0.0)
    }

    /// State from explicit fields.
    pub fn state_from(&self, u0: &VectorField, phi0: &ScalarField) -> MicroState {
        self.engine.initial_state(u0, phi0, 0.0)
    }

    pub fn ch_substep(&self, state: &MicroState) -> (ScalarField, ScalarField) {
        self.engine.ch_substep(&state.u, &state.phi)
    }

    pub fn ns_substep(&self, state: &MicroState, phi: &ScalarField, mu: &ScalarField) -> (VectorField, ScalarField) {
        let (_, u, p, _, _) = self.engine.ns_substep(&state.u, phi, mu, state.t);
        (u, p)
    }

    /// `(T, T_K, T_F)`.
    pub fn energy(&self, state: &MicroState) -> (f64, f64, f64) {
        self.engine.energy(&state.u, &state.phi)
    }

    pub fn initial_record(&self, state: &MicroState) -> EnergyRecord {
        self.engine.record(state, None, None)
    }

    /// One step; appends exactly one record to `trace`.
    pub fn step(&mut self, state: &MicroState, trace: &mut EnergyTrace) -> Result<MicroState> {
        if self.params.viscosity.is_time_dependent() {
            let model = self.params.viscosity.clone();
            self.engine.set_viscosity(&model, state.t)?;
        }
        let (next, rep) = self.engine.step(state);
        if !next.is_finite() {
            return Err(Error::Breakdown(format!("non-finite state at t = {}", next.t)));
        }
        let rec = self.engine.record(&next, trace.last(), Some(&rep));
        trace.records.push(rec);
        Ok(next)
    }

    pub fn run(&mut self) -> Result<MicroRun> {
        self.run_with(|_, _| Ok(()))
    }

    /// Runs to `t_end` from an explicit initial state.
    pub fn run_from(&mut self, initial: MicroState) -> Result<MicroRun> {
        let mut state = initial;
        let mut trace = EnergyTrace::default();
        trace.records.push(self.initial_record(&state));
        let steps = step_count(self.params.dt, self.params.t_end).saturating_sub(step_count(self.params.dt, state.t));
        for _ in 0..steps {
            state = self.step(&state, &mut trace)?;
        }
        Ok(MicroRun { state, trace })
    }

    /// Runs to `t_end`, calling `observer(step_index, state)` after the initial state
    /// and after every step.
    pub fn run_with(&mut self, mut observer: impl FnMut(usize, &MicroState) -> Result<()>) -> Result<MicroRun> {
        let mut state = self.initial_state();
        let mut trace = EnergyTrace::default();
        trace.records.push(self.initial_record(&state));
        observer(0, &state)?;
        for n in 0..step_count(self.params.dt, self.params.t_end) {
            state = self.step(&state, &mut trace)?;
            observer(n + 1, &state)?;
        }
        Ok(MicroRun { state, trace })
    }
}
