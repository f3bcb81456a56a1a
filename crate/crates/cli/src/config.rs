//! Versioned TOML run configuration.

use nsch_homog::cell_problems::CellOptions;
use nsch_homog::dynamics::{BodyForce, InitialPhase, InitialVelocity, SourceModel};
use nsch_homog::geometry::{build_unit_cell, tile_domain, Inclusion, PerforatedDomain, UnitCell};
use nsch_homog::macro_solver::CapillaryScaling;
use nsch_homog::unfolding::ExtensionMode;
use nsch_homog::viscosity::{Stiffness, ViscosityModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default, rename = "macro")]
    pub macro_: MacroConfig,
    #[serde(default)]
    pub unfold: UnfoldConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Disk (ball in 3D) centred in the cell.
    #[default]
    Ball,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "two")]
    pub dim: usize,
    #[serde(default)]
    pub shape: Shape,
    pub r: f64,
    pub n_y: usize,
    /// Cells per side of the perforated domain, `eps = 1/m`.
    #[serde(default = "one")]
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ViscosityConfig {
    Isotropic { nu: f64 },
    Modulated { nu: f64, amplitude: f64 },
    Constant { a1111: f64, a1122: f64, a2222: f64, a1112: f64, a2212: f64, a1212: f64 },
}

impl Default for ViscosityConfig {
    fn default() -> Self {
        Self::Isotropic { nu: 1.0 }
    }
}

impl ViscosityConfig {
    pub fn model(&self) -> ViscosityModel {
        match *self {
            Self::Isotropic { nu } => ViscosityModel::Isotropic { nu },
            Self::Modulated { nu, amplitude } => ViscosityModel::Modulated { nu, amplitude },
            Self::Constant { a1111, a1122, a2222, a1112, a2212, a1212 } => {
                ViscosityModel::Constant(Stiffness { a1111, a1122, a2222, a1112, a2212, a1212 })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    /// Limit capillarity of the macro and study runs.
    #[serde(default = "one_f")]
    pub lambda: f64,
    /// Micro capillarity; `lambda + eps` when absent.
    #[serde(default)]
    pub lambda_eps: Option<f64>,
    #[serde(default)]
    pub viscosity: ViscosityConfig,
    #[serde(default)]
    pub source: SourceModel,
    #[serde(default)]
    pub force: BodyForce,
    #[serde(default)]
    pub u0: InitialVelocity,
    #[serde(default)]
    pub phi0: InitialPhase,
    #[serde(default)]
    pub capillary: CapillaryScaling,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_eps: None,
            viscosity: ViscosityConfig::default(),
            source: SourceModel::default(),
            force: BodyForce::default(),
            u0: InitialVelocity::default(),
            phi0: InitialPhase::default(),
            capillary: CapillaryScaling::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub dt: f64,
    pub t_end: f64,
    pub s0: f64,
    /// Cell-problem tolerance and iteration limits.
    pub tol: f64,
    pub max_iter: usize,
    pub penalty: f64,
    pub max_outer: usize,
    /// Snapshot every this many steps; 0 writes the final state only.
    pub snapshot_every: usize,
    pub vtk: bool,
    pub write_correctors: bool,
    pub coercivity_samples: usize,
    /// Per-step energy slack relative to the initial energy.
    pub energy_slack: f64,
    pub div_tol: f64,
    pub bc_tol: f64,
    pub flux_tol: f64,
    pub sym_tol: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        let c = CellOptions::default();
        Self {
            dt: 1e-3,
            t_end: 0.1,
            s0: 2.0,
            tol: c.tol,
            max_iter: c.max_iter,
            penalty: c.penalty,
            max_outer: c.max_outer,
            snapshot_every: 0,
            vtk: false,
            write_correctors: false,
            coercivity_samples: 100,
            energy_slack: 1e-10,
            div_tol: 1e-8,
            bc_tol: 1e-8,
            flux_tol: 1e-7,
            sym_tol: 1e-8,
        }
    }
}

impl NumericsConfig {
    pub fn cell_options(&self) -> CellOptions {
        CellOptions { tol: self.tol, max_iter: self.max_iter, penalty: self.penalty, max_outer: self.max_outer }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Cell sizes, each the reciprocal of an integer, strictly decreasing.
    pub eps: Vec<f64>,
    pub slack: f64,
    pub well_prepared: bool,
    pub macro_n: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { eps: vec![0.5, 0.25, 0.125], slack: 0.1, well_prepared: true, macro_n: 128 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroConfig {
    pub n: usize,
    /// Report written by the `cell` command; tensors are computed inline when absent.
    pub cell_report: Option<PathBuf>,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self { n: 64, cell_report: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnfoldConfig {
    /// Raw scalar snapshot on the configured domain; the initial phase when absent.
    pub input: Option<PathBuf>,
    pub extension: ExtensionMode,
    /// Relative tolerance of the integral and isometry checks.
    pub tol: f64,
}

impl Default for UnfoldConfig {
    fn default() -> Self {
        Self { input: None, extension: ExtensionMode::CellMean, tol: 1e-12 }
    }
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn one_f() -> f64 {
    1.0
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(format!("config parse error: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(bad(format!("unsupported config version {}, expected {CONFIG_VERSION}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the resolved configuration (after command-line overrides).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Checks shared by every command; dimension 3 is accepted only by `geometry`.
    pub fn validate_geometry(&self, allow_3d: bool) -> Result<(), ConfigError> {
        let g = &self.geometry;
        if g.dim != 2 && !(allow_3d && g.dim == 3) {
            return Err(bad(format!("dim = {} is not supported here; solvers are two-dimensional", g.dim)));
        }
        if !(0.0..0.5).contains(&g.r) {
            return Err(bad(format!("inclusion radius must lie in [0, 0.5), got {}", g.r)));
        }
        if g.n_y < 2 || g.m == 0 {
            return Err(bad("n_y must be at least 2 and m at least 1"));
        }
        Ok(())
    }

    pub fn cell(&self) -> Result<UnitCell, ConfigError> {
        let g = &self.geometry;
        let inclusion = match g.shape {
            Shape::Ball => Inclusion::Ball { radius: g.r },
        };
        build_unit_cell(g.dim, inclusion, g.n_y).map_err(|e| bad(e.to_string()))
    }

    pub fn domain(&self) -> Result<PerforatedDomain, ConfigError> {
        tile_domain(&self.cell()?, self.geometry.m).map_err(|e| bad(e.to_string()))
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.geometry.m as f64
    }

    pub fn lambda_eps(&self) -> f64 {
        self.physics.lambda_eps.unwrap_or(self.physics.lambda + self.eps())
    }

    /// Cell counts `m = 1/eps` of the study.
    pub fn study_ms(&self) -> Result<Vec<usize>, ConfigError> {
        if self.study.eps.is_empty() {
            return Err(bad("study.eps is empty"));
        }
        self.study
            .eps
            .iter()
            .map(|&e| {
                if !(e > 0.0 && e <= 1.0) {
                    return Err(bad(format!("eps = {e} outside (0, 1]")));
                }
                let m = (1.0 / e).round();
                if (m * e - 1.0).abs() > 1e-9 {
                    return Err(bad(format!("eps = {e} is not the reciprocal of an integer")));
                }
                Ok(m as usize)
            })
            .collect()
    }
}
