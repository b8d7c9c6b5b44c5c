//! Run configuration: a TOML file with one section per component. Every
//! field has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::fem::{ExcitationParams, ReluctivityModel};
use crate::homotopy::HomotopyConfig;
use crate::mesh::GeometryParams;
use crate::motor::{HealthParams, MotorConfig, SolverParams};
use crate::objectives::ObjectiveParams;
use crate::shape::ExtensionKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a VTK snapshot of every `snapshot_stride`-th accepted point.
    pub snapshot_stride: usize,
    /// Record wall-clock times in `trace.csv`. Off by default so that
    /// repeated runs produce identical files.
    pub wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), snapshot_stride: 1, wall_time: false }
    }
}

/// Trace points to re-optimize on a refined mesh after the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub points: Vec<usize>,
    pub levels: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { points: Vec::new(), levels: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for random test directions; the trace itself is deterministic.
    pub seed: u64,
    /// Interface vertices held fixed next to each rim junction.
    pub rim_pinned: usize,
    pub geometry: GeometryParams,
    pub materials: ReluctivityModel,
    pub excitation: ExcitationParams,
    pub objectives: ObjectiveParams,
    pub extension: ExtensionKind,
    pub solver: SolverParams,
    pub health: HealthParams,
    pub homotopy: HomotopyConfig,
    pub output: OutputConfig,
    pub refine: RefineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MotorConfig::default();
        Self {
            seed: 0,
            rim_pinned: m.rim_pinned,
            geometry: m.geometry,
            materials: m.materials,
            excitation: m.excitation,
            objectives: m.objectives,
            extension: m.extension,
            solver: m.solver,
            health: m.health,
            homotopy: HomotopyConfig::default(),
            output: OutputConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable in TOML")
    }

    pub fn motor(&self) -> MotorConfig {
        MotorConfig {
            geometry: self.geometry.clone(),
            materials: self.materials,
            excitation: self.excitation,
            objectives: self.objectives,
            extension: self.extension,
            rim_pinned: self.rim_pinned,
            solver: self.solver,
            health: self.health,
        }
    }

    /// Structural checks; physical self-checks live in [`crate::verify`].
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, msg: String| ConfigError::Invalid { field: field.into(), msg };
        self.motor().validate().map_err(|e| invalid("motor", e.to_string()))?;
        self.materials.check_monotone(3.0, 600).map_err(|e| invalid("materials", e.to_string()))?;
        self.homotopy.validate().map_err(|e| invalid("homotopy", e))?;
        if self.output.snapshot_stride == 0 {
            return Err(invalid("output.snapshot_stride", "must be at least 1".into()));
        }
        if let ExtensionKind::Elastic { lambda, mu } = self.extension {
            if !(mu > 0.0 && lambda + mu > 0.0) {
                return Err(invalid("extension", format!("elastic extension needs mu > 0 and lambda + mu > 0, got {lambda}, {mu}")));
            }
        }
        Ok(())
    }
}
