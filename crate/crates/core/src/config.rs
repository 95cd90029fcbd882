//! TOML run configuration. Every field has a default, so an empty file is a
//! valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TrialPlan;
use crate::joint::JointConfig;
use crate::photometric::{SceneSpec, Shape};
use crate::pipeline::Method;
use crate::rpca::RpcaConfig;

/// Grid swept by the benchmark; the scene template and solver settings come
/// from the enclosing [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub shapes: Vec<Shape>,
    pub image_counts: Vec<usize>,
    pub noise_levels: Vec<f64>,
    /// Number of seeds, counted up from the run seed.
    pub trials: u64,
    pub methods: Vec<Method>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let plan = TrialPlan::default();
        Self {
            shapes: plan.shapes,
            image_counts: plan.image_counts,
            noise_levels: plan.noise_levels,
            trials: plan.seeds.len() as u64,
            methods: plan.methods,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Must fit in an `i64` to survive a TOML round trip.
    pub seed: u64,
    pub method: Method,
    pub scene: SceneSpec,
    pub rpca: RpcaConfig,
    pub joint: JointConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::JointMc,
            scene: SceneSpec::default(),
            rpca: RpcaConfig::default(),
            joint: JointConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&crate::io::read_text(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.joint.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must be below 2^63".into()));
        }
        Ok(())
    }

    pub fn trial_plan(&self) -> TrialPlan {
        TrialPlan {
            shapes: self.bench.shapes.clone(),
            image_counts: self.bench.image_counts.clone(),
            noise_levels: self.bench.noise_levels.clone(),
            seeds: (self.seed..self.seed + self.bench.trials).collect(),
            methods: self.bench.methods.clone(),
            scene: self.scene.clone(),
            rpca: self.rpca,
            joint: self.joint,
        }
    }
}
