//! Dispatch over the reconstruction methods.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::run_baseline;
use crate::error::{Error, Result};
use crate::grid::DepthMap;
use crate::joint::{solve_joint, Init, InitialFactors, JointConfig, Mode, SolverReport};
use crate::photometric::ObservationSet;
use crate::rpca::{run_rpca_baseline, RpcaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Rpca,
    JointMc,
    JointNc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Rpca, Method::JointMc, Method::JointNc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Rpca => "rpca",
            Method::JointMc => "joint-mc",
            Method::JointNc => "joint-nc",
        }
    }

    pub fn joint_mode(self) -> Option<Mode> {
        match self {
            Method::JointMc => Some(Mode::Mc),
            Method::JointNc => Some(Mode::Nc),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?} (expected baseline, rpca, joint-mc or joint-nc)")))
    }
}

/// Reconstruction produced by any method.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub depth: DepthMap,
    /// `3 x p` scaled normals.
    pub normals: DMatrix<f64>,
    /// `m x 3`
    pub lights: DMatrix<f64>,
    /// Present for the joint solver only.
    pub report: Option<SolverReport>,
}

/// Initial factors for the joint solver.
pub fn joint_initialization(obs: &ObservationSet, init: Init, rpca: &RpcaConfig) -> Result<InitialFactors> {
    let b = match init {
        Init::Baseline => run_baseline(obs)?,
        Init::Rpca => run_rpca_baseline(obs, rpca)?.baseline,
    };
    Ok(InitialFactors {
        lights: b.lights,
        normals: b.normals,
    })
}

/// Runs `method`. For the joint methods the mode in `joint` is overridden by
/// the method's own mode.
pub fn run_method(obs: &ObservationSet, method: Method, rpca: &RpcaConfig, joint: &JointConfig) -> Result<MethodOutput> {
    let from_baseline = |b: crate::baseline::BaselineResult| MethodOutput {
        depth: b.depth,
        normals: b.normals,
        lights: b.lights,
        report: None,
    };
    match method {
        Method::Baseline => run_baseline(obs).map(from_baseline),
        Method::Rpca => run_rpca_baseline(obs, rpca).map(|r| from_baseline(r.baseline)),
        Method::JointMc | Method::JointNc => {
            let cfg = JointConfig {
                mode: method.joint_mode().expect("joint method"),
                ..*joint
            };
            let init = joint_initialization(obs, cfg.init, rpca)?;
            let r = solve_joint(obs, &init, &cfg)?;
            Ok(MethodOutput {
                depth: r.state.z.clone(),
                normals: r.normals(),
                lights: r.lights(),
                report: Some(r.report),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("joint".parse::<Method>().is_err());
    }
}
