//! Uncalibrated photometric stereo.
//!
//! Recovers depth, scaled normals and lights from images under unknown
//! distant lighting, up to the generalized bas-relief ambiguity. Three
//! reconstructions are provided:
//!
//! * [`baseline::run_baseline`]: rank-3 SVD followed by an integrability
//!   constraint that reduces the 3 x 3 ambiguity to GBR;
//! * [`rpca::run_rpca_baseline`]: the same after robust PCA cleanup;
//! * [`joint::solve_joint`]: rank and integrability enforced together by a
//!   truncated nuclear norm, solved with majorization and ADMM.
//!
//! [`photometric`] renders synthetic scenes and [`eval`] scores
//! reconstructions against ground truth.

pub mod baseline;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod joint;
pub mod lowrank;
pub mod photometric;
pub mod pipeline;
pub mod rpca;

pub use baseline::{run_baseline, BaselineResult};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{fit_gbr_depth, percent_improved_trials, relative_improvement, z_err, EvalReport, TrialPlan};
pub use grid::{DepthMap, PixelGrid};
pub use joint::{solve_joint, Init, JointConfig, JointResult, Mode};
pub use photometric::{generate_scene, ObservationSet, Scene, SceneSpec, Shape};
pub use pipeline::{run_method, Method, MethodOutput};
pub use rpca::{run_rpca_baseline, RpcaConfig};
