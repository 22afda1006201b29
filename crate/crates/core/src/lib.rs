//! Multi-agent maximum-entropy inverse reinforcement learning for pedestrian
//! crowds.
//!
//! The crate learns one cost-weight vector per agent by matching features of
//! demonstrations against rollouts of an entropy-regularized linear-quadratic
//! game. Module map:
//!
//! - [`traj`]: states, controls, double-integrator dynamics, dataset layout.
//! - [`features`]: goal / proximity / effort features and the linear cost.
//! - [`quad_approx`]: finite-difference quadratic expansion of stage costs.
//! - [`game`]: feedback-Nash LQ game solver, covariance conditioning, rollouts.
//! - [`irl`]: multi-agent (block coordinate) and single-agent MaxEnt IRL.
//! - [`baselines`]: GMM, quadratic energy-based BC and constant velocity.
//! - [`pipeline`]: frame ingestion, track filtering, scenario catalogs,
//!   interchange files, synthetic demonstrations.
//! - [`eval`]: ADE/FDE/EFE, RMSE CDFs, heading entropy and report emission.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod features;
pub mod game;
pub mod irl;
pub mod pipeline;
pub mod quad_approx;
pub mod rng;
pub mod traj;

pub use error::{Error, Result};
pub use features::{CostParams, FeatureVector, ProximityConfig};
pub use game::{PolicySequence, PolicyStage, SolverConfig, SolverDiagnostics};
pub use irl::{TrainingConfig, TrainingOutcome, TrainingTrace};
pub use traj::{AgentState, ControlInput, JointState, ScenarioSpec, Trajectory};
