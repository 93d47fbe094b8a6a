//! Offline backward Q-learning for finite-horizon treatment regimes, and its
//! near-equivalent extension that returns sets of epsilon-admissible
//! strategies instead of a single greedy one.
//!
//! | module | contents |
//! |---|---|
//! | [`data`] | action spaces, trajectories, cohorts, validation, CSV |
//! | [`regression`] | interaction-linear and per-action RBF kernel ridge Q-models |
//! | [`qlearn`] | classical backward recursion and greedy policies |
//! | [`nearequiv`] | admissible sets, padding, column chains, policy sets |
//! | [`envs`] | single-stage treatment simulator and six-month chemotherapy model |
//! | [`evalkit`] | rollouts, constant-dose baselines, tolerance bands, blip statistics |
//! | [`tabular`] | tabular MDP fixtures with a dynamic-programming oracle |
//! | [`harness`] | the `itr`, `cancer` and `oracle` experiment runs |
//!
//! See `examples/` for one runnable program per capability.

pub mod data;
pub mod envs;
pub mod error;
pub mod evalkit;
pub mod harness;
mod linalg;
pub mod nearequiv;
pub mod qlearn;
pub mod regression;
pub mod rng;
pub mod tabular;

pub use data::{ActionSpace, OfflineDataset, PatientTrajectory, StageRecord};
pub use error::{Error, Result};
pub use nearequiv::{AdmissibilityMode, EpsilonConfig, NearEquivQStack, PolicySet};
pub use qlearn::{GreedyPolicy, Policy, QStack};
pub use regression::{DesignSpec, FittedQ};
