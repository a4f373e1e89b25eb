//! Robust reinforcement learning over uncertain transition models.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: explicit finite MDPs, policies, rollouts, stationary distributions
//!   and step-size schedules.
//! * [`uncertainty`]: zero-sum confidence regions and their support functions,
//!   with and without the probability-simplex constraints, plus the β / ε
//!   diagnostics that quantify the gap between the two.
//! * [`envs`]: gridworld and chain replicas, random MDP fixtures and the
//!   random-restart perturbation used to build mis-specified training models.
//! * [`dp`]: exact robust dynamic programming, the ground truth for every learner.
//! * [`tabular`]: robust Q-learning, SARSA and TD(λ) with eligibility traces.
//! * [`fa_linear`] / [`fa_nonlinear`]: robust gradient-TD (GTD2 / TDC) for linear
//!   and smooth nonlinear value functions, with exact loss evaluators.
//! * [`harness`]: experiment configs, cross-validated radius selection, reports
//!   and the invariant self-check used by the CLI.
//!
//! Everything is cost-minimising. The harness flips the sign at the reporting
//! boundary so that experiment outputs read as rewards.

// `!(x > 0.0)` style checks are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dp;
pub mod envs;
pub mod error;
pub mod fa_linear;
pub mod fa_nonlinear;
pub mod harness;
mod linalg;
pub mod mdp;
pub mod rng;
pub mod tabular;
pub mod uncertainty;

pub use dp::{QTable, ValueTable};
pub use error::{Error, Result};
pub use mdp::{Policy, StepSchedule, StoppingRule, TabularMdp, Trajectory};
pub use rng::SimRng;
pub use uncertainty::{ConfidenceRegion, Regions, SupportResult};
pub use harness::{EvalReport, ExperimentConfig};
