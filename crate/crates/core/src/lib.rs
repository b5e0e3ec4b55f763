//! Training-free probabilistic forecasting of dynamical systems with a
//! closed-form conditional flow over a memory bank of observed transitions.
//!
//! A forecast step transports a noisy copy of the current state along the
//! bank-averaged Gaussian-bridge velocity from `t = 0` to `t = 1`; repeated
//! steps give autoregressive rollouts and independent rollouts give an
//! ensemble.

pub mod bank;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod path;
pub mod sampler;
pub mod velocity;

pub use bank::{extract_transitions, load_bank, save_bank, Trajectory, Transition, TransitionBank};
pub use error::{Error, Result};
pub use path::{BridgeSchedule, PathFamily};
pub use sampler::{ForecastEnsemble, Sampler, Scheme, SolverConfig};
pub use velocity::{VelocityEval, VelocityField};
