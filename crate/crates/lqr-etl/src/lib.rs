//! Event-triggered learning for linear-quadratic control.
//!
//! A linear-Gaussian plant under LQR state feedback incurs a quadratic cost
//! whose finite-horizon statistics are exactly computable from the model:
//! mean and second moment through discrete Lyapunov equations, and the full
//! distribution through the moment-generating function of a Gaussian
//! quadratic form. Comparing empirically observed cost windows against these
//! model-induced statistics yields *learning triggers*: statistical tests
//! that fire only when the observed cost cannot be explained by process
//! noise, indicating that the model no longer matches the plant and should
//! be re-identified.
//!
//! The crate provides
//!
//! - [`linalg`]: discrete Lyapunov/Riccati solvers and symmetric eigen
//!   routines sized for desk-scale systems;
//! - [`system`]: linear-Gaussian models, LQR closed loops, stationary and
//!   joint window covariances, seeded simulation, random generation and
//!   norm-bounded perturbation of systems;
//! - [`cost`]: exact cost statistics (mean, second moment, MGF spectrum)
//!   and the deterministic cost bound used by the mean-based trigger;
//! - [`triggers`]: Hoeffding-style mean/relative/second-moment triggers and
//!   the Chernoff full-distribution trigger with convex threshold
//!   optimization, plus stateful per-step evaluators;
//! - [`identification`]: oracle model updates, chirp excitation,
//!   least-squares identification and residual covariance estimation;
//! - [`metrics`]: the H₂-based system-change metric, detection-delay
//!   bookkeeping, misfire rates and Gaussian-kernel density estimates;
//! - [`config`] / [`report`] / [`scenario`]: the closed-loop harness that
//!   runs full event-triggered-learning scenarios and Monte Carlo
//!   detection-delay studies from a TOML configuration.
//!
//! Runnable examples live under `examples/`; the `lqr-etl` binary exposes
//! the same functionality as `simulate`, `montecarlo`, `moments`,
//! `thresholds` and `identify` subcommands.

pub mod config;
pub mod cost;
pub mod error;
pub mod identification;
pub mod linalg;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod system;
pub mod triggers;

pub use error::{Error, Result};
