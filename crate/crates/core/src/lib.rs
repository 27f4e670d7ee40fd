//! Stochastic-approximation tracking of drifting, predictable parameters.
//!
//! The estimator follows the recursion `θ̂_{k+1} = θ̂_k + γ_k G_k(θ̂_k, X_k)`
//! where `G_k` is a gain function whose conditional mean pushes the estimate
//! toward the current parameter `θ_k`. The crate bundles the gain catalog,
//! step schedules for the static, stabilizing and Lipschitz regimes,
//! non-asymptotic error bounds, AR(d) matrix algebra, the scalar Kalman
//! reduction and a Monte-Carlo experiment harness.

// `!(x > 0.0)` is the house idiom for rejecting NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod experiments;
pub mod gains;
pub mod kalman;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod schedules;
pub mod stats;
pub mod tracking;

pub use error::{Error, Result};
pub use rng::SplitMix64;
pub use gains::{DeclaredConstants, Gain, GainEvaluation, GainSpec, Past};
pub use models::{ParameterPath, PathKind, Simulator};
pub use schedules::{ScheduleKind, StepSchedule};
pub use tracking::{run_tracking, ProjectionRegion, TrackingConfig, TrackingRun};
