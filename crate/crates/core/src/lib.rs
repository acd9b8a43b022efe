//! Learning diverse trajectory forecasts with determinantal point processes.
//!
//! A conditional VAE ([`cvae`]) learns a distribution over future trajectories
//! given the past. A diversity sampling function ([`dsf`]) maps the past to a
//! fixed set of latent codes whose decoded trajectories maximize the expected
//! cardinality of a DPP ([`dpp`]). [`metrics`] scores forecast sets against
//! clustered ground truth, and [`synthdata`] generates the crossroad scenario.

// negated comparisons are used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cvae;
pub mod dpp;
pub mod dsf;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod seeding;
pub mod special;
pub mod synthdata;
pub mod trajectory;

pub use cvae::{CvaeConfig, CvaeModel, Posterior, TrajectoryShape};
pub use dpp::{DppKernel, GreedySelection, QualityConfig, SimilarityMode};
pub use dsf::{DsfLossMode, DsfModel, DsfTrainConfig};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use synthdata::{DataExample, Route, ScenarioConfig, Split};
pub use trajectory::Trajectory;
