//! Out-of-distribution scoring for LiDAR point clouds with a learned
//! neural distribution prior.
//!
//! The crate covers the whole pipeline at desk scale: scan I/O, synthetic
//! scenes, Perlin Raise augmentation, DBSCAN, static OOD scores, the prior
//! weighting module with hand-written gradients, training losses, a toy
//! backbone with its optimizer, and point- and object-level metrics.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod ndp;
pub mod perlin;
pub mod scenegen;
pub mod scoring;
pub mod spatial;
pub mod trainer;
pub mod types;

pub use cluster::{dbscan, ClusterAssignment, NOISE};
pub use error::{Error, Result};
pub use losses::{LossConfig, StdOrientation};
pub use metrics::{EvalConfig, EvalMetrics, Report};
pub use ndp::NdpParams;
pub use perlin::{perlin_raise, RaiseConfig, RaiseReport};
pub use scenegen::{SceneConfig, AnomalyShape};
pub use scoring::ScoreMethod;
pub use trainer::{train, TrainConfig, TrainLog, TrainedModel};
pub use types::{ClassSpec, LabelMap, LogitField, PointCloud, Role, ScoreField};
