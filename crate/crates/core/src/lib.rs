//! Semi-supervised learning for surgical video at desk scale.
//!
//! Three pseudo-labeling frameworks share one set of samplers, toy backbones
//! and synthetic datasets:
//!
//! - [`dist`]: two-stage self-training with checkpoint-consistency reliability
//!   scores and temporal/transformation invariance filters.
//! - [`semivt`]: class-prototype triplet contrast plus a thresholded
//!   mean-teacher consistency term over long and short temporal views.
//! - [`encore`]: per-class confidence thresholds from true-positive
//!   statistics, with candidate profiles chosen by measured Dice.

pub mod augment;
pub mod data;
pub mod dist;
pub mod encore;
pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod prob;
pub mod rng;
pub mod sampling;
pub mod semivt;
pub mod types;

pub use error::{Error, Result};
pub use types::{FrameView, LabelSpace, MetricReport, Prediction, SegPrediction, VideoClip};
