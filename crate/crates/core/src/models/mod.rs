//! Toy backbones: clip classifiers with pluggable temporal heads, a small
//! segmentation encoder-decoder, checkpoints and the supervised trainer.

pub mod checkpoint;
pub mod clip;
pub mod heads;
pub mod params;
pub mod seg;
pub mod train;

pub use checkpoint::{load_checkpoint, load_seg_checkpoint, save_checkpoint, Checkpoint, FractionTag};
pub use clip::{ClipClassifier, ClipModelSpec, EmbeddingOutput, SpatialPooling};
pub use heads::{head_by_name, TemporalHead, HEADS};
pub use seg::{SegModelSpec, SegmentationNet};
pub use train::{evaluate, train_supervised, train_with_hook, Example, TrainConfig, TrainOutcome, TrainingHook};
