//! Synthetic datasets, splits and manifest IO.

pub mod clips;
pub mod io;
pub mod manifest;
pub mod seg;
pub mod split;

pub use clips::{clip_params, generate_clip, generate_clip_dataset, render_clip, ClipParams, SyntheticClipSpec};
pub use io::{read_clip, write_clip, write_pgm};
pub use manifest::{read_manifest, write_manifest, Manifest, ManifestEntry, Source, Split};
pub use seg::{generate_seg_dataset, SegFrame, SyntheticSegSpec};
pub use split::{split_dataset, SplitFractions, SplitItem};
