//! Multi-scale sliding-window detection over normalized deep-feature
//! pyramids with root-only part models.
//!
//! The pipeline runs image pyramid → conv5 features → 3x3 max pooling →
//! per-level z-score normalization (norm5) → root-filter scoring → NMS →
//! box regression. Training mines hard negatives for per-component linear
//! SVMs; `eval` scores detections under discrete and continuous protocols.

pub mod annotations;
pub mod error;
pub mod eval;
pub mod featex;
pub mod imaging;
pub mod model;
pub mod postproc;
pub mod synth;
pub mod train;

pub use error::{Error, FormatError, Result};
