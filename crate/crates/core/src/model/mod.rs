//! Wide-stem residual classifier.

pub mod data;
pub mod network;
pub mod params;

pub use data::{predict_logits, FrameSet};
pub use network::{standardize, BackboneConfig, BnBuffers, BnStatus, Forward, Mode, Model, MAX_DROPOUT};
pub use params::{Layout, LayoutEntry, ParameterVector};
