//! Multimodal skin-lesion classification with an auxiliary super-resolution
//! task sharing the visual encoder.

pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod metadata;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
