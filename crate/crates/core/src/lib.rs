//! Single-channel speech enhancement by cross-term-aware spectral subtraction
//! followed by presence-weighted phase compensation.

pub mod audio;
pub mod error;
pub mod magnitude;
pub mod metrics;
pub mod noise;
pub mod params;
pub mod phase;
pub mod pipeline;
pub mod stft;

pub use audio::SampleBuffer;
pub use error::{Error, Result};
pub use params::EnhancementParams;
