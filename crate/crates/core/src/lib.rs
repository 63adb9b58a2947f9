//! Multi-channel far-field speech enhancement toolkit.
//!
//! Model-based building blocks for microphone-array processing: STFT
//! analysis/synthesis, a seeded far-field scene simulator, spatial-mixture
//! mask estimation with optional diarization guidance, mask-weighted spatial
//! covariance estimation, MVDR beamforming, weighted-prediction-error
//! dereverberation, evaluation metrics, bit-exact file formats, and the
//! pipeline that chains them.

pub mod beamform;
pub mod error;
pub mod io_formats;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod scm;
pub mod simulate;
pub mod spatial_mixture;
pub mod stft;
pub mod wpe;

pub use error::{Error, Result};
pub use spatial_mixture::{ActivityMatrix, MaskSet, MixtureModel};
pub use stft::{MultiChannelSignal, Spectrogram, StftConfig, Window};
