//! Multichannel speech enhancement front end.
//!
//! The chain works on complex STFT tensors laid out `[channel][frame][bin]`:
//!
//! * [`stft`]: analysis/synthesis and log-power features,
//! * [`wpe`]: delayed multichannel linear prediction dereverberation,
//! * [`cgmm`]: unsupervised speech/noise masks from a two-component complex
//!   Gaussian mixture fitted per frequency bin,
//! * [`masks`]: oracle IRM/PSM masks and mask-weighted spatial covariances,
//! * [`beamform`]: MVDR, PMWF-β and GEV (+BAN) beamformers,
//! * [`omlsa`]: single-channel log-spectral-amplitude post-filter,
//! * [`simulate`]: mixture simulation, levels, energy VAD and SNR,
//! * [`io`]: WAV, the `TFM1` matrix format and JSON-lines manifests.

pub mod beamform;
pub mod cgmm;
pub mod error;
pub mod io;
pub mod linalg;
pub mod masks;
pub mod omlsa;
pub mod simulate;
pub mod stft;
pub mod wpe;

pub use error::{Error, Result};
pub use io::Waveform;
pub use masks::{CovarianceSet, TFMask};
pub use stft::{FeatureMatrix, MultichannelSpectrogram, StftConfig, WindowKind};
