//! Audio and matrix serialization.

pub mod manifest;
pub mod tfm;
pub mod wav;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub use manifest::{read_manifest, write_manifest, ManifestRecord};
pub use tfm::{read_mask, read_matrix, write_mask, write_matrix, TfmError};
pub use wav::{read_wav, write_wav, WavEncoding, WavError};

/// PCM samples laid out `[channel][sample]`, nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        let samples = Array2::from_shape_vec((1, n), samples)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    /// Stacks equal-length channels.
    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::ShapeMismatch(
                "all channels must have the same length".into(),
            ));
        }
        let flat: Vec<f64> = channels.iter().flatten().copied().collect();
        let samples = Array2::from_shape_vec((channels.len(), n), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn samples_mut(&mut self) -> ndarray::ArrayViewMut2<'_, f64> {
        self.samples.view_mut()
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn channel(&self, index: usize) -> ArrayView1<'_, f64> {
        self.samples.index_axis(Axis(0), index)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples over all channels.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    /// Single-channel copy of channel `index`.
    pub fn select_channel(&self, index: usize) -> Result<Waveform> {
        if index >= self.channels() {
            return Err(Error::ChannelOutOfRange {
                channel: index,
                channels: self.channels(),
            });
        }
        let samples = self.samples.slice(ndarray::s![index..index + 1, ..]).to_owned();
        Ok(Waveform {
            samples,
            sample_rate: self.sample_rate,
        })
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: &self.samples * gain,
            sample_rate: self.sample_rate,
        }
    }
}
