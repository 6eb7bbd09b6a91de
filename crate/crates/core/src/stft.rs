//! Short-time Fourier transform, its weighted overlap-add inverse, and
//! log-power features.
//!
//! Signals are reflect-padded by `fft_size - hop` samples at both ends and
//! framed with `T = 1 + (padded_len - fft_size) / hop` frames, so every input
//! sample is covered by a full set of overlapping windows.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Waveform;

/// Floor applied to power before taking the log.
pub const LOG_POWER_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann analysis window, rectangular synthesis.
    Hann,
    /// Periodic square-root Hann on both analysis and synthesis.
    SqrtHann,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            hop: 256,
            window: WindowKind::SqrtHann,
            sample_rate: 16000,
        }
    }
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size || !self.fft_size.is_multiple_of(self.hop) {
            return Err(Error::InvalidConfig(format!(
                "hop {} must divide fft_size {}",
                self.hop, self.fft_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Reflect padding applied at each end of the signal.
    pub fn padding(&self) -> usize {
        self.fft_size - self.hop
    }

    pub fn num_frames(&self, num_samples: usize) -> Result<usize> {
        let padded = num_samples + 2 * self.padding();
        if padded < self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "{num_samples} samples are too short for fft_size {} with hop {}",
                self.fft_size, self.hop
            )));
        }
        Ok(1 + (padded - self.fft_size) / self.hop)
    }

    pub fn analysis_window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => periodic_hann(self.fft_size),
            WindowKind::SqrtHann => periodic_hann(self.fft_size)
                .into_iter()
                .map(f64::sqrt)
                .collect(),
        }
    }

    pub fn synthesis_window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => vec![1.0; self.fft_size],
            WindowKind::SqrtHann => self.analysis_window(),
        }
    }

    /// Constant overlap-add gain of the analysis·synthesis product, or an
    /// error when the hop does not give a constant sum.
    pub fn cola_gain(&self) -> Result<f64> {
        self.validate()?;
        let a = self.analysis_window();
        let s = self.synthesis_window();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| {
                (n..self.fft_size)
                    .step_by(self.hop)
                    .map(|i| a[i] * s[i])
                    .sum()
            })
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        if max <= 0.0 || (max - min) > 1e-9 * max {
            return Err(Error::InvalidConfig(format!(
                "{:?} window with fft_size {} and hop {} violates constant overlap-add",
                self.window, self.fft_size, self.hop
            )));
        }
        Ok(0.5 * (max + min))
    }

    pub fn is_cola(&self) -> bool {
        self.cola_gain().is_ok()
    }
}

/// Complex STFT tensor `[channel][frame][bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelSpectrogram {
    data: Array3<Complex64>,
    config: StftConfig,
    num_samples: usize,
}

impl MultichannelSpectrogram {
    /// `num_samples` is the length of the time signal the frames describe;
    /// [`istft`] crops its output to it.
    pub fn new(data: Array3<Complex64>, config: StftConfig, num_samples: usize) -> Result<Self> {
        config.validate()?;
        if data.len_of(Axis(2)) != config.num_bins() {
            return Err(Error::ShapeMismatch(format!(
                "{} bins, expected {} for fft_size {}",
                data.len_of(Axis(2)),
                config.num_bins(),
                config.fft_size
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self {
            data,
            config,
            num_samples,
        })
    }

    /// Same geometry as `self` with new contents (possibly another channel count).
    pub fn with_data(&self, data: Array3<Complex64>) -> Result<Self> {
        if data.len_of(Axis(1)) != self.frames() || data.len_of(Axis(2)) != self.bins() {
            return Err(Error::ShapeMismatch(format!(
                "frames x bins {:?} differ from {}x{}",
                &data.shape()[1..],
                self.frames(),
                self.bins()
            )));
        }
        Self::new(data, self.config, self.num_samples)
    }

    pub fn from_single_channel(
        channel: Array2<Complex64>,
        config: StftConfig,
        num_samples: usize,
    ) -> Result<Self> {
        let (t, f) = channel.dim();
        let data = channel
            .into_shape_with_order((1, t, f))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(data, config, num_samples)
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<Complex64> {
        self.data
    }

    pub fn channel(&self, index: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(0), index)
    }

    pub fn checked_channel(&self, index: usize) -> Result<ArrayView2<'_, Complex64>> {
        if index >= self.channels() {
            return Err(Error::ChannelOutOfRange {
                channel: index,
                channels: self.channels(),
            });
        }
        Ok(self.channel(index))
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn channels(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn frames(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn bins(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            data: &self.data * Complex64::new(gain, 0.0),
            config: self.config,
            num_samples: self.num_samples,
        }
    }
}

/// Index into a reflect-padded signal (no edge repeat), bouncing as often as
/// needed for signals shorter than the padding.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn stft_channel(
    x: ndarray::ArrayView1<f64>,
    cfg: &StftConfig,
    window: &[f64],
    fft: &Arc<dyn RealToComplex<f64>>,
    mut out: ArrayViewMut2<Complex64>,
) {
    let n = cfg.fft_size;
    let pad = cfg.padding() as isize;
    let len = x.len();
    let mut frame = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    for (t, mut row) in out.outer_iter_mut().enumerate() {
        let start = (t * cfg.hop) as isize - pad;
        for (j, (v, w)) in frame.iter_mut().zip(window).enumerate() {
            *v = x[reflect_index(start + j as isize, len)] * w;
        }
        fft.process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
            .expect("buffer sizes come from the plan");
        for (dst, src) in row.iter_mut().zip(&spectrum) {
            *dst = *src;
        }
    }
    debug_assert_eq!(frame.len(), n);
}

pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<MultichannelSpectrogram> {
    cfg.validate()?;
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let frames = cfg.num_frames(wave.len())?;
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let window = cfg.analysis_window();
    let mut data = Array3::<Complex64>::zeros((wave.channels(), frames, cfg.num_bins()));
    let samples = wave.samples();
    data.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(c, out)| stft_channel(samples.row(c), cfg, &window, &fft, out));
    MultichannelSpectrogram::new(data, *cfg, wave.len())
}

fn istft_channel(
    spec: ArrayView2<Complex64>,
    cfg: &StftConfig,
    window: &[f64],
    norm: &[f64],
    ifft: &Arc<dyn ComplexToReal<f64>>,
    num_samples: usize,
) -> Vec<f64> {
    let n = cfg.fft_size;
    let pad = cfg.padding();
    let mut acc = vec![0.0; norm.len()];
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let last = spectrum.len() - 1;
    for (t, row) in spec.outer_iter().enumerate() {
        spectrum.iter_mut().zip(row).for_each(|(d, s)| *d = *s);
        spectrum[0].im = 0.0;
        spectrum[last].im = 0.0;
        ifft.process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
            .expect("DC and Nyquist imaginary parts are zeroed");
        let start = t * cfg.hop;
        for j in 0..n {
            acc[start + j] += frame[j] * window[j] / n as f64;
        }
    }
    (0..num_samples)
        .map(|i| {
            let d = norm[pad + i];
            if d > 1e-12 {
                acc[pad + i] / d
            } else {
                0.0
            }
        })
        .collect()
}

/// Weighted overlap-add inverse. The config must satisfy constant
/// overlap-add; samples are divided by the accumulated analysis·synthesis
/// window product, so the round trip is exact up to rounding everywhere the
/// windows overlap.
pub fn istft(spec: &MultichannelSpectrogram) -> Result<Waveform> {
    let cfg = spec.config();
    cfg.cola_gain()?;
    let n = cfg.fft_size;
    let padded_len = (spec.frames() - 1) * cfg.hop + n;
    let num_samples = spec
        .num_samples()
        .min(padded_len.saturating_sub(cfg.padding()));
    let analysis = cfg.analysis_window();
    let synthesis = cfg.synthesis_window();
    let mut norm = vec![0.0; padded_len];
    for t in 0..spec.frames() {
        for j in 0..n {
            norm[t * cfg.hop + j] += analysis[j] * synthesis[j];
        }
    }
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(n);
    let channels: Vec<Vec<f64>> = (0..spec.channels())
        .into_par_iter()
        .map(|c| istft_channel(spec.channel(c), cfg, &synthesis, &norm, &ifft, num_samples))
        .collect();
    Waveform::from_channels(&channels, cfg.sample_rate)
}

/// Real `[frame][dimension]` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub normalized: bool,
}

impl FeatureMatrix {
    /// Utterance-level mean and variance normalization per dimension.
    /// Constant dimensions are only centred.
    pub fn cmvn(mut self) -> Self {
        let frames = self.data.nrows();
        if frames == 0 {
            self.normalized = true;
            return self;
        }
        for mut col in self.data.columns_mut() {
            let mean = col.sum() / frames as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / frames as f64;
            let std = var.sqrt();
            let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
            col.mapv_inplace(|x| (x - mean) * scale);
        }
        self.normalized = true;
        self
    }
}

/// `log(max(|y|^2, 1e-10))` of one channel, optionally CMVN-normalized.
pub fn log_power_spectrogram(
    spec: &MultichannelSpectrogram,
    channel: usize,
    cmvn: bool,
) -> Result<FeatureMatrix> {
    let y = spec.checked_channel(channel)?;
    let features = FeatureMatrix {
        data: y.mapv(|z| z.norm_sqr().max(LOG_POWER_FLOOR).ln()),
        normalized: false,
    };
    Ok(if cmvn { features.cmvn() } else { features })
}
