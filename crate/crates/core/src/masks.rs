//! Time-frequency masks and mask-weighted spatial covariance estimation.

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::stft::MultichannelSpectrogram;

/// Bins whose mask mass falls below this fraction of the frame count fall
/// back to a loaded sample covariance.
pub const MIN_MASS_FRACTION: f64 = 1e-3;

/// Real `[frame][bin]` matrix with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TFMask {
    data: Array2<f64>,
}

impl TFMask {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("mask"));
        }
        if let Some(((t, f), v)) = data.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!(
                "mask value {v} at ({t}, {f}) outside [0, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Clamps into `[0, 1]`; NaN becomes 0.
    pub fn from_clamped(data: Array2<f64>) -> Self {
        Self {
            data: data.mapv(|x| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) }),
        }
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Self {
        Self::from_clamped(Array2::from_elem((frames, bins), value))
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    /// `1 - mask`.
    pub fn complement(&self) -> Self {
        Self {
            data: self.data.mapv(|x| 1.0 - x),
        }
    }
}

fn check_same_shape<A, B>(a: &ArrayView2<A>, b: &ArrayView2<B>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Ideal ratio mask `|s| / (|s| + |n|)`; cells where both are zero map to 0.
pub fn irm(target: ArrayView2<Complex64>, noise: ArrayView2<Complex64>) -> Result<TFMask> {
    check_same_shape(&target, &noise, "irm")?;
    let mut out = Array2::zeros(target.dim());
    Zip::from(&mut out)
        .and(&target)
        .and(&noise)
        .for_each(|m, s, n| {
            let (s, n) = (s.norm(), n.norm());
            *m = if s + n > 0.0 { s / (s + n) } else { 0.0 };
        });
    TFMask::new(out)
}

/// Phase-sensitive mask `|s| cos(∠y − ∠s) / |y|`, truncated to `[0, 1]`;
/// cells with `|y| = 0` map to 0.
pub fn psm(target: ArrayView2<Complex64>, mixture: ArrayView2<Complex64>) -> Result<TFMask> {
    check_same_shape(&target, &mixture, "psm")?;
    let mut out = Array2::zeros(target.dim());
    Zip::from(&mut out)
        .and(&target)
        .and(&mixture)
        .for_each(|m, s, y| {
            let ym = y.norm();
            // |s| cos(∠y − ∠s) / |y| = Re(s · conj(y)) / |y|^2
            *m = if ym > 0.0 {
                ((s * y.conj()).re / (ym * ym)).clamp(0.0, 1.0)
            } else {
                0.0
            };
        });
    TFMask::new(out)
}

/// Mean squared difference between two masks.
pub fn mask_mse(estimate: &TFMask, target: &TFMask) -> Result<f64> {
    check_same_shape(&estimate.data(), &target.data(), "mask_mse")?;
    let n = estimate.data.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = estimate
        .data
        .iter()
        .zip(target.data.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(sum / n as f64)
}

/// Per-bin speech and noise spatial covariances.
#[derive(Clone, Debug)]
pub struct CovarianceSet {
    pub speech: Vec<CMatrix>,
    pub noise: Vec<CMatrix>,
    /// `Σ_t λ` per bin for the speech mask.
    pub speech_mass: Vec<f64>,
    /// `Σ_t λ` per bin for the noise mask.
    pub noise_mass: Vec<f64>,
    /// Bins where at least one component fell back to the loaded sample
    /// covariance because its mask mass was too small.
    pub fallback_bins: Vec<usize>,
}

impl CovarianceSet {
    /// Wraps explicitly given covariances (unit mass, no fallbacks).
    pub fn from_matrices(speech: Vec<CMatrix>, noise: Vec<CMatrix>) -> Result<Self> {
        if speech.len() != noise.len() || speech.is_empty() {
            return Err(Error::ShapeMismatch(
                "speech and noise need the same, non-zero number of bins".into(),
            ));
        }
        let m = speech[0].nrows();
        if speech
            .iter()
            .chain(noise.iter())
            .any(|c| c.nrows() != m || c.ncols() != m)
        {
            return Err(Error::ShapeMismatch("covariances must all be MxM".into()));
        }
        if speech.iter().chain(noise.iter()).any(|c| !linalg::is_finite(c)) {
            return Err(Error::NonFinite("covariance"));
        }
        let bins = speech.len();
        Ok(Self {
            speech,
            noise,
            speech_mass: vec![1.0; bins],
            noise_mass: vec![1.0; bins],
            fallback_bins: Vec::new(),
        })
    }

    pub fn channels(&self) -> usize {
        self.speech[0].nrows()
    }

    pub fn bins(&self) -> usize {
        self.speech.len()
    }
}

struct BinCovariance {
    speech: CMatrix,
    noise: CMatrix,
    speech_mass: f64,
    noise_mass: f64,
    fallback: bool,
}

fn bin_covariance(
    spec: &MultichannelSpectrogram,
    speech_mask: &ArrayView2<f64>,
    noise_mask: &ArrayView2<f64>,
    f: usize,
) -> BinCovariance {
    let m = spec.channels();
    let frames = spec.frames();
    let data = spec.data();
    let mut acc_s = CMatrix::zeros(m, m);
    let mut acc_n = CMatrix::zeros(m, m);
    let mut acc_all = CMatrix::zeros(m, m);
    let (mut mass_s, mut mass_n) = (0.0, 0.0);
    for t in 0..frames {
        let (ls, ln) = (speech_mask[(t, f)], noise_mask[(t, f)]);
        mass_s += ls;
        mass_n += ln;
        for i in 0..m {
            let yi = data[(i, t, f)];
            for j in 0..m {
                let outer = yi * data[(j, t, f)].conj();
                acc_s[(i, j)] += outer * ls;
                acc_n[(i, j)] += outer * ln;
                acc_all[(i, j)] += outer;
            }
        }
    }
    let floor = MIN_MASS_FRACTION * frames as f64;
    let mut fallback = false;
    let mut finish = |acc: CMatrix, mass: f64| {
        if mass >= floor && mass > 0.0 {
            linalg::hermitian_part(&acc.unscale(mass))
        } else {
            fallback = true;
            let sample = acc_all.unscale(frames.max(1) as f64);
            if linalg::trace_re(&sample) > 0.0 {
                linalg::loaded(&sample, linalg::DIAGONAL_LOADING)
            } else {
                CMatrix::identity(m, m)
            }
        }
    };
    let speech = finish(acc_s, mass_s);
    let noise = finish(acc_n, mass_n);
    BinCovariance {
        speech,
        noise,
        speech_mass: mass_s,
        noise_mass: mass_n,
        fallback,
    }
}

/// `Φ_f = Σ_t λ y yᴴ / Σ_t λ` for the speech and the noise mask.
pub fn estimate_covariances(
    spec: &MultichannelSpectrogram,
    speech_mask: &TFMask,
    noise_mask: &TFMask,
) -> Result<CovarianceSet> {
    let dim = (spec.frames(), spec.bins());
    if speech_mask.dim() != dim || noise_mask.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "masks {:?}/{:?} vs spectrogram {dim:?}",
            speech_mask.dim(),
            noise_mask.dim()
        )));
    }
    if spec.channels() == 0 {
        return Err(Error::ShapeMismatch("spectrogram has no channels".into()));
    }
    let (ms, mn) = (speech_mask.data(), noise_mask.data());
    let bins: Vec<BinCovariance> = (0..spec.bins())
        .into_par_iter()
        .map(|f| bin_covariance(spec, &ms, &mn, f))
        .collect();
    let mut set = CovarianceSet {
        speech: Vec::with_capacity(bins.len()),
        noise: Vec::with_capacity(bins.len()),
        speech_mass: Vec::with_capacity(bins.len()),
        noise_mass: Vec::with_capacity(bins.len()),
        fallback_bins: Vec::new(),
    };
    for (f, b) in bins.into_iter().enumerate() {
        if b.fallback {
            set.fallback_bins.push(f);
        }
        set.speech.push(b.speech);
        set.noise.push(b.noise);
        set.speech_mass.push(b.speech_mass);
        set.noise_mass.push(b.noise_mass);
    }
    Ok(set)
}
