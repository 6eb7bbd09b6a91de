//! Weighted prediction error dereverberation.
//!
//! Per frequency bin, late reverberation is predicted from a stack of `taps`
//! past frames starting `delay` frames back and subtracted:
//!
//! ```text
//! x_t = y_t − Gᴴ ỹ_t,   ỹ_t = [y_{t−Δ}; y_{t−Δ−1}; …; y_{t−Δ−K+1}]   (M·K)
//! ```
//!
//! `G` solves the normal equations weighted by the inverse of the current
//! per-frame power estimate `λ_t = mean_m |x_{t,m}|²`; `λ` and `G` are
//! alternated for a fixed number of iterations.

use ndarray::{Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::stft::MultichannelSpectrogram;

/// Power floor relative to the bin's mean power.
const POWER_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WpeConfig {
    pub taps: usize,
    pub delay: usize,
    pub iterations: usize,
    /// Diagonal loading of the normal matrix, relative to `trace / dim`.
    pub regularization: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            delay: 3,
            iterations: 3,
            regularization: 1e-6,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.delay == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "WPE taps, delay and iterations must all be >= 1".into(),
            ));
        }
        if !(self.regularization > 0.0) || !self.regularization.is_finite() {
            return Err(Error::InvalidConfig("WPE regularization must be > 0".into()));
        }
        Ok(())
    }
}

/// Prediction filters, one `(M·K) × M` matrix per bin.
#[derive(Clone, Debug)]
pub struct WpeFilters {
    pub filters: Vec<CMatrix>,
    pub taps: usize,
    pub delay: usize,
}

/// Per-bin state at the last iteration, kept for diagnostics and tests.
#[derive(Clone, Debug)]
pub(crate) struct BinSolution {
    pub filter: CMatrix,
    /// Inverse-power weights `1/λ_t` the filter was solved with.
    #[cfg_attr(not(test), allow(dead_code))]
    pub weights: Vec<f64>,
}

fn stacked(y: &ArrayView2<Complex64>, t: usize, taps: usize, delay: usize, out: &mut [Complex64]) {
    let m = y.nrows();
    for k in 0..taps {
        let lag = delay + k;
        for c in 0..m {
            out[k * m + c] = if t >= lag {
                y[(c, t - lag)]
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
    }
}

fn predict(
    y: &ArrayView2<Complex64>,
    filter: &CMatrix,
    taps: usize,
    delay: usize,
) -> ndarray::Array2<Complex64> {
    let (m, frames) = y.dim();
    let mut out = y.to_owned();
    let mut buf = vec![Complex64::new(0.0, 0.0); m * taps];
    for t in delay..frames {
        stacked(y, t, taps, delay, &mut buf);
        for c in 0..m {
            let p: Complex64 = buf
                .iter()
                .enumerate()
                .map(|(d, b)| filter[(d, c)].conj() * b)
                .sum();
            out[(c, t)] -= p;
        }
    }
    out
}

/// `y` is `[channel][frame]` for one bin.
pub(crate) fn solve_bin(y: ArrayView2<Complex64>, cfg: &WpeConfig) -> BinSolution {
    let (m, frames) = y.dim();
    let dim = m * cfg.taps;
    let mut x = y.to_owned();
    let mut filter = CMatrix::zeros(dim, m);
    let mut weights = vec![0.0; frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); dim];
    for _ in 0..cfg.iterations {
        let power: Vec<f64> = (0..frames)
            .map(|t| x.column(t).iter().map(|z| z.norm_sqr()).sum::<f64>() / m as f64)
            .collect();
        let mean = power.iter().sum::<f64>() / frames as f64;
        if mean <= 0.0 {
            return BinSolution {
                filter: CMatrix::zeros(dim, m),
                weights: vec![0.0; frames],
            };
        }
        let floor = POWER_FLOOR * mean;
        for (w, p) in weights.iter_mut().zip(&power) {
            *w = 1.0 / p.max(floor);
        }

        let mut r = CMatrix::zeros(dim, dim);
        let mut p = CMatrix::zeros(dim, m);
        for t in cfg.delay..frames {
            stacked(&y, t, cfg.taps, cfg.delay, &mut buf);
            let w = weights[t];
            for i in 0..dim {
                let bi = buf[i] * w;
                if bi == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..dim {
                    r[(i, j)] += bi * buf[j].conj();
                }
                for c in 0..m {
                    p[(i, c)] += bi * y[(c, t)].conj();
                }
            }
        }
        if linalg::trace_re(&r) <= 0.0 {
            filter = CMatrix::zeros(dim, m);
        } else {
            let chol = linalg::loaded(&r, cfg.regularization)
                .cholesky()
                .expect("loaded Gram matrix is positive definite");
            filter = chol.solve(&p);
        }
        x = predict(&y, &filter, cfg.taps, cfg.delay);
    }
    BinSolution { filter, weights }
}

fn check_input(spec: &MultichannelSpectrogram, cfg: &WpeConfig) -> Result<()> {
    cfg.validate()?;
    if spec.channels() == 0 {
        return Err(Error::ShapeMismatch("spectrogram has no channels".into()));
    }
    let needed = cfg.delay + cfg.taps;
    if spec.frames() <= needed {
        return Err(Error::TooFewFrames {
            needed,
            got: spec.frames(),
        });
    }
    Ok(())
}

pub fn estimate_filters(spec: &MultichannelSpectrogram, cfg: &WpeConfig) -> Result<WpeFilters> {
    check_input(spec, cfg)?;
    let data = spec.data();
    let filters = (0..spec.bins())
        .into_par_iter()
        .map(|f| solve_bin(data.index_axis(Axis(2), f), cfg).filter)
        .collect();
    Ok(WpeFilters {
        filters,
        taps: cfg.taps,
        delay: cfg.delay,
    })
}

/// Applies fixed prediction filters; linear in `spec`.
pub fn apply_filters(spec: &MultichannelSpectrogram, filters: &WpeFilters) -> Result<MultichannelSpectrogram> {
    let dim = spec.channels() * filters.taps;
    if filters.filters.len() != spec.bins()
        || filters
            .filters
            .iter()
            .any(|g| g.nrows() != dim || g.ncols() != spec.channels())
    {
        return Err(Error::ShapeMismatch("WPE filters do not match the spectrogram".into()));
    }
    let data = spec.data();
    let bins: Vec<ndarray::Array2<Complex64>> = (0..spec.bins())
        .into_par_iter()
        .map(|f| {
            predict(
                &data.index_axis(Axis(2), f),
                &filters.filters[f],
                filters.taps,
                filters.delay,
            )
        })
        .collect();
    let mut out = Array3::zeros(data.dim());
    for (f, b) in bins.into_iter().enumerate() {
        out.index_axis_mut(Axis(2), f).assign(&b);
    }
    spec.with_data(out)
}

pub fn wpe_dereverb(spec: &MultichannelSpectrogram, cfg: &WpeConfig) -> Result<MultichannelSpectrogram> {
    if spec
        .data()
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::NonFinite("spectrogram"));
    }
    let filters = estimate_filters(spec, cfg)?;
    apply_filters(spec, &filters)
}
