//! Two-component complex Gaussian mixture model fitted per frequency bin.
//!
//! Each observation is modelled as `y ~ N_c(0, φ^k_{t,f} R^k_f)` for
//! `k ∈ {speech, noise}` with fixed equal priors. `φ` is set in closed form
//! from the current `R` (`φ = yᴴR⁻¹y / M`) before every E-step and `R` is
//! re-estimated as the posterior-weighted average of `yyᴴ/φ`. Each step can
//! only raise the likelihood, so the trace is non-decreasing up to the effect
//! of diagonal loading.

use std::f64::consts::PI;

use nalgebra::DVector;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector, DIAGONAL_LOADING};
use crate::masks::TFMask;
use crate::stft::MultichannelSpectrogram;

/// Posterior floor used in the M-step and on the returned masks.
pub const POSTERIOR_FLOOR: f64 = 1e-6;
/// Scale floor relative to the bin's average per-channel power.
const SCALE_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct CgmmParams {
    /// `R^s_f`, unloaded.
    pub speech_covariance: Vec<CMatrix>,
    /// `R^n_f`, unloaded.
    pub noise_covariance: Vec<CMatrix>,
    /// `φ^s_{t,f}` as `[frame][bin]`.
    pub speech_scale: Array2<f64>,
    /// `φ^n_{t,f}` as `[frame][bin]`.
    pub noise_scale: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct CgmmResult {
    pub speech_mask: TFMask,
    pub noise_mask: TFMask,
    /// Total log-likelihood before each iteration's M-step, then once more
    /// for the final parameters (`iterations + 1` entries).
    pub log_likelihood_trace: Vec<f64>,
    pub params: CgmmParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgmmConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Relative magnitude of a seeded Hermitian perturbation added to the
    /// speech initialization. Zero disables it.
    pub init_jitter: f64,
}

impl Default for CgmmConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            seed: 0,
            init_jitter: 0.0,
        }
    }
}

struct Component {
    inverse: CMatrix,
    log_det: f64,
    trace: f64,
}

impl Component {
    fn new(r: &CMatrix, bin: usize) -> Result<Self> {
        let loaded = linalg::loaded(r, DIAGONAL_LOADING);
        let chol = loaded
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { bin })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
        let trace = linalg::trace_re(&loaded);
        Ok(Self {
            inverse: chol.inverse(),
            log_det,
            trace,
        })
    }

    fn quad(&self, y: &CVector) -> f64 {
        linalg::quadratic_form(&self.inverse, y).max(0.0)
    }

    /// Closed-form `φ` with a floor tied to `mean_power` and `R`'s scale.
    fn scale(&self, y: &CVector, mean_power: f64) -> f64 {
        let m = y.len() as f64;
        let floor = SCALE_FLOOR * mean_power * m / self.trace;
        (self.quad(y) / m).max(floor).max(f64::MIN_POSITIVE)
    }

    fn log_density(&self, y: &CVector, phi: f64) -> f64 {
        let m = y.len() as f64;
        -m * PI.ln() - m * phi.ln() - self.log_det - self.quad(y) / phi
    }
}

fn log_sum_half(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    hi + (0.5 * ((a - hi).exp() + (b - hi).exp())).ln()
}

struct BinFit {
    speech_r: CMatrix,
    noise_r: CMatrix,
    speech_post: Vec<f64>,
    speech_phi: Vec<f64>,
    noise_phi: Vec<f64>,
    trace: Vec<f64>,
}

fn observations(spec: &MultichannelSpectrogram, f: usize) -> Vec<CVector> {
    let data = spec.data();
    (0..spec.frames())
        .map(|t| DVector::from_fn(spec.channels(), |m, _| data[(m, t, f)]))
        .collect()
}

fn mean_power(ys: &[CVector]) -> f64 {
    let m = ys.first().map_or(1, |y| y.len()) as f64;
    ys.iter().map(|y| y.norm_squared()).sum::<f64>() / (ys.len() as f64 * m)
}

struct EStep {
    speech_post: Vec<f64>,
    speech_phi: Vec<f64>,
    noise_phi: Vec<f64>,
    log_likelihood: f64,
}

fn e_step(ys: &[CVector], rs: &CMatrix, rn: &CMatrix, power: f64, bin: usize) -> Result<EStep> {
    let s = Component::new(rs, bin)?;
    let n = Component::new(rn, bin)?;
    let mut out = EStep {
        speech_post: Vec::with_capacity(ys.len()),
        speech_phi: Vec::with_capacity(ys.len()),
        noise_phi: Vec::with_capacity(ys.len()),
        log_likelihood: 0.0,
    };
    for y in ys {
        let (phi_s, phi_n) = (s.scale(y, power), n.scale(y, power));
        let (ls, ln) = (s.log_density(y, phi_s), n.log_density(y, phi_n));
        let total = log_sum_half(ls, ln);
        out.log_likelihood += total;
        out.speech_post.push(1.0 / (1.0 + (ln - ls).exp()));
        out.speech_phi.push(phi_s);
        out.noise_phi.push(phi_n);
    }
    Ok(out)
}

fn m_step(ys: &[CVector], post: &[f64], phi: &[f64], previous: &CMatrix) -> CMatrix {
    let m = previous.nrows();
    let mut acc = CMatrix::zeros(m, m);
    let mut mass = 0.0;
    for ((y, &w), &p) in ys.iter().zip(post).zip(phi) {
        let w = w.clamp(POSTERIOR_FLOOR, 1.0);
        acc += (y * y.adjoint()).scale(w / p);
        mass += w;
    }
    if mass > 0.0 {
        linalg::hermitian_part(&acc.unscale(mass))
    } else {
        previous.clone()
    }
}

fn jitter(m: usize, magnitude: f64, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = CMatrix::from_fn(m, m, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    (&a * a.adjoint()).scale(magnitude / m as f64)
}

fn fit_bin(spec: &MultichannelSpectrogram, f: usize, cfg: &CgmmConfig) -> Result<BinFit> {
    let ys = observations(spec, f);
    let m = spec.channels();
    let frames = ys.len();
    let power = mean_power(&ys);
    if power <= 0.0 {
        // silent bin: both components identical, unit scales
        let identity = CMatrix::identity(m, m);
        let c = Component::new(&identity, f)?;
        let ll: f64 = ys.iter().map(|y| c.log_density(y, 1.0)).sum();
        return Ok(BinFit {
            speech_r: identity.clone(),
            noise_r: identity,
            speech_post: vec![0.5; frames],
            speech_phi: vec![1.0; frames],
            noise_phi: vec![1.0; frames],
            trace: vec![ll; cfg.iterations + 1],
        });
    }
    let mut rs = ys
        .iter()
        .fold(CMatrix::zeros(m, m), |acc, y| acc + y * y.adjoint())
        .unscale(frames as f64);
    if cfg.init_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (f as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rs += jitter(m, cfg.init_jitter * linalg::trace_re(&rs), &mut rng);
    }
    let mut rn = CMatrix::identity(m, m);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        let e = e_step(&ys, &rs, &rn, power, f)?;
        trace.push(e.log_likelihood);
        let noise_post: Vec<f64> = e.speech_post.iter().map(|p| 1.0 - p).collect();
        rs = m_step(&ys, &e.speech_post, &e.speech_phi, &rs);
        rn = m_step(&ys, &noise_post, &e.noise_phi, &rn);
    }
    let e = e_step(&ys, &rs, &rn, power, f)?;
    trace.push(e.log_likelihood);
    Ok(BinFit {
        speech_r: rs,
        noise_r: rn,
        speech_post: e.speech_post,
        speech_phi: e.speech_phi,
        noise_phi: e.noise_phi,
        trace,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Per-frame log energy of the mixture summed over channels and bins.
fn frame_log_energy(spec: &MultichannelSpectrogram) -> Vec<f64> {
    let data = spec.data();
    (0..spec.frames())
        .map(|t| {
            let e: f64 = data
                .index_axis(ndarray::Axis(1), t)
                .iter()
                .map(|z| z.norm_sqr())
                .sum();
            (e + 1e-300).ln()
        })
        .collect()
}

fn validate_input(spec: &MultichannelSpectrogram, iterations: usize) -> Result<()> {
    if spec.channels() < 2 {
        return Err(Error::InvalidConfig(format!(
            "CGMM needs at least 2 channels, got {}",
            spec.channels()
        )));
    }
    if spec.frames() < spec.channels() {
        return Err(Error::TooFewFrames {
            needed: spec.channels() - 1,
            got: spec.frames(),
        });
    }
    if iterations == 0 {
        return Err(Error::InvalidConfig("CGMM needs at least one iteration".into()));
    }
    if spec.data().iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::Degenerate("all-zero utterance".into()));
    }
    Ok(())
}

pub fn cgmm_fit(spec: &MultichannelSpectrogram, iterations: usize, seed: u64) -> Result<CgmmResult> {
    cgmm_fit_with(
        spec,
        &CgmmConfig {
            iterations,
            seed,
            ..CgmmConfig::default()
        },
    )
}

/// Fits every bin independently, then labels as speech the component whose
/// bin-averaged mask correlates positively with the mixture's per-frame log
/// energy.
pub fn cgmm_fit_with(spec: &MultichannelSpectrogram, cfg: &CgmmConfig) -> Result<CgmmResult> {
    validate_input(spec, cfg.iterations)?;
    let fits: Vec<BinFit> = (0..spec.bins())
        .into_par_iter()
        .map(|f| fit_bin(spec, f, cfg))
        .collect::<Result<_>>()?;

    let (frames, bins) = (spec.frames(), spec.bins());
    let mut speech = Array2::zeros((frames, bins));
    let mut speech_scale = Array2::zeros((frames, bins));
    let mut noise_scale = Array2::zeros((frames, bins));
    let mut trace = vec![0.0; cfg.iterations + 1];
    for (f, fit) in fits.iter().enumerate() {
        for t in 0..frames {
            speech[(t, f)] = fit.speech_post[t];
            speech_scale[(t, f)] = fit.speech_phi[t];
            noise_scale[(t, f)] = fit.noise_phi[t];
        }
        for (acc, v) in trace.iter_mut().zip(&fit.trace) {
            *acc += v;
        }
    }
    let mut speech_covariance: Vec<CMatrix> = fits.iter().map(|b| b.speech_r.clone()).collect();
    let mut noise_covariance: Vec<CMatrix> = fits.iter().map(|b| b.noise_r.clone()).collect();

    let average: Vec<f64> = speech.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    if pearson(&average, &frame_log_energy(spec)) < 0.0 {
        speech.mapv_inplace(|p| 1.0 - p);
        std::mem::swap(&mut speech_covariance, &mut noise_covariance);
        std::mem::swap(&mut speech_scale, &mut noise_scale);
    }

    let speech_data = speech.mapv(|p| p.clamp(POSTERIOR_FLOOR, 1.0 - POSTERIOR_FLOOR));
    let noise_data = speech_data.mapv(|p| 1.0 - p);
    Ok(CgmmResult {
        speech_mask: TFMask::from_clamped(speech_data),
        noise_mask: TFMask::from_clamped(noise_data),
        log_likelihood_trace: trace,
        params: CgmmParams {
            speech_covariance,
            noise_covariance,
            speech_scale,
            noise_scale,
        },
    })
}

/// `Σ_{t,f} log(½ p(y|Θ_s) + ½ p(y|Θ_n))` with the given `R` (loaded before
/// inversion) and `φ`.
pub fn cgmm_log_likelihood(spec: &MultichannelSpectrogram, params: &CgmmParams) -> Result<f64> {
    let (frames, bins) = (spec.frames(), spec.bins());
    let m = spec.channels();
    let shape_ok = params.speech_covariance.len() == bins
        && params.noise_covariance.len() == bins
        && params.speech_scale.dim() == (frames, bins)
        && params.noise_scale.dim() == (frames, bins)
        && params
            .speech_covariance
            .iter()
            .chain(&params.noise_covariance)
            .all(|r| r.nrows() == m && r.ncols() == m);
    if !shape_ok {
        return Err(Error::ShapeMismatch("CGMM parameters do not match the spectrogram".into()));
    }
    let per_bin: Vec<f64> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let s = Component::new(&params.speech_covariance[f], f)?;
            let n = Component::new(&params.noise_covariance[f], f)?;
            let (ps, pn): (ArrayView2<f64>, ArrayView2<f64>) =
                (params.speech_scale.view(), params.noise_scale.view());
            let ys = observations(spec, f);
            let mut total = 0.0;
            for (t, y) in ys.iter().enumerate() {
                let (phi_s, phi_n) = (ps[(t, f)], pn[(t, f)]);
                if !(phi_s > 0.0 && phi_n > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "scale at ({t}, {f}) must be positive"
                    )));
                }
                total += log_sum_half(s.log_density(y, phi_s), n.log_density(y, phi_n));
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    let total: f64 = per_bin.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }
    Ok(total)
}
