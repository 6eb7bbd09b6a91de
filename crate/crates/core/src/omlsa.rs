//! Single-channel log-spectral-amplitude post-filter with speech-presence
//! weighting.
//!
//! Noise PSD is tracked per bin by minima-controlled recursive averaging:
//! a smoothed periodogram `S` is compared against its running minimum over a
//! 1.5 s window, frames where `S / S_min` exceeds `presence_threshold` count
//! as speech, and the noise estimate is updated with a presence-dependent
//! smoothing factor. The gain per cell is
//!
//! ```text
//! G = G_H1^p · G_min^(1−p),   G_H1 = ξ/(1+ξ) · exp(½ E1(v)),   v = γ ξ/(1+ξ)
//! ```
//!
//! with `ξ` from decision-directed estimation and `p` the posterior speech
//! presence probability.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::MultichannelSpectrogram;

/// Periodogram smoothing for the minimum tracker.
const PERIODOGRAM_ALPHA: f64 = 0.8;
/// Smoothing of the speech indicator.
const PRESENCE_ALPHA: f64 = 0.2;
/// Length of the minimum-statistics window.
const MIN_WINDOW_S: f64 = 1.5;
const GAMMA_FLOOR: f64 = 1e-6;
const P_MIN: f64 = 0.005;
const P_MAX: f64 = 0.995;
const Q_MAX: f64 = 0.998;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmlsaConfig {
    /// Linear gain floor `G_min`.
    pub gain_floor: f64,
    pub dd_alpha: f64,
    pub noise_alpha: f64,
    /// Ratio of smoothed power to its tracked minimum above which a frame
    /// counts as speech.
    pub presence_threshold: f64,
}

impl Default for OmlsaConfig {
    fn default() -> Self {
        Self {
            gain_floor: 10f64.powf(-25.0 / 20.0),
            dd_alpha: 0.92,
            noise_alpha: 0.95,
            presence_threshold: 5.0,
        }
    }
}

impl OmlsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_floor > 0.0 && self.gain_floor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gain_floor must be in (0, 1), got {}",
                self.gain_floor
            )));
        }
        for (name, v) in [("dd_alpha", self.dd_alpha), ("noise_alpha", self.noise_alpha)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.presence_threshold > 0.0) || !self.presence_threshold.is_finite() {
            return Err(Error::InvalidConfig("presence_threshold must be > 0".into()));
        }
        Ok(())
    }
}

/// Exponential integral `E1(x)` for `x > 0`.
pub fn exp_int_e1(x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x < 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..100 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER - x.ln() - sum
    } else {
        // Modified Lentz evaluation of the continued fraction.
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

fn lsa_gain(xi: f64, gamma: f64) -> f64 {
    let r = xi / (1.0 + xi);
    let v = gamma * r;
    r * (0.5 * exp_int_e1(v)).exp()
}

/// Gains `[frame][bin]` for a single-channel spectrogram.
pub fn omlsa_gains(spec: &MultichannelSpectrogram, cfg: &OmlsaConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if spec.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "post-filter expects one channel, got {}",
            spec.channels()
        )));
    }
    if spec.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("spectrogram"));
    }
    let y = spec.channel(0);
    let (frames, bins) = y.dim();
    let scfg = spec.config();
    let window = ((MIN_WINDOW_S * scfg.sample_rate as f64 / scfg.hop as f64).round() as usize).max(1);
    let g_min = cfg.gain_floor;
    let xi_min = g_min * g_min;

    let mut gains = Array2::from_elem((frames, bins), g_min);
    for f in 0..bins {
        let power = |t: usize| y[(t, f)].norm_sqr();
        let p0 = power(0);
        let (mut s, mut s_min, mut s_tmp) = (p0, p0, p0);
        let mut noise = p0;
        let mut presence = 0.0;
        let mut prev_amp2 = 0.0; // G_H1² γ of the previous frame
        for t in 0..frames {
            let pw = power(t);
            if t > 0 {
                s = PERIODOGRAM_ALPHA * s + (1.0 - PERIODOGRAM_ALPHA) * pw;
                s_min = s_min.min(s);
                s_tmp = s_tmp.min(s);
                if t % window == 0 {
                    s_min = s_tmp.min(s);
                    s_tmp = s;
                }
                let indicator = if s > cfg.presence_threshold * s_min { 1.0 } else { 0.0 };
                presence = PRESENCE_ALPHA * presence + (1.0 - PRESENCE_ALPHA) * indicator;
                let a = cfg.noise_alpha + (1.0 - cfg.noise_alpha) * presence;
                noise = a * noise + (1.0 - a) * pw;
            }
            if !(noise > 0.0) {
                gains[(t, f)] = g_min;
                prev_amp2 = 0.0;
                continue;
            }
            let gamma = (pw / noise).max(GAMMA_FLOOR);
            let ml = (gamma - 1.0).max(0.0);
            let xi = if t == 0 {
                cfg.dd_alpha + (1.0 - cfg.dd_alpha) * ml
            } else {
                cfg.dd_alpha * prev_amp2 + (1.0 - cfg.dd_alpha) * ml
            }
            .max(xi_min);
            let g_h1 = lsa_gain(xi, gamma).clamp(g_min, 1.0);
            prev_amp2 = g_h1 * g_h1 * gamma;

            let q = (1.0 - presence).clamp(0.0, Q_MAX);
            let v = gamma * xi / (1.0 + xi);
            let p = if q == 0.0 {
                P_MAX
            } else {
                1.0 / (1.0 + q / (1.0 - q) * (1.0 + xi) * (-v).exp())
            }
            .clamp(P_MIN, P_MAX);
            gains[(t, f)] = (g_h1.powf(p) * g_min.powf(1.0 - p)).clamp(g_min, 1.0);
        }
    }
    Ok(gains)
}

/// Scales every channel by real per-cell gains, leaving phase untouched.
pub fn apply_gains(spec: &MultichannelSpectrogram, gains: &Array2<f64>) -> Result<MultichannelSpectrogram> {
    if gains.dim() != (spec.frames(), spec.bins()) {
        return Err(Error::ShapeMismatch(format!(
            "gains are {:?}, spectrogram is {}x{}",
            gains.dim(),
            spec.frames(),
            spec.bins()
        )));
    }
    let mut out: Array3<_> = spec.data().clone();
    for mut ch in out.axis_iter_mut(Axis(0)) {
        ch.zip_mut_with(gains, |z, &g| *z *= g);
    }
    spec.with_data(out)
}

pub fn omlsa_denoise(spec: &MultichannelSpectrogram, cfg: &OmlsaConfig) -> Result<MultichannelSpectrogram> {
    let gains = omlsa_gains(spec, cfg)?;
    apply_gains(spec, &gains)
}
