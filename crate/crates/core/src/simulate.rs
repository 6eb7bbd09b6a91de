//! Mixture simulation at controlled SDR/SNR, energy VAD and the SNR metric.
//!
//! SDR is the energy ratio of the target to the *sum* of interferers. With
//! two interferers the second is first levelled to within ±3 dB of the first
//! and the pair is then scaled jointly.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Waveform;

/// Value reported by [`snr_db`] when the estimate equals the reference.
pub const SNR_CAP_DB: f64 = 300.0;
/// Spread of the relative level between two interferers.
pub const INTERFERER_SPREAD_DB: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSpec {
    pub sdr_range: (f64, f64),
    pub snr_range: (f64, f64),
    pub n_interferers: usize,
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            sdr_range: (0.0, 10.0),
            snr_range: (-5.0, 10.0),
            n_interferers: 1,
            seed: 0,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("sdr_range", self.sdr_range), ("snr_range", self.snr_range)] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a finite interval, got [{lo}, {hi}]"
                )));
            }
        }
        if !(1..=2).contains(&self.n_interferers) {
            return Err(Error::InvalidConfig(format!(
                "n_interferers must be 1 or 2, got {}",
                self.n_interferers
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureRecord {
    pub mixture: Waveform,
    pub target: Waveform,
    pub interference_sum: Waveform,
    pub noise: Waveform,
    pub applied_sdr: f64,
    pub applied_snr: f64,
    pub seed: u64,
}

fn ratio_db(reference: f64, other: f64) -> f64 {
    10.0 * (reference / other).log10()
}

/// Returns `α·signal` with `10·log10(E_ref / E_scaled) = target_db`.
pub fn rescale_to_level(signal: &Waveform, reference: &Waveform, target_db: f64) -> Result<Waveform> {
    let e_sig = signal.energy();
    let e_ref = reference.energy();
    if e_sig <= 0.0 {
        return Err(Error::Silent("signal"));
    }
    if e_ref <= 0.0 {
        return Err(Error::Silent("reference"));
    }
    if !target_db.is_finite() {
        return Err(Error::NonFinite("target level"));
    }
    let alpha = (e_ref / (e_sig * 10f64.powf(target_db / 10.0))).sqrt();
    Ok(signal.scaled(alpha))
}

/// Crops (at a seeded offset) or loops `wave` to `len` samples.
fn fit_length(wave: &Waveform, len: usize, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let n = wave.len();
    if n == 0 {
        return Err(Error::EmptyWaveform);
    }
    let samples = wave.samples();
    let out = if n >= len {
        let offset = if n > len { rng.random_range(0..=n - len) } else { 0 };
        samples.slice(ndarray::s![.., offset..offset + len]).to_owned()
    } else {
        Array2::from_shape_fn((wave.channels(), len), |(c, i)| samples[(c, i % n)])
    };
    Waveform::new(out, wave.sample_rate())
}

fn check_compatible(target: &Waveform, other: &Waveform, what: &str) -> Result<()> {
    if other.channels() != target.channels() || other.sample_rate() != target.sample_rate() {
        return Err(Error::ShapeMismatch(format!(
            "{what} has {} channel(s) at {} Hz, target has {} at {} Hz",
            other.channels(),
            other.sample_rate(),
            target.channels(),
            target.sample_rate()
        )));
    }
    Ok(())
}

/// Mixes `target` with the first `spec.n_interferers` interferers and noise.
pub fn mix(target: &Waveform, interferers: &[Waveform], noise: &Waveform, spec: &MixSpec) -> Result<MixtureRecord> {
    spec.validate()?;
    if interferers.is_empty() {
        return Err(Error::InvalidConfig("at least one interferer is required".into()));
    }
    if interferers.len() < spec.n_interferers {
        return Err(Error::InvalidConfig(format!(
            "{} interferer(s) requested, {} given",
            spec.n_interferers,
            interferers.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if target.energy() <= 0.0 {
        return Err(Error::Silent("target"));
    }
    for i in &interferers[..spec.n_interferers] {
        check_compatible(target, i, "interferer")?;
    }
    check_compatible(target, noise, "noise")?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sdr = rng.random_range(spec.sdr_range.0..=spec.sdr_range.1);
    let snr = rng.random_range(spec.snr_range.0..=spec.snr_range.1);
    let len = target.len();

    let first = fit_length(&interferers[0], len, &mut rng)?;
    let combined = if spec.n_interferers == 2 {
        let offset = rng.random_range(-INTERFERER_SPREAD_DB..=INTERFERER_SPREAD_DB);
        let second = fit_length(&interferers[1], len, &mut rng)?;
        let second = rescale_to_level(&second, &first, offset)?;
        Waveform::new(&first.samples() + &second.samples(), target.sample_rate())?
    } else {
        first
    };
    let interference_sum = rescale_to_level(&combined, target, sdr)?;
    let noise = fit_length(noise, len, &mut rng)?;
    let noise = rescale_to_level(&noise, target, snr)?;

    let mixture = Waveform::new(
        &(&target.samples() + &interference_sum.samples()) + &noise.samples(),
        target.sample_rate(),
    )?;
    Ok(MixtureRecord {
        mixture,
        target: target.clone(),
        interference_sum,
        noise,
        applied_sdr: sdr,
        applied_snr: snr,
        seed: spec.seed,
    })
}

/// `10·log10(E_ref / E_{est−ref})`, capped at [`SNR_CAP_DB`].
pub fn snr_db(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    if estimate.samples().dim() != reference.samples().dim() {
        return Err(Error::ShapeMismatch(format!(
            "estimate is {:?}, reference is {:?}",
            estimate.samples().dim(),
            reference.samples().dim()
        )));
    }
    let e_ref = reference.energy();
    if e_ref <= 0.0 {
        return Err(Error::Silent("reference"));
    }
    let e_err: f64 = estimate
        .samples()
        .iter()
        .zip(reference.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if e_err <= 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok(ratio_db(e_ref, e_err).min(SNR_CAP_DB))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Frames more than this many dB below the loudest frame are inactive.
    pub threshold_db: f64,
    pub min_segment_s: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            threshold_db: 40.0,
            min_segment_s: 2.0,
        }
    }
}

/// Active region in samples, `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Frame-energy VAD. Frames are summed over channels; the last frame may be
/// shorter and is compared by mean power.
pub fn energy_vad(wave: &Waveform, cfg: &VadConfig) -> Result<Vec<Segment>> {
    if !(cfg.frame_ms > 0.0 && cfg.hop_ms > 0.0) || !cfg.threshold_db.is_finite() {
        return Err(Error::InvalidConfig("VAD frame and hop must be > 0".into()));
    }
    let sr = wave.sample_rate() as f64;
    let frame = ((cfg.frame_ms * sr / 1000.0).round() as usize).max(1);
    let hop = ((cfg.hop_ms * sr / 1000.0).round() as usize).max(1);
    let len = wave.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    let n_frames = if len <= frame { 1 } else { 1 + (len - frame).div_ceil(hop) };
    let power: Vec<f64> = (0..n_frames)
        .map(|t| {
            let start = t * hop;
            let end = (start + frame).min(len);
            let block = wave.samples().slice_move(ndarray::s![.., start..end]);
            block.iter().map(|x| x * x).sum::<f64>() / (end - start) as f64
        })
        .collect();
    let peak = power.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = peak * 10f64.powf(-cfg.threshold_db / 10.0);
    let min_len = cfg.min_segment_s * sr;

    let mut segments = Vec::new();
    let mut current: Option<Segment> = None;
    for (t, &p) in power.iter().enumerate() {
        let start = t * hop;
        let end = (start + frame).min(len);
        if p > 0.0 && p >= floor {
            current = Some(match current {
                Some(seg) if start <= seg.end => Segment { start: seg.start, end },
                Some(seg) => {
                    segments.push(seg);
                    Segment { start, end }
                }
                None => Segment { start, end },
            });
        } else if let Some(seg) = current.take() {
            segments.push(seg);
        }
    }
    segments.extend(current);
    segments.retain(|s| s.len() as f64 >= min_len);
    Ok(segments)
}

/// Per-utterance seed: the `index`-th output of a splitmix64 stream
/// started at `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
