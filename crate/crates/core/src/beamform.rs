//! Mask-based beamformers: steering vectors, MVDR, PMWF-β, GEV with blind
//! analytical normalization, reference-channel selection, and filtering.
//!
//! Every inversion of `Φn` uses Cholesky factorization of the covariance
//! loaded with [`DIAGONAL_LOADING`]` · trace / M` on the diagonal.

use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::masks::CovarianceSet;
use crate::stft::MultichannelSpectrogram;

pub use crate::linalg::DIAGONAL_LOADING;

/// Floor under which `wᴴΦn w` (BAN) or `β + tr(Φn⁻¹Φs)` (PMWF) count as zero.
const DEGENERATE_FLOOR: f64 = 1e-300;

/// Per-bin unit-norm target direction, phase-normalized at `reference`.
#[derive(Clone, Debug)]
pub struct SteeringVector {
    pub vectors: Vec<CVector>,
    pub reference: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BeamformerKind {
    Mvdr,
    Pmwf { beta: f64 },
    Gev,
    GevBan,
}

#[derive(Clone, Debug)]
pub struct BeamformerWeights {
    pub weights: Vec<CVector>,
    pub kind: BeamformerKind,
    pub reference: Option<usize>,
}

impl BeamformerWeights {
    pub fn channels(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }
}

fn check_reference(reference: usize, channels: usize) -> Result<()> {
    if reference >= channels {
        return Err(Error::ChannelOutOfRange {
            channel: reference,
            channels,
        });
    }
    Ok(())
}

fn check_finite(cov: &CovarianceSet) -> Result<()> {
    if cov
        .speech
        .iter()
        .chain(cov.noise.iter())
        .any(|m| !linalg::is_finite(m))
    {
        return Err(Error::NonFinite("covariance"));
    }
    Ok(())
}

fn noise_cholesky(cov: &CovarianceSet, bin: usize) -> Result<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    linalg::loaded(&cov.noise[bin], DIAGONAL_LOADING)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { bin })
}

/// Principal eigenvector of each `Φs_f`, unit-norm, with the entry at
/// `reference` made real and non-negative.
pub fn steering_vector(cov: &CovarianceSet, reference: usize) -> Result<SteeringVector> {
    check_reference(reference, cov.channels())?;
    check_finite(cov)?;
    let vectors = cov
        .speech
        .par_iter()
        .map(|phi| {
            let (_, mut v) = linalg::principal_eigenpair(phi);
            linalg::fix_phase(&mut v, reference);
            v
        })
        .collect();
    Ok(SteeringVector { vectors, reference })
}

/// `w = Φn⁻¹d / (dᴴΦn⁻¹d)`.
pub fn mvdr_weights(cov: &CovarianceSet, steering: &SteeringVector) -> Result<BeamformerWeights> {
    if steering.vectors.len() != cov.bins() {
        return Err(Error::ShapeMismatch(format!(
            "steering has {} bins, covariances {}",
            steering.vectors.len(),
            cov.bins()
        )));
    }
    check_finite(cov)?;
    let weights = (0..cov.bins())
        .into_par_iter()
        .map(|f| {
            let d = &steering.vectors[f];
            if d.len() != cov.channels() {
                return Err(Error::ShapeMismatch("steering vector length".into()));
            }
            let x = noise_cholesky(cov, f)?.solve(d);
            let denom = linalg::inner(d, &x);
            if denom.norm() <= DEGENERATE_FLOOR {
                return Err(Error::Degenerate(format!("dᴴΦn⁻¹d vanishes at bin {f}")));
            }
            Ok(x.map(|z| z / denom))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformerWeights {
        weights,
        kind: BeamformerKind::Mvdr,
        reference: Some(steering.reference),
    })
}

/// `w = Φn⁻¹Φs u_r / (β + tr(Φn⁻¹Φs))`. Bins with no speech power and
/// `β = 0` get zero weights.
pub fn pmwf_weights(cov: &CovarianceSet, beta: f64, reference: usize) -> Result<BeamformerWeights> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidConfig(format!("beta must be finite and >= 0, got {beta}")));
    }
    check_reference(reference, cov.channels())?;
    check_finite(cov)?;
    let weights = (0..cov.bins())
        .into_par_iter()
        .map(|f| {
            let a = noise_cholesky(cov, f)?.solve(&cov.speech[f]);
            let denom = beta + linalg::trace_re(&a);
            if denom.abs() <= DEGENERATE_FLOOR {
                return Ok(CVector::zeros(cov.channels()));
            }
            Ok(a.column(reference).unscale(denom))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformerWeights {
        weights,
        kind: BeamformerKind::Pmwf { beta },
        reference: Some(reference),
    })
}

/// Principal generalized eigenvector of `(Φs, Φn)`: with `Φn = LLᴴ`, the top
/// eigenvector `v` of `L⁻¹ΦsL⁻ᴴ` maps back to `w = L⁻ᴴv`. Returned unit-norm
/// with the `reference` entry real and non-negative.
pub fn gev_weights(cov: &CovarianceSet, reference: usize) -> Result<BeamformerWeights> {
    check_reference(reference, cov.channels())?;
    check_finite(cov)?;
    let weights = (0..cov.bins())
        .into_par_iter()
        .map(|f| {
            let chol = noise_cholesky(cov, f)?;
            let l = chol.l();
            let li_phi = l
                .solve_lower_triangular(&cov.speech[f])
                .ok_or(Error::NotPositiveDefinite { bin: f })?;
            // (L⁻¹ Φs)ᴴ = Φs L⁻ᴴ, so L⁻¹ (L⁻¹ Φs)ᴴ = L⁻¹ Φs L⁻ᴴ
            let reduced = l
                .solve_lower_triangular(&li_phi.adjoint())
                .ok_or(Error::NotPositiveDefinite { bin: f })?;
            let (_, v) = linalg::principal_eigenpair(&reduced);
            let mut w = l
                .adjoint()
                .solve_upper_triangular(&v)
                .ok_or(Error::NotPositiveDefinite { bin: f })?;
            let norm = w.norm();
            if norm > 0.0 {
                w.unscale_mut(norm);
            }
            linalg::fix_phase(&mut w, reference);
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformerWeights {
        weights,
        kind: BeamformerKind::Gev,
        reference: Some(reference),
    })
}

/// Blind analytical normalization gain `sqrt(wᴴΦnΦn w / M) / (wᴴΦn w)`.
pub fn ban_gain(w: &CVector, noise: &CMatrix) -> Result<f64> {
    let phi_w = noise * w;
    let den = linalg::inner(w, &phi_w).re;
    if den <= DEGENERATE_FLOOR {
        return Err(Error::Degenerate("wᴴΦn w vanishes".into()));
    }
    let num = (phi_w.norm_squared() / w.len() as f64).sqrt();
    Ok(num / den)
}

pub fn ban_postfilter(w: &BeamformerWeights, cov: &CovarianceSet) -> Result<BeamformerWeights> {
    if w.kind != BeamformerKind::Gev {
        return Err(Error::InvalidConfig(format!(
            "BAN applies to GEV weights, got {:?}",
            w.kind
        )));
    }
    if w.bins() != cov.bins() {
        return Err(Error::ShapeMismatch("weights and covariances differ in bins".into()));
    }
    let weights = w
        .weights
        .iter()
        .zip(&cov.noise)
        .enumerate()
        .map(|(f, (wf, noise))| {
            let g = ban_gain(wf, noise)
                .map_err(|_| Error::Degenerate(format!("wᴴΦn w vanishes at bin {f}")))?;
            Ok(wf.scale(g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformerWeights {
        weights,
        kind: BeamformerKind::GevBan,
        reference: w.reference,
    })
}

/// Channel maximizing `Σ_f Φs[m,m] / Φn[m,m]`; ties go to the lowest index.
pub fn select_reference(cov: &CovarianceSet) -> usize {
    let m = cov.channels();
    let scores: Vec<f64> = (0..m)
        .map(|c| {
            cov.speech
                .iter()
                .zip(&cov.noise)
                .map(|(s, n)| {
                    let noise = n[(c, c)].re;
                    let floor = 1e-10 * linalg::trace_re(n).abs() / m as f64;
                    s[(c, c)].re / noise.max(floor).max(f64::MIN_POSITIVE)
                })
                .sum()
        })
        .collect();
    let mut best = 0;
    for (c, &score) in scores.iter().enumerate() {
        if score > scores[best] {
            best = c;
        }
    }
    best
}

/// `s_{t,f} = w_fᴴ y_{t,f}`, returned as a single-channel spectrogram.
pub fn apply_beamformer(
    w: &BeamformerWeights,
    spec: &MultichannelSpectrogram,
) -> Result<MultichannelSpectrogram> {
    if w.bins() != spec.bins() || w.channels() != spec.channels() {
        return Err(Error::ShapeMismatch(format!(
            "weights {}ch x {} bins vs spectrogram {}ch x {} bins",
            w.channels(),
            w.bins(),
            spec.channels(),
            spec.bins()
        )));
    }
    let data = spec.data();
    let out = Array3::from_shape_fn((1, spec.frames(), spec.bins()), |(_, t, f)| {
        let wf = &w.weights[f];
        (0..spec.channels())
            .map(|m| wf[m].conj() * data[(m, t, f)])
            .sum::<Complex64>()
    });
    spec.with_data(out)
}

/// `wᴴΦs w / wᴴΦn w`.
pub fn rayleigh_quotient(w: &CVector, speech: &CMatrix, noise: &CMatrix) -> f64 {
    linalg::quadratic_form(speech, w) / linalg::quadratic_form(noise, w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformerType {
    Mvdr,
    Pmwf,
    Gev,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum Reference {
    Auto(AutoTag),
    Channel(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl Reference {
    pub const AUTO: Reference = Reference::Auto(AutoTag::Auto);

    pub fn resolve(self, cov: &CovarianceSet) -> Result<usize> {
        match self {
            Reference::Auto(_) => Ok(select_reference(cov)),
            Reference::Channel(c) => {
                check_reference(c, cov.channels())?;
                Ok(c)
            }
        }
    }
}

impl std::str::FromStr for Reference {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Reference::AUTO)
        } else {
            s.parse()
                .map(Reference::Channel)
                .map_err(|_| format!("expected `auto` or a channel index, got `{s}`"))
        }
    }
}

/// Beamformer choice as exposed on the command line and in pipeline configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamformerConfig {
    pub kind: BeamformerType,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub ban: bool,
    #[serde(default = "default_reference")]
    pub reference: Reference,
}

fn default_reference() -> Reference {
    Reference::AUTO
}

impl Default for BeamformerConfig {
    fn default() -> Self {
        Self {
            kind: BeamformerType::Mvdr,
            beta: 0.0,
            ban: false,
            reference: Reference::AUTO,
        }
    }
}

/// Designs the configured beamformer. The reference channel fixes the
/// steering/GEV phase and selects `u_r` for PMWF.
pub fn design_beamformer(cov: &CovarianceSet, cfg: &BeamformerConfig) -> Result<BeamformerWeights> {
    let reference = cfg.reference.resolve(cov)?;
    match cfg.kind {
        BeamformerType::Mvdr => mvdr_weights(cov, &steering_vector(cov, reference)?),
        BeamformerType::Pmwf => pmwf_weights(cov, cfg.beta, reference),
        BeamformerType::Gev => {
            let w = gev_weights(cov, reference)?;
            if cfg.ban {
                ban_postfilter(&w, cov)
            } else {
                Ok(w)
            }
        }
    }
}
