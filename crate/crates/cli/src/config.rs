//! Pipeline configuration: an `[stft]` block followed by an ordered list of
//! `[[stage]]` blocks, each tagged with `type`.
//!
//! ```toml
//! [stft]
//! fft_size = 1024
//! hop = 256
//!
//! [[stage]]
//! type = "wpe"
//! taps = 10
//!
//! [[stage]]
//! type = "mask"
//! source = "cgmm"
//!
//! [[stage]]
//! type = "beamform"
//! kind = "mvdr"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use farfield::beamform::{BeamformerConfig, BeamformerType};
use farfield::io::WavEncoding;
use farfield::omlsa::OmlsaConfig;
use farfield::simulate::MixSpec;
use farfield::wpe::WpeConfig;
use farfield::StftConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub output_encoding: WavEncoding,
    #[serde(default, rename = "stage")]
    pub stages: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Stage {
    Simulate(SimulateStage),
    Stft,
    Istft,
    Wpe(WpeConfig),
    Mask(MaskStage),
    Beamform(BeamformerConfig),
    Omlsa(OmlsaConfig),
    Evaluate,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Simulate(_) => "simulate",
            Stage::Stft => "stft",
            Stage::Istft => "istft",
            Stage::Wpe(_) => "wpe",
            Stage::Mask(_) => "mask",
            Stage::Beamform(_) => "beamform",
            Stage::Omlsa(_) => "omlsa",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Mixes each input utterance (used as the target) with interferers and
/// noise drawn from file pools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateStage {
    #[serde(default = "default_sdr")]
    pub sdr_range: (f64, f64),
    #[serde(default = "default_snr")]
    pub snr_range: (f64, f64),
    /// Drawn from {1, 2} per utterance when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_interferers: Option<usize>,
    pub interferers: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
}

fn default_sdr() -> (f64, f64) {
    MixSpec::default().sdr_range
}

fn default_snr() -> (f64, f64) {
    MixSpec::default().snr_range
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskSource {
    OracleIrm,
    OraclePsm,
    Cgmm,
    /// Path template; `{id}` is replaced by the utterance id.
    File(String),
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskSource::OracleIrm => f.write_str("oracle-irm"),
            MaskSource::OraclePsm => f.write_str("oracle-psm"),
            MaskSource::Cgmm => f.write_str("cgmm"),
            MaskSource::File(p) => write!(f, "file:{p}"),
        }
    }
}

impl FromStr for MaskSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle-irm" => Ok(MaskSource::OracleIrm),
            "oracle-psm" => Ok(MaskSource::OraclePsm),
            "cgmm" => Ok(MaskSource::Cgmm),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(MaskSource::File(p.to_string())),
                _ => Err(format!(
                    "unknown mask source `{s}` (expected oracle-irm, oracle-psm, cgmm or file:PATH)"
                )),
            },
        }
    }
}

impl Serialize for MaskSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MaskSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskStage {
    pub source: MaskSource,
    /// Channel whose stems define oracle masks.
    #[serde(default)]
    pub channel: usize,
    #[serde(default = "default_cgmm_iterations")]
    pub iterations: usize,
    /// Reject mask files with values outside [0, 1] instead of clamping.
    #[serde(default = "default_true")]
    pub strict: bool,
}

fn default_cgmm_iterations() -> usize {
    20
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config is always representable as TOML")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form of the
    /// STFT settings and stage chain.
    pub fn chain_hash(&self) -> String {
        let canonical = serde_json::to_vec(&(&self.stft, &self.stages)).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    /// Index into the stage list, or `None` for global settings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(i) => write!(f, "stage {i} `{}`: {}", self.field, self.message),
            None => write!(f, "`{}`: {}", self.field, self.message),
        }
    }
}

fn strip_prefix(e: farfield::Error) -> String {
    match e {
        farfield::Error::InvalidConfig(msg) => msg,
        other => other.to_string(),
    }
}

fn check_range(diags: &mut Vec<Diagnostic>, stage: usize, field: &str, (lo, hi): (f64, f64)) {
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        diags.push(Diagnostic {
            stage: Some(stage),
            field: field.into(),
            message: format!("must be a finite interval with low <= high, got [{lo}, {hi}]"),
        });
    }
}

/// Lists every problem with `config`. Relative paths are checked against
/// `base`. Performs no processing.
pub fn validate_config(config: &PipelineConfig, base: &Path) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut global = |field: &str, message: String| {
        diags.push(Diagnostic {
            stage: None,
            field: field.into(),
            message,
        })
    };
    if let Err(e) = config.stft.validate() {
        global("stft", strip_prefix(e));
    } else if let Err(e) = config.stft.cola_gain() {
        global("stft.window", strip_prefix(e));
    }
    if config.stages.is_empty() {
        global("stage", "the chain has no stages".into());
    }

    let mut frequency = false;
    let mut mask_seen = false;
    for (i, stage) in config.stages.iter().enumerate() {
        let mut push = |field: &str, message: String| {
            diags.push(Diagnostic {
                stage: Some(i),
                field: field.into(),
                message,
            })
        };
        match stage {
            Stage::Simulate(sim) => {
                if i != 0 {
                    push("type", "simulate must be the first stage".into());
                }
                check_range(&mut diags, i, "sdr_range", sim.sdr_range);
                check_range(&mut diags, i, "snr_range", sim.snr_range);
                let mut push = |field: &str, message: String| {
                    diags.push(Diagnostic {
                        stage: Some(i),
                        field: field.into(),
                        message,
                    })
                };
                if let Some(n) = sim.n_interferers {
                    if !(1..=2).contains(&n) {
                        push("n_interferers", format!("must be 1 or 2, got {n}"));
                    }
                }
                for (field, pool) in [("interferers", &sim.interferers), ("noise", &sim.noise)] {
                    if pool.is_empty() {
                        push(field, "needs at least one file".into());
                    }
                    for p in pool {
                        let full = base.join(p);
                        if !full.is_file() {
                            push(field, format!("file not found: {}", full.display()));
                        }
                    }
                }
                if sim.n_interferers == Some(2) && sim.interferers.len() < 2 {
                    push("interferers", "two interferers requested but the pool has one file".into());
                }
            }
            Stage::Stft => {
                if frequency {
                    push("type", "signal is already in the STFT domain".into());
                }
                frequency = true;
            }
            Stage::Istft => {
                if !frequency {
                    push("type", "signal is already in the time domain".into());
                }
                frequency = false;
            }
            Stage::Wpe(cfg) => {
                if let Err(e) = cfg.validate() {
                    push("wpe", strip_prefix(e));
                }
                frequency = true;
            }
            Stage::Mask(m) => {
                if let MaskSource::File(template) = &m.source {
                    if !template.contains("{id}") {
                        let full = base.join(template);
                        if !full.is_file() {
                            push("source", format!("mask file not found: {}", full.display()));
                        }
                    }
                }
                if m.source == MaskSource::Cgmm && m.iterations == 0 {
                    push("iterations", "must be >= 1".into());
                }
                mask_seen = true;
                frequency = true;
            }
            Stage::Beamform(b) => {
                if !mask_seen {
                    push("type", "beamform needs a preceding mask stage".into());
                }
                if !(b.beta >= 0.0) || !b.beta.is_finite() {
                    push("beta", format!("must be finite and >= 0, got {}", b.beta));
                }
                if b.ban && b.kind != BeamformerType::Gev {
                    push("ban", "blind analytical normalization applies to gev only".into());
                }
                if b.beta != 0.0 && b.kind != BeamformerType::Pmwf {
                    push("beta", "beta is only used by pmwf".into());
                }
                frequency = true;
            }
            Stage::Omlsa(cfg) => {
                if let Err(e) = cfg.validate() {
                    push("omlsa", strip_prefix(e));
                }
                frequency = true;
            }
            Stage::Evaluate => {}
        }
    }
    diags
}
