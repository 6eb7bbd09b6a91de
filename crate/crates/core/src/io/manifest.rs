//! Line-delimited JSON manifests: one mixture (or input utterance) per line.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub mixture: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interference: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied_sdr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied_snr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ManifestRecord {
    pub fn new(id: impl Into<String>, mixture: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            mixture: mixture.into(),
            target: None,
            interference: None,
            noise: None,
            applied_sdr: None,
            applied_snr: None,
            seed: None,
        }
    }

    /// Relative paths are resolved against `base`.
    pub fn resolve(mut self, base: &Path) -> Self {
        let fix = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        self.mixture = fix(self.mixture);
        self.target = self.target.map(fix);
        self.interference = self.interference.map(fix);
        self.noise = self.noise.map(fix);
        self
    }
}

/// Blank lines and lines starting with `#` are skipped.
pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record = serde_json::from_str(trimmed).map_err(|source| Error::Manifest {
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let file = std::fs::File::open(path)?;
    parse_manifest(BufReader::new(file))
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).expect("manifest records always serialize");
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    Ok(())
}
