//! Runs a [`PipelineConfig`] over a batch of utterances.
//!
//! When an utterance comes with a target stem, every linear operation fitted
//! on the mixture (WPE filters, beamformer weights, post-filter gains) is also
//! applied to the target and to the residual `mixture − target`. SNRs are
//! then measured as `snr_db(processed mixture, processed target)` on channel 0.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use farfield::beamform::{apply_beamformer, design_beamformer};
use farfield::cgmm::cgmm_fit;
use farfield::io::{read_mask, read_wav, write_wav, ManifestRecord};
use farfield::masks::{estimate_covariances, irm, psm};
use farfield::omlsa::omlsa_gains;
use farfield::simulate::{derive_seed, mix, snr_db, MixSpec};
use farfield::stft::{istft, stft};
use farfield::wpe::{apply_filters, estimate_filters};
use farfield::{MultichannelSpectrogram, StftConfig, TFMask, Waveform};
use ndarray::{s, Array3, Axis};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{validate_config, MaskSource, PipelineConfig, SimulateStage, Stage};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug)]
pub struct BatchOptions {
    pub out_dir: PathBuf,
    /// Worker threads; `None` lets rayon decide.
    pub jobs: Option<usize>,
    pub seed: u64,
    /// Stop starting new utterances after the first failure.
    pub strict: bool,
    /// Directory that relative paths inside the config are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub stage: usize,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegenerateBins {
    pub stage: usize,
    pub bins: Vec<usize>,
}

/// One line of the JSON-lines report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtteranceReport {
    pub id: String,
    pub status: Status,
    /// File name inside the output directory.
    pub output: Option<PathBuf>,
    pub error: Option<String>,
    pub input_snr_db: Option<f64>,
    pub output_snr_db: Option<f64>,
    pub evaluations: Vec<Evaluation>,
    /// Parameters each stage actually used, including drawn levels, seeds
    /// and resolved reference channels.
    pub applied: Vec<Value>,
    pub degenerate_bins: Vec<DegenerateBins>,
    pub chain_hash: String,
}

impl UtteranceReport {
    fn empty(id: &str, status: Status, chain_hash: &str) -> Self {
        Self {
            id: id.to_string(),
            status,
            output: None,
            error: None,
            input_snr_db: None,
            output_snr_db: None,
            evaluations: Vec::new(),
            applied: Vec::new(),
            degenerate_bins: Vec::new(),
            chain_hash: chain_hash.to_string(),
        }
    }
}

/// Serializes reports as JSON lines, one per utterance, in the given order.
pub fn report_lines(reports: &[UtteranceReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

/// Human-readable table of failed utterances, or `None` when all succeeded.
pub fn error_table(reports: &[UtteranceReport]) -> Option<String> {
    let failed: Vec<_> = reports.iter().filter(|r| r.status != Status::Ok).collect();
    if failed.is_empty() {
        return None;
    }
    let width = failed.iter().map(|r| r.id.len()).max().unwrap_or(0).max(2);
    let mut out = format!("{} of {} utterance(s) failed\n", failed.len(), reports.len());
    out.push_str(&format!("{:<width$}  {:<7}  error\n", "id", "status"));
    for r in failed {
        let status = if r.status == Status::Failed { "failed" } else { "skipped" };
        let msg = r.error.as_deref().unwrap_or("");
        out.push_str(&format!("{:<width$}  {status:<7}  {msg}\n", r.id));
    }
    Some(out)
}

pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

/// Runs `f` over `items` on the configured pool, keeping input order. Under
/// `strict`, items not yet started when a failure is seen return `None`.
pub fn run_batch<T: Sync, R: Send, E: Send>(
    items: &[T],
    jobs: Option<usize>,
    strict: bool,
    f: impl Fn(usize, &T) -> std::result::Result<R, E> + Sync,
) -> Result<Vec<Option<std::result::Result<R, E>>>> {
    let failed = AtomicBool::new(false);
    let pool = thread_pool(jobs)?;
    Ok(pool.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                if strict && failed.load(Ordering::SeqCst) {
                    return None;
                }
                let r = f(i, item);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                Some(r)
            })
            .collect()
    }))
}

/// Keeps ids usable as file names.
pub fn file_stem(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

/// Validates `config`, processes every record and writes
/// `<out_dir>/<id>.<chain hash>.wav` per successful utterance. Reports come
/// back in input order; writing them is left to the caller.
pub fn run_pipeline(
    config: &PipelineConfig,
    records: &[ManifestRecord],
    opts: &BatchOptions,
) -> Result<Vec<UtteranceReport>> {
    let diags = validate_config(config, &opts.base_dir);
    if !diags.is_empty() {
        return Err(CliError::Invalid(diags));
    }
    fs::create_dir_all(&opts.out_dir)?;
    let hash = config.chain_hash();
    let results = run_batch(records, opts.jobs, opts.strict, |i, rec| {
        let mut report = UtteranceReport::empty(&rec.id, Status::Ok, &hash);
        match process(config, rec, i, opts, &hash, &mut report) {
            Ok(()) => Ok(report),
            Err(e) => {
                report.status = Status::Failed;
                report.error = Some(e.to_string());
                Err(report)
            }
        }
    })?;
    Ok(results
        .into_iter()
        .zip(records)
        .map(|(r, rec)| match r {
            Some(Ok(report) | Err(report)) => report,
            None => {
                let mut r = UtteranceReport::empty(&rec.id, Status::Skipped, &hash);
                r.error = Some("not started: an earlier utterance failed under --strict".into());
                r
            }
        })
        .collect())
}

#[derive(Clone)]
enum Signal {
    Time(Waveform),
    Freq(MultichannelSpectrogram),
}

/// Current mixture plus, when known, the target and residual stems in the
/// same domain.
struct State {
    mix: Signal,
    stems: Option<(Signal, Signal)>,
    stft: StftConfig,
    mask: Option<TFMask>,
}

impl State {
    fn is_freq(&self) -> bool {
        matches!(self.mix, Signal::Freq(_))
    }

    fn convert(&mut self, to_freq: bool) -> Result<()> {
        if self.is_freq() == to_freq {
            return Ok(());
        }
        let cfg = self.stft;
        let conv = |s: &Signal| -> Result<Signal> {
            Ok(match s {
                Signal::Time(w) => Signal::Freq(stft(w, &cfg)?),
                Signal::Freq(x) => Signal::Time(istft(x)?),
            })
        };
        self.mix = conv(&self.mix)?;
        if let Some((t, r)) = &self.stems {
            self.stems = Some((conv(t)?, conv(r)?));
        }
        Ok(())
    }

    fn spec(&mut self) -> Result<&MultichannelSpectrogram> {
        self.convert(true)?;
        match &self.mix {
            Signal::Freq(x) => Ok(x),
            Signal::Time(_) => unreachable!("converted above"),
        }
    }

    fn stem_specs(&mut self) -> Result<Option<(&MultichannelSpectrogram, &MultichannelSpectrogram)>> {
        self.convert(true)?;
        Ok(match &self.stems {
            Some((Signal::Freq(t), Signal::Freq(r))) => Some((t, r)),
            _ => None,
        })
    }

    /// Applies the same spectral operation to the mixture and both stems.
    fn map(&mut self, f: impl Fn(&MultichannelSpectrogram) -> farfield::Result<MultichannelSpectrogram>) -> Result<()> {
        self.convert(true)?;
        let apply = |s: &Signal| -> Result<Signal> {
            match s {
                Signal::Freq(x) => Ok(Signal::Freq(f(x)?)),
                Signal::Time(_) => unreachable!("converted above"),
            }
        };
        self.mix = apply(&self.mix)?;
        if let Some((t, r)) = &self.stems {
            self.stems = Some((apply(t)?, apply(r)?));
        }
        Ok(())
    }

    fn time(&self) -> Result<(Waveform, Option<Waveform>)> {
        let to_time = |s: &Signal| -> Result<Waveform> {
            Ok(match s {
                Signal::Time(w) => w.clone(),
                Signal::Freq(x) => istft(x)?,
            })
        };
        let target = match &self.stems {
            Some((t, _)) => Some(to_time(t)?),
            None => None,
        };
        Ok((to_time(&self.mix)?, target))
    }

    /// SNR of channel 0 of the mixture against channel 0 of the target.
    fn snr(&self) -> Result<Option<f64>> {
        let (mix, target) = self.time()?;
        match target {
            Some(t) => Ok(Some(snr_db(&mix.select_channel(0)?, &t.select_channel(0)?)?)),
            None => Ok(None),
        }
    }
}

fn same_shape(a: &Waveform, b: &Waveform, what: &str) -> Result<()> {
    if a.samples().dim() != b.samples().dim() || a.sample_rate() != b.sample_rate() {
        return Err(CliError::Input(format!(
            "{what} is {}ch x {} @ {} Hz, mixture is {}ch x {} @ {} Hz",
            b.channels(),
            b.len(),
            b.sample_rate(),
            a.channels(),
            a.len(),
            a.sample_rate()
        )));
    }
    Ok(())
}

fn load_stems(rec: &ManifestRecord, mixture: &Waveform) -> Result<Option<(Waveform, Waveform)>> {
    let Some(target_path) = &rec.target else {
        return Ok(None);
    };
    let target = read_wav(target_path)?;
    same_shape(mixture, &target, "target")?;
    let parts: Vec<&PathBuf> = rec.interference.iter().chain(&rec.noise).collect();
    let residual = if parts.is_empty() {
        &mixture.samples() - &target.samples()
    } else {
        let mut sum = ndarray::Array2::zeros(mixture.samples().dim());
        for p in parts {
            let w = read_wav(p)?;
            same_shape(mixture, &w, "residual stem")?;
            sum += &w.samples();
        }
        sum
    };
    Ok(Some((target, Waveform::new(residual, mixture.sample_rate())?)))
}

fn pick(seed: u64, k: u64, len: usize) -> usize {
    (derive_seed(seed, k) % len as u64) as usize
}

fn simulate(sim: &SimulateStage, clean: &Waveform, seed: u64, base: &Path) -> Result<(Waveform, Waveform, Waveform, Value)> {
    let n = sim.n_interferers.unwrap_or(1 + pick(seed, 1, 2));
    let len = sim.interferers.len();
    let first = pick(seed, 2, len);
    let mut chosen = vec![first];
    if n == 2 {
        chosen.push(if len > 1 { (first + 1 + pick(seed, 3, len - 1)) % len } else { first });
    }
    let interferer_paths: Vec<PathBuf> = chosen.iter().map(|&i| base.join(&sim.interferers[i])).collect();
    let interferers = interferer_paths
        .iter()
        .map(read_wav)
        .collect::<farfield::Result<Vec<_>>>()?;
    let noise_path = base.join(&sim.noise[pick(seed, 4, sim.noise.len())]);
    let noise = read_wav(&noise_path)?;
    let spec = MixSpec {
        sdr_range: sim.sdr_range,
        snr_range: sim.snr_range,
        n_interferers: n,
        seed,
    };
    let rec = mix(clean, &interferers, &noise, &spec)?;
    let applied = json!({
        "type": "simulate",
        "applied_sdr_db": rec.applied_sdr,
        "applied_snr_db": rec.applied_snr,
        "n_interferers": n,
        "interferers": interferer_paths,
        "noise": noise_path,
        "seed": seed,
    });
    let residual = Waveform::new(&rec.interference_sum.samples() + &rec.noise.samples(), clean.sample_rate())?;
    Ok((rec.mixture, rec.target, residual, applied))
}

fn load_mask(template: &str, id: &str, base: &Path, strict: bool, dim: (usize, usize)) -> Result<(TFMask, PathBuf)> {
    let path = base.join(template.replace("{id}", id));
    let mask = read_mask(&path, strict)?;
    if mask.dim() != dim {
        return Err(CliError::Input(format!(
            "mask {} is {:?}, spectrogram is {dim:?} (frames x bins)",
            path.display(),
            mask.dim()
        )));
    }
    Ok((mask, path))
}

fn channel_gains(spec: &MultichannelSpectrogram, cfg: &farfield::omlsa::OmlsaConfig) -> Result<Array3<f64>> {
    let mut gains = Array3::zeros((spec.channels(), spec.frames(), spec.bins()));
    for (c, mut out) in gains.axis_iter_mut(Axis(0)).enumerate() {
        let single = spec.with_data(spec.data().slice(s![c..c + 1, .., ..]).to_owned())?;
        out.assign(&omlsa_gains(&single, cfg)?);
    }
    Ok(gains)
}

fn process(
    config: &PipelineConfig,
    rec: &ManifestRecord,
    index: usize,
    opts: &BatchOptions,
    hash: &str,
    report: &mut UtteranceReport,
) -> Result<()> {
    let seed = derive_seed(opts.seed, index as u64);
    let input = read_wav(&rec.mixture)?;
    let stft_cfg = StftConfig {
        sample_rate: input.sample_rate(),
        ..config.stft
    };
    let mut stages = config.stages.iter().enumerate().peekable();
    let (mixture, stems) = match stages.peek() {
        Some((_, Stage::Simulate(sim))) => {
            let (m, t, r, applied) = simulate(sim, &input, seed, &opts.base_dir)?;
            report.applied.push(with_stage(0, applied));
            stages.next();
            (m, Some((t, r)))
        }
        _ => {
            let stems = load_stems(rec, &input)?;
            (input, stems)
        }
    };
    let mut state = State {
        mix: Signal::Time(mixture),
        stems: stems.map(|(t, r)| (Signal::Time(t), Signal::Time(r))),
        stft: stft_cfg,
        mask: None,
    };
    report.input_snr_db = state.snr()?;

    for (i, stage) in stages {
        let applied = match stage {
            Stage::Simulate(_) => unreachable!("validation keeps simulate first"),
            Stage::Stft => {
                state.convert(true)?;
                json!({"type": "stft", "fft_size": stft_cfg.fft_size, "hop": stft_cfg.hop})
            }
            Stage::Istft => {
                state.convert(false)?;
                json!({"type": "istft"})
            }
            Stage::Wpe(cfg) => {
                let filters = estimate_filters(state.spec()?, cfg)?;
                state.map(|x| apply_filters(x, &filters))?;
                json!({"type": "wpe", "taps": cfg.taps, "delay": cfg.delay, "iterations": cfg.iterations})
            }
            Stage::Mask(m) => {
                let dim = {
                    let x = state.spec()?;
                    (x.frames(), x.bins())
                };
                let (mask, applied) = match &m.source {
                    MaskSource::Cgmm => {
                        let mask_seed = derive_seed(seed, 1000 + i as u64);
                        let fit = cgmm_fit(state.spec()?, m.iterations, mask_seed)?;
                        let v = json!({"iterations": m.iterations, "seed": mask_seed});
                        (fit.speech_mask, v)
                    }
                    MaskSource::OracleIrm | MaskSource::OraclePsm => {
                        let irm_kind = m.source == MaskSource::OracleIrm;
                        let mixture = state.spec()?.checked_channel(m.channel)?.to_owned();
                        let Some((t, r)) = state.stem_specs()? else {
                            return Err(CliError::Input("oracle masks need a target stem".into()));
                        };
                        let target = t.checked_channel(m.channel)?;
                        let mask = if irm_kind {
                            irm(target, r.checked_channel(m.channel)?)?
                        } else {
                            psm(target, mixture.view())?
                        };
                        (mask, json!({"channel": m.channel}))
                    }
                    MaskSource::File(template) => {
                        let (mask, path) = load_mask(template, &rec.id, &opts.base_dir, m.strict, dim)?;
                        (mask, json!({"path": path, "strict": m.strict}))
                    }
                };
                state.mask = Some(mask);
                let mut v = json!({"type": "mask", "source": m.source.to_string()});
                merge(&mut v, applied);
                v
            }
            Stage::Beamform(cfg) => {
                let mask = state.mask.clone().expect("validation requires a mask before beamform");
                let cov = estimate_covariances(state.spec()?, &mask, &mask.complement())?;
                let reference = cfg.reference.resolve(&cov)?;
                let w = design_beamformer(&cov, cfg)?;
                state.map(|x| apply_beamformer(&w, x))?;
                if !cov.fallback_bins.is_empty() {
                    report.degenerate_bins.push(DegenerateBins {
                        stage: i,
                        bins: cov.fallback_bins.clone(),
                    });
                }
                let mut v = json!({"type": "beamform", "reference": reference});
                merge(&mut v, json!(w.kind));
                v
            }
            Stage::Omlsa(cfg) => {
                let gains = channel_gains(state.spec()?, cfg)?;
                state.map(|x| {
                    let mut data = x.data().clone();
                    data.zip_mut_with(&gains, |z, &g| *z *= g);
                    x.with_data(data)
                })?;
                json!({"type": "omlsa", "gain_floor": cfg.gain_floor})
            }
            Stage::Evaluate => {
                let Some(snr) = state.snr()? else {
                    return Err(CliError::Input("evaluate needs a target stem".into()));
                };
                report.evaluations.push(Evaluation { stage: i, snr_db: snr });
                json!({"type": "evaluate"})
            }
        };
        report.applied.push(with_stage(i, applied));
    }

    let (out, _) = state.time()?;
    report.output_snr_db = state.snr()?;
    let name = PathBuf::from(format!("{}.{hash}.wav", file_stem(&rec.id)));
    write_wav(opts.out_dir.join(&name), &out, config.output_encoding)?;
    report.output = Some(name);
    Ok(())
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

fn with_stage(stage: usize, applied: Value) -> Value {
    let mut v = json!({"stage": stage});
    merge(&mut v, applied);
    v
}
