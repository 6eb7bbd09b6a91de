use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use farfield::beamform::{apply_beamformer, design_beamformer, BeamformerConfig, BeamformerType, Reference};
use farfield::cgmm::cgmm_fit;
use farfield::io::{read_manifest, read_mask, read_wav, write_manifest, write_mask, write_wav, ManifestRecord, WavEncoding};
use farfield::masks::{estimate_covariances, irm, psm};
use farfield::omlsa::{omlsa_gains, OmlsaConfig};
use farfield::simulate::{derive_seed, mix, snr_db, MixSpec};
use farfield::stft::{istft, stft};
use farfield::wpe::{wpe_dereverb, WpeConfig};
use farfield::{StftConfig, Waveform};
use farfield_cli::pipeline::{error_table, file_stem, report_lines, run_batch, BatchOptions, Status};
use farfield_cli::{run_pipeline, validate_config, CliError, PipelineConfig};
use ndarray::{s, Axis};

#[derive(Parser)]
#[command(name = "farfield", version, about = "Multichannel far-field speech enhancement")]
struct Cli {
    /// Pipeline config (TOML). Single-stage commands take their STFT settings from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-utterance parallelism.
    #[arg(long, global = true, env = "FARFIELD_JOBS")]
    jobs: Option<usize>,
    /// Master seed; utterance i uses the i-th derived seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Stop after the first per-file failure.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Batch {
    /// Input WAV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Dereverberate multichannel WAV files.
    Wpe {
        #[command(flatten)]
        batch: Batch,
        #[arg(long, default_value_t = 10)]
        taps: usize,
        #[arg(long, default_value_t = 3)]
        delay: usize,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
    },
    /// Estimate speech and noise masks; writes `<stem>.speech.tfm` and `<stem>.noise.tfm`.
    Cgmm {
        #[command(flatten)]
        batch: Batch,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
    },
    /// Oracle mask from a target stem and the mixture (or noise stem).
    Mask {
        #[arg(long, value_enum)]
        kind: OracleKind,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        /// Noise stem for the IRM; defaults to mixture minus target.
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Mask-based beamforming of one multichannel WAV file.
    Beamform {
        input: PathBuf,
        #[arg(long)]
        speech_mask: PathBuf,
        /// Defaults to the complement of the speech mask.
        #[arg(long)]
        noise_mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mvdr")]
        kind: Kind,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[arg(long)]
        ban: bool,
        /// `auto` or a channel index.
        #[arg(long = "ref", default_value = "auto")]
        reference: Reference,
        /// Clamp out-of-range mask values instead of rejecting them.
        #[arg(long)]
        lenient: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Single-channel post-filter, applied to each channel independently.
    Omlsa {
        #[command(flatten)]
        batch: Batch,
        #[arg(long, default_value_t = -25.0)]
        gain_floor_db: f64,
    },
    /// Mix target utterances with interferers and noise.
    Simulate {
        #[command(flatten)]
        batch: Batch,
        #[arg(long, required = true, num_args = 1..)]
        interferers: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        noise: Vec<PathBuf>,
        #[arg(long, value_parser = parse_range, default_value = "0,10", allow_hyphen_values = true)]
        sdr: (f64, f64),
        #[arg(long, value_parser = parse_range, default_value = "-5,10", allow_hyphen_values = true)]
        snr: (f64, f64),
        #[arg(long, default_value_t = 1)]
        n_interferers: usize,
    },
    /// Channel-0 SNR of an estimate against a reference.
    Metrics {
        estimate: PathBuf,
        reference: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
    /// Run the configured chain over a manifest or a list of WAV files.
    Pipeline {
        /// JSON-lines manifest; relative paths resolve against its directory.
        #[arg(long, conflicts_with = "inputs")]
        manifest: Option<PathBuf>,
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out_dir: PathBuf,
        /// Defaults to `<out-dir>/report.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check a config without processing anything.
    Validate,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Irm,
    Psm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Mvdr,
    Pmwf,
    Gev,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LOW,HIGH")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if let CliError::Invalid(diags) = &e {
                for d in diags {
                    eprintln!("{d}");
                }
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Context {
    config: Option<PipelineConfig>,
    config_dir: PathBuf,
    jobs: Option<usize>,
    seed: u64,
    strict: bool,
}

impl Context {
    fn stft(&self, sample_rate: u32) -> StftConfig {
        let base = self.config.as_ref().map(|c| c.stft).unwrap_or_default();
        StftConfig { sample_rate, ..base }
    }

    fn encoding(&self) -> WavEncoding {
        self.config.as_ref().map(|c| c.output_encoding).unwrap_or_default()
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let config = cli.config.as_deref().map(PipelineConfig::load).transpose()?;
    let config_dir = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let ctx = Context {
        config,
        config_dir,
        jobs: cli.jobs,
        seed: cli.seed,
        strict: cli.strict,
    };
    match cli.command {
        Command::Wpe { batch, taps, delay, iterations } => {
            let cfg = WpeConfig { taps, delay, iterations, ..WpeConfig::default() };
            cfg.validate()?;
            per_file(&ctx, &batch, |_, path| {
                let x = read_wav(path)?;
                let y = istft(&wpe_dereverb(&stft(&x, &ctx.stft(x.sample_rate()))?, &cfg)?)?;
                let out = batch.out_dir.join(format!("{}.wpe.wav", stem(path)));
                write_wav(&out, &y, ctx.encoding())?;
                Ok(())
            })
        }
        Command::Cgmm { batch, iterations } => {
            if iterations == 0 {
                return Err(CliError::Usage("--iterations must be >= 1".into()));
            }
            per_file(&ctx, &batch, |i, path| {
                let x = read_wav(path)?;
                let fit = cgmm_fit(&stft(&x, &ctx.stft(x.sample_rate()))?, iterations, derive_seed(ctx.seed, i as u64))?;
                let name = stem(path);
                write_mask(batch.out_dir.join(format!("{name}.speech.tfm")), &fit.speech_mask)?;
                write_mask(batch.out_dir.join(format!("{name}.noise.tfm")), &fit.noise_mask)?;
                Ok(())
            })
        }
        Command::Mask { kind, target, mixture, noise, channel, out } => {
            let y = read_wav(&mixture)?;
            let t = read_wav(&target)?;
            let cfg = ctx.stft(y.sample_rate());
            let ys = stft(&y.select_channel(channel)?, &cfg)?;
            let ts = stft(&t.select_channel(channel)?, &cfg)?;
            if ys.frames() != ts.frames() {
                return Err(CliError::Input("target and mixture lengths differ".into()));
            }
            let mask = match kind {
                OracleKind::Psm => psm(ts.channel(0), ys.channel(0))?,
                OracleKind::Irm => {
                    let n = match noise {
                        Some(p) => stft(&read_wav(&p)?.select_channel(channel)?, &cfg)?,
                        None => ys.with_data(ys.data() - ts.data())?,
                    };
                    irm(ts.channel(0), n.channel(0))?
                }
            };
            write_mask(&out, &mask)?;
            Ok(0)
        }
        Command::Beamform { input, speech_mask, noise_mask, kind, beta, ban, reference, lenient, out } => {
            let cfg = BeamformerConfig {
                kind: match kind {
                    Kind::Mvdr => BeamformerType::Mvdr,
                    Kind::Pmwf => BeamformerType::Pmwf,
                    Kind::Gev => BeamformerType::Gev,
                },
                beta,
                ban,
                reference,
            };
            if !(beta >= 0.0) || (ban && cfg.kind != BeamformerType::Gev) {
                return Err(CliError::Usage("--beta must be >= 0 and --ban needs --kind gev".into()));
            }
            let x = read_wav(&input)?;
            let spec = stft(&x, &ctx.stft(x.sample_rate()))?;
            let speech = read_mask(&speech_mask, !lenient)?;
            let noise = match noise_mask {
                Some(p) => read_mask(&p, !lenient)?,
                None => speech.complement(),
            };
            let cov = estimate_covariances(&spec, &speech, &noise)?;
            if !cov.fallback_bins.is_empty() {
                eprintln!("degenerate bins: {:?}", cov.fallback_bins);
            }
            let y = istft(&apply_beamformer(&design_beamformer(&cov, &cfg)?, &spec)?)?;
            write_wav(&out, &y, ctx.encoding())?;
            Ok(0)
        }
        Command::Omlsa { batch, gain_floor_db } => {
            let cfg = OmlsaConfig {
                gain_floor: 10f64.powf(gain_floor_db / 20.0),
                ..OmlsaConfig::default()
            };
            cfg.validate()?;
            per_file(&ctx, &batch, |_, path| {
                let x = read_wav(path)?;
                let spec = stft(&x, &ctx.stft(x.sample_rate()))?;
                let mut data = spec.data().clone();
                for (c, mut ch) in data.axis_iter_mut(Axis(0)).enumerate() {
                    let single = spec.with_data(spec.data().slice(s![c..c + 1, .., ..]).to_owned())?;
                    ch.zip_mut_with(&omlsa_gains(&single, &cfg)?, |z, &g| *z *= g);
                }
                let y = istft(&spec.with_data(data)?)?;
                write_wav(batch.out_dir.join(format!("{}.omlsa.wav", stem(path))), &y, ctx.encoding())?;
                Ok(())
            })
        }
        Command::Simulate { batch, interferers, noise, sdr, snr, n_interferers } => {
            let base = MixSpec {
                sdr_range: sdr,
                snr_range: snr,
                n_interferers,
                seed: 0,
            };
            base.validate()?;
            fs::create_dir_all(&batch.out_dir)?;
            let pool_i = interferers.iter().map(read_wav).collect::<farfield::Result<Vec<_>>>()?;
            let pool_n = noise.iter().map(read_wav).collect::<farfield::Result<Vec<_>>>()?;
            let results = run_batch(&batch.inputs, ctx.jobs, ctx.strict, |i, path| {
                simulate_one(&batch.out_dir, path, i, &ctx, &base, &pool_i, &pool_n).map_err(|e| e.to_string())
            })?;
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for (r, path) in results.into_iter().zip(&batch.inputs) {
                match r {
                    Some(Ok(rec)) => records.push(rec),
                    Some(Err(e)) => failures.push((path.clone(), e)),
                    None => failures.push((path.clone(), "skipped after an earlier failure".into())),
                }
            }
            write_manifest(batch.out_dir.join("manifest.jsonl"), &records)?;
            Ok(report_failures(&failures, batch.inputs.len()))
        }
        Command::Metrics { estimate, reference, channel } => {
            let e = read_wav(&estimate)?.select_channel(channel)?;
            let r = read_wav(&reference)?.select_channel(channel)?;
            println!("{}", serde_json::json!({ "snr_db": snr_db(&e, &r)? }));
            Ok(0)
        }
        Command::Pipeline { manifest, inputs, out_dir, report } => {
            let config = ctx
                .config
                .as_ref()
                .ok_or_else(|| CliError::Usage("pipeline needs --config".into()))?;
            let records: Vec<ManifestRecord> = match manifest {
                Some(m) => {
                    let dir = m.parent().map(Path::to_path_buf).unwrap_or_default();
                    read_manifest(&m)?.into_iter().map(|r| r.resolve(&dir)).collect()
                }
                None if inputs.is_empty() => {
                    return Err(CliError::Usage("pipeline needs --manifest or input files".into()))
                }
                None => inputs.iter().map(|p| ManifestRecord::new(stem(p), p)).collect(),
            };
            let opts = BatchOptions {
                out_dir: out_dir.clone(),
                jobs: ctx.jobs,
                seed: ctx.seed,
                strict: ctx.strict,
                base_dir: ctx.config_dir.clone(),
            };
            let reports = run_pipeline(config, &records, &opts)?;
            let report_path = report.unwrap_or_else(|| out_dir.join("report.jsonl"));
            fs::write(&report_path, report_lines(&reports))?;
            match error_table(&reports) {
                Some(table) => {
                    eprint!("{table}");
                    Ok(1)
                }
                None => {
                    debug_assert!(reports.iter().all(|r| r.status == Status::Ok));
                    Ok(0)
                }
            }
        }
        Command::Validate => {
            let config = ctx
                .config
                .as_ref()
                .ok_or_else(|| CliError::Usage("validate needs --config".into()))?;
            let diags = validate_config(config, &ctx.config_dir);
            if diags.is_empty() {
                println!("ok: {} stage(s), chain {}", config.stages.len(), config.chain_hash());
                Ok(0)
            } else {
                Err(CliError::Invalid(diags))
            }
        }
    }
}

fn stem(path: &Path) -> String {
    file_stem(&path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

fn simulate_one(
    out_dir: &Path,
    path: &Path,
    index: usize,
    ctx: &Context,
    base: &MixSpec,
    interferers: &[Waveform],
    noise: &[Waveform],
) -> Result<ManifestRecord, CliError> {
    let target = read_wav(path)?;
    let seed = derive_seed(ctx.seed, index as u64);
    let pick = |k: u64, len: usize| (derive_seed(seed, k) % len as u64) as usize;
    let first = pick(2, interferers.len());
    let mut chosen = vec![interferers[first].clone()];
    if base.n_interferers == 2 {
        let second = if interferers.len() > 1 {
            (first + 1 + pick(3, interferers.len() - 1)) % interferers.len()
        } else {
            first
        };
        chosen.push(interferers[second].clone());
    }
    let spec = MixSpec { seed, ..*base };
    let rec = mix(&target, &chosen, &noise[pick(4, noise.len())], &spec)?;
    let id = stem(path);
    let enc = ctx.encoding();
    let name = |kind: &str| PathBuf::from(format!("{id}.{kind}.wav"));
    write_wav(out_dir.join(name("mix")), &rec.mixture, enc)?;
    write_wav(out_dir.join(name("target")), &rec.target, enc)?;
    write_wav(out_dir.join(name("interference")), &rec.interference_sum, enc)?;
    write_wav(out_dir.join(name("noise")), &rec.noise, enc)?;
    let mut m = ManifestRecord::new(id.clone(), name("mix"));
    m.target = Some(name("target"));
    m.interference = Some(name("interference"));
    m.noise = Some(name("noise"));
    m.applied_sdr = Some(rec.applied_sdr);
    m.applied_snr = Some(rec.applied_snr);
    m.seed = Some(seed);
    Ok(m)
}

/// Runs `f` on every input and prints an error table for the failures.
fn per_file(
    ctx: &Context,
    batch: &Batch,
    f: impl Fn(usize, &Path) -> Result<(), CliError> + Sync,
) -> Result<u8, CliError> {
    fs::create_dir_all(&batch.out_dir)?;
    let results = run_batch(&batch.inputs, ctx.jobs, ctx.strict, |i, p| f(i, p).map_err(|e| e.to_string()))?;
    let failures: Vec<(PathBuf, String)> = results
        .into_iter()
        .zip(&batch.inputs)
        .filter_map(|(r, p)| match r {
            Some(Ok(())) => None,
            Some(Err(e)) => Some((p.clone(), e)),
            None => Some((p.clone(), "skipped after an earlier failure".into())),
        })
        .collect();
    Ok(report_failures(&failures, batch.inputs.len()))
}

fn report_failures(failures: &[(PathBuf, String)], total: usize) -> u8 {
    if failures.is_empty() {
        return 0;
    }
    eprintln!("{} of {total} file(s) failed", failures.len());
    for (p, e) in failures {
        eprintln!("{}\t{e}", p.display());
    }
    1
}
