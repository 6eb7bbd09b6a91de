//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use farfield::beamform::{apply_beamformer, ban_postfilter, gev_weights, mvdr_weights, pmwf_weights, steering_vector, SteeringVector};
use farfield::cgmm::cgmm_fit;
use farfield::io::tfm::{decode_matrix, encode_matrix};
use farfield::io::wav::{decode_wav, encode_wav};
use farfield::linalg::{CMatrix, CVector, DIAGONAL_LOADING};
use farfield::masks::{estimate_covariances, irm};
use farfield::omlsa::{apply_gains, omlsa_gains, OmlsaConfig};
use farfield::simulate::{mix, snr_db, MixSpec};
use farfield::stft::{istft, stft};
use farfield::wpe::{wpe_dereverb, WpeConfig};
use farfield::io::WavEncoding;
use farfield::{CovarianceSet, MultichannelSpectrogram, StftConfig, Waveform, WindowKind};
use ndarray::{s, Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn spectrogram(data: Array3<Complex64>) -> MultichannelSpectrogram {
    let bins = data.dim().2;
    let cfg = StftConfig {
        fft_size: 2 * (bins - 1),
        hop: bins - 1,
        ..StftConfig::default()
    };
    MultichannelSpectrogram::new(data, cfg, 0).unwrap()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

// 1. STFT round trip on 20 random multichannel signals for each of three
//    constant-overlap-add configurations.
fn criterion_1() -> Outcome {
    let configs = [
        StftConfig::default(),
        StftConfig {
            fft_size: 512,
            hop: 128,
            window: WindowKind::Hann,
            sample_rate: 16000,
        },
        StftConfig {
            fft_size: 256,
            hop: 128,
            window: WindowKind::SqrtHann,
            sample_rate: 8000,
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for cfg in &configs {
        assert!(cfg.is_cola());
        for _ in 0..20 {
            let ch = rng.random_range(1..=4);
            let n = rng.random_range(1..=20_000);
            let x = Array2::from_shape_fn((ch, n), |_| gauss(&mut rng));
            let wave = Waveform::new(x, cfg.sample_rate).unwrap();
            let back = istft(&stft(&wave, cfg).unwrap()).unwrap();
            if back.samples().dim() != wave.samples().dim() {
                return outcome(false, format!("length changed for n = {n}"));
            }
            let a: Vec<f64> = back.samples().iter().copied().collect();
            let b: Vec<f64> = wave.samples().iter().copied().collect();
            worst = worst.max(rel_l2(&a, &b));
        }
    }
    outcome(worst < 1e-6, format!("max relative L2 error {worst:.2e} (< 1e-6)"))
}

// 2a. EM monotonicity on random inputs; 2b. mask AUC on two planted sources.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_drop: f64 = 0.0;
    for run in 0..100u64 {
        let m = rng.random_range(2..=4);
        let t = rng.random_range(m.max(8)..=60);
        let bins = [2, 3, 5][rng.random_range(0..3)];
        let frame_scale: Vec<f64> = (0..t).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
        let data = Array3::from_shape_fn((m, t, bins), |(_, tt, _)| cn(&mut rng) * frame_scale[tt]);
        let res = cgmm_fit(&spectrogram(data), 8, run).unwrap();
        for w in res.log_likelihood_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    let monotone = worst_drop <= 1e-6;

    let (m, t, bins) = (4, 500, 17);
    let labels: Vec<bool> = (0..t).map(|_| rng.random_bool(0.5)).collect();
    let mut data = Array3::zeros((m, t, bins));
    for f in 0..bins {
        let ra = random_psd(m, m, &mut rng);
        let rb = random_psd(m, m, &mut rng);
        let tr = |r: &CMatrix| (0..m).map(|i| r[(i, i)].re).sum::<f64>();
        // Speech frames carry 10 dB more power than noise frames.
        let gain = (10.0 * tr(&rb) / tr(&ra)).sqrt();
        let la = ra.cholesky().unwrap().l();
        let lb = rb.cholesky().unwrap().l();
        for tt in 0..t {
            let z = random_vector(m, &mut rng);
            let y = if labels[tt] { (&la * z).scale(gain) } else { &lb * z };
            for c in 0..m {
                data[(c, tt, f)] = y[c];
            }
        }
    }
    let res = cgmm_fit(&spectrogram(data), 20, 0).unwrap();
    let mask = res.speech_mask.data();
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for tt in 0..t {
        for f in 0..bins {
            scores.push(mask[(tt, f)]);
            truth.push(labels[tt]);
        }
    }
    let area = auc(&scores, &truth);
    outcome(
        monotone && area > 0.9,
        format!("worst log-likelihood drop {worst_drop:.2e} (<= 1e-6), AUC {area:.4} (> 0.9)"),
    )
}

fn single_bin(speech: CMatrix, noise: CMatrix) -> CovarianceSet {
    CovarianceSet::from_matrices(vec![speech], vec![noise]).unwrap()
}

// 3. MVDR distortionless constraint and agreement with a dense solve.
fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_constraint, mut worst_oracle): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let m = rng.random_range(2..=8);
        let noise = random_psd(m, m + rng.random_range(0..4), &mut rng);
        let d = unit_vector(m, &mut rng);
        let cov = single_bin(outer(&d, &d), noise.clone());
        let sv = SteeringVector {
            vectors: vec![d.clone()],
            reference: 0,
        };
        let w = &mvdr_weights(&cov, &sv).unwrap().weights[0];
        worst_constraint = worst_constraint.max((dot(w, &d) - c(1.0, 0.0)).norm());
        let x = solve_vec(&load(&noise, DIAGONAL_LOADING), &d);
        let oracle = x.unscale(1.0).map(|z| z / dot(&d, &x));
        worst_oracle = worst_oracle.max((w - &oracle).norm() / oracle.norm());
    }
    outcome(
        worst_constraint < 1e-10 && worst_oracle < 1e-9,
        format!("max |wᴴd − 1| {worst_constraint:.2e} (< 1e-10), max rel. oracle error {worst_oracle:.2e} (< 1e-9)"),
    )
}

// 4. GEV maximizes the generalized Rayleigh quotient. Quotients use the
//    loaded noise covariance the beamformer is designed on.
fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut beaten = 0;
    let mut worst_eig: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(2..=6);
        let speech = random_psd(m, rng.random_range(1..=m), &mut rng);
        let noise = random_psd(m, m + 2, &mut rng);
        let cov = single_bin(speech.clone(), noise.clone());
        let noise_l = load(&noise, DIAGONAL_LOADING);
        let w = &gev_weights(&cov, 0).unwrap().weights[0];
        let q = quad(&speech, w) / quad(&noise_l, w);
        for _ in 0..1000 {
            let v = unit_vector(m, &mut rng);
            if quad(&speech, &v) / quad(&noise_l, &v) > q {
                beaten += 1;
            }
        }
        let top = top_generalized_eigenvalue(&speech, &noise_l, &mut rng);
        worst_eig = worst_eig.max((q - top).abs() / top);
    }
    outcome(
        beaten == 0 && worst_eig < 1e-8,
        format!("random vectors beating GEV {beaten}/100000, max rel. eigenvalue error {worst_eig:.2e} (< 1e-8)"),
    )
}

// 5. PMWF: scalar Wiener gain at β = 1; rank-one speech at β = 0 gives the
//    MVDR output up to one complex scalar per bin.
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_loaded, mut worst_plain): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let s = rng.random_range(0.01..10.0);
        let n = rng.random_range(0.01..10.0);
        let cov = single_bin(
            CMatrix::from_element(1, 1, c(s, 0.0)),
            CMatrix::from_element(1, 1, c(n, 0.0)),
        );
        let w = pmwf_weights(&cov, 1.0, 0).unwrap().weights[0][0];
        // The beamformer inverts Φn after loading it by 1e-6·tr/M.
        let wiener_loaded = s / (s + n * (1.0 + DIAGONAL_LOADING));
        worst_loaded = worst_loaded.max((w - c(wiener_loaded, 0.0)).norm() / wiener_loaded);
        worst_plain = worst_plain.max((w - c(s / (s + n), 0.0)).norm() / (s / (s + n)));
    }

    let mut worst_corr: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(2..=6);
        let bins = 5;
        let mut speech = Vec::new();
        let mut noise = Vec::new();
        for _ in 0..bins {
            let d = random_vector(m, &mut rng);
            speech.push(outer(&d, &d).scale(rng.random_range(0.1..5.0)));
            noise.push(random_psd(m, m + 1, &mut rng));
        }
        let cov = CovarianceSet::from_matrices(speech, noise).unwrap();
        let reference = rng.random_range(0..m);
        let pmwf = pmwf_weights(&cov, 0.0, reference).unwrap();
        let mvdr = mvdr_weights(&cov, &steering_vector(&cov, reference).unwrap()).unwrap();
        let y = spectrogram(Array3::from_shape_fn((m, 50, bins), |_| cn(&mut rng)));
        let a = apply_beamformer(&pmwf, &y).unwrap();
        let b = apply_beamformer(&mvdr, &y).unwrap();
        for f in 0..bins {
            let (mut ab, mut aa, mut bb) = (c(0.0, 0.0), 0.0, 0.0);
            for t in 0..50 {
                let (x, z) = (a.data()[(0, t, f)], b.data()[(0, t, f)]);
                ab += x.conj() * z;
                aa += x.norm_sqr();
                bb += z.norm_sqr();
            }
            worst_corr = worst_corr.max((1.0 - ab.norm() / (aa * bb).sqrt()).abs());
        }
    }
    outcome(
        worst_loaded < 1e-12 && worst_plain < 2e-6 && worst_corr < 1e-8,
        format!(
            "Wiener gain rel. error {worst_loaded:.1e} vs loaded noise, {worst_plain:.1e} vs unloaded; max |1 − corr| {worst_corr:.1e} (< 1e-8)"
        ),
    )
}

/// Convolves a mono source with one short impulse response per channel.
fn planted(src: &[f64], responses: &[Vec<f64>], sr: u32) -> Waveform {
    let channels: Vec<Vec<f64>> = responses
        .iter()
        .map(|h| {
            (0..src.len())
                .map(|n| h.iter().enumerate().filter(|&(k, _)| k <= n).map(|(k, hk)| hk * src[n - k]).sum())
                .collect()
        })
        .collect();
    Waveform::from_channels(&channels, sr).unwrap()
}

/// Random decaying impulse responses; their spectra act as a random
/// steering vector per frequency bin.
fn random_array(m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..8).map(|k| gauss(rng) * (-(k as f64) / 3.0).exp()).collect())
        .collect()
}

// 6. End-to-end oracle-IRM MVDR on planted 4-channel scenes at 0 dB.
fn criterion_6() -> Outcome {
    let sr = 16000;
    let n = 2 * sr as usize;
    let m = 4;
    let cfg = StftConfig::default();
    // One interferer at SDR 10·log10(1/0.9) and noise at SNR 10 dB: the
    // residual carries exactly the target's energy, i.e. 0 dB overall.
    let sdr = -10.0 * 0.9f64.log10();
    let mut improved = 0;
    let mut gev_violations = 0;
    let mut worst_improvement = f64::INFINITY;
    let mut input_snrs = Vec::new();
    for scene in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + scene);
        let h = random_array(m, &mut rng);
        let target = planted(&speechlike(n, sr, &mut rng), &h, sr);
        let h = random_array(m, &mut rng);
        let interferers = vec![planted(&speechlike(n, sr, &mut rng), &h, sr)];
        let noise = Waveform::new(Array2::from_shape_fn((m, n), |_| gauss(&mut rng)), sr).unwrap();
        let spec = MixSpec {
            sdr_range: (sdr, sdr),
            snr_range: (10.0, 10.0),
            n_interferers: 1,
            seed: scene,
        };
        let rec = mix(&target, &interferers, &noise, &spec).unwrap();
        let residual = Waveform::new(&rec.interference_sum.samples() + &rec.noise.samples(), sr).unwrap();
        let input_snr = snr_db(&rec.mixture.select_channel(0).unwrap(), &rec.target.select_channel(0).unwrap()).unwrap();
        input_snrs.push(input_snr);

        let y = stft(&rec.mixture, &cfg).unwrap();
        let s = stft(&rec.target, &cfg).unwrap();
        let r = stft(&residual, &cfg).unwrap();
        let mask = irm(s.channel(0), r.channel(0)).unwrap();
        let cov = estimate_covariances(&y, &mask, &mask.complement()).unwrap();
        let mvdr = mvdr_weights(&cov, &steering_vector(&cov, 0).unwrap()).unwrap();
        let out_y = istft(&apply_beamformer(&mvdr, &y).unwrap()).unwrap();
        let out_s = istft(&apply_beamformer(&mvdr, &s).unwrap()).unwrap();
        let output_snr = snr_db(&out_y, &out_s).unwrap();
        let gain = output_snr - input_snr;
        worst_improvement = worst_improvement.min(gain);
        if gain >= 5.0 {
            improved += 1;
        }

        let gev = ban_postfilter(&gev_weights(&cov, 0).unwrap(), &cov).unwrap();
        for f in 0..cov.bins() {
            let noise_l = load(&cov.noise[f], DIAGONAL_LOADING);
            let q_mvdr = quad(&cov.speech[f], &mvdr.weights[f]) / quad(&noise_l, &mvdr.weights[f]);
            let q_gev = quad(&cov.speech[f], &gev.weights[f]) / quad(&noise_l, &gev.weights[f]);
            if q_gev < q_mvdr * (1.0 - 1e-9) {
                gev_violations += 1;
            }
        }
    }
    let mean_in = input_snrs.iter().sum::<f64>() / input_snrs.len() as f64;
    outcome(
        improved >= 45 && gev_violations == 0,
        format!(
            "{improved}/50 scenes improved >= 5 dB (need 45), worst gain {worst_improvement:.2} dB, mean input SNR {mean_in:.2} dB, GEV < MVDR in {gev_violations} bins"
        ),
    )
}

fn db(reference: f64, other: f64) -> f64 {
    10.0 * (reference / other).log10()
}

// 7. Simulation levels within range, accurate, and reproducible.
fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sr = 16000;
    let mut out_of_range = 0;
    let mut worst_level: f64 = 0.0;
    let mut mismatched = 0;
    for seed in 0..1000u64 {
        let ch = rng.random_range(1..=2);
        let len = rng.random_range(64..400);
        let mut wave = |n: usize| Waveform::new(Array2::from_shape_fn((ch, n), |_| gauss(&mut rng)), sr).unwrap();
        let target = wave(len);
        let interferers = vec![wave(len / 2 + 1), wave(len * 2)];
        let noise = wave(len + 7);
        let spec = MixSpec {
            n_interferers: 1 + (seed % 2) as usize,
            seed,
            ..MixSpec::default()
        };
        let rec = mix(&target, &interferers, &noise, &spec).unwrap();
        if !(0.0..=10.0).contains(&rec.applied_sdr) || !(-5.0..=10.0).contains(&rec.applied_snr) {
            out_of_range += 1;
        }
        worst_level = worst_level
            .max((db(rec.target.energy(), rec.interference_sum.energy()) - rec.applied_sdr).abs())
            .max((db(rec.target.energy(), rec.noise.energy()) - rec.applied_snr).abs());
        if mix(&target, &interferers, &noise, &spec).unwrap() != rec {
            mismatched += 1;
        }
    }
    outcome(
        out_of_range == 0 && worst_level < 1e-9 && mismatched == 0,
        format!("{out_of_range} draws out of range, max level error {worst_level:.1e} dB (< 1e-9), {mismatched} non-identical reruns"),
    )
}

// 8. Post-filter noise reduction, gain bounds and phase.
fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = OmlsaConfig::default();
    let stft_cfg = StftConfig::default();
    let white = Waveform::mono((0..5 * 16000).map(|_| gauss(&mut rng)).collect(), 16000).unwrap();
    let spec = stft(&white, &stft_cfg).unwrap();
    let gains = omlsa_gains(&spec, &cfg).unwrap();
    let out = apply_gains(&spec, &gains).unwrap();
    let out_wave = istft(&out).unwrap();
    let reduction = db(white.energy(), out_wave.energy());

    let mut out_of_bounds = 0;
    let mut worst_phase: f64 = 0.0;
    let mut check = |spec: &MultichannelSpectrogram, gains: &Array2<f64>| {
        out_of_bounds += gains.iter().filter(|&&g| !(g >= cfg.gain_floor && g <= 1.0)).count();
        let out = apply_gains(spec, gains).unwrap();
        for (a, b) in spec.data().iter().zip(out.data()) {
            if a.norm() > 0.0 {
                worst_phase = worst_phase.max((b / a).arg().abs());
            }
        }
    };
    check(&spec, &gains);
    for _ in 0..5 {
        let n = rng.random_range(16000..48000);
        let mut x = speechlike(n, 16000, &mut rng);
        let level = rng.random_range(0.01..1.0);
        x.iter_mut().for_each(|v| *v += level * gauss(&mut rng));
        let s = stft(&Waveform::mono(x, 16000).unwrap(), &stft_cfg).unwrap();
        let g = omlsa_gains(&s, &cfg).unwrap();
        check(&s, &g);
    }
    outcome(
        reduction >= 10.0 && out_of_bounds == 0 && worst_phase < 1e-12,
        format!("white-noise reduction {reduction:.2} dB (>= 10), {out_of_bounds} gains outside [G_min, 1], max phase change {worst_phase:.1e} rad"),
    )
}

fn correlation(a: &Array3<Complex64>, b: &Array3<Complex64>) -> f64 {
    let mut ab = c(0.0, 0.0);
    let (mut aa, mut bb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x.conj() * y;
        aa += x.norm_sqr();
        bb += y.norm_sqr();
    }
    ab.norm() / (aa * bb).sqrt()
}

// 9. Dereverberation on a planted late-reverberation model, and scale
//    equivariance.
fn criterion_9() -> Outcome {
    let wpe = WpeConfig::default();
    let mut improved = 0;
    let mut min_gain = f64::INFINITY;
    let mut worst_scale: f64 = 0.0;
    for inst in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + inst);
        let (m, t, bins) = (rng.random_range(2..=3), 200, 5);
        let env: Vec<f64> = (0..t).map(|_| 10f64.powf(rng.random_range(-1.5..0.5))).collect();
        let clean = Array3::from_shape_fn((m, t, bins), |(_, tt, _)| cn(&mut rng) * env[tt]);
        // y_t = x_t + Σ_k A_k x_{t−k}, k = Δ..Δ+L−1, decaying random mixing.
        let lags = 6;
        let mut y = clean.clone();
        for f in 0..bins {
            for k in 0..lags {
                let decay = 0.5 * (-(k as f64) / 2.0).exp();
                let a = CMatrix::from_fn(m, m, |_, _| cn(&mut rng) * decay);
                let lag = wpe.delay + k;
                for tt in lag..t {
                    let past = CVector::from_fn(m, |ch, _| clean[(ch, tt - lag, f)]);
                    let add = &a * past;
                    for ch in 0..m {
                        y[(ch, tt, f)] += add[ch];
                    }
                }
            }
        }
        let spec = spectrogram(y.clone());
        let out = wpe_dereverb(&spec, &wpe).unwrap();
        let before = correlation(&y, &clean);
        let after = correlation(out.data(), &clean);
        min_gain = min_gain.min(after - before);
        if after > before {
            improved += 1;
        }
        if inst < 10 {
            let alpha = [1e-3, 7.5, 1e3][inst as usize % 3];
            let scaled = wpe_dereverb(&spec.scaled(alpha), &wpe).unwrap();
            let expect = out.data() * Complex64::new(alpha, 0.0);
            let num: f64 = (scaled.data() - &expect).iter().map(|z| z.norm_sqr()).sum();
            let den: f64 = expect.iter().map(|z| z.norm_sqr()).sum();
            worst_scale = worst_scale.max((num / den).sqrt());
        }
    }
    outcome(
        improved >= 38 && worst_scale < 1e-6,
        format!("{improved}/40 instances improved (need 38), min correlation gain {min_gain:.4}, scale equivariance error {worst_scale:.1e} (< 1e-6)"),
    )
}

fn never_panics(f: impl FnOnce() -> bool) -> bool {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(false)
}

// 10. Bit-exact format round trips; corrupted files yield errors, not panics.
fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let matrix = Array2::from_shape_fn((37, 129), |_| rng.random_range(-1e6f32..1e6));
    let tfm = encode_matrix(matrix.view());
    let tfm_exact = decode_matrix(&tfm)
        .map(|back| back.iter().zip(matrix.iter()).all(|(a, b)| a.to_bits() == b.to_bits()))
        .unwrap_or(false);

    let samples = Array2::from_shape_fn((3, 5000), |_| rng.random_range(-1.0f32..1.0) as f64);
    let wave = Waveform::new(samples, 16000).unwrap();
    let wav = encode_wav(&wave, WavEncoding::Float32);
    let wav_exact = decode_wav(&wav)
        .map(|back| {
            back.sample_rate() == 16000
                && back.samples().dim() == wave.samples().dim()
                && back.samples().iter().zip(wave.samples()).all(|(a, b)| a.to_bits() == b.to_bits())
        })
        .unwrap_or(false);

    // Every truncation must be an error; random corruptions may decode or
    // fail but must not panic.
    let mut crashes = 0;
    let mut accepted_truncations = 0;
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for cut in 0..tfm.len() {
        if !never_panics(|| decode_matrix(&tfm[..cut]).is_err()) {
            accepted_truncations += 1;
        }
    }
    let wav_small = encode_wav(&Waveform::new(wave.samples().slice(s![.., ..20]).to_owned(), 16000).unwrap(), WavEncoding::Pcm16);
    for cut in 0..wav_small.len() {
        if !never_panics(|| decode_wav(&wav_small[..cut]).is_err()) {
            accepted_truncations += 1;
        }
    }
    for _ in 0..2000 {
        for bytes in [&tfm[..200], &wav_small[..]] {
            let mut corrupt = bytes.to_vec();
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..corrupt.len());
                corrupt[i] = rng.random();
            }
            if catch_unwind(|| {
                let _ = decode_matrix(&corrupt);
                let _ = decode_wav(&corrupt);
            })
            .is_err()
            {
                crashes += 1;
            }
        }
    }
    std::panic::set_hook(hook);
    outcome(
        tfm_exact && wav_exact && accepted_truncations == 0 && crashes == 0,
        format!(
            "TFM1 bit-exact {tfm_exact}, float32 WAV bit-exact {wav_exact}, truncations accepted {accepted_truncations}, panics {crashes}"
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 10] = [
        (1, "STFT round trip", Duration::from_secs(5), criterion_1),
        (2, "CGMM EM monotonicity and mask AUC", Duration::from_secs(60), criterion_2),
        (3, "MVDR contract", Duration::from_secs(60), criterion_3),
        (4, "GEV contract", Duration::from_secs(60), criterion_4),
        (5, "PMWF consistency", Duration::from_secs(60), criterion_5),
        (6, "End-to-end enhancement", Duration::from_secs(300), criterion_6),
        (7, "Simulation protocol", Duration::from_secs(60), criterion_7),
        (8, "Post-filter", Duration::from_secs(60), criterion_8),
        (9, "WPE dereverberation", Duration::from_secs(60), criterion_9),
        (10, "Formats", Duration::from_secs(60), criterion_10),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(run).unwrap_or_else(|_| outcome(false, "panicked"));
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {:<4} {name}: {} [{:.2}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
