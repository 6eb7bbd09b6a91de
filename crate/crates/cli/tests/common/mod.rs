#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use farfield::io::{write_wav, WavEncoding};
use farfield::Waveform;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: u32 = 16000;

pub fn farfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_farfield"))
        .args(args)
        .env_remove("FARFIELD_JOBS")
        .output()
        .expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Voiced-like bursts: a few harmonics of a drifting pitch gated by a
/// syllable-rate envelope.
pub fn speechlike(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = rng.random_range(100.0..220.0);
    let rate = rng.random_range(3.0..5.0);
    let phase0: f64 = rng.random_range(0.0..1.0);
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let env = ((2.0 * std::f64::consts::PI * (rate * t + phase0)).sin()).max(0.0).powi(2);
            let f = f0 * (1.0 + 0.1 * (2.0 * std::f64::consts::PI * 0.7 * t).sin());
            phase += 2.0 * std::f64::consts::PI * f / SR as f64;
            let voiced: f64 = (1..=8).map(|h| (h as f64 * phase).sin() / h as f64).sum();
            env * (voiced + 0.05 * gauss(rng))
        })
        .collect()
}

/// Exponentially decaying random impulse response.
pub fn impulse_response(len: usize, decay_samples: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|k| if k == 0 { 1.0 } else { 0.5 * gauss(rng) * (-(k as f64) / decay_samples).exp() })
        .collect()
}

pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| h.iter().take(i + 1).enumerate().map(|(k, hk)| hk * x[i - k]).sum())
        .collect()
}

/// A source heard on `channels` microphones through independent responses.
pub fn spatialize(src: &[f64], channels: usize, len: usize, decay: f64, rng: &mut ChaCha8Rng) -> Waveform {
    let rows: Vec<Vec<f64>> = (0..channels)
        .map(|_| convolve(src, &impulse_response(len, decay, rng)))
        .collect();
    Waveform::from_channels(&rows, SR).unwrap()
}

pub fn white(channels: usize, n: usize, rng: &mut ChaCha8Rng) -> Waveform {
    Waveform::new(Array2::from_shape_fn((channels, n), |_| 0.1 * gauss(rng)), SR).unwrap()
}

pub fn save(path: &Path, wave: &Waveform) -> PathBuf {
    write_wav(path, wave, WavEncoding::Float32).unwrap();
    path.to_path_buf()
}

/// Writes a reverberant target, a directional interferer and diffuse noise
/// (all `channels` wide, `seconds` long) into `dir`.
pub fn scene(dir: &Path, name: &str, channels: usize, seconds: f64, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SR as f64) as usize;
    let target = spatialize(&speechlike(n, &mut rng), channels, 1024, 300.0, &mut rng);
    let interferer = spatialize(&speechlike(n, &mut rng), channels, 256, 60.0, &mut rng);
    let noise = white(channels, n, &mut rng);
    (
        save(&dir.join(format!("{name}.wav")), &target),
        save(&dir.join(format!("{name}.interferer.wav")), &interferer),
        save(&dir.join(format!("{name}.noise.wav")), &noise),
    )
}

pub fn report(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
