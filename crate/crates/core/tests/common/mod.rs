//! Reference implementations used as test oracles. Deliberately naive and
//! independent of the library's linear algebra.

#![allow(dead_code)]

use farfield::linalg::{CMatrix, CVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Circular complex normal with unit variance.
pub fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_vector(m: usize, rng: &mut ChaCha8Rng) -> CVector {
    CVector::from_fn(m, |_, _| cn(rng))
}

pub fn unit_vector(m: usize, rng: &mut ChaCha8Rng) -> CVector {
    let v = random_vector(m, rng);
    let n = v.norm();
    v.unscale(n)
}

/// `B Bᴴ / k` with `B` an `m × k` complex Gaussian matrix.
pub fn random_psd(m: usize, k: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let b = CMatrix::from_fn(m, k, |_, _| cn(rng));
    let mut out = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut s = c(0.0, 0.0);
            for l in 0..k {
                s += b[(i, l)] * b[(j, l)].conj();
            }
            out[(i, j)] = s / k as f64;
        }
    }
    out
}

pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    CMatrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j].conj())
}

/// Diagonal loading by `factor · trace / dim`.
pub fn load(m: &CMatrix, factor: f64) -> CMatrix {
    let n = m.nrows();
    let tr: f64 = (0..n).map(|i| m[(i, i)].re).sum();
    let mut out = m.clone();
    for i in 0..n {
        out[(i, i)] += factor * tr / n as f64;
    }
    out
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let k = b.ncols();
    let mut aug: Vec<Vec<Complex64>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)]).chain((0..k).map(|j| b[(i, j)])).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].norm().partial_cmp(&aug[y][col].norm()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        for row in 0..n {
            if row != col {
                let factor = aug[row][col] / p;
                if factor != c(0.0, 0.0) {
                    for j in col..n + k {
                        let v = aug[col][j];
                        aug[row][j] -= factor * v;
                    }
                }
            }
        }
    }
    CMatrix::from_fn(n, k, |i, j| aug[i][n + j] / aug[i][i])
}

pub fn solve_vec(a: &CMatrix, b: &CVector) -> CVector {
    let x = solve(a, &CMatrix::from_column_slice(b.len(), 1, b.as_slice()));
    CVector::from_fn(b.len(), |i, _| x[(i, 0)])
}

pub fn dot(a: &CVector, b: &CVector) -> Complex64 {
    (0..a.len()).map(|i| a[i].conj() * b[i]).sum()
}

pub fn quad(m: &CMatrix, w: &CVector) -> f64 {
    let mut s = c(0.0, 0.0);
    for i in 0..w.len() {
        for j in 0..w.len() {
            s += w[i].conj() * m[(i, j)] * w[j];
        }
    }
    s.re
}

/// Largest eigenvalue of `N⁻¹S` by power iteration with a Rayleigh-quotient
/// readout, for Hermitian `S ⪰ 0` and `N ≻ 0`.
pub fn top_generalized_eigenvalue(s: &CMatrix, n: &CMatrix, rng: &mut ChaCha8Rng) -> f64 {
    let a = solve(n, s);
    let mut v = random_vector(s.nrows(), rng);
    let mut last = 0.0;
    for it in 0..200_000 {
        let next = &a * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = next.unscale(norm);
        if it % 16 == 0 {
            let q = quad(s, &v) / quad(n, &v);
            if (q - last).abs() <= 1e-15 * q.abs() {
                return q;
            }
            last = q;
        }
    }
    quad(s, &v) / quad(n, &v)
}

/// Area under the ROC curve of `scores` against binary `labels`
/// (Mann-Whitney statistic, ties count half).
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// White noise shaped by a one-pole lowpass and a slow random envelope, so
/// the signal has speech-like pauses.
pub fn speechlike(n: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let syllable = (0.18 * sample_rate as f64) as usize;
    let mut env = Vec::with_capacity(n);
    while env.len() < n {
        let level = if rng.random_bool(0.7) { rng.random_range(0.3..1.0) } else { 0.02 };
        let len = syllable + rng.random_range(0..syllable);
        for i in 0..len {
            let ramp = (std::f64::consts::PI * i as f64 / len as f64).sin();
            env.push(level * ramp);
        }
    }
    let mut state = 0.0;
    (0..n)
        .map(|i| {
            state = 0.6 * state + gauss(rng);
            state * env[i]
        })
        .collect()
}
