//! Small dense Hermitian helpers shared by the spatial modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative diagonal loading used before every covariance inversion.
pub const DIAGONAL_LOADING: f64 = 1e-6;

/// `factor * trace / dim`, falling back to `factor` for a zero-trace matrix.
pub fn loading_amount(m: &CMatrix, factor: f64) -> f64 {
    let dim = m.nrows().max(1) as f64;
    let avg = m.diagonal().iter().map(|z| z.re).sum::<f64>() / dim;
    if avg > 0.0 && avg.is_finite() {
        factor * avg
    } else {
        factor
    }
}

pub fn loaded(m: &CMatrix, factor: f64) -> CMatrix {
    let delta = loading_amount(m, factor);
    let mut out = hermitian_part(m);
    for i in 0..out.nrows() {
        out[(i, i)] += delta;
    }
    out
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn trace_re(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Hermitian eigendecomposition with eigenvalues sorted descending.
/// Equal eigenvalues keep the solver's original order.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, Vec<CVector>) {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    (values, vectors)
}

/// Largest eigenpair of a Hermitian matrix, eigenvector unit-norm.
pub fn principal_eigenpair(m: &CMatrix) -> (f64, CVector) {
    let (values, mut vectors) = hermitian_eigen(m);
    let v = vectors.swap_remove(0);
    let norm = v.norm();
    (values[0], if norm > 0.0 { v.unscale(norm) } else { v })
}

/// Rotates `v` so entry `reference` is real and non-negative. When that entry
/// is numerically zero the largest-magnitude entry is used instead.
pub fn fix_phase(v: &mut CVector, reference: usize) {
    let scale = v.norm();
    if scale == 0.0 {
        return;
    }
    let mut anchor = v[reference.min(v.len() - 1)];
    if anchor.norm() <= 1e-12 * scale {
        anchor = v
            .iter()
            .copied()
            .fold(Complex64::new(0.0, 0.0), |best, z| if z.norm() > best.norm() { z } else { best });
    }
    let rot = anchor.conj() / anchor.norm();
    v.iter_mut().for_each(|z| *z *= rot);
}

/// `a^H b`.
pub fn inner(a: &CVector, b: &CVector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// `w^H M w`, real part.
pub fn quadratic_form(m: &CMatrix, w: &CVector) -> f64 {
    inner(w, &(m * w)).re
}
