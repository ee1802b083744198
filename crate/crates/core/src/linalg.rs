//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetrizes in place: `A <- (A + A') / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Result of inverting a symmetric matrix with optional ridge jitter.
#[derive(Debug, Clone)]
pub struct JitteredInverse {
    pub inverse: DMatrix<f64>,
    /// Total ridge added to the diagonal (0 when none was needed).
    pub jitter: f64,
}

fn well_conditioned_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = a.clone().lu();
    let inv = lu.try_inverse()?;
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Reject numerically singular matrices via a reciprocal condition estimate.
    let norm_a = a.abs().row_sum().max();
    let norm_inv = inv.abs().row_sum().max();
    if norm_a * norm_inv > 1e14 {
        return None;
    }
    Some(inv)
}

/// Inverts a symmetric matrix, adding `delta * I` with
/// `delta = 1e-8 * trace / m` at most twice when it is near singular.
pub fn inverse_with_jitter(a: &DMatrix<f64>) -> Result<JitteredInverse> {
    let m = a.nrows();
    if m == 0 {
        return Ok(JitteredInverse { inverse: DMatrix::zeros(0, 0), jitter: 0.0 });
    }
    let delta = 1e-8 * a.trace().abs() / m as f64;
    let mut work = a.clone();
    let mut jitter = 0.0;
    for attempt in 0..3 {
        if let Some(inverse) = well_conditioned_inverse(&work) {
            let mut inverse = inverse;
            symmetrize(&mut inverse);
            return Ok(JitteredInverse { inverse, jitter });
        }
        if attempt < 2 && delta > 0.0 {
            for i in 0..m {
                work[(i, i)] += delta;
            }
            jitter += delta;
        }
    }
    Err(Error::Singular(format!("{m}x{m} matrix is singular after ridge jitter")))
}

/// Pseudo-inverse of a symmetric matrix; eigenvalues at or below
/// `rel_cutoff * max_eigenvalue` are discarded. Also returns the rank.
pub fn pinv_sym(a: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, usize) {
    let mut s = a.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    if max <= 0.0 {
        return (out, 0);
    }
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > rel_cutoff * max {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / ev;
        }
    }
    (out, rank)
}

/// Ratio of smallest to largest eigenvalue of a symmetric matrix
/// (0 when the largest is not positive).
pub fn eigen_ratio(a: &DMatrix<f64>) -> f64 {
    let mut s = a.clone();
    symmetrize(&mut s);
    let ev = s.symmetric_eigen().eigenvalues;
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 && max.is_finite() {
        min / max
    } else {
        0.0
    }
}

/// `v' A v`.
pub fn quad_form(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v))
}

/// Accumulates `scale * g g'` into the upper triangle of `acc`.
#[inline]
pub(crate) fn rank1_upper(acc: &mut [f64], m: usize, g: &[f64], scale: f64) {
    for a in 0..m {
        let ga = scale * g[a];
        if ga == 0.0 {
            continue;
        }
        let row = &mut acc[a * m..(a + 1) * m];
        for b in a..m {
            row[b] += ga * g[b];
        }
    }
}

/// Builds a symmetric matrix from an upper-triangle row-major buffer.
pub(crate) fn from_upper(acc: &[f64], m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if i <= j { acc[i * m + j] } else { acc[j * m + i] })
}
