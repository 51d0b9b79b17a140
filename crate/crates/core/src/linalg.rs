//! Dense linear-algebra helpers shared by the rank oracles.

use nalgebra::DMatrix;

/// Default relative cut-off for numeric rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `rel_tol * sigma_max`. A zero matrix has
/// rank 0.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    rank_from_singular_values(&singular_values(m), rel_tol)
}

pub fn rank_from_singular_values(sv: &[f64], rel_tol: f64) -> usize {
    let top = sv.iter().copied().fold(0.0_f64, f64::max);
    if top <= f64::MIN_POSITIVE {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Centre each row across its columns (right-multiplication by
/// `I - 11ᵀ/n`).
pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    let mut out = m.clone();
    if n == 0 {
        return out;
    }
    for i in 0..m.nrows() {
        let mean = m.row(i).sum() / n as f64;
        for j in 0..n {
            out[(i, j)] -= mean;
        }
    }
    out
}

/// Centre each column across its rows (left-multiplication by
/// `I - 11ᵀ/n`).
pub fn center_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    center_columns(&m.transpose()).transpose()
}
