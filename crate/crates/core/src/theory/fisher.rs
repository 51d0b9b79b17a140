//! Fisher-information rank of the linearised network.

use nalgebra::DMatrix;

use super::RankOracleConfig;
use crate::error::{Error, Result};
use crate::linalg::numeric_rank;
use crate::model::Params;

/// Largest parameter count for which the dense Fisher matrix is formed.
pub const MAX_FISHER_PARAMS: usize = 10_000;

/// Per-sample, per-output parameter gradients of `f`, one row per
/// `(sample, output)` pair, columns ordered as [`Params::to_flat`].
///
/// `∂f_k/∂v_kj = h_j²` and `∂f_k/∂w_ij = 2 v_kj h_j x_i`, with `h = Wᵀx`.
pub fn per_sample_gradients(params: &Params, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, k, p) = params.dims();
    if x.nrows() != d {
        return Err(Error::shape(format!("X has {} rows, expected {d}", x.nrows())));
    }
    let n = x.ncols();
    let h = params.w.transpose() * x;
    let mut g = DMatrix::zeros(n * p, params.num_params());
    for s in 0..n {
        for out in 0..p {
            let row = s * p + out;
            for j in 0..k {
                let hj = h[(j, s)];
                let coef = 2.0 * params.v[(out, j)] * hj;
                for i in 0..d {
                    g[(row, j * d + i)] = coef * x[(i, s)];
                }
                g[(row, d * k + j * p + out)] = hj * hj;
            }
        }
    }
    Ok(g)
}

/// Rank of `(1/N) Σ_rows φ φᵀ` for per-sample gradient rows `φ`.
pub fn fisher_rank_from_gradients(grads: &DMatrix<f64>, n_samples: usize, cfg: &RankOracleConfig) -> Result<usize> {
    cfg.validate()?;
    let dim = grads.ncols();
    if dim > MAX_FISHER_PARAMS {
        return Err(Error::TooLarge(format!(
            "{dim} parameters exceeds the dense Fisher limit {MAX_FISHER_PARAMS}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::invalid("Fisher rank needs at least one sample"));
    }
    let info = grads.transpose() * grads / n_samples as f64;
    Ok(numeric_rank(&info, cfg.svd_threshold))
}

/// Fisher rank of the quadratic network at `θ₀` under squared loss
/// (curvature weight 1), averaging over the columns of `x`.
pub fn fisher_rank(params: &Params, x: &DMatrix<f64>, cfg: &RankOracleConfig) -> Result<usize> {
    if params.num_params() > MAX_FISHER_PARAMS {
        return Err(Error::TooLarge(format!(
            "{} parameters exceeds the dense Fisher limit {MAX_FISHER_PARAMS}",
            params.num_params()
        )));
    }
    let g = per_sample_gradients(params, x)?;
    fisher_rank_from_gradients(&g, x.ncols(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ModDataset;
    use crate::model::forward;

    #[test]
    fn origin_has_rank_zero() {
        let ds = ModDataset::generate_full(2).unwrap();
        let params = Params::zeros(4, 3, 2);
        assert_eq!(fisher_rank(&params, ds.x(), &RankOracleConfig::default()).unwrap(), 0);
    }

    #[test]
    fn linear_model_has_full_rank() {
        // f(x) = θᵀx: the gradient rows are the samples themselves.
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 3.0, 5.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let rank = fisher_rank_from_gradients(&x, 4, &RankOracleConfig::default()).unwrap();
        assert_eq!(rank, 3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let params = Params::init(4, 3, 2, 1.0, 3).unwrap();
        let ds = ModDataset::generate_full(2).unwrap();
        let g = per_sample_gradients(&params, ds.x()).unwrap();
        let flat = params.to_flat();
        let h = 1e-6;
        for c in 0..flat.len() {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[c] += h;
            minus[c] -= h;
            let fp = forward(&Params::from_flat(4, 3, 2, &plus).unwrap(), ds.x()).unwrap();
            let fm = forward(&Params::from_flat(4, 3, 2, &minus).unwrap(), ds.x()).unwrap();
            for s in 0..ds.len() {
                for out in 0..2 {
                    let fd = (fp[(out, s)] - fm[(out, s)]) / (2.0 * h);
                    assert!((fd - g[(s * 2 + out, c)]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn tiny_network_rank_is_bounded() {
        let params = Params::init(4, 3, 2, 1.0, 0).unwrap();
        let ds = ModDataset::generate_full(2).unwrap();
        let r = fisher_rank(&params, ds.x(), &RankOracleConfig::default()).unwrap();
        assert!(r >= 1 && r <= ds.len() * 2 && r <= params.num_params());
    }

    #[test]
    fn guard_rejects_large_models() {
        let params = Params::zeros(20, 600, 10);
        let x = DMatrix::zeros(20, 1);
        assert!(matches!(
            fisher_rank(&params, &x, &RankOracleConfig::default()),
            Err(Error::TooLarge(_))
        ));
    }
}
