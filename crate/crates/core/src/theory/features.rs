//! Random-feature rank after an entry-wise power activation, and the
//! centred ridge solution for the top layer.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::RankOracleConfig;
use crate::error::{Error, Result};
use crate::linalg::{center_rows, numeric_rank, DEFAULT_RANK_TOL};
use crate::model::{features, Params};
use crate::rng::{derive_seed, stream, stream_rng};

/// Ranks of `σ(XW)` over independent Gaussian draws of `W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureRankStats {
    pub k: usize,
    pub ranks: Vec<usize>,
    pub min: usize,
    pub max: usize,
    /// Most frequent rank; the smaller one wins a tie.
    pub mode: usize,
    pub mode_count: usize,
}

impl FeatureRankStats {
    fn from_ranks(k: usize, ranks: Vec<usize>) -> Self {
        let min = *ranks.iter().min().expect("at least one trial");
        let max = *ranks.iter().max().expect("at least one trial");
        let mut counts = vec![0usize; max + 1];
        for &r in &ranks {
            counts[r] += 1;
        }
        let (mode, mode_count) = counts
            .iter()
            .enumerate()
            .fold((0, 0), |best, (r, &c)| if c > best.1 { (r, c) } else { best });
        FeatureRankStats {
            k,
            ranks,
            min,
            max,
            mode,
            mode_count,
        }
    }

    pub fn count_equal(&self, rank: usize) -> usize {
        self.ranks.iter().filter(|&&r| r == rank).count()
    }
}

/// `σ(t) = tˢ` applied entry-wise to `XW`.
pub fn power_features(x: &DMatrix<f64>, w: &DMatrix<f64>, s: u32) -> DMatrix<f64> {
    (x * w).map(|t| t.powi(s as i32))
}

/// Rank of `σ(XW)` for `cfg.trials` Gaussian `d × K` draws of `W`. `x` has
/// one sample per row.
pub fn feature_rank_oracle(x: &DMatrix<f64>, k: usize, s: u32, cfg: &RankOracleConfig) -> Result<FeatureRankStats> {
    cfg.validate()?;
    if cfg.trials == 0 {
        return Err(Error::invalid("feature_rank_oracle needs trials ≥ 1"));
    }
    if s == 0 || k == 0 {
        return Err(Error::invalid("exponent and K must be ≥ 1"));
    }
    let d = x.ncols();
    let ranks: Vec<usize> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(derive_seed(cfg.seed, t as u64), stream::ORACLE);
            let w = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
            numeric_rank(&power_features(x, &w, s), cfg.svd_threshold)
        })
        .collect();
    Ok(FeatureRankStats::from_ranks(k, ranks))
}

/// `C(n, r)` in floating point.
fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `min(n, C(r+s−1, s))`, the upper bound on the saturated rank for a
/// rank-`r` design with `n` samples.
pub fn polynomial_feature_bound(r: usize, s: u32, n: usize) -> usize {
    let c = binomial(r + s as usize - 1, s as usize);
    if c >= n as f64 {
        n
    } else {
        c as usize
    }
}

/// Saturated rank `l̂`: the modal rank at the first `K` (doubling from 1)
/// where the modal rank falls below `K`. Returns `l̂` and the `K` used.
pub fn estimate_intrinsic_dim(x: &DMatrix<f64>, s: u32, cfg: &RankOracleConfig) -> Result<(usize, usize)> {
    let mut k = 1;
    loop {
        let stats = feature_rank_oracle(x, k, s, cfg)?;
        if stats.mode < k {
            return Ok((stats.mode, k));
        }
        k *= 2;
    }
}

/// Centred lazy features and labels at `params`: `F̃ = P⊥ σ(XW)` (`N × K`)
/// and `Ỹ = P⊥ Yᵀ` (`N × p`). `x` and `y` have one sample per column.
pub fn centered_design(params: &Params, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if y.ncols() != x.ncols() {
        return Err(Error::shape("X and Y have different sample counts"));
    }
    let f = features(params, x)?.transpose();
    Ok((center_rows(&f), center_rows(&y.transpose())))
}

/// `(F̃ᵀF̃ + ηI)⁻¹ F̃ᵀ Ỹ` through the SVD of `F̃`, a `K × p` matrix.
pub fn ridge_top_layer(f: &DMatrix<f64>, y: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    if f.nrows() != y.nrows() {
        return Err(Error::shape(format!(
            "F̃ has {} rows, Ỹ has {}",
            f.nrows(),
            y.nrows()
        )));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("eta = {eta} must be ≥ 0")));
    }
    let k = f.ncols();
    if eta == 0.0 && numeric_rank(f, DEFAULT_RANK_TOL) < k {
        return Err(Error::Numerical(
            "F̃ᵀF̃ is singular; use eta > 0".to_string(),
        ));
    }
    let svd = f.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut coef = u.transpose() * y;
    for (i, &sig) in svd.singular_values.iter().enumerate() {
        let scale = if sig == 0.0 { 0.0 } else { sig / (sig * sig + eta) };
        coef.row_mut(i).scale_mut(scale);
    }
    Ok(v_t.transpose() * coef)
}

/// `‖Ỹ − F̃V‖_F / ‖Ỹ‖_F`, or 0 when `Ỹ = 0`.
pub fn relative_residual(f: &DMatrix<f64>, y: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let ny = y.norm();
    if ny == 0.0 {
        return 0.0;
    }
    (y - f * v).norm() / ny
}
