//! Closed-form local learning coefficients for quadratic networks.

use crate::error::{Error, Result};

/// `d(d+1)/2`, the dimension of symmetric `d × d` matrices.
pub fn sym_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Bias-free network with `p` outputs and `K ≥ d(d+1)/2` hidden units whose
/// rank-one features span `Sym(d)`: `λ = p·d(d+1)/4`.
pub fn llc_overparam(p: usize, d: usize) -> f64 {
    (p * d * (d + 1)) as f64 / 4.0
}

/// Bias-free network with `K < d(d+1)/2` hidden units under the
/// non-degeneracy hypotheses: `λ = K(d+p−1)/2`.
pub fn llc_underparam(p: usize, d: usize, k: usize) -> Result<f64> {
    if k >= sym_dim(d) {
        return Err(Error::Regime(format!(
            "K = {k} ≥ d(d+1)/2 = {}; use llc_overparam",
            sym_dim(d)
        )));
    }
    if d == 0 || p == 0 {
        return Err(Error::invalid("d and p must be positive"));
    }
    Ok((k * (d + p - 1)) as f64 / 2.0)
}

/// Whichever of the two p-output formulas applies to `K`.
pub fn llc_p_output(p: usize, d: usize, k: usize) -> f64 {
    if k >= sym_dim(d) {
        llc_overparam(p, d)
    } else {
        (k * (d + p - 1)) as f64 / 2.0
    }
}

/// Single-output network with bias, `K ≥ d`, `rank Q* = d`:
/// `λ = (d+1)(d+2)/4`.
pub fn llc_single_overparam(d: usize) -> f64 {
    ((d + 1) * (d + 2)) as f64 / 4.0
}

/// Macro-parameter count `D(K) = K(2d−K+1)/2 + K + 1` of the single-output
/// network with `K < d`.
pub fn single_output_tangent_dim(d: usize, k: usize) -> usize {
    k * (2 * d + 1 - k) / 2 + k + 1
}

/// Single-output network with bias, `1 ≤ K ≤ d−1`: `λ = D(K)/2`.
pub fn llc_single_underparam(d: usize, k: usize) -> Result<f64> {
    if k == 0 || k >= d {
        return Err(Error::Regime(format!(
            "single-output under-parametrised formula needs 1 ≤ K ≤ d−1 (d = {d}, K = {k})"
        )));
    }
    Ok(single_output_tangent_dim(d, k) as f64 / 2.0)
}

/// Linearised (NTK) model with Fisher rank `r`: `λ = r/2`.
pub fn llc_ntk(fisher_rank: usize) -> f64 {
    fisher_rank as f64 / 2.0
}

/// Random-feature memorisation regime: `λ = ½ p min{l, K}`.
pub fn llc_lazy(p: usize, l: usize, k: usize) -> f64 {
    0.5 * (p * l.min(k)) as f64
}

/// Bounds on the lazy-regime coefficient for quadratic activation on
/// modular inputs, from `2p−1 ≤ l ≤ p(2p−1)`.
pub fn lazy_bounds(p: usize, k: usize) -> (f64, f64) {
    let r = 2 * p - 1;
    (llc_lazy(p, r, k), llc_lazy(p, p * r, k))
}

/// Stage-II coefficient with `K_eff` active units: `½ K_eff (d+p−1)`.
pub fn llc_stage2(k_eff: usize, d: usize, p: usize) -> f64 {
    if k_eff == 0 {
        return 0.0;
    }
    0.5 * (k_eff * (d + p - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overparam_values() {
        assert_eq!(llc_overparam(3, 4), 15.0);
        assert_eq!(llc_overparam(1, 1), 0.5);
        assert_eq!(llc_overparam(2, 4), 10.0);
    }

    #[test]
    fn underparam_values() {
        assert_eq!(llc_underparam(3, 4, 2).unwrap(), 6.0);
        assert_eq!(llc_underparam(1, 2, 1).unwrap(), 1.0);
        assert_eq!(llc_underparam(2, 4, 3).unwrap(), 7.5);
        assert!(matches!(llc_underparam(2, 4, 10), Err(Error::Regime(_))));
    }

    #[test]
    fn single_output_values() {
        assert_eq!(llc_single_overparam(1), 1.5);
        assert_eq!(llc_single_overparam(4), 7.5);
        assert_eq!(llc_single_overparam(2), (3 + 2 + 1) as f64 / 2.0);
        assert_eq!(llc_single_underparam(4, 2).unwrap(), 5.0);
        assert_eq!(llc_single_underparam(2, 1).unwrap(), 2.0);
        assert!(llc_single_underparam(4, 4).is_err());
        assert!(llc_single_underparam(4, 0).is_err());
    }

    #[test]
    fn ntk_and_lazy() {
        assert_eq!(llc_ntk(0), 0.0);
        assert_eq!(llc_ntk(7), 3.5);
        assert_eq!(llc_lazy(3, 5, 10), 7.5);
        assert_eq!(lazy_bounds(3, 100), (7.5, 22.5));
        for k in 1..=5 {
            let (lo, hi) = lazy_bounds(3, k);
            assert_eq!(lo, hi);
            assert_eq!(lo, 1.5 * k as f64);
        }
    }

    #[test]
    fn stage2_values() {
        assert_eq!(llc_stage2(0, 10, 5), 0.0);
        assert_eq!(llc_stage2(4, 10, 5), 28.0);
        for p in 1..5 {
            let d = 2 * p;
            for k in 1..sym_dim(d) {
                assert_eq!(llc_stage2(k, d, p), llc_underparam(p, d, k).unwrap());
                assert_eq!(llc_stage2(k, d, p), 0.5 * (k * (3 * p - 1)) as f64);
            }
        }
    }
}
