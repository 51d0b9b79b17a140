//! Leading-order free-energy comparison between two basins.

use crate::error::{Error, Result};

/// `F_a − F_b ≈ n(L_a − L_b) + (λ_a − λ_b) ln n`.
pub fn free_energy_gap(lambda_a: f64, lambda_b: f64, loss_a: f64, loss_b: f64, n: f64) -> f64 {
    n * (loss_a - loss_b) + (lambda_a - lambda_b) * n.ln()
}

pub const CROSSOVER_MIN_N: f64 = 2.0;
pub const CROSSOVER_MAX_N: f64 = 1e12;

/// Sample size in `[2, 10¹²]` where the gap changes sign, by bisection in
/// `ln n` to relative precision 1e-6.
pub fn crossover_n(lambda_a: f64, lambda_b: f64, loss_a: f64, loss_b: f64) -> Result<f64> {
    let gap = |n: f64| free_energy_gap(lambda_a, lambda_b, loss_a, loss_b, n);
    let (mut lo, mut hi) = (CROSSOVER_MIN_N.ln(), CROSSOVER_MAX_N.ln());
    let g_lo = gap(lo.exp());
    let g_hi = gap(hi.exp());
    if !(g_lo.is_finite() && g_hi.is_finite()) || g_lo.signum() == g_hi.signum() || g_lo == 0.0 {
        return Err(Error::Numerical(format!(
            "free-energy gap has no sign change on [{CROSSOVER_MIN_N}, {CROSSOVER_MAX_N:e}] \
             (gap {g_lo:.3e} → {g_hi:.3e})"
        )));
    }
    // hi/lo − 1 < 1e-6 in n-space.
    while hi - lo > 1e-6f64.ln_1p() {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid.exp());
        if g == 0.0 {
            return Ok(mid.exp());
        }
        if g.signum() == g_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
