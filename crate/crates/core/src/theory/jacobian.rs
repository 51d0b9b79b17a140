//! Jacobian-rank oracles for the parameter maps `Φ_p: (W, V) ↦ (Q_1..Q_p)`
//! and the single-output macro map `(W, v, b, c) ↦ (Q, r, s)`.

use nalgebra::DMatrix;

use super::closed_form::sym_dim;
use super::RankOracleConfig;
use crate::error::{Error, Result};
use crate::linalg::numeric_rank;
use crate::model::Params;
use crate::rng::derive_seed;

/// Largest dense Jacobian (rows × columns) the oracles will factorise.
pub const MAX_JACOBIAN_ENTRIES: usize = 4_000_000;

fn guard(rows: usize, cols: usize) -> Result<()> {
    if rows.saturating_mul(cols) > MAX_JACOBIAN_ENTRIES {
        return Err(Error::TooLarge(format!(
            "Jacobian of {rows}×{cols} exceeds {MAX_JACOBIAN_ENTRIES} entries"
        )));
    }
    Ok(())
}

/// Row index of entry `(a, b)`, `a ≤ b`, of a symmetric `d × d` block.
fn sym_index(d: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * d - a * (a + 1) / 2 + b
}

/// `Q_k = Σ_j v_kj w_j w_jᵀ` for every output `k`.
pub fn phi(params: &Params) -> Vec<DMatrix<f64>> {
    let (d, k, p) = params.dims();
    (0..p)
        .map(|out| {
            let mut q = DMatrix::zeros(d, d);
            for j in 0..k {
                let wj = params.w.column(j);
                q += params.v[(out, j)] * wj * wj.transpose();
            }
            q
        })
        .collect()
}

/// Dense Jacobian of `Φ_p` at `params`.
///
/// Rows enumerate `(k, a, b)` with `a ≤ b`, output-major. Columns follow
/// [`Params::to_flat`]: `W` column-major, then `V` column-major.
pub fn jacobian_phi(params: &Params) -> Result<DMatrix<f64>> {
    let (d, k, p) = params.dims();
    let s = sym_dim(d);
    let rows = p * s;
    let cols = k * (d + p);
    guard(rows, cols)?;
    let w = &params.w;
    let v = &params.v;
    let mut jac = DMatrix::zeros(rows, cols);
    for out in 0..p {
        let base = out * s;
        for j in 0..k {
            let vkj = v[(out, j)];
            // ∂/∂w_ij of v_kj (w_j w_jᵀ)_{ab}
            for i in 0..d {
                let col = j * d + i;
                for b in 0..d {
                    jac[(base + sym_index(d, i, b), col)] += vkj * w[(b, j)];
                }
                jac[(base + sym_index(d, i, i), col)] += vkj * w[(i, j)];
            }
            let col = d * k + j * p + out;
            for a in 0..d {
                for b in a..d {
                    jac[(base + sym_index(d, a, b), col)] = w[(a, j)] * w[(b, j)];
                }
            }
        }
    }
    Ok(jac)
}

pub fn jacobian_rank_phi(params: &Params, cfg: &RankOracleConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(numeric_rank(&jacobian_phi(params)?, cfg.svd_threshold))
}

/// Outcome of checking the non-degeneracy hypotheses at a point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HypothesisCheck {
    pub overparametrised: bool,
    /// Every `w_j` and every `v_{:j}` is nonzero.
    pub nonzero_units: bool,
    /// Over-parametrised: the `w_j w_jᵀ` span `Sym(d)`. Otherwise: they
    /// are linearly independent.
    pub rank_one_condition: bool,
    /// Under-parametrised only: `u_j ⊥ w_j` and
    /// `Σ_j v_kj (u_j w_jᵀ + w_j u_jᵀ) = 0 ∀k` force `u = 0`.
    pub orthogonal_injective: bool,
}

impl HypothesisCheck {
    pub fn holds(&self) -> bool {
        self.nonzero_units && self.rank_one_condition && self.orthogonal_injective
    }
}

/// Columns `vech(w_j w_jᵀ)`.
fn rank_one_matrix(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, k) = w.shape();
    let mut m = DMatrix::zeros(sym_dim(d), k);
    for j in 0..k {
        for a in 0..d {
            for b in a..d {
                m[(sym_index(d, a, b), j)] = w[(a, j)] * w[(b, j)];
            }
        }
    }
    m
}

/// Checks the hypotheses of the closed form that applies to `K`.
pub fn check_hypotheses(params: &Params, rel_tol: f64) -> HypothesisCheck {
    let (d, k, p) = params.dims();
    let s = sym_dim(d);
    let over = k >= s;
    let scale = params.w.amax().max(params.v.amax());
    let eps = rel_tol * scale.max(f64::MIN_POSITIVE);
    let nonzero_units = scale > 0.0
        && (0..k).all(|j| params.w.column(j).amax() > eps && params.v.column(j).amax() > eps);
    let r1 = numeric_rank(&rank_one_matrix(&params.w), rel_tol);
    let rank_one_condition = if over { r1 == s } else { r1 == k };
    let orthogonal_injective = over || {
        // The map restricted to w_j⊥ has rank K(d−1) iff it is injective.
        let jac = jacobian_phi(params);
        match jac {
            Err(_) => false,
            Ok(jac) => {
                let mut restricted = DMatrix::zeros(p * s, k * d);
                for j in 0..k {
                    let wj = params.w.column(j).into_owned();
                    let nn = wj.norm_squared();
                    if nn == 0.0 {
                        return HypothesisCheck {
                            overparametrised: over,
                            nonzero_units,
                            rank_one_condition,
                            orthogonal_injective: false,
                        };
                    }
                    let proj = DMatrix::identity(d, d) - &wj * wj.transpose() / nn;
                    let block = jac.columns(j * d, d) * proj;
                    restricted.columns_mut(j * d, d).copy_from(&block);
                }
                numeric_rank(&restricted, rel_tol) == k * (d - 1)
            }
        }
    };
    HypothesisCheck {
        overparametrised: over,
        nonzero_units,
        rank_one_condition,
        orthogonal_injective,
    }
}

/// A standard-Gaussian point that satisfies the hypotheses, or the last
/// draw and its failed check if none of `max_draws` does.
#[derive(Clone, Debug)]
pub struct GenericDraw {
    pub params: Params,
    pub check: HypothesisCheck,
    pub draws: usize,
}

pub fn generic_point(
    d: usize,
    k: usize,
    p: usize,
    seed: u64,
    max_draws: usize,
    rel_tol: f64,
) -> Result<GenericDraw> {
    if max_draws == 0 {
        return Err(Error::invalid("max_draws must be ≥ 1"));
    }
    let mut last = None;
    for attempt in 0..max_draws {
        let params = Params::init(d, k, p, 1.0, derive_seed(seed, attempt as u64))?;
        let check = check_hypotheses(&params, rel_tol);
        let ok = check.holds();
        last = Some(GenericDraw {
            params,
            check,
            draws: attempt + 1,
        });
        if ok {
            break;
        }
    }
    Ok(last.expect("max_draws ≥ 1"))
}

/// Single-output network with bias: `f(x) = Σ_j v_j (w_jᵀx + b_j)² + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasedParams {
    pub w: DMatrix<f64>,
    pub v: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl BiasedParams {
    pub fn gaussian(d: usize, k: usize, seed: u64) -> Result<Self> {
        // One stream supplies W, v and b; c is drawn last.
        let flat = Params::init(d + 2, k, 1, 1.0, seed)?;
        let w = flat.w.rows(0, d).into_owned();
        let b = flat.w.row(d).iter().copied().collect();
        let v = flat.w.row(d + 1).iter().copied().collect();
        let c = flat.v[(0, 0)];
        Ok(BiasedParams { w, v, b, c })
    }

    pub fn hidden(&self) -> usize {
        self.w.ncols()
    }

    /// `W (d·K)`, `v (K)`, `b (K)`, `c`.
    pub fn num_params(&self) -> usize {
        let (d, k) = self.w.shape();
        d * k + 2 * k + 1
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w.iter().copied().collect();
        out.extend(&self.v);
        out.extend(&self.b);
        out.push(self.c);
        out
    }

    pub fn from_flat(d: usize, k: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != d * k + 2 * k + 1 {
            return Err(Error::shape(format!(
                "expected {} values, got {}",
                d * k + 2 * k + 1,
                flat.len()
            )));
        }
        let w = DMatrix::from_column_slice(d, k, &flat[..d * k]);
        let v = flat[d * k..d * k + k].to_vec();
        let b = flat[d * k + k..d * k + 2 * k].to_vec();
        Ok(BiasedParams {
            w,
            v,
            b,
            c: flat[d * k + 2 * k],
        })
    }

    /// Network output at one input.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut out = self.c;
        for j in 0..self.hidden() {
            let pre: f64 = self.w.column(j).iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b[j];
            out += self.v[j] * pre * pre;
        }
        out
    }
}

/// `(Q, r, s)` flattened as `vech(Q)`, `r`, `s`, with `Q = W diag(v) Wᵀ`,
/// `r = 2 W diag(v) b`, `s = bᵀ diag(v) b + c`.
pub fn macro_map(params: &BiasedParams) -> Vec<f64> {
    let (d, k) = params.w.shape();
    let s = sym_dim(d);
    let mut out = vec![0.0; s + d + 1];
    for j in 0..k {
        let (vj, bj) = (params.v[j], params.b[j]);
        for a in 0..d {
            let wa = params.w[(a, j)];
            for b in a..d {
                out[sym_index(d, a, b)] += vj * wa * params.w[(b, j)];
            }
            out[s + a] += 2.0 * vj * wa * bj;
        }
        out[s + d] += vj * bj * bj;
    }
    out[s + d] += params.c;
    out
}

/// Analytic Jacobian of [`macro_map`], columns ordered as
/// [`BiasedParams::to_flat`].
pub fn jacobian_macro(params: &BiasedParams) -> Result<DMatrix<f64>> {
    let (d, k) = params.w.shape();
    let s = sym_dim(d);
    let rows = s + d + 1;
    let cols = params.num_params();
    guard(rows, cols)?;
    let w = &params.w;
    let mut jac = DMatrix::zeros(rows, cols);
    let (v_off, b_off, c_col) = (d * k, d * k + k, d * k + 2 * k);
    for j in 0..k {
        let (vj, bj) = (params.v[j], params.b[j]);
        for i in 0..d {
            let col = j * d + i;
            for b in 0..d {
                jac[(sym_index(d, i, b), col)] += vj * w[(b, j)];
            }
            jac[(sym_index(d, i, i), col)] += vj * w[(i, j)];
            jac[(s + i, col)] = 2.0 * vj * bj;
        }
        for a in 0..d {
            for b in a..d {
                jac[(sym_index(d, a, b), v_off + j)] = w[(a, j)] * w[(b, j)];
            }
            jac[(s + a, v_off + j)] = 2.0 * w[(a, j)] * bj;
            jac[(s + a, b_off + j)] = 2.0 * vj * w[(a, j)];
        }
        jac[(s + d, v_off + j)] = bj * bj;
        jac[(s + d, b_off + j)] = 2.0 * vj * bj;
    }
    jac[(s + d, c_col)] = 1.0;
    Ok(jac)
}

/// Central-difference Jacobian of [`macro_map`].
pub fn jacobian_macro_fd(params: &BiasedParams, h: f64) -> DMatrix<f64> {
    let (d, k) = params.w.shape();
    let base = params.to_flat();
    let rows = sym_dim(d) + d + 1;
    let mut jac = DMatrix::zeros(rows, base.len());
    for c in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[c] += h;
        minus[c] -= h;
        let fp = macro_map(&BiasedParams::from_flat(d, k, &plus).expect("same shape"));
        let fm = macro_map(&BiasedParams::from_flat(d, k, &minus).expect("same shape"));
        for r in 0..rows {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

/// Tangent-space dimension of the single-output macro map at `params`.
pub fn macro_tangent_rank(params: &BiasedParams, cfg: &RankOracleConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(numeric_rank(&jacobian_macro(params)?, cfg.svd_threshold))
}
