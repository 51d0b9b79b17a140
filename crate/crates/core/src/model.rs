//! Two-layer quadratic network `Ŷ = V σ(WᵀX)`, `σ(t) = t²`, with the
//! sample-centred squared loss and its analytic gradient.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::center_columns;
use crate::rng::{stream, stream_rng};

/// Network weights. `w` is `d × K` (column `j` is the input weight `w_j`),
/// `v` is `p × K` (column `j` holds the output weights of hidden unit `j`).
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradPair {
    pub dw: DMatrix<f64>,
    pub dv: DMatrix<f64>,
}

/// Gradient signal reaching the hidden layer, `K × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSignal {
    pub g_f: DMatrix<f64>,
}

impl Params {
    /// I.i.d. `N(0, scale²)` entries, deterministic in `seed`.
    pub fn init(d: usize, k: usize, p: usize, scale: f64, seed: u64) -> Result<Self> {
        if d == 0 || k == 0 || p == 0 {
            return Err(Error::invalid(format!(
                "dimensions must be positive (d={d}, K={k}, p={p})"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("init scale {scale} must be > 0")));
        }
        let normal = Normal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = stream_rng(seed, stream::INIT);
        let w = DMatrix::from_fn(d, k, |_, _| normal.sample(&mut rng));
        let v = DMatrix::from_fn(p, k, |_, _| normal.sample(&mut rng));
        Ok(Params { w, v })
    }

    pub fn zeros(d: usize, k: usize, p: usize) -> Self {
        Params {
            w: DMatrix::zeros(d, k),
            v: DMatrix::zeros(p, k),
        }
    }

    pub fn from_parts(w: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if w.ncols() != v.ncols() {
            return Err(Error::shape(format!(
                "W has {} hidden units but V has {}",
                w.ncols(),
                v.ncols()
            )));
        }
        Ok(Params { w, v })
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.v.nrows()
    }

    /// `(d, K, p)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.input_dim(), self.hidden(), self.outputs())
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.v.len()
    }

    /// `W` then `V`, each column-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(self.v.as_slice());
        out
    }

    pub fn from_flat(d: usize, k: usize, p: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != k * (d + p) {
            return Err(Error::shape(format!(
                "flat vector has {} entries, expected K(d+p) = {}",
                flat.len(),
                k * (d + p)
            )));
        }
        let (wf, vf) = flat.split_at(d * k);
        Ok(Params {
            w: DMatrix::from_column_slice(d, k, wf),
            v: DMatrix::from_column_slice(p, k, vf),
        })
    }

    pub fn sq_norm(&self) -> f64 {
        self.w.norm_squared() + self.v.norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    /// Reorder hidden units: new unit `j` is old unit `perm[j]`.
    pub fn permute_units(&self, perm: &[usize]) -> Self {
        Params {
            w: self.w.select_columns(perm),
            v: self.v.select_columns(perm),
        }
    }

    /// `(w_j, v_:j) ↦ (α w_j, v_:j / α²)`; leaves the network function unchanged.
    pub fn rescale_unit(&self, j: usize, alpha: f64) -> Self {
        let mut out = self.clone();
        out.w.column_mut(j).scale_mut(alpha);
        out.v.column_mut(j).scale_mut(1.0 / (alpha * alpha));
        out
    }

    /// Text checkpoint: `d K p`, then the `d` rows of `W`, then the `p` rows
    /// of `V`. Values use the shortest round-trip decimal form.
    pub fn to_checkpoint_string(&self) -> String {
        let (d, k, p) = self.dims();
        let mut out = format!("{d} {k} {p}\n");
        for m in [&self.w, &self.v] {
            for r in 0..m.nrows() {
                let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:?}")).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }

    pub fn parse_checkpoint(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty checkpoint")?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| format!("bad header `{header}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let [d, k, p] = dims[..] else {
            return Err(format!("header must be `d K p`, got `{header}`"));
        };
        let mut read_rows = |rows: usize| -> std::result::Result<DMatrix<f64>, String> {
            let mut m = DMatrix::zeros(rows, k);
            for r in 0..rows {
                let line = lines.next().ok_or("checkpoint truncated")?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| format!("bad value `{t}`: {e}")))
                    .collect::<std::result::Result<_, _>>()?;
                if vals.len() != k {
                    return Err(format!("row has {} values, expected {k}", vals.len()));
                }
                for (c, x) in vals.into_iter().enumerate() {
                    m[(r, c)] = x;
                }
            }
            Ok(m)
        };
        let w = read_rows(d)?;
        let v = read_rows(p)?;
        Ok(Params { w, v })
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_checkpoint_string().as_bytes())
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_checkpoint(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }
}

fn check_input(params: &Params, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != params.input_dim() {
        return Err(Error::shape(format!(
            "X has {} rows, network input dim is {}",
            x.nrows(),
            params.input_dim()
        )));
    }
    Ok(())
}

fn check_target(params: &Params, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    check_input(params, x)?;
    if y.nrows() != params.outputs() || y.ncols() != x.ncols() {
        return Err(Error::shape(format!(
            "Y is {}×{}, expected {}×{}",
            y.nrows(),
            y.ncols(),
            params.outputs(),
            x.ncols()
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::invalid("loss undefined for N = 0 samples"));
    }
    Ok(())
}

/// Intermediate activations of one forward pass.
struct Activations {
    pre: DMatrix<f64>,
    feat: DMatrix<f64>,
    out: DMatrix<f64>,
}

fn activations(params: &Params, x: &DMatrix<f64>) -> Activations {
    let pre = params.w.tr_mul(x);
    let feat = pre.map(|h| h * h);
    let out = &params.v * &feat;
    Activations { pre, feat, out }
}

/// `Ŷ = V (WᵀX)∘²`, shape `p × N`.
pub fn forward(params: &Params, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_input(params, x)?;
    Ok(activations(params, x).out)
}

/// Hidden features `(WᵀX)∘²`, shape `K × N`.
pub fn features(params: &Params, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_input(params, x)?;
    Ok(activations(params, x).feat)
}

fn ridge_term(params: &Params, wd: f64) -> f64 {
    if wd == 0.0 {
        0.0
    } else {
        0.5 * wd * params.sq_norm()
    }
}

/// `½‖(Y − Ŷ)P⊥‖²_F + (wd/2)(‖W‖²_F + ‖V‖²_F)`, with `P⊥ = I − 11ᵀ/N`.
pub fn centered_loss(params: &Params, x: &DMatrix<f64>, y: &DMatrix<f64>, wd: f64) -> Result<f64> {
    check_target(params, x, y)?;
    if wd < 0.0 {
        return Err(Error::invalid(format!("weight decay {wd} must be ≥ 0")));
    }
    let out = activations(params, x).out;
    let resid = center_columns(&(y - out));
    Ok(0.5 * resid.norm_squared() + ridge_term(params, wd))
}

/// Loss and exact gradient. With `R = (Y − Ŷ)P⊥` and `F = (WᵀX)∘²`:
/// `dV = −R Fᵀ + wd V`, `dW = −X [(VᵀR) ∘ 2WᵀX]ᵀ + wd W`.
pub fn loss_and_gradient(
    params: &Params,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    wd: f64,
) -> Result<(f64, GradPair)> {
    check_target(params, x, y)?;
    if wd < 0.0 {
        return Err(Error::invalid(format!("weight decay {wd} must be ≥ 0")));
    }
    let act = activations(params, x);
    let resid = center_columns(&(y - &act.out));
    let loss = 0.5 * resid.norm_squared() + ridge_term(params, wd);

    let mut dv = -(&resid * act.feat.transpose());
    let mut back = params.v.tr_mul(&resid);
    back.zip_apply(&act.pre, |g, h| *g *= -2.0 * h);
    let mut dw = x * back.transpose();
    if wd != 0.0 {
        dv += &params.v * wd;
        dw += &params.w * wd;
    }
    Ok((loss, GradPair { dw, dv }))
}

pub fn gradient(params: &Params, x: &DMatrix<f64>, y: &DMatrix<f64>, wd: f64) -> Result<GradPair> {
    loss_and_gradient(params, x, y, wd).map(|(_, g)| g)
}

/// Largest coordinate-wise relative error `|g − g_fd| / max(|g|, |g_fd|, floor)`
/// between the analytic gradient and the five-point central difference
/// with step `h`. Along one coordinate the loss is a polynomial of degree at
/// most four, which that stencil differentiates exactly.
pub fn gradient_check(params: &Params, x: &DMatrix<f64>, y: &DMatrix<f64>, wd: f64, h: f64, floor: f64) -> Result<f64> {
    let g = gradient(params, x, y, wd)?;
    let analytic = Params { w: g.dw, v: g.dv }.to_flat();
    let (d, k, p) = params.dims();
    let mut flat = params.to_flat();
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let orig = flat[i];
        let mut at = |offset: f64| -> Result<f64> {
            flat[i] = orig + offset;
            centered_loss(&Params::from_flat(d, k, p, &flat)?, x, y, wd)
        };
        let fd = (at(-2.0 * h)? - 8.0 * at(-h)? + 8.0 * at(h)? - at(2.0 * h)?) / (12.0 * h);
        flat[i] = orig;
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Index of the largest entry of each column; ties go to the lowest index.
pub fn argmax_columns(m: &DMatrix<f64>) -> Vec<usize> {
    m.column_iter()
        .map(|c| {
            let mut best = 0;
            for i in 1..c.len() {
                if c[i] > c[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fraction of columns whose argmax agrees.
pub fn argmax_agreement(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    let n = pred.ncols();
    if n == 0 {
        return 0.0;
    }
    let hits = argmax_columns(pred)
        .into_iter()
        .zip(argmax_columns(target))
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / n as f64
}

pub fn accuracy(params: &Params, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_target(params, x, y)?;
    Ok(argmax_agreement(&forward(params, x)?, y))
}

/// `G_F = Vᵀ (Y − Ŷ) P⊥`, the negative loss gradient with respect to the
/// hidden features.
pub fn feature_signal(params: &Params, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<FeatureSignal> {
    check_target(params, x, y)?;
    let resid = center_columns(&(y - forward(params, x)?));
    Ok(FeatureSignal {
        g_f: params.v.tr_mul(&resid),
    })
}

/// Number of hidden units whose output column has norm above
/// `tau · max_j ‖v_:j‖`. `tau = 0` counts the nonzero columns.
pub fn effective_width(params: &Params, tau: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau = {tau} must lie in [0, 1)")));
    }
    let norms: Vec<f64> = params.v.column_iter().map(|c| c.norm()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(norms.iter().filter(|&&n| n > tau * top).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_instance(d: usize, k: usize, p: usize, n: usize, seed: u64) -> (Params, DMatrix<f64>, DMatrix<f64>) {
        let params = Params::init(d, k, p, 0.7, seed).unwrap();
        let mut rng = stream_rng(seed, 99);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(d, n, |_, _| normal.sample(&mut rng));
        let y = DMatrix::from_fn(p, n, |_, _| normal.sample(&mut rng));
        (params, x, y)
    }

    /// Σ_j v_kj (w_jᵀx)² evaluated with explicit loops.
    fn forward_loops(params: &Params, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (d, k, p) = params.dims();
        DMatrix::from_fn(p, x.ncols(), |o, s| {
            let mut acc = 0.0;
            for j in 0..k {
                let mut h = 0.0;
                for i in 0..d {
                    h += params.w[(i, j)] * x[(i, s)];
                }
                acc += params.v[(o, j)] * h * h;
            }
            acc
        })
    }

    /// Mean-subtract each output row, then half the sum of squares.
    fn loss_two_pass(yhat: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for o in 0..y.nrows() {
            let r: Vec<f64> = (0..y.ncols()).map(|s| y[(o, s)] - yhat[(o, s)]).collect();
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            total += r.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        }
        0.5 * total
    }

    #[test]
    fn init_rejects_bad_args() {
        assert!(Params::init(4, 3, 2, 0.0, 0).is_err());
        assert!(Params::init(0, 3, 2, 1.0, 0).is_err());
    }

    #[test]
    fn init_deterministic() {
        let a = Params::init(4, 3, 2, 0.5, 0).unwrap();
        let b = Params::init(4, 3, 2, 0.5, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_variance() {
        let scale = 0.5;
        let p = Params::init(1, 10_000, 1, scale, 3).unwrap();
        let vals = p.to_flat();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        assert!((var / (scale * scale) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn forward_zero_weights() {
        let params = Params::zeros(4, 3, 2);
        let x = DMatrix::from_element(4, 5, 1.0);
        assert_eq!(forward(&params, &x).unwrap(), DMatrix::zeros(2, 5));
    }

    #[test]
    fn forward_hand_computed() {
        let p = 3;
        let params = Params {
            w: DMatrix::from_element(2 * p, 1, 1.0),
            v: DMatrix::from_element(p, 1, 1.0),
        };
        let mut x = DMatrix::zeros(2 * p, 1);
        x[(0, 0)] = 1.0;
        x[(p, 0)] = 1.0;
        let out = forward(&params, &x).unwrap();
        assert!(out.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn forward_matches_loops() {
        let (params, x, _) = random_instance(6, 5, 3, 7, 11);
        let a = forward(&params, &x).unwrap();
        let b = forward_loops(&params, &x);
        let scale = b.abs().max().max(1.0);
        assert!((a - b).abs().max() / scale < 1e-12);
    }

    #[test]
    fn forward_shape_error() {
        let params = Params::zeros(4, 3, 2);
        assert!(forward(&params, &DMatrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn loss_zero_at_fit() {
        let (params, x, _) = random_instance(4, 3, 2, 6, 1);
        let y = forward(&params, &x).unwrap();
        assert_eq!(centered_loss(&params, &x, &y, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn loss_ignores_constant_offsets() {
        let (params, x, _) = random_instance(4, 3, 2, 6, 2);
        let mut y = forward(&params, &x).unwrap();
        for s in 0..y.ncols() {
            y[(0, s)] += 3.0;
            y[(1, s)] -= 1.25;
        }
        assert!(centered_loss(&params, &x, &y, 0.0).unwrap() < 1e-20);
    }

    #[test]
    fn loss_matches_two_pass() {
        let (params, x, y) = random_instance(5, 4, 3, 8, 3);
        let a = centered_loss(&params, &x, &y, 0.0).unwrap();
        let b = loss_two_pass(&forward_loops(&params, &x), &y);
        assert!((a - b).abs() / b.max(1.0) < 1e-12);
    }

    #[test]
    fn loss_rejects_empty() {
        let params = Params::zeros(4, 3, 2);
        assert!(centered_loss(&params, &DMatrix::zeros(4, 0), &DMatrix::zeros(2, 0), 0.0).is_err());
    }

    #[test]
    fn gradient_at_origin_vanishes() {
        let (_, x, y) = random_instance(4, 3, 2, 5, 4);
        let g = gradient(&Params::zeros(4, 3, 2), &x, &y, 0.0).unwrap();
        assert_eq!(g.dw, DMatrix::zeros(4, 3));
        assert_eq!(g.dv, DMatrix::zeros(2, 3));
    }

    #[test]
    fn gradient_pure_decay_at_fit() {
        let (params, x, _) = random_instance(4, 3, 2, 5, 5);
        let y = forward(&params, &x).unwrap();
        let wd = 0.3;
        let g = gradient(&params, &x, &y, wd).unwrap();
        assert_eq!(g.dw, &params.w * wd);
        assert_eq!(g.dv, &params.v * wd);
    }

    #[test]
    fn gradient_finite_differences() {
        for (seed, wd) in [(6, 0.0), (7, 1e-3)] {
            let (params, x, y) = random_instance(4, 3, 2, 5, seed);
            let g = gradient(&params, &x, &y, wd).unwrap();
            let analytic = Params { w: g.dw, v: g.dv }.to_flat();
            let flat = params.to_flat();
            let h = 1e-5;
            for i in 0..flat.len() {
                let mut plus = flat.clone();
                plus[i] += h;
                let mut minus = flat.clone();
                minus[i] -= h;
                let lp = centered_loss(&Params::from_flat(4, 3, 2, &plus).unwrap(), &x, &y, wd).unwrap();
                let lm = centered_loss(&Params::from_flat(4, 3, 2, &minus).unwrap(), &x, &y, wd).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1.0);
                assert!(rel < 1e-6, "coord {i}: fd {fd} vs {}", analytic[i]);
            }
        }
    }

    #[test]
    fn accuracy_cases() {
        let p = 2;
        let y = DMatrix::from_row_slice(p, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(argmax_agreement(&y, &y), 1.0);
        assert_eq!(argmax_agreement(&(-&y), &y), 0.0);
    }

    #[test]
    fn argmax_ties_lowest() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.5, 0.0]);
        assert_eq!(argmax_columns(&m), vec![0, 0]);
    }

    #[test]
    fn feature_signal_cases() {
        let (params, x, y) = random_instance(4, 3, 2, 6, 8);
        let fit = forward(&params, &x).unwrap();
        let g0 = feature_signal(&params, &x, &fit).unwrap();
        assert!(g0.g_f.abs().max() < 1e-14);

        let mut silent = params.clone();
        silent.v.fill(0.0);
        assert_eq!(feature_signal(&silent, &x, &y).unwrap().g_f, DMatrix::zeros(3, 6));

        // Two-step: centred residual first, then project through V.
        let g = feature_signal(&params, &x, &y).unwrap();
        let yhat = forward_loops(&params, &x);
        let mut resid = &y - yhat;
        for o in 0..resid.nrows() {
            let mean = resid.row(o).mean();
            resid.row_mut(o).add_scalar_mut(-mean);
        }
        let want = params.v.transpose() * resid;
        assert!((g.g_f - want).abs().max() < 1e-12);
    }

    #[test]
    fn effective_width_cases() {
        assert_eq!(effective_width(&Params::zeros(2, 4, 3), 0.0).unwrap(), 0);

        let mut params = Params::zeros(2, 5, 3);
        params.v[(0, 0)] = 1.0;
        params.v[(1, 2)] = -2.0;
        params.v[(2, 4)] = 0.1;
        assert_eq!(effective_width(&params, 0.0).unwrap(), 3);

        let mut params = Params::zeros(2, 3, 1);
        params.v[(0, 0)] = 1.0;
        params.v[(0, 1)] = 1e-4;
        params.v[(0, 2)] = 0.5;
        assert_eq!(effective_width(&params, 1e-3).unwrap(), 2);
        assert!(effective_width(&params, 1.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = Params::init(4, 3, 2, 0.37, 9).unwrap();
        let text = params.to_checkpoint_string();
        assert!(text.starts_with("4 3 2\n"));
        assert_eq!(Params::parse_checkpoint(&text).unwrap(), params);
        assert!(Params::parse_checkpoint("4 3\n").is_err());
    }
}
