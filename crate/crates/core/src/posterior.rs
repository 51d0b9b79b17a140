//! SGLD sampling of the localized tempered posterior
//! `p(w) ∝ exp(−nβ L_n(w) − γ/2 ‖w − w*‖²)` and the LLC estimator
//! `λ̂ = nβ (E[L_n(w)] − L_n(w*))`.
//!
//! Targets implement [`Potential`], which exposes the per-sample mean loss
//! `L_n` and minibatch gradients of it. Parameters are flat vectors.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{self, Params};
use crate::rng::{stream, stream_rng};

/// A loss surface the sampler can explore.
pub trait Potential: Sync {
    fn dim(&self) -> usize;

    /// Number of data points minibatches are drawn from.
    fn num_samples(&self) -> usize;

    /// Full-data mean loss `L_n(w)`.
    fn loss(&self, w: &[f64]) -> f64;

    /// Gradient of the mean loss over `batch` (or over all data when
    /// `None`), written into `out`.
    fn gradient(&self, w: &[f64], batch: Option<&[usize]>, out: &mut [f64]);
}

/// `L(w) = ½‖w − c‖²`. Its tempered posterior is Gaussian, which gives
/// the sampler an exact target.
#[derive(Clone, Debug)]
pub struct QuadraticPotential {
    pub center: Vec<f64>,
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn loss(&self, w: &[f64]) -> f64 {
        0.5 * w
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    fn gradient(&self, w: &[f64], _: Option<&[usize]>, out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(w).zip(&self.center) {
            *o = a - b;
        }
    }
}

/// Constant loss: zero gradient everywhere.
#[derive(Clone, Debug)]
pub struct ConstantPotential {
    pub dim: usize,
    pub value: f64,
}

impl Potential for ConstantPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn loss(&self, _: &[f64]) -> f64 {
        self.value
    }

    fn gradient(&self, _: &[f64], _: Option<&[usize]>, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Mean centred loss of the quadratic network on a fixed data set,
/// `L_n(θ) = centered_loss(θ; X, Y, 0) / n`. Minibatch gradients centre
/// within the batch.
#[derive(Clone, Debug)]
pub struct NetworkPotential {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    hidden: usize,
}

impl NetworkPotential {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, hidden: usize) -> Result<Self> {
        if x.ncols() != y.ncols() || x.ncols() == 0 {
            return Err(Error::shape(format!(
                "X has {} samples, Y has {}; need equal and nonzero",
                x.ncols(),
                y.ncols()
            )));
        }
        if hidden == 0 {
            return Err(Error::invalid("hidden width must be ≥ 1"));
        }
        Ok(NetworkPotential { x, y, hidden })
    }

    fn params(&self, w: &[f64]) -> Params {
        Params::from_flat(self.x.nrows(), self.hidden, self.y.nrows(), w)
            .expect("flat length checked by dim()")
    }
}

impl Potential for NetworkPotential {
    fn dim(&self) -> usize {
        self.hidden * (self.x.nrows() + self.y.nrows())
    }

    fn num_samples(&self) -> usize {
        self.x.ncols()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let n = self.x.ncols() as f64;
        model::centered_loss(&self.params(w), &self.x, &self.y, 0.0).map_or(f64::NAN, |l| l / n)
    }

    fn gradient(&self, w: &[f64], batch: Option<&[usize]>, out: &mut [f64]) {
        let params = self.params(w);
        let result = match batch {
            Some(idx) => {
                let xb = self.x.select_columns(idx);
                let yb = self.y.select_columns(idx);
                model::gradient(&params, &xb, &yb, 0.0).map(|g| (g, idx.len()))
            }
            None => model::gradient(&params, &self.x, &self.y, 0.0).map(|g| (g, self.x.ncols())),
        };
        match result {
            Ok((g, m)) => {
                let scale = 1.0 / m as f64;
                let (ow, ov) = out.split_at_mut(g.dw.len());
                for (o, v) in ow.iter_mut().zip(g.dw.iter()) {
                    *o = v * scale;
                }
                for (o, v) in ov.iter_mut().zip(g.dv.iter()) {
                    *o = v * scale;
                }
            }
            Err(_) => out.fill(f64::NAN),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgldBatch {
    Full,
    Size(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgldConfig {
    /// Step size `ε`.
    pub step_size: f64,
    /// Inverse temperature times sample count, `nβ`.
    pub nbeta: f64,
    /// Localization strength `γ`.
    pub gamma: f64,
    pub chains: usize,
    /// Kept draws per chain.
    pub draws: usize,
    pub burn_in: usize,
    pub batch: SgldBatch,
    pub seed: u64,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            step_size: 1e-4,
            nbeta: 30.0,
            gamma: 5.0,
            chains: 3,
            draws: 600,
            burn_in: 100,
            batch: SgldBatch::Full,
            seed: 0,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("SGLD step size {} must be > 0", self.step_size)));
        }
        if !(self.nbeta > 0.0 && self.nbeta.is_finite()) {
            return Err(Error::invalid(format!("nbeta {} must be > 0", self.nbeta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma {} must be ≥ 0", self.gamma)));
        }
        if self.chains == 0 || self.draws == 0 {
            return Err(Error::invalid("chains and draws must be ≥ 1"));
        }
        if self.batch == SgldBatch::Size(0) {
            return Err(Error::invalid("SGLD batch size must be ≥ 1"));
        }
        Ok(())
    }
}

/// Run one chain from `w_star`. Each step applies
/// `w ← w + ε/2 (−nβ ∇L̂(w) − γ (w − w*)) + √ε ξ`; after `burn_in` steps the
/// full-data loss is recorded at each of `draws` steps.
pub fn sgld_chain<P: Potential + ?Sized>(
    potential: &P,
    w_star: &[f64],
    cfg: &SgldConfig,
    chain: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if w_star.len() != potential.dim() {
        return Err(Error::shape(format!(
            "w* has {} coordinates, potential has {}",
            w_star.len(),
            potential.dim()
        )));
    }
    let mut rng = stream_rng(cfg.seed, stream::CHAIN_BASE + chain as u64);
    let n = potential.num_samples();
    let batch_size = match cfg.batch {
        SgldBatch::Size(b) if b < n => Some(b),
        _ => None,
    };
    let half = 0.5 * cfg.step_size;
    let noise = cfg.step_size.sqrt();
    let mut w = w_star.to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut trace = Vec::with_capacity(cfg.draws);

    for step in 0..cfg.burn_in + cfg.draws {
        match batch_size {
            Some(b) => {
                let idx = rand::seq::index::sample(&mut rng, n, b).into_vec();
                potential.gradient(&w, Some(&idx), &mut grad);
            }
            None => potential.gradient(&w, None, &mut grad),
        }
        for ((wi, gi), si) in w.iter_mut().zip(&grad).zip(w_star) {
            let xi: f64 = rng.sample(StandardNormal);
            *wi += half * (-cfg.nbeta * gi - cfg.gamma * (*wi - si)) + noise * xi;
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::ChainAborted { step });
        }
        if step >= cfg.burn_in {
            let loss = potential.loss(&w);
            if !loss.is_finite() {
                return Err(Error::ChainAborted { step });
            }
            trace.push(loss);
        }
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlcEstimate {
    pub lambda_hat: f64,
    /// Chain-wise estimates of the surviving chains.
    pub per_chain: Vec<f64>,
    pub draw_losses: Vec<Vec<f64>>,
    pub init_loss: f64,
    /// Set when `lambda_hat < 0`; the value is reported unclamped.
    pub negative: bool,
    /// Indices and reasons of aborted chains.
    pub failed_chains: Vec<(usize, String)>,
}

impl LlcEstimate {
    pub fn is_partial(&self) -> bool {
        !self.failed_chains.is_empty()
    }

    /// Standard error of `lambda_hat` from the spread of the chain-wise
    /// estimates; `None` with fewer than two chains.
    pub fn chain_standard_error(&self) -> Option<f64> {
        let c = self.per_chain.len();
        if c < 2 {
            return None;
        }
        let mean = self.lambda_hat;
        let var = self.per_chain.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (c - 1) as f64;
        Some((var / c as f64).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

pub fn estimate_llc<P: Potential + ?Sized>(potential: &P, w_star: &[f64], cfg: &SgldConfig) -> Result<LlcEstimate> {
    estimate_llc_with(potential, w_star, cfg, Execution::Parallel)
}

/// Chains are independent; results are identical for both execution modes.
pub fn estimate_llc_with<P: Potential + ?Sized>(
    potential: &P,
    w_star: &[f64],
    cfg: &SgldConfig,
    exec: Execution,
) -> Result<LlcEstimate> {
    cfg.validate()?;
    if w_star.len() != potential.dim() {
        return Err(Error::shape(format!(
            "w* has {} coordinates, potential has {}",
            w_star.len(),
            potential.dim()
        )));
    }
    let init_loss = potential.loss(w_star);
    if !init_loss.is_finite() {
        return Err(Error::Numerical("L_n(w*) is not finite".into()));
    }
    let run = |c: usize| sgld_chain(potential, w_star, cfg, c);
    let results: Vec<Result<Vec<f64>>> = match exec {
        Execution::Serial => (0..cfg.chains).map(run).collect(),
        Execution::Parallel => (0..cfg.chains).into_par_iter().map(run).collect(),
    };

    let mut per_chain = Vec::new();
    let mut draw_losses = Vec::new();
    let mut failed_chains = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(trace) => {
                // Mean of differences, so a constant trace gives exactly 0.
                let excess = trace.iter().map(|l| l - init_loss).sum::<f64>() / trace.len() as f64;
                per_chain.push(cfg.nbeta * excess);
                draw_losses.push(trace);
            }
            Err(e) => failed_chains.push((c, e.to_string())),
        }
    }
    if per_chain.is_empty() {
        return Err(Error::AllChainsAborted { chains: cfg.chains });
    }
    let lambda_hat = per_chain.iter().sum::<f64>() / per_chain.len() as f64;
    Ok(LlcEstimate {
        lambda_hat,
        per_chain,
        draw_losses,
        init_loss,
        negative: lambda_hat < 0.0,
        failed_chains,
    })
}

/// LLC at trained network parameters, sampling on the training data.
pub fn estimate_network_llc(
    params: &Params,
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    cfg: &SgldConfig,
) -> Result<LlcEstimate> {
    let potential = NetworkPotential::new(x_train.clone(), y_train.clone(), params.hidden())?;
    estimate_llc(&potential, &params.to_flat(), cfg)
}

/// Least-squares line of `λ̂_j` against `1/log(nβ_j)`. The intercept is
/// the bias-reduced coefficient; the slope estimates `−(m − 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepFit {
    pub points: Vec<(f64, f64)>,
    pub intercept: f64,
    pub slope: f64,
}

pub fn fit_temperature_sweep(points: &[(f64, f64)]) -> Result<SweepFit> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "temperature sweep needs ≥ 3 points, got {}",
            points.len()
        )));
    }
    let mut seen: Vec<f64> = Vec::new();
    for &(nb, _) in points {
        if !(nb > 1.0) {
            return Err(Error::invalid(format!("nβ = {nb} must exceed 1")));
        }
        if seen.contains(&nb) {
            return Err(Error::invalid(format!("duplicate nβ = {nb}")));
        }
        seen.push(nb);
    }
    let xs: Vec<f64> = points.iter().map(|&(nb, _)| 1.0 / nb.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, l)| l).collect();
    let fit = crate::stats::linear_fit(&xs, &ys)?;
    Ok(SweepFit {
        points: points.to_vec(),
        intercept: fit.intercept,
        slope: fit.slope,
    })
}

/// One LLC estimate per `nβ` (all other settings from `cfg`), then the
/// `1/log(nβ)` regression.
pub fn temperature_sweep<P: Potential + ?Sized>(
    potential: &P,
    w_star: &[f64],
    nbetas: &[f64],
    cfg: &SgldConfig,
) -> Result<SweepFit> {
    if nbetas.len() < 3 {
        return Err(Error::invalid(format!(
            "temperature sweep needs ≥ 3 points, got {}",
            nbetas.len()
        )));
    }
    let mut points = Vec::with_capacity(nbetas.len());
    for &nb in nbetas {
        let est = estimate_llc(potential, w_star, &SgldConfig { nbeta: nb, ..cfg.clone() })?;
        points.push((nb, est.lambda_hat));
    }
    fit_temperature_sweep(&points)
}

/// Temperature of the Gibbs measure SGD with minibatch `batch` approximates,
/// `T = η (n − B) / (2B)`.
pub fn effective_temperature(lr: f64, n: usize, batch: usize) -> Result<f64> {
    if batch == 0 || batch > n {
        return Err(Error::invalid(format!("batch {batch} must lie in 1..={n}")));
    }
    Ok(lr * (n - batch) as f64 / (2.0 * batch as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityCell {
    pub gamma: f64,
    pub step_size: f64,
    pub lambda_hat: f64,
}

/// `λ̂` over the `(γ, ε)` grid with every other setting fixed.
pub fn sampler_sensitivity_sweep<P: Potential + ?Sized>(
    potential: &P,
    w_star: &[f64],
    cfg: &SgldConfig,
    gammas: &[f64],
    step_sizes: &[f64],
) -> Result<Vec<SensitivityCell>> {
    if gammas.is_empty() || step_sizes.is_empty() {
        return Err(Error::invalid("sensitivity grids must be nonempty"));
    }
    let mut cells = Vec::with_capacity(gammas.len() * step_sizes.len());
    for &step_size in step_sizes {
        for &gamma in gammas {
            let c = SgldConfig {
                gamma,
                step_size,
                ..cfg.clone()
            };
            let est = estimate_llc(potential, w_star, &c)?;
            cells.push(SensitivityCell {
                gamma,
                step_size,
                lambda_hat: est.lambda_hat,
            });
        }
    }
    Ok(cells)
}

/// `step,loss` rows of one chain trace (draw steps counted after burn-in).
pub fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", crate::io::fmt_f64(*l)));
    }
    out
}
