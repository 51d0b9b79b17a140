//! Minibatch SGD on the centred loss, with per-checkpoint evaluation and an
//! observer hook (used for LLC estimation and checkpoint files).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::dataset::{ModDataset, Split};
use crate::error::{Error, Result};
use crate::model::{self, Params};
use crate::rng::{stream, stream_rng};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Hidden width `K`.
    pub hidden: usize,
    /// Standard deviation of the Gaussian init; `None` means `1/√d`.
    pub init_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100_000,
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 128,
            checkpoint_every: 100,
            seed: 0,
            hidden: 1024,
            init_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr = {} must be finite and ≥ 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight_decay = {} must be ≥ 0",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be ≥ 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every must be ≥ 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be ≥ 1"));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0) {
                return Err(Error::invalid(format!("init_scale = {s} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn resolved_init_scale(&self, d: usize) -> f64 {
        self.init_scale.unwrap_or(1.0 / (d as f64).sqrt())
    }
}

/// Losses are the centred data term only (no ridge term). A metric is `None`
/// when its split is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub metrics: Metrics,
    pub llc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn push(&mut self, row: TrajectoryRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.epoch < row.epoch));
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn llc_values(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.llc.map(|l| (r.epoch, l)))
            .collect()
    }
}

/// Called at every checkpoint epoch after metrics are computed. The
/// returned value, if any, is stored in the trajectory's `llc` column.
pub trait TrainObserver {
    fn on_checkpoint(&mut self, epoch: usize, params: &Params, metrics: &Metrics) -> Result<Option<f64>>;
}

/// Observer that records nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {
    fn on_checkpoint(&mut self, _: usize, _: &Params, _: &Metrics) -> Result<Option<f64>> {
        Ok(None)
    }
}

impl<F> TrainObserver for F
where
    F: FnMut(usize, &Params, &Metrics) -> Result<Option<f64>>,
{
    fn on_checkpoint(&mut self, epoch: usize, params: &Params, metrics: &Metrics) -> Result<Option<f64>> {
        self(epoch, params, metrics)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub trajectory: Trajectory,
    /// Epochs at which the observer was invoked.
    pub checkpoints: Vec<usize>,
}

/// Cached train/validation matrices of a split.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub x_train: DMatrix<f64>,
    pub y_train: DMatrix<f64>,
    pub x_val: DMatrix<f64>,
    pub y_val: DMatrix<f64>,
}

impl SplitData {
    pub fn new(ds: &ModDataset, split: &Split) -> Self {
        let (x_train, y_train) = ds.columns(&split.train);
        let (x_val, y_val) = ds.columns(&split.val);
        SplitData {
            x_train,
            y_train,
            x_val,
            y_val,
        }
    }
}

fn segment_metrics(params: &Params, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(Option<f64>, Option<f64>)> {
    if x.ncols() == 0 {
        return Ok((None, None));
    }
    let yhat = model::forward(params, x)?;
    let resid = crate::linalg::center_columns(&(y - &yhat));
    let loss = 0.5 * resid.norm_squared();
    Ok((Some(loss), Some(model::argmax_agreement(&yhat, y))))
}

pub fn evaluate_data(params: &Params, data: &SplitData) -> Result<Metrics> {
    let (train_loss, train_acc) = segment_metrics(params, &data.x_train, &data.y_train)?;
    let (val_loss, val_acc) = segment_metrics(params, &data.x_val, &data.y_val)?;
    Ok(Metrics {
        train_loss,
        val_loss,
        train_acc,
        val_acc,
    })
}

/// Full-split metrics with `wd = 0`.
pub fn evaluate(params: &Params, ds: &ModDataset, split: &Split) -> Result<Metrics> {
    evaluate_data(params, &SplitData::new(ds, split))
}

/// One plain SGD step `θ ← θ − lr ∇J(θ)`. Returns the loss before the step.
pub fn sgd_step(params: &mut Params, x: &DMatrix<f64>, y: &DMatrix<f64>, lr: f64, wd: f64) -> Result<f64> {
    let (loss, g) = model::loss_and_gradient(params, x, y, wd)?;
    if lr != 0.0 {
        params.w -= g.dw * lr;
        params.v -= g.dv * lr;
    }
    Ok(loss)
}

/// Train from the seeded initialisation described by `cfg`.
pub fn train(
    ds: &ModDataset,
    split: &Split,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = ds.input_dim();
    let init = Params::init(d, cfg.hidden, ds.p(), cfg.resolved_init_scale(d), cfg.seed)?;
    train_from(ds, split, cfg, init, observer)
}

/// Train from given parameters. Each epoch shuffles the training indices,
/// walks them in minibatches (the last one may be short) and applies SGD.
pub fn train_from(
    ds: &ModDataset,
    split: &Split,
    cfg: &TrainConfig,
    init: Params,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if init.input_dim() != ds.input_dim() || init.outputs() != ds.p() {
        return Err(Error::shape(format!(
            "params have (d, p) = ({}, {}), dataset needs ({}, {})",
            init.input_dim(),
            init.outputs(),
            ds.input_dim(),
            ds.p()
        )));
    }
    let data = SplitData::new(ds, split);
    let mut params = init;
    let mut order = split.train.clone();
    let mut rng = stream_rng(cfg.seed, stream::SHUFFLE);
    let mut trajectory = Trajectory::default();
    let mut checkpoints = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (xb, yb) = ds.columns(batch);
            let loss = sgd_step(&mut params, &xb, &yb, cfg.lr, cfg.weight_decay)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
        }
        if !params.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if epoch % cfg.checkpoint_every == 0 {
            let metrics = evaluate_data(&params, &data)?;
            if metrics.train_loss.is_some_and(|l| !l.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            let llc = observer.on_checkpoint(epoch, &params, &metrics)?;
            trajectory.push(TrajectoryRow { epoch, metrics, llc });
            checkpoints.push(epoch);
        }
    }
    Ok(TrainOutcome {
        params,
        trajectory,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 8,
            checkpoint_every: 5,
            seed: 3,
            hidden: 12,
            init_scale: None,
        }
    }

    #[test]
    fn zero_lr_keeps_init() {
        let ds = ModDataset::generate_full(5).unwrap();
        let s = split(&ds, 0.6, 0).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..small_cfg() };
        let out = train(&ds, &s, &cfg, &mut NoObserver).unwrap();
        let init = Params::init(10, 12, 5, cfg.resolved_init_scale(10), cfg.seed).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn full_batch_small_lr_descends() {
        let ds = ModDataset::generate_full(5).unwrap();
        let (x, y) = (ds.x().clone(), ds.y().clone());
        let mut params = Params::init(10, 8, 5, 0.5, 1).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let loss = sgd_step(&mut params, &x, &y, 1e-4, 0.0).unwrap();
            assert!(loss <= prev, "{loss} > {prev}");
            prev = loss;
        }
        let last = model::centered_loss(&params, &x, &y, 0.0).unwrap();
        assert!(last <= prev);
    }

    #[test]
    fn decay_is_geometric_when_data_fit() {
        let ds = ModDataset::generate_full(3).unwrap();
        let x = ds.x().clone();
        let mut params = Params::init(6, 4, 3, 0.5, 2).unwrap();
        let (lr, wd) = (0.1, 0.05);
        for _ in 0..3 {
            // Re-target each step so the data term stays exactly zero.
            let y = model::forward(&params, &x).unwrap();
            let before = params.clone();
            sgd_step(&mut params, &x, &y, lr, wd).unwrap();
            let want_w = &before.w * (1.0 - lr * wd);
            let want_v = &before.v * (1.0 - lr * wd);
            assert!((&params.w - want_w).abs().max() < 1e-15);
            assert!((&params.v - want_v).abs().max() < 1e-15);
        }
    }

    #[test]
    fn deterministic() {
        let ds = ModDataset::generate_full(5).unwrap();
        let s = split(&ds, 0.6, 0).unwrap();
        let a = train(&ds, &s, &small_cfg(), &mut NoObserver).unwrap();
        let b = train(&ds, &s, &small_cfg(), &mut NoObserver).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.checkpoints, vec![5, 10, 15, 20]);
    }

    #[test]
    fn observer_values_recorded() {
        let ds = ModDataset::generate_full(3).unwrap();
        let s = split(&ds, 0.6, 0).unwrap();
        let mut calls = 0;
        let mut obs = |epoch: usize, _: &Params, _: &Metrics| -> Result<Option<f64>> {
            calls += 1;
            Ok((epoch == 10).then_some(1.5))
        };
        let out = train(&ds, &s, &small_cfg(), &mut obs).unwrap();
        assert_eq!(calls, 4);
        assert_eq!(out.trajectory.llc_values(), vec![(10, 1.5)]);
    }

    #[test]
    fn divergence_reported() {
        let ds = ModDataset::generate_full(5).unwrap();
        let s = split(&ds, 0.6, 0).unwrap();
        let cfg = TrainConfig { lr: 1e6, init_scale: Some(3.0), ..small_cfg() };
        match train(&ds, &s, &cfg, &mut NoObserver) {
            Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_interpolating_and_zero() {
        let ds = ModDataset::generate_full(5).unwrap();
        let s = split(&ds, 0.4, 1).unwrap();
        // θ = 0: every prediction ties, so class 0 is chosen; exactly 1/p of
        // samples have c = 0.
        let m = evaluate(&Params::zeros(10, 3, 5), &ds, &s).unwrap();
        let count = |idx: &[usize]| idx.iter().filter(|&&i| ds.triple(i).c == 0).count() as f64 / idx.len() as f64;
        assert_eq!(m.train_acc, Some(count(&s.train)));
        assert_eq!(m.val_acc, Some(count(&s.val)));
        let full = split(&ds, 1.0, 0).unwrap();
        let all = evaluate(&Params::zeros(10, 3, 5), &ds, &full).unwrap();
        assert_eq!(all.train_acc, Some(0.2));
        assert_eq!(all.val_acc, None);
        assert_eq!(all.val_loss, None);
    }

    #[test]
    fn evaluate_pure() {
        let ds = ModDataset::generate_full(5).unwrap();
        let s = split(&ds, 0.4, 1).unwrap();
        let params = Params::init(10, 6, 5, 0.3, 0).unwrap();
        assert_eq!(evaluate(&params, &ds, &s).unwrap(), evaluate(&params, &ds, &s).unwrap());
    }

    #[test]
    fn empty_train_rejected() {
        let ds = ModDataset::generate_full(2).unwrap();
        let s = split(&ds, 0.1, 0).unwrap();
        assert!(s.train.is_empty());
        assert!(train(&ds, &s, &small_cfg(), &mut NoObserver).is_err());
    }
}
