//! LLC tracking along training, grokking severity, hyperparameter sweeps
//! and the data-size scaling collapse.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{self, ModDataset};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, fmt_opt, write_atomic};
use crate::model::Params;
use crate::posterior::estimate_network_llc;
use crate::run;
use crate::trainer::{self, Metrics, SplitData, Trajectory, TrajectoryRow};

/// Train accuracy at which a run counts as memorised.
pub const MEMORIZE_THRESHOLD: f64 = 0.99;
/// Validation accuracy at which a run counts as generalised.
pub const GENERALIZE_THRESHOLD: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GsmResult {
    pub gsm: f64,
    pub generalized: bool,
    pub t_memorize: Option<usize>,
    pub t_generalize: Option<usize>,
}

/// Grokking severity: the mean `|a_T − a_V|` over logged checkpoints when
/// the final validation accuracy reaches `acc_threshold`, else 0.
pub fn gsm(traj: &Trajectory, acc_threshold: f64) -> Result<GsmResult> {
    if traj.is_empty() {
        return Err(Error::invalid("GSM needs a nonempty trajectory"));
    }
    let mut accs = Vec::with_capacity(traj.len());
    for r in &traj.rows {
        match (r.metrics.train_acc, r.metrics.val_acc) {
            (Some(a), Some(b)) => accs.push((r.epoch, a, b)),
            _ => {
                return Err(Error::invalid(format!(
                    "epoch {}: train or validation accuracy missing",
                    r.epoch
                )))
            }
        }
    }
    let t_memorize = accs.iter().find(|a| a.1 >= MEMORIZE_THRESHOLD).map(|a| a.0);
    let t_generalize = accs.iter().find(|a| a.2 >= acc_threshold).map(|a| a.0);
    let generalized = accs.last().expect("nonempty").2 >= acc_threshold;
    let gsm = if generalized {
        accs.iter().map(|a| (a.1 - a.2).abs()).sum::<f64>() / accs.len() as f64
    } else {
        0.0
    };
    Ok(GsmResult {
        gsm,
        generalized,
        t_memorize,
        t_generalize,
    })
}

/// A finished tracking run.
#[derive(Clone, Debug)]
pub struct GrokkingRun {
    pub config: RunConfig,
    pub params: Params,
    pub trajectory: Trajectory,
    /// `None` when the split has no validation data.
    pub gsm: Option<GsmResult>,
    /// Checkpoints at which every SGLD chain aborted.
    pub llc_failures: Vec<(usize, String)>,
    pub dir: Option<PathBuf>,
}

impl GrokkingRun {
    pub fn final_llc(&self) -> Option<f64> {
        self.trajectory.rows.iter().rev().find_map(|r| r.llc)
    }

    pub fn max_llc(&self) -> Option<f64> {
        self.trajectory
            .rows
            .iter()
            .filter_map(|r| r.llc)
            .fold(None, |m, l| Some(m.map_or(l, |m: f64| m.max(l))))
    }

    pub fn final_metrics(&self) -> Option<Metrics> {
        self.trajectory.last().map(|r| r.metrics)
    }
}

/// Trains with LLC estimates every `cfg.llc_every` epochs. With `out_dir`,
/// writes `params.csv`, `loss_data.csv` and one checkpoint per logged
/// epoch; a run that aborts still leaves its partial `loss_data.csv`.
pub fn run_grokking(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<GrokkingRun> {
    cfg.validate()?;
    let ds = ModDataset::generate_full(cfg.p)?;
    let split = dataset::split(&ds, cfg.train_frac, cfg.seed)?;
    let data = SplitData::new(&ds, &split);
    let sgld = cfg.sgld_config();
    let tcfg = cfg.train_config();

    let mut partial = Trajectory::default();
    let mut llc_failures = Vec::new();
    let mut observer = |epoch: usize, params: &Params, metrics: &Metrics| -> Result<Option<f64>> {
        if let Some(dir) = out_dir {
            run::write_checkpoint(dir, epoch, params)?;
        }
        let llc = if cfg.llc_every != 0 && epoch.is_multiple_of(cfg.llc_every) {
            match estimate_network_llc(params, &data.x_train, &data.y_train, &sgld) {
                Ok(est) => Some(est.lambda_hat),
                Err(e) => {
                    llc_failures.push((epoch, e.to_string()));
                    None
                }
            }
        } else {
            None
        };
        partial.push(TrajectoryRow {
            epoch,
            metrics: *metrics,
            llc,
        });
        Ok(llc)
    };
    let outcome = trainer::train(&ds, &split, &tcfg, &mut observer);
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            if let Some(dir) = out_dir {
                run::emit_run(dir, cfg, &partial)?;
            }
            return Err(e);
        }
    };
    if let Some(dir) = out_dir {
        run::emit_run(dir, cfg, &outcome.trajectory)?;
    }
    let gsm = if split.val.is_empty() || outcome.trajectory.is_empty() {
        None
    } else {
        Some(gsm(&outcome.trajectory, GENERALIZE_THRESHOLD)?)
    };
    Ok(GrokkingRun {
        config: cfg.clone(),
        params: outcome.params,
        trajectory: outcome.trajectory,
        gsm,
        llc_failures,
        dir: out_dir.map(Path::to_path_buf),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    P,
    Hidden,
    Lr,
    WeightDecay,
    TrainFrac,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::P => "p",
            SweepParam::Hidden => "hidden",
            SweepParam::Lr => "lr",
            SweepParam::WeightDecay => "weight_decay",
            SweepParam::TrainFrac => "train_frac",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(SweepParam::P),
            "K" | "k" | "hidden" => Ok(SweepParam::Hidden),
            "lr" => Ok(SweepParam::Lr),
            "weight_decay" | "wd" => Ok(SweepParam::WeightDecay),
            "train_frac" => Ok(SweepParam::TrainFrac),
            other => Err(Error::invalid(format!(
                "cannot sweep `{other}`; expected p, K, lr, weight_decay or train_frac"
            ))),
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("{} needs a positive integer, got {v}", self.name())))
            }
        };
        match self {
            SweepParam::P => cfg.p = as_count(value)?,
            SweepParam::Hidden => cfg.hidden = as_count(value)?,
            SweepParam::Lr => cfg.lr = value,
            SweepParam::WeightDecay => cfg.weight_decay = value,
            SweepParam::TrainFrac => cfg.train_frac = value,
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub final_llc: Option<f64>,
    pub max_llc: Option<f64>,
    pub gsm: Option<f64>,
    pub generalized: Option<bool>,
    pub final_val_acc: Option<f64>,
    /// Set when the run failed; the metric fields are then empty.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub param: SweepParam,
    /// Id of the base configuration; every row shares its sampler settings.
    pub base_config_id: String,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "param,value,final_llc,max_llc,gsm,final_val_acc,seed";

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(SWEEP_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.param.name(),
                fmt_f64(r.value),
                fmt_opt(r.final_llc),
                fmt_opt(r.max_llc),
                fmt_opt(r.gsm),
                fmt_opt(r.final_val_acc),
                r.seed
            );
        }
        s
    }
}

fn value_dir_name(param: SweepParam, value: f64) -> String {
    format!("{}_{}", param.name(), fmt_f64(value))
}

/// One tracking run per value. Every row uses the base seed, so the swept
/// parameter is the only difference between rows and a one-value sweep
/// reproduces `run_grokking` on the base config.
pub fn sweep(base: &RunConfig, param: SweepParam, values: &[f64], out_root: Option<&Path>) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    base.validate()?;
    let rows: Vec<SweepRow> = values
        .par_iter()
        .map(|&value| {
            let dir = out_root.map(|r| r.join(value_dir_name(param, value)));
            let result = param
                .apply(base, value)
                .and_then(|cfg| run_grokking(&cfg, dir.as_deref()));
            match result {
                Ok(run) => SweepRow {
                    value,
                    seed: base.seed,
                    final_llc: run.final_llc(),
                    max_llc: run.max_llc(),
                    gsm: run.gsm.map(|g| g.gsm),
                    generalized: run.gsm.map(|g| g.generalized),
                    final_val_acc: run.final_metrics().and_then(|m| m.val_acc),
                    error: None,
                },
                Err(e) => SweepRow {
                    value,
                    seed: base.seed,
                    final_llc: None,
                    max_llc: None,
                    gsm: None,
                    generalized: None,
                    final_val_acc: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let table = SweepTable {
        param,
        base_config_id: base.config_id(),
        rows,
    };
    if let Some(root) = out_root {
        write_atomic(&root.join("sweep.csv"), table.to_csv().as_bytes())?;
    }
    Ok(table)
}

/// `N / (M ln M)`.
pub fn scaled_ratio(n: usize, m: usize) -> f64 {
    n as f64 / (m as f64 * (m as f64).ln())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub m: usize,
    pub train_frac: f64,
    pub n: usize,
    pub ratio: f64,
    pub final_val_acc: Option<f64>,
    pub error: Option<String>,
}

pub const SCALING_HEADER: &str = "M,train_frac,N,ratio,final_val_acc";

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = String::from(SCALING_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.m,
            fmt_f64(r.train_frac),
            r.n,
            fmt_f64(r.ratio),
            fmt_opt(r.final_val_acc)
        );
    }
    s
}

/// One run per `(M, train_frac)` cell without LLC estimation, tabulated
/// against the scaled data size.
pub fn scaling_collapse(
    moduli: &[usize],
    fracs: &[f64],
    base: &RunConfig,
    out_root: Option<&Path>,
) -> Result<Vec<ScalingRow>> {
    if moduli.is_empty() || fracs.is_empty() {
        return Err(Error::invalid("scaling_collapse needs nonempty grids"));
    }
    let cells: Vec<(usize, f64)> = moduli
        .iter()
        .flat_map(|&m| fracs.iter().map(move |&f| (m, f)))
        .collect();
    let rows: Vec<ScalingRow> = cells
        .par_iter()
        .map(|&(m, frac)| {
            let n = dataset::train_size(frac, m * m);
            let mut cfg = base.clone();
            cfg.p = m;
            cfg.train_frac = frac;
            cfg.llc_every = 0;
            let dir = out_root.map(|r| r.join(format!("M_{m}_frac_{}", fmt_f64(frac))));
            let result = run_grokking(&cfg, dir.as_deref());
            let (final_val_acc, error) = match result {
                Ok(run) => (run.final_metrics().and_then(|m| m.val_acc), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ScalingRow {
                m,
                train_frac: frac,
                n,
                ratio: scaled_ratio(n, m),
                final_val_acc,
                error,
            }
        })
        .collect();
    if let Some(root) = out_root {
        write_atomic(&root.join("scaling.csv"), scaling_csv(&rows).as_bytes())?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(accs: &[(f64, f64)]) -> Trajectory {
        let mut t = Trajectory::default();
        for (i, &(a, b)) in accs.iter().enumerate() {
            t.push(TrajectoryRow {
                epoch: (i + 1) * 10,
                metrics: Metrics {
                    train_loss: Some(0.0),
                    val_loss: Some(0.0),
                    train_acc: Some(a),
                    val_acc: Some(b),
                },
                llc: None,
            });
        }
        t
    }

    #[test]
    fn gsm_identical_accuracies() {
        let g = gsm(&traj(&[(0.5, 0.5), (1.0, 1.0)]), 0.95).unwrap();
        assert_eq!(g.gsm, 0.0);
        assert!(g.generalized);
    }

    #[test]
    fn gsm_gated_by_final_accuracy() {
        let g = gsm(&traj(&[(1.0, 0.0), (1.0, 0.9)]), 0.95).unwrap();
        assert_eq!(g.gsm, 0.0);
        assert!(!g.generalized);
        assert_eq!(g.t_generalize, None);
        assert_eq!(g.t_memorize, Some(10));
    }

    #[test]
    fn gsm_half_gap() {
        let mut accs = vec![(1.0, 0.0); 5];
        accs.extend(vec![(1.0, 1.0); 5]);
        let g = gsm(&traj(&accs), 0.95).unwrap();
        assert_eq!(g.gsm, 0.5);
        assert_eq!((g.t_memorize, g.t_generalize), (Some(10), Some(60)));
    }

    #[test]
    fn gsm_appended_zero_gaps_rescale() {
        let base = vec![(0.2, 0.1), (1.0, 0.3), (1.0, 0.96)];
        let g0 = gsm(&traj(&base), 0.95).unwrap().gsm;
        let mut longer = base.clone();
        longer.extend(vec![(1.0, 1.0); 4]);
        let g1 = gsm(&traj(&longer), 0.95).unwrap().gsm;
        assert!((g1 - g0 * 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn gsm_requires_accuracies() {
        assert!(gsm(&Trajectory::default(), 0.95).is_err());
        let mut t = traj(&[(1.0, 1.0)]);
        t.rows[0].metrics.val_acc = None;
        assert!(gsm(&t, 0.95).is_err());
    }

    #[test]
    fn scaled_ratio_example() {
        let n = dataset::train_size(0.4, 53 * 53);
        assert_eq!(n, 1124);
        assert!((scaled_ratio(n, 53) - 5.34).abs() < 5e-3);
    }

    fn tiny(p: usize) -> RunConfig {
        let mut cfg = RunConfig::with_p(p);
        cfg.epochs = 40;
        cfg.checkpoint_every = 10;
        cfg.llc_every = 20;
        cfg.hidden = 8;
        cfg.lr = 1e-2;
        cfg.sgld_draws = 20;
        cfg.sgld_burn_in = 5;
        cfg
    }

    #[test]
    fn run_writes_directory() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_grokking(&tiny(5), Some(dir.path())).unwrap();
        assert_eq!(run.trajectory.len(), 4);
        let llc: Vec<bool> = run.trajectory.rows.iter().map(|r| r.llc.is_some()).collect();
        assert_eq!(llc, vec![false, true, false, true]);
        let back = run::read_trajectory(&dir.path().join("loss_data.csv")).unwrap();
        assert_eq!(back, run.trajectory);
        for e in [10, 20, 30, 40] {
            assert!(run::checkpoint_path(dir.path(), e).exists());
        }
    }

    #[test]
    fn llc_every_beyond_epochs_leaves_column_blank() {
        let mut cfg = tiny(5);
        cfg.llc_every = 1000;
        let run = run_grokking(&cfg, None).unwrap();
        assert!(run.trajectory.rows.iter().all(|r| r.llc.is_none()));
        assert_eq!(run.final_llc(), None);
    }

    #[test]
    fn singleton_sweep_matches_run() {
        let cfg = tiny(5);
        let table = sweep(&cfg, SweepParam::Lr, &[cfg.lr], None).unwrap();
        let run = run_grokking(&cfg, None).unwrap();
        let row = &table.rows[0];
        assert_eq!(row.final_llc, run.final_llc());
        assert_eq!(row.max_llc, run.max_llc());
        assert_eq!(row.gsm, run.gsm.map(|g| g.gsm));
    }

    #[test]
    fn failed_rows_are_marked() {
        let cfg = tiny(5);
        let table = sweep(&cfg, SweepParam::P, &[5.0, 4.0], None).unwrap();
        assert!(table.rows[0].error.is_none());
        assert!(table.rows[1].error.is_some());
        let csv = table.to_csv();
        assert!(csv.starts_with(SWEEP_HEADER));
        assert!(csv.lines().nth(2).unwrap().starts_with("p,4.0,,,,,"));
    }

    #[test]
    fn scaling_cells_are_deterministic() {
        let cfg = tiny(5);
        let rows = scaling_collapse(&[5, 5], &[0.5], &cfg, None).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[0].n, 13);
    }
}
