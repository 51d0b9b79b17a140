//! Run directory layout: `params.csv`, `loss_data.csv` and `ckpt/`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{fmt_opt, write_atomic, CsvTable};
use crate::model::Params;
use crate::trainer::{Metrics, Trajectory, TrajectoryRow};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "GROKKING_LLC_OUT";

pub const LOSS_DATA_HEADER: &str = "epoch,train_loss,val_loss,train_acc,val_acc,llc";

/// `$GROKKING_LLC_OUT`, or `runs` in the working directory.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn loss_data_csv(traj: &Trajectory) -> String {
    let mut s = String::from(LOSS_DATA_HEADER);
    s.push('\n');
    for r in &traj.rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            fmt_opt(m.train_loss),
            fmt_opt(m.val_loss),
            fmt_opt(m.train_acc),
            fmt_opt(m.val_acc),
            fmt_opt(r.llc)
        );
    }
    s
}

pub fn parse_loss_data(text: &str) -> std::result::Result<Trajectory, String> {
    let table = CsvTable::parse(text)?;
    if table.header.join(",") != LOSS_DATA_HEADER {
        return Err(format!("header `{}` is not `{LOSS_DATA_HEADER}`", table.header.join(",")));
    }
    let field = |row: &[String], i: usize, line: usize| -> std::result::Result<Option<f64>, String> {
        let f = &row[i];
        if f.is_empty() {
            Ok(None)
        } else {
            f.parse()
                .map(Some)
                .map_err(|_| format!("line {line}: cannot parse `{f}`"))
        }
    };
    let mut traj = Trajectory::default();
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 2;
        let epoch = row[0]
            .parse()
            .map_err(|_| format!("line {line}: bad epoch `{}`", row[0]))?;
        if traj.last().is_some_and(|r| r.epoch >= epoch) {
            return Err(format!("line {line}: epochs not increasing"));
        }
        traj.push(TrajectoryRow {
            epoch,
            metrics: Metrics {
                train_loss: field(row, 1, line)?,
                val_loss: field(row, 2, line)?,
                train_acc: field(row, 3, line)?,
                val_acc: field(row, 4, line)?,
            },
            llc: field(row, 5, line)?,
        });
    }
    Ok(traj)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_loss_data(&text).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

/// Writes `params.csv` and `loss_data.csv` under `dir`.
pub fn emit_run(dir: &Path, cfg: &RunConfig, traj: &Trajectory) -> Result<()> {
    write_atomic(&dir.join("params.csv"), cfg.params_csv().as_bytes())?;
    write_atomic(&dir.join("loss_data.csv"), loss_data_csv(traj).as_bytes())
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("ckpt").join(format!("epoch_{epoch}.txt"))
}

pub fn write_checkpoint(dir: &Path, epoch: usize, params: &Params) -> Result<()> {
    params.write_checkpoint(&checkpoint_path(dir, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let mut t = Trajectory::default();
        t.push(TrajectoryRow {
            epoch: 100,
            metrics: Metrics {
                train_loss: Some(0.1 + 0.2),
                val_loss: Some(1e-300),
                train_acc: Some(1.0),
                val_acc: Some(1.0 / 3.0),
            },
            llc: None,
        });
        t.push(TrajectoryRow {
            epoch: 200,
            metrics: Metrics {
                train_loss: Some(2.5),
                val_loss: None,
                train_acc: Some(0.5),
                val_acc: None,
            },
            llc: Some(-1.25),
        });
        t
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        assert_eq!(loss_data_csv(&Trajectory::default()), format!("{LOSS_DATA_HEADER}\n"));
    }

    #[test]
    fn round_trip_exact() {
        let t = sample();
        let text = loss_data_csv(&t);
        assert!(text.lines().nth(1).unwrap().ends_with(','));
        assert_eq!(parse_loss_data(&text).unwrap(), t);
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::with_p(5);
        emit_run(dir.path(), &cfg, &sample()).unwrap();
        let back = read_trajectory(&dir.path().join("loss_data.csv")).unwrap();
        assert_eq!(back, sample());
        let params = std::fs::read_to_string(dir.path().join("params.csv")).unwrap();
        assert!(params.starts_with("key,value\n"));
        let p = Params::init(2, 3, 1, 1.0, 0).unwrap();
        write_checkpoint(dir.path(), 100, &p).unwrap();
        let q = Params::read_checkpoint(&checkpoint_path(dir.path(), 100)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(parse_loss_data("epoch,loss\n1,2\n").is_err());
    }
}
