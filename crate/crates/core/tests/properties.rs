use std::collections::HashSet;

use nalgebra::DMatrix;
use proptest::prelude::*;

use grokking_llc::config::{build_config, RunConfig};
use grokking_llc::dataset::{split, train_size, ModDataset};
use grokking_llc::experiments::gsm;
use grokking_llc::model::{centered_loss, forward, Params};
use grokking_llc::run::{loss_data_csv, parse_loss_data};
use grokking_llc::theory::{llc_stage2, llc_underparam, sym_dim};
use grokking_llc::trainer::{Metrics, Trajectory, TrajectoryRow};

fn matrix(r: usize, c: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |i, j| vals[(i * c + j) % vals.len()] + 0.1 * (i as f64) - 0.05 * (j as f64))
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1e-300)
}

prop_compose! {
    fn network()(d in 1usize..6, k in 1usize..6, p in 1usize..5, n in 1usize..7,
                 vals in prop::collection::vec(-2.0f64..2.0, 8..32))
                 -> (Params, DMatrix<f64>, DMatrix<f64>) {
        let w = matrix(d, k, &vals);
        let v = matrix(p, k, &vals[3..]);
        let x = matrix(d, n, &vals[1..]);
        let y = matrix(p, n, &vals[2..]);
        (Params::from_parts(w, v).unwrap(), x, y)
    }
}

proptest! {
    #[test]
    fn rescaling_leaves_outputs_unchanged((params, x, _) in network(), alpha in 0.2f64..5.0, unit in 0usize..6) {
        let j = unit % params.hidden();
        let base = forward(&params, &x).unwrap();
        let scaled = forward(&params.rescale_unit(j, alpha), &x).unwrap();
        prop_assume!(base.norm() > 1e-6);
        prop_assert!(rel_diff(&base, &scaled) <= 1e-12);
    }

    #[test]
    fn permuting_units_leaves_outputs_unchanged((params, x, _) in network(), seed in any::<u64>()) {
        let k = params.hidden();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut s = seed;
        for i in (1..k).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let base = forward(&params, &x).unwrap();
        prop_assume!(base.norm() > 1e-6);
        prop_assert!(rel_diff(&base, &forward(&params.permute_units(&perm), &x).unwrap()) <= 1e-12);
    }

    #[test]
    fn loss_ignores_per_output_offsets((params, x, y) in network(), shift in -3.0f64..3.0) {
        let shifted = y.map(|t| t + shift);
        let a = centered_loss(&params, &x, &y, 0.0).unwrap();
        let b = centered_loss(&params, &x, &shifted, 0.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn split_partitions_the_dataset(pi in 0usize..5, frac in 0.01f64..1.0, seed in any::<u64>()) {
        let p = [2, 3, 5, 7, 11][pi];
        let ds = ModDataset::generate_full(p).unwrap();
        let s = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(s.train.len(), train_size(frac, ds.len()));
        let all: HashSet<usize> = s.train.iter().chain(&s.val).copied().collect();
        prop_assert_eq!(all.len(), ds.len());
        prop_assert_eq!(s.train.len() + s.val.len(), ds.len());
        prop_assert_eq!(split(&ds, frac, seed).unwrap(), s);
    }

    #[test]
    fn config_round_trips(lr in 1e-5f64..1.0, wd in 0.0f64..1e-2, hidden in 1usize..1024, seed in any::<u64>()) {
        let mut cfg = RunConfig::with_p(23);
        cfg.lr = lr;
        cfg.weight_decay = wd;
        cfg.hidden = hidden;
        cfg.seed = seed;
        let text = cfg.to_config_string();
        let back = build_config(Some(&text), &[]).unwrap();
        prop_assert_eq!(back.config_id(), cfg.config_id());
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn gsm_is_invariant_to_epoch_rescaling(accs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40), scale in 1usize..50) {
        let traj = |m: usize| Trajectory {
            rows: accs.iter().enumerate().map(|(i, &(a, b))| TrajectoryRow {
                epoch: (i + 1) * m,
                metrics: Metrics { train_loss: None, val_loss: None, train_acc: Some(a), val_acc: Some(b) },
                llc: None,
            }).collect(),
        };
        let g1 = gsm(&traj(1), 0.95).unwrap();
        let g2 = gsm(&traj(scale), 0.95).unwrap();
        prop_assert!((g1.gsm - g2.gsm).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&g1.gsm));
        prop_assert_eq!(g1.generalized, g2.generalized);
    }

    #[test]
    fn stage_two_at_full_width_is_the_underparametrised_value(d in 2usize..12, p in 1usize..6, k in 1usize..80) {
        prop_assume!(k < sym_dim(d));
        prop_assert_eq!(llc_stage2(k, d, p), llc_underparam(p, d, k).unwrap());
    }

    #[test]
    fn trajectory_csv_round_trips(rows in prop::collection::vec(
        (0.0f64..10.0, prop::option::of(0.0f64..10.0), 0.0f64..1.0, prop::option::of(0.0f64..1.0), prop::option::of(-5.0f64..500.0)), 1..30)) {
        let traj = Trajectory {
            rows: rows.iter().enumerate().map(|(i, r)| TrajectoryRow {
                epoch: 10 * (i + 1),
                metrics: Metrics { train_loss: Some(r.0), val_loss: r.1, train_acc: Some(r.2), val_acc: r.3 },
                llc: r.4,
            }).collect(),
        };
        prop_assert_eq!(parse_loss_data(&loss_data_csv(&traj)).unwrap(), traj);
    }
}
