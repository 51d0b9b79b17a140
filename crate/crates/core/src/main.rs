use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grokking_llc::config::{parse_config, RunConfig};
use grokking_llc::dataset::{self, ModDataset};
use grokking_llc::error::{Error, Result};
use grokking_llc::experiments::{self, SweepParam, GENERALIZE_THRESHOLD};
use grokking_llc::io::write_atomic;
use grokking_llc::model::{self, Params};
use grokking_llc::plot::{plot_csv, PlotOptions};
use grokking_llc::posterior::{estimate_network_llc, trace_csv};
use grokking_llc::run::{self, default_out_root};
use grokking_llc::theory::{self, RankOracleConfig};
use grokking_llc::trainer::SplitData;

/// LLC estimation and closed-form checks for quadratic networks on modular
/// addition.
#[derive(Parser)]
#[command(name = "grokking-llc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the modular-addition dataset and its split as CSV.
    Data {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0.4)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one network with LLC tracking and write a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory; defaults to `<out root>/run_<config id prefix>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the LLC at a saved checkpoint on the run's training split.
    Llc {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the per-draw losses of chain 0 as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print closed-form coefficients next to their Jacobian-rank oracles.
    Theory {
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fast numerical self-checks and print one line per check.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep one hyperparameter and write sweep.csv.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of p, K, lr, weight_decay, train_frac.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grokking severity of a loss_data.csv.
    Gsm {
        loss_data: PathBuf,
        #[arg(long, default_value_t = GENERALIZE_THRESHOLD)]
        threshold: f64,
    },
    /// Validation accuracy against N/(M ln M) over a grid of moduli and
    /// training fractions.
    Scaling {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        moduli: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        fracs: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render CSV columns as an SVG line chart.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<String>,
        /// Columns drawn on a right-hand axis.
        #[arg(long, value_delimiter = ',')]
        secondary: Vec<String>,
        #[arg(long)]
        log_x: bool,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Config file plus overrides. Explicit flags win over `--set`, which wins
/// over the file.
#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set sgld_nbeta=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    llc_every: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {s}` is not KEY=VALUE")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let flags: [(&str, Option<String>); 8] = [
            ("p", self.p.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("weight_decay", self.weight_decay.map(|v| v.to_string())),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("train_frac", self.train_frac.map(|v| v.to_string())),
            ("llc_every", self.llc_every.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        }
        parse_config(self.config.as_deref(), &overrides)
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn default_run_dir(prefix: &str, cfg: &RunConfig) -> PathBuf {
    default_out_root().join(format!("{prefix}_{}", &cfg.config_id()[..12]))
}

fn cmd_train(cfg: ConfigArgs, out: Option<PathBuf>) -> Result<()> {
    let cfg = cfg.resolve()?;
    let dir = out.unwrap_or_else(|| default_run_dir("run", &cfg));
    let run = experiments::run_grokking(&cfg, Some(&dir))?;
    for (epoch, err) in &run.llc_failures {
        eprintln!("warning: LLC estimate failed at epoch {epoch}: {err}");
    }
    println!("run directory: {}", dir.display());
    if let Some(m) = run.final_metrics() {
        println!(
            "final: train_loss={} val_loss={} train_acc={} val_acc={}",
            fmt(m.train_loss),
            fmt(m.val_loss),
            fmt(m.train_acc),
            fmt(m.val_acc)
        );
    }
    println!("final_llc={} max_llc={}", fmt(run.final_llc()), fmt(run.max_llc()));
    if let Some(g) = run.gsm {
        print_gsm(&g);
    }
    Ok(())
}

fn fmt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

fn print_gsm(g: &experiments::GsmResult) {
    let t = |e: Option<usize>| e.map(|e| e.to_string()).unwrap_or_else(|| "-".into());
    println!(
        "gsm={:.6} generalized={} t_memorize={} t_generalize={}",
        g.gsm,
        g.generalized,
        t(g.t_memorize),
        t(g.t_generalize)
    );
}

fn cmd_llc(cfg: ConfigArgs, checkpoint: &Path, trace: Option<&Path>) -> Result<()> {
    let cfg = cfg.resolve()?;
    let params = Params::read_checkpoint(checkpoint)?;
    let ds = ModDataset::generate_full(cfg.p)?;
    let split = dataset::split(&ds, cfg.train_frac, cfg.seed)?;
    let data = SplitData::new(&ds, &split);
    let est = estimate_network_llc(&params, &data.x_train, &data.y_train, &cfg.sgld_config())?;
    println!("lambda_hat={}", est.lambda_hat);
    for (c, l) in est.per_chain.iter().enumerate() {
        println!("chain {c}: {l}");
    }
    if let Some(se) = est.chain_standard_error() {
        println!("chain_se={se}");
    }
    if est.negative {
        eprintln!("warning: negative estimate; the checkpoint may not be a local minimum");
    }
    for (c, why) in &est.failed_chains {
        eprintln!("warning: chain {c} aborted: {why}");
    }
    if let Some(path) = trace {
        write_atomic(path, trace_csv(&est.draw_losses[0]).as_bytes())?;
    }
    Ok(())
}

fn cmd_verify(seed: u64) -> Result<bool> {
    let mut all = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        all &= ok;
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };
    let cfg = RankOracleConfig {
        seed,
        ..RankOracleConfig::default()
    };
    for row in theory::full_report(&cfg)? {
        report(
            &format!("{} d={} p={} K={}", row.regime, row.d, row.p, row.k),
            row.agrees(),
            format!(
                "2λ={} oracle rank={}",
                row.expected_rank,
                row.oracle_rank.map(|r| r.to_string()).unwrap_or_default()
            ),
        );
    }
    for p in [3, 5, 7, 11, 13, 23, 53] {
        let r = ModDataset::generate_full(p)?.design_rank(grokking_llc::linalg::DEFAULT_RANK_TOL);
        report(&format!("design rank p={p}"), r == 2 * p - 1, format!("rank {r}"));
    }
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let params = Params::init(3, 4, 2, 1.0, seed.wrapping_add(i))?;
        let x = Params::init(3, 5, 1, 1.0, seed.wrapping_add(100 + i))?.w;
        let y = Params::init(2, 5, 1, 1.0, seed.wrapping_add(200 + i))?.w;
        let wd = if i % 2 == 0 { 0.0 } else { 1e-3 };
        worst = worst.max(model::gradient_check(&params, &x, &y, wd, 1e-3, 1e-8)?);
    }
    report("gradient vs central differences", worst < 1e-6, format!("max rel err {worst:.2e}"));
    let x = ModDataset::generate_full(3)?.x().transpose();
    let rcfg = RankOracleConfig {
        trials: 20,
        seed,
        ..RankOracleConfig::default()
    };
    let (l, _) = theory::estimate_intrinsic_dim(&x, 2, &rcfg)?;
    report("feature rank saturation p=3", (5..=15).contains(&l), format!("l̂ = {l}"));
    Ok(all)
}

fn run() -> Result<bool> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };
    match cli.command {
        Command::Data {
            p,
            train_frac,
            seed,
            out,
        } => {
            let ds = ModDataset::generate_full(p)?;
            let split = dataset::split(&ds, train_frac, seed)?;
            write_or_print(out.as_deref(), &ds.to_csv(&split))?;
        }
        Command::Train { cfg, out } => cmd_train(cfg, out)?,
        Command::Llc { cfg, checkpoint, trace } => cmd_llc(cfg, &checkpoint, trace.as_deref())?,
        Command::Theory { trials, seed, out } => {
            let cfg = RankOracleConfig {
                trials,
                seed,
                ..RankOracleConfig::default()
            };
            let rows = theory::full_report(&cfg)?;
            write_or_print(out.as_deref(), &theory::report_csv(&rows))?;
        }
        Command::Verify { seed } => return cmd_verify(seed),
        Command::Sweep {
            cfg,
            param,
            values,
            out,
        } => {
            let param = SweepParam::parse(&param)?;
            let cfg = cfg.resolve()?;
            let dir = out.unwrap_or_else(|| default_run_dir(&format!("sweep_{}", param.name()), &cfg));
            let table = experiments::sweep(&cfg, param, &values, Some(&dir))?;
            for r in &table.rows {
                if let Some(e) = &r.error {
                    eprintln!("warning: {}={} failed: {e}", param.name(), r.value);
                }
            }
            print!("{}", table.to_csv());
            println!("written to {}", dir.join("sweep.csv").display());
        }
        Command::Gsm { loss_data, threshold } => {
            let traj = run::read_trajectory(&loss_data)?;
            print_gsm(&experiments::gsm(&traj, threshold)?);
        }
        Command::Scaling {
            cfg,
            moduli,
            fracs,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let dir = out.unwrap_or_else(|| default_run_dir("scaling", &cfg));
            let rows = experiments::scaling_collapse(&moduli, &fracs, &cfg, Some(&dir))?;
            for r in &rows {
                if let Some(e) = &r.error {
                    eprintln!("warning: M={} frac={} failed: {e}", r.m, r.train_frac);
                }
            }
            print!("{}", experiments::scaling_csv(&rows));
        }
        Command::Plot {
            csv,
            x,
            y,
            secondary,
            log_x,
            log_y,
            title,
            out,
        } => {
            let opts = PlotOptions {
                log_x,
                log_y,
                secondary,
                title,
            };
            plot_csv(&csv, &x, &y, &out, &opts)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
