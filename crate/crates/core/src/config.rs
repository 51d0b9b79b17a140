//! Run configuration: a flat `key = value` file format with `#` comments,
//! command-line overrides and a content hash.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::posterior::{SgldBatch, SgldConfig};
use crate::trainer::TrainConfig;

/// Everything needed to reproduce one training run with LLC tracking.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Modulus of the addition task.
    pub p: usize,
    pub train_frac: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    /// Seeds the split, initialisation, shuffling and SGLD chains.
    pub seed: u64,
    pub hidden: usize,
    pub init_scale: Option<f64>,
    pub sgld_step_size: f64,
    pub sgld_nbeta: f64,
    pub sgld_gamma: f64,
    pub sgld_chains: usize,
    pub sgld_draws: usize,
    pub sgld_burn_in: usize,
    pub sgld_batch: SgldBatch,
    /// Epochs between LLC estimates; 0 disables them.
    pub llc_every: usize,
}

impl RunConfig {
    /// Defaults for everything except `p`.
    pub fn with_p(p: usize) -> Self {
        let t = TrainConfig::default();
        let s = SgldConfig::default();
        RunConfig {
            p,
            train_frac: 0.4,
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
            hidden: t.hidden,
            init_scale: t.init_scale,
            sgld_step_size: s.step_size,
            sgld_nbeta: s.nbeta,
            sgld_gamma: s.gamma,
            sgld_chains: s.chains,
            sgld_draws: s.draws,
            sgld_burn_in: s.burn_in,
            sgld_batch: s.batch,
            llc_every: t.checkpoint_every,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            checkpoint_every: self.checkpoint_every,
            seed: self.seed,
            hidden: self.hidden,
            init_scale: self.init_scale,
        }
    }

    pub fn sgld_config(&self) -> SgldConfig {
        SgldConfig {
            step_size: self.sgld_step_size,
            nbeta: self.sgld_nbeta,
            gamma: self.sgld_gamma,
            chains: self.sgld_chains,
            draws: self.sgld_draws,
            burn_in: self.sgld_burn_in,
            batch: self.sgld_batch,
            seed: self.seed,
        }
    }

    pub fn set_sgld(&mut self, s: &SgldConfig) {
        self.sgld_step_size = s.step_size;
        self.sgld_nbeta = s.nbeta;
        self.sgld_gamma = s.gamma;
        self.sgld_chains = s.chains;
        self.sgld_draws = s.draws;
        self.sgld_burn_in = s.burn_in;
        self.sgld_batch = s.batch;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            return Err(Error::Config(format!(
                "train_frac = {} must lie in (0, 1]",
                self.train_frac
            )));
        }
        self.train_config().validate()?;
        self.sgld_config().validate()?;
        if self.llc_every != 0 && !self.llc_every.is_multiple_of(self.checkpoint_every) {
            return Err(Error::Config(format!(
                "llc_every = {} is not a multiple of checkpoint_every = {}",
                self.llc_every, self.checkpoint_every
            )));
        }
        Ok(())
    }

    /// Assigns one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "p" => self.p = parse(key, v)?,
            "train_frac" => self.train_frac = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "init_scale" => {
                self.init_scale = if v == "auto" { None } else { Some(parse(key, v)?) };
            }
            "sgld_step_size" => self.sgld_step_size = parse(key, v)?,
            "sgld_nbeta" => self.sgld_nbeta = parse(key, v)?,
            "sgld_gamma" => self.sgld_gamma = parse(key, v)?,
            "sgld_chains" => self.sgld_chains = parse(key, v)?,
            "sgld_draws" => self.sgld_draws = parse(key, v)?,
            "sgld_burn_in" => self.sgld_burn_in = parse(key, v)?,
            "sgld_batch" => {
                self.sgld_batch = if v == "full" {
                    SgldBatch::Full
                } else {
                    SgldBatch::Size(parse(key, v)?)
                };
            }
            "llc_every" => self.llc_every = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("batch_size", self.batch_size.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("epochs", self.epochs.to_string()),
            ("hidden", self.hidden.to_string()),
            (
                "init_scale",
                self.init_scale.map(fmt_f64).unwrap_or_else(|| "auto".into()),
            ),
            ("llc_every", self.llc_every.to_string()),
            ("lr", fmt_f64(self.lr)),
            ("p", self.p.to_string()),
            ("seed", self.seed.to_string()),
            (
                "sgld_batch",
                match self.sgld_batch {
                    SgldBatch::Full => "full".into(),
                    SgldBatch::Size(b) => b.to_string(),
                },
            ),
            ("sgld_burn_in", self.sgld_burn_in.to_string()),
            ("sgld_chains", self.sgld_chains.to_string()),
            ("sgld_draws", self.sgld_draws.to_string()),
            ("sgld_gamma", fmt_f64(self.sgld_gamma)),
            ("sgld_nbeta", fmt_f64(self.sgld_nbeta)),
            ("sgld_step_size", fmt_f64(self.sgld_step_size)),
            ("train_frac", fmt_f64(self.train_frac)),
            ("weight_decay", fmt_f64(self.weight_decay)),
        ];
        out.sort_by_key(|(k, _)| *k);
        out
    }

    /// Canonical file text; parsing it gives back an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn config_id(&self) -> String {
        hex::encode(Sha256::digest(self.to_config_string().as_bytes()))
    }

    /// `key,value` rows sorted by key, including the optimizer name and
    /// the config id.
    pub fn params_csv(&self) -> String {
        let mut entries: Vec<(&str, String)> = self.entries();
        entries.push(("config_id", self.config_id()));
        entries.push(("optimizer", "sgd".into()));
        entries.sort_by_key(|(k, _)| *k);
        let mut s = String::from("key,value\n");
        for (k, v) in entries {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// `key = value` pairs of a config text, in order. `#` starts a comment.
pub fn parse_pairs(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Builds a config from file text (if any) and then flag overrides, in
/// that order. `p` must be supplied by one of them.
pub fn build_config(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let file_pairs = match file_text {
        Some(t) => parse_pairs(t).map_err(Error::Config)?,
        None => Vec::new(),
    };
    let mut cfg = RunConfig::with_p(0);
    let mut have_p = false;
    for (k, v) in file_pairs.iter().chain(overrides) {
        cfg.set(k, v)?;
        have_p |= k.trim() == "p";
    }
    if !have_p {
        return Err(Error::Config("missing required key `p`".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let pairs = parse_pairs(&text).map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                message,
            })?;
            let mut all: Vec<(String, String)> = pairs;
            all.extend_from_slice(overrides);
            build_config(None, &all)
        }
        None => build_config(None, overrides),
    }
}
