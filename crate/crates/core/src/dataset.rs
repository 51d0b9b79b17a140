//! Modular-addition data: the full table of `(a, b, (a + b) mod p)` triples,
//! their one-hot encoding, and seeded train/validation splits.
//!
//! Samples are stored as columns: `X` is `2p × N` with `x = [e_a; e_b]` and
//! `Y` is `p × N` with `y = e_c`. Code that needs the samples-as-rows layout
//! (ridge fits, random-feature ranks) transposes explicitly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::numeric_rank;
use crate::rng::{stream, stream_rng};

pub const MAX_MODULUS: usize = 257;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

#[derive(Clone, Debug)]
pub struct ModDataset {
    p: usize,
    triples: Vec<Triple>,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

/// Trial division. Adequate for moduli up to a few hundred.
pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut k = 2;
    while k * k <= n {
        if n.is_multiple_of(k) {
            return false;
        }
        k += 1;
    }
    true
}

fn smallest_factor(n: usize) -> Option<usize> {
    (2..n).take_while(|k| k * k <= n).find(|k| n.is_multiple_of(*k))
}

impl ModDataset {
    /// All `p²` ordered operand pairs, enumerated with `a` major.
    pub fn generate_full(p: usize) -> Result<Self> {
        if !(2..=MAX_MODULUS).contains(&p) {
            return Err(Error::invalid(format!(
                "modulus p = {p} outside supported range 2..={MAX_MODULUS}"
            )));
        }
        if !is_prime(p) {
            let f = smallest_factor(p).unwrap_or(p);
            return Err(Error::invalid(format!(
                "modulus p = {p} failed primality check: divisible by {f}"
            )));
        }
        let n = p * p;
        let mut triples = Vec::with_capacity(n);
        let mut x = DMatrix::zeros(2 * p, n);
        let mut y = DMatrix::zeros(p, n);
        for a in 0..p {
            for b in 0..p {
                let j = triples.len();
                let c = (a + b) % p;
                triples.push(Triple { a, b, c });
                x[(a, j)] = 1.0;
                x[(p + b, j)] = 1.0;
                y[(c, j)] = 1.0;
            }
        }
        Ok(ModDataset { p, triples, x, y })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Input dimension `d = 2p`.
    pub fn input_dim(&self) -> usize {
        2 * self.p
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, index: usize) -> Triple {
        self.triples[index]
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Design and target columns for `indices`, in that order.
    pub fn columns(&self, indices: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.x.select_columns(indices), self.y.select_columns(indices))
    }

    /// Numeric rank of the full design matrix. Equals `2p − 1`: the two
    /// one-hot blocks share the all-ones direction.
    pub fn design_rank(&self, rel_tol: f64) -> usize {
        numeric_rank(&self.x, rel_tol)
    }

    /// `a,b,c,split` dump of every sample.
    pub fn to_csv(&self, split: &Split) -> String {
        let mut tag = vec![""; self.len()];
        for &i in &split.train {
            tag[i] = "train";
        }
        for &i in &split.val {
            tag[i] = "val";
        }
        let mut out = String::from("a,b,c,split\n");
        for (t, s) in self.triples.iter().zip(tag) {
            let _ = writeln!(out, "{},{},{},{}", t.a, t.b, t.c, s);
        }
        out
    }

    pub fn write_csv(&self, split: &Split, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv(split).as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub train_frac: f64,
    pub seed: u64,
}

impl Split {
    pub fn train_len(&self) -> usize {
        self.train.len()
    }
}

/// `round(frac · n)` with ties rounded up.
pub fn train_size(frac: f64, n: usize) -> usize {
    let raw = (frac * n as f64 + 0.5).floor();
    (raw.max(0.0) as usize).min(n)
}

/// Uniform sample without replacement: Fisher–Yates shuffle of `0..N`,
/// the prefix becomes the training set and the rest validation.
pub fn split(ds: &ModDataset, train_frac: f64, seed: u64) -> Result<Split> {
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::invalid(format!(
            "train_frac = {train_frac} must lie in (0, 1]"
        )));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, stream::SPLIT));
    let k = train_size(train_frac, n);
    let val = idx.split_off(k);
    Ok(Split {
        train: idx,
        val,
        train_frac,
        seed,
    })
}
