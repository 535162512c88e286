//! Honest error bands from double-sampled entries.
//!
//! Two observations `y, y'` of the same entry carry independent noise, so
//! `(y - m)(y' - m)` is an unbiased estimate of `(M_ij - m)^2` whatever the
//! noise variance. Averaging over uniformly located pairs estimates the
//! normalized squared Frobenius error `||M_hat - M||_F^2 / d^2`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::MatrixEstimate;
use crate::model::Dataset;

/// Scale of the band term in the reference analysis.
pub const DEFAULT_BAND_SCALE: f64 = 8.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// First half for training, second half for error estimation.
    #[default]
    Halves,
    /// Entries seen once train the estimator; repeated entries estimate error.
    ByMultiplicity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedSample {
    pub row: usize,
    pub col: usize,
    pub first: f64,
    pub second: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorEstimate {
    pub pairs: usize,
    /// Unbiased estimate of the normalized error. May be negative.
    pub estimate: f64,
    /// `estimate + scale A^2 sqrt(ln d / N)`, or `+inf` when `N = 0`.
    pub band: f64,
    pub dim: usize,
}

impl ErrorEstimate {
    pub fn unavailable(dim: usize) -> Self {
        Self {
            pairs: 0,
            estimate: f64::NAN,
            band: f64::INFINITY,
            dim,
        }
    }

    /// Band clamped at zero for display.
    pub fn reported_band(&self) -> f64 {
        self.band.max(0.0)
    }
}

pub fn split_dataset(data: &Dataset, mode: SplitMode) -> (Dataset, Dataset) {
    let (k, d) = (data.matrix(), data.dim());
    let mut train = Dataset::new(k, d);
    let mut eval = Dataset::new(k, d);
    match mode {
        SplitMode::Halves => {
            let cut = data.len() / 2;
            for (idx, o) in data.iter().enumerate() {
                if idx < cut {
                    train.push(*o);
                } else {
                    eval.push(*o);
                }
            }
        }
        SplitMode::ByMultiplicity => {
            let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
            for o in data.iter() {
                *counts.entry(o.entry()).or_default() += 1;
            }
            for o in data.iter() {
                if counts[&o.entry()] == 1 {
                    train.push(*o);
                } else {
                    eval.push(*o);
                }
            }
        }
    }
    (train, eval)
}

/// Pairs consecutive observations of each repeated entry. An entry seen `m`
/// times yields `floor(m / 2)` disjoint pairs; a trailing odd observation is
/// dropped. Pairs are emitted in the order their second member appears.
pub fn pair_double_samples(eval: &Dataset) -> Vec<PairedSample> {
    let mut pending: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pairs = Vec::new();
    for o in eval.iter() {
        match pending.remove(&o.entry()) {
            Some(first) => pairs.push(PairedSample {
                row: o.row,
                col: o.col,
                first,
                second: o.value,
            }),
            None => {
                pending.insert(o.entry(), o.value);
            }
        }
    }
    pairs
}

/// Mean product of paired residuals against `est`.
pub fn estimate_error(est: &MatrixEstimate, pairs: &[PairedSample]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let fitted = est.values[(p.row, p.col)];
            (p.first - fitted) * (p.second - fitted)
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

pub fn band_width(pairs: usize, dim: usize, bound: f64, scale: f64) -> f64 {
    debug_assert!(pairs >= 1);
    scale * bound * bound * ((dim as f64).ln() / pairs as f64).sqrt()
}

pub fn b_value(estimate: f64, pairs: usize, dim: usize, bound: f64, scale: f64) -> f64 {
    estimate + band_width(pairs, dim, bound, scale)
}

/// Pairs the evaluation set and builds the band. With no pairs the band is
/// `+inf`.
pub fn evaluate(est: &MatrixEstimate, eval: &Dataset, bound: f64, scale: f64) -> ErrorEstimate {
    let dim = eval.dim();
    let pairs = pair_double_samples(eval);
    match estimate_error(est, &pairs) {
        Ok(estimate) => ErrorEstimate {
            pairs: pairs.len(),
            estimate,
            band: b_value(estimate, pairs.len(), dim, bound, scale),
            dim,
        },
        Err(_) => ErrorEstimate::unavailable(dim),
    }
}
