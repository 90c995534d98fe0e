//! Nonconformity scores. All functions are pure; any randomization (the APS
//! tie-break `u`) is supplied by the caller.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};

const SUM_TOL: f64 = 1e-9;

/// A validated probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs(Vec<f64>);

impl ClassProbs {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Validation(format!("probability {p} outside [0,1]")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::Validation(format!("probabilities sum to {s}")));
        }
        Ok(Self(probs))
    }

    /// Skips validation. Callers must guarantee the invariants, e.g. for
    /// vectors produced by softmax or a stochastic channel.
    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        Self(probs)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Base interval/mean prediction for regression scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalPred {
    pub lo: f64,
    pub hi: f64,
    pub mean: Option<f64>,
    pub scale: Option<f64>,
}

impl IntervalPred {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Validation(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, mean: None, scale: None })
    }

    pub fn with_mean(mean: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Validation(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { lo: mean, hi: mean, mean: Some(mean), scale: Some(scale) })
    }

    /// Quantile pair `lo`/`hi` that may be crossed; they are swapped so the
    /// interval invariant holds.
    pub fn from_quantiles(a: f64, b: f64) -> Self {
        Self { lo: a.min(b), hi: a.max(b), mean: None, scale: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Hps,
    Aps,
    ApsDeterministic,
    Cqr,
    Rm,
}

impl ScoreKind {
    pub fn is_classification(self) -> bool {
        matches!(self, ScoreKind::Hps | ScoreKind::Aps | ScoreKind::ApsDeterministic)
    }
}

pub fn hps_score(p: &ClassProbs, y: usize) -> Result<f64> {
    check_index(y, p.k())?;
    Ok(1.0 - p.0[y])
}

/// Mass of classes strictly more probable than `y`, plus `p[y]·u`.
pub fn aps_score(p: &ClassProbs, y: usize, u: f64) -> Result<f64> {
    check_index(y, p.k())?;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("u must lie in [0,1], got {u}")));
    }
    let py = p.0[y];
    let greater: f64 = p.0.iter().filter(|&&q| q > py).sum();
    Ok((greater + py * u).min(1.0))
}

pub fn cqr_score(pred: &IntervalPred, y: f64) -> f64 {
    (pred.lo - y).max(y - pred.hi)
}

pub fn rm_score(pred: &IntervalPred, y: f64) -> Result<f64> {
    let (mean, scale) = match (pred.mean, pred.scale) {
        (Some(m), Some(s)) => (m, s),
        _ => return Err(Error::Config("rm score needs mean and scale".into())),
    };
    if !(scale > 0.0) {
        return Err(Error::Config(format!("rm scale must be positive, got {scale}")));
    }
    Ok((mean - y).abs() / scale)
}

/// Classification score by kind. `u` is ignored except for randomized APS.
pub fn class_score(kind: ScoreKind, p: &ClassProbs, y: usize, u: f64) -> Result<f64> {
    match kind {
        ScoreKind::Hps => hps_score(p, y),
        ScoreKind::Aps => aps_score(p, y, u),
        ScoreKind::ApsDeterministic => aps_score(p, y, 1.0),
        _ => Err(Error::Config(format!("{kind:?} is not a classification score"))),
    }
}

pub fn interval_score(kind: ScoreKind, pred: &IntervalPred, y: f64) -> Result<f64> {
    match kind {
        ScoreKind::Cqr => Ok(cqr_score(pred, y)),
        ScoreKind::Rm => rm_score(pred, y),
        _ => Err(Error::Config(format!("{kind:?} is not a regression score"))),
    }
}
