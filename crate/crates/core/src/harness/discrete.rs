//! Finite label space with a known channel, where score distributions and
//! coverage are available in closed form.
//!
//! Without an attack the score is `s(x, y) = y + x` with `X ~ Unif[0,1)`
//! independent of `Y`, so its CDF is piecewise linear with breakpoints at
//! the integers. With the `prop3` attack the score is the indicator of
//! `y ∉ A`, `A = {y : p̃(y) > p(y)}`.

use rand::Rng;
use serde_json::json;

use super::config::{BoundKind, DiscreteSpec, ExperimentConfig};
use super::report::{BoundEval, TrialReport};
use crate::adversarial::{build_a_set, prop3_score, AdversarySet};
use crate::bounds::sandwich_from_dominance;
use crate::calibrate::conformal_quantile;
use crate::error::{Error, Result};
use crate::noise::{apply_confusion, disagreement, sample_categorical, Attack, NoiseKind, TransitionMatrix};
use crate::rng::trial_rng;

/// Instance shared by all trials of a run.
#[derive(Debug, Clone)]
pub struct DiscreteInstance {
    pub p: Vec<f64>,
    pub p_noisy: Vec<f64>,
    pub channel: TransitionMatrix,
    /// `Some` for the indicator score.
    pub a_set: Option<AdversarySet>,
}

impl DiscreteInstance {
    pub fn new(cfg: &ExperimentConfig, spec: &DiscreteSpec) -> Result<Self> {
        let k = spec.p.len();
        let (channel, prop3) = match &cfg.noise {
            None => (TransitionMatrix::identity(k), false),
            Some(n) => {
                let rows = n.transition.clone().ok_or_else(|| Error::Config("discrete noise needs a transition".into()))?;
                let prop3 = n.kind == NoiseKind::Adversarial && n.attack == Some(Attack::Prop3);
                (TransitionMatrix::new(rows)?, prop3)
            }
        };
        if channel.k() != k {
            return Err(Error::Config(format!("transition has {} labels, p has {k}", channel.k())));
        }
        let p_noisy = channel.push(&spec.p);
        let a_set = if prop3 { Some(build_a_set(&spec.p, &p_noisy)?) } else { None };
        Ok(Self { p: spec.p.clone(), p_noisy, channel, a_set })
    }

    fn score(&self, y: usize, x: f64) -> f64 {
        match &self.a_set {
            Some(a) => prop3_score(y, a),
            None => y as f64 + x,
        }
    }

    /// `P(s(X, Y) ≤ t)` under label law `w`.
    pub fn score_cdf(&self, w: &[f64], t: f64) -> f64 {
        match &self.a_set {
            Some(a) => w.iter().enumerate().filter(|&(y, _)| prop3_score(y, a) <= t).map(|(_, p)| p).sum(),
            None => w.iter().enumerate().map(|(y, p)| p * (t - y as f64).clamp(0.0, 1.0)).sum(),
        }
    }

    /// Expected set size at threshold `t`.
    fn expected_size(&self, t: f64) -> f64 {
        let k = self.p.len();
        match &self.a_set {
            Some(a) => (0..k).filter(|&y| prop3_score(y, a) <= t).count() as f64,
            None => (0..k).map(|y| (t - y as f64).clamp(0.0, 1.0)).sum(),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self.a_set {
            Some(_) => vec![0.0, 1.0],
            None => (0..=self.p.len()).map(|j| j as f64).collect(),
        }
    }

    /// `sup_t (F_clean(t) − F_noisy(t))`, attained at a breakpoint because
    /// both CDFs are piecewise linear (or constant) between them.
    pub fn dominance_gap(&self) -> f64 {
        self.breakpoints()
            .into_iter()
            .map(|t| self.score_cdf(&self.p, t) - self.score_cdf(&self.p_noisy, t))
            .fold(0.0, f64::max)
    }

    /// `sup_t (F_noisy(t) − F_clean(t))`; zero exactly when noisy scores
    /// dominate clean ones.
    pub fn dominance_violation(&self) -> f64 {
        self.breakpoints()
            .into_iter()
            .map(|t| self.score_cdf(&self.p_noisy, t) - self.score_cdf(&self.p, t))
            .fold(0.0, f64::max)
    }
}

pub(super) fn trial(cfg: &ExperimentConfig, inst: &DiscreteInstance, t: usize) -> Result<Vec<TrialReport>> {
    let mut rng = trial_rng(cfg.seed, t);
    let n = cfg.n_cal;
    let mut clean = Vec::with_capacity(n);
    let mut noisy = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let y = sample_categorical(&inst.p, &mut rng);
        let x: f64 = rng.random();
        clean.push(y);
        xs.push(x);
        noisy.push(apply_confusion(y, &inst.channel, &mut rng)?);
    }
    let scores = |ys: &[usize]| -> Vec<f64> { ys.iter().zip(&xs).map(|(&y, &x)| inst.score(y, x)).collect() };
    let (sc, sn) = (scores(&clean), scores(&noisy));
    let mut out = Vec::new();
    for alpha in cfg.alphas() {
        let mut r = TrialReport::new(t, alpha);
        let q = conformal_quantile(&sn, alpha)?.qhat;
        let qb = conformal_quantile(&sc, alpha)?.qhat;
        let cc = inst.score_cdf(&inst.p, q);
        let cn = inst.score_cdf(&inst.p_noisy, q);
        r.coverage_clean = Some(cc);
        r.coverage_noisy = Some(cn);
        r.risk_clean = Some(1.0 - cc);
        r.risk_noisy = Some(1.0 - cn);
        r.baseline_coverage = Some(inst.score_cdf(&inst.p, qb));
        r.size = Some(inst.expected_size(q));
        r.threshold = Some(q);
        r.noise_rate = Some(disagreement(&clean, &noisy));
        for b in &cfg.bounds {
            match b {
                BoundKind::Sandwich => {
                    let u = inst.dominance_gap();
                    let s = sandwich_from_dominance(alpha, n, u)?;
                    r.bounds.push(BoundEval::new("sandwich-upper", s.upper, &json!({"u": u, "p": inst.p, "p_noisy": inst.p_noisy, "sandwich": s}))?);
                }
                BoundKind::Dominance => {
                    let v = inst.dominance_violation();
                    r.bounds.push(BoundEval::new("dominance", if v <= 1e-12 { 1.0 } else { 0.0 }, &json!({"max_violation": v}))?);
                }
                other => r.warnings.push(format!("{other:?} bound does not apply to the discrete task")),
            }
        }
        out.push(r);
    }
    Ok(out)
}
