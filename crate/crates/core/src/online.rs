//! Online risk control. A stretch parameter θ widens or narrows a base
//! prediction through `φ(θ)` and moves by `γ·(loss − α)` after each noisy
//! observation. Clean labels, when present, are only scored.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibrate::Interval;
use crate::error::{Error, Result};
use crate::losses::{image_miscoverage, miscoverage, miscoverage_counter};
use crate::noise::{apply_additive, AdditiveDist};
use crate::scores::{hps_score, ClassProbs, IntervalPred};

/// `e^θ − 1` for θ ≥ 0 and `1 − e^{−θ}` otherwise.
pub fn phi(theta: f64) -> f64 {
    if theta >= 0.0 {
        theta.exp() - 1.0
    } else {
        -((-theta).exp() - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub theta0: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { alpha: 0.1, gamma: 0.05, theta0: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineState {
    pub theta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub t: u64,
    pub mc_clean: u64,
    pub mc_noisy: u64,
}

impl OnlineState {
    pub fn new(cfg: OnlineConfig) -> Result<Self> {
        if !(cfg.gamma >= 0.0) || !cfg.theta0.is_finite() {
            return Err(Error::Config(format!("need gamma >= 0 and finite theta0, got {cfg:?}")));
        }
        Ok(Self { theta: cfg.theta0, gamma: cfg.gamma, alpha: cfg.alpha, t: 0, mc_clean: 0, mc_noisy: 0 })
    }

    fn update(&mut self, loss_noisy: f64, covered_noisy: bool, covered_clean: Option<bool>) {
        self.theta += self.gamma * (loss_noisy - self.alpha);
        self.mc_noisy = miscoverage_counter(self.mc_noisy, covered_noisy);
        if let Some(c) = covered_clean {
            self.mc_clean = miscoverage_counter(self.mc_clean, c);
        }
        self.t += 1;
    }
}

/// Base prediction the stretch is applied to.
#[derive(Debug, Clone, PartialEq)]
pub enum BasePred {
    Interval(IntervalPred),
    Probs(ClassProbs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Real(f64),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OnlineSet {
    Interval(Interval),
    Classes(Vec<usize>),
}

impl OnlineSet {
    fn covers(&self, y: Label) -> Result<bool> {
        match (self, y) {
            (OnlineSet::Interval(iv), Label::Real(v)) => Ok(iv.contains(v)),
            (OnlineSet::Classes(s), Label::Class(k)) => Ok(s.contains(&k)),
            _ => Err(Error::Config("label kind does not match prediction kind".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnlineLoss {
    Miscoverage,
    Image,
}

/// One step's bookkeeping; `theta` is the value used to build the set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub theta: f64,
    pub loss_noisy: f64,
    pub loss_clean: Option<f64>,
    pub mc_noisy: u64,
    pub mc_clean: Option<u64>,
}

pub fn stretched_set(base: &BasePred, theta: f64) -> Result<OnlineSet> {
    let m = phi(theta);
    match base {
        BasePred::Interval(p) => Ok(OnlineSet::Interval(Interval { lo: p.lo - m, hi: p.hi + m })),
        BasePred::Probs(p) => {
            let mut s = Vec::new();
            for y in 0..p.k() {
                if hps_score(p, y)? <= m {
                    s.push(y);
                }
            }
            Ok(OnlineSet::Classes(s))
        }
    }
}

/// Builds the set at the current θ, scores it on the noisy label (and the
/// clean one if given), then updates θ from the noisy loss only.
pub fn online_step(
    state: &mut OnlineState,
    base: &BasePred,
    y_noisy: Label,
    y_clean: Option<Label>,
    loss: OnlineLoss,
) -> Result<(OnlineSet, StepRecord)> {
    if loss != OnlineLoss::Miscoverage {
        return Err(Error::Config("scalar online steps support the miscoverage loss only".into()));
    }
    let theta = state.theta;
    let set = stretched_set(base, theta)?;
    let cov_n = set.covers(y_noisy)?;
    let cov_c = y_clean.map(|y| set.covers(y)).transpose()?;
    let loss_noisy = miscoverage(cov_n);
    state.update(loss_noisy, cov_n, cov_c);
    let rec = StepRecord {
        t: state.t,
        theta,
        loss_noisy,
        loss_clean: cov_c.map(miscoverage),
        mc_noisy: state.mc_noisy,
        mc_clean: cov_c.map(|_| state.mc_clean),
    };
    Ok((set, rec))
}

/// Image version: every pixel interval is stretched by the same `φ(θ)` and
/// the image miscoverage drives the update. The counters track steps with
/// at least one uncovered pixel.
pub fn image_online_step(
    state: &mut OnlineState,
    base: &[Interval],
    y_noisy: &[f64],
    y_clean: Option<&[f64]>,
) -> Result<(Vec<Interval>, StepRecord)> {
    let theta = state.theta;
    let m = phi(theta);
    let set: Vec<Interval> = base.iter().map(|iv| Interval { lo: iv.lo - m, hi: iv.hi + m }).collect();
    let loss_noisy = image_miscoverage(y_noisy, &set)?;
    let loss_clean = y_clean.map(|y| image_miscoverage(y, &set)).transpose()?;
    state.update(loss_noisy, loss_noisy == 0.0, loss_clean.map(|l| l == 0.0));
    let rec = StepRecord {
        t: state.t,
        theta,
        loss_noisy,
        loss_clean,
        mc_noisy: state.mc_noisy,
        mc_clean: loss_clean.map(|_| state.mc_clean),
    };
    Ok((set, rec))
}

/// One observation of a scalar or class stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamItem {
    pub base: BasePred,
    pub y_noisy: Label,
    pub y_clean: Option<Label>,
}

/// One observation of an image stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageItem {
    pub base: Vec<Interval>,
    pub y_noisy: Vec<f64>,
    pub y_clean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub steps: Vec<StepRecord>,
    pub mean_loss_noisy: f64,
    pub mean_loss_clean: Option<f64>,
    pub mean_mc_noisy: f64,
    pub mean_mc_clean: Option<f64>,
    pub final_theta: f64,
}

impl OnlineReport {
    fn from_steps(steps: Vec<StepRecord>, final_theta: f64) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Domain("empty stream".into()));
        }
        let n = steps.len() as f64;
        let mean = |f: &dyn Fn(&StepRecord) -> Option<f64>| -> Option<f64> {
            steps.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
        };
        Ok(Self {
            mean_loss_noisy: steps.iter().map(|s| s.loss_noisy).sum::<f64>() / n,
            mean_loss_clean: mean(&|s| s.loss_clean),
            mean_mc_noisy: steps.iter().map(|s| s.mc_noisy as f64).sum::<f64>() / n,
            mean_mc_clean: mean(&|s| s.mc_clean.map(|v| v as f64)),
            final_theta,
            steps,
        })
    }

    /// `|mean noisy loss − α|` equals `|θ_T − θ_0| / (γT)` exactly.
    pub fn drift_bound(&self, cfg: &OnlineConfig) -> f64 {
        (self.final_theta - cfg.theta0).abs() / (cfg.gamma * self.steps.len() as f64)
    }
}

pub fn run_online(stream: &[StreamItem], cfg: OnlineConfig) -> Result<OnlineReport> {
    let mut st = OnlineState::new(cfg)?;
    let mut steps = Vec::with_capacity(stream.len());
    for item in stream {
        let (_, rec) = online_step(&mut st, &item.base, item.y_noisy, item.y_clean, OnlineLoss::Miscoverage)?;
        steps.push(rec);
    }
    OnlineReport::from_steps(steps, st.theta)
}

pub fn run_online_image(stream: &[ImageItem], cfg: OnlineConfig) -> Result<OnlineReport> {
    let mut st = OnlineState::new(cfg)?;
    let mut steps = Vec::with_capacity(stream.len());
    for item in stream {
        let (_, rec) = image_online_step(&mut st, &item.base, &item.y_noisy, item.y_clean.as_deref())?;
        steps.push(rec);
    }
    OnlineReport::from_steps(steps, st.theta)
}

/// Noise on the observed response of a synthetic stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamNoise {
    pub dist: AdditiveDist,
    pub c: f64,
}

/// `Y_t = sin(X_t) + 0.5·η`, `X_t ~ Unif[0, 2π]`; the base interval is
/// `sin(X_t) ± 0.5`. Noisy responses add `c·Z`.
pub fn gen_regression_stream<R: Rng + ?Sized>(steps: usize, noise: Option<StreamNoise>, rng: &mut R) -> Vec<StreamItem> {
    (0..steps)
        .map(|_| {
            let x = rng.random_range(0.0..std::f64::consts::TAU);
            let f = x.sin();
            let eta: f64 = StandardNormal.sample(rng);
            let y = f + 0.5 * eta;
            let yn = match noise {
                Some(n) => apply_additive(y, n.dist, n.c, rng),
                None => y,
            };
            StreamItem {
                base: BasePred::Interval(IntervalPred::from_quantiles(f - 0.5, f + 0.5)),
                y_noisy: Label::Real(yn),
                y_clean: Some(Label::Real(y)),
            }
        })
        .collect()
}

/// `side × side` images: per pixel `Y = m + 0.5·η` around a random smooth
/// mean field `m`; the base interval is `m ± 0.5`.
pub fn gen_image_stream<R: Rng + ?Sized>(steps: usize, side: usize, noise: Option<StreamNoise>, rng: &mut R) -> Vec<ImageItem> {
    (0..steps)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut base = Vec::with_capacity(side * side);
            let mut yc = Vec::with_capacity(side * side);
            let mut yn = Vec::with_capacity(side * side);
            for i in 0..side {
                for j in 0..side {
                    let m = a * (i as f64 / side as f64) + b * (j as f64 / side as f64);
                    let eta: f64 = StandardNormal.sample(rng);
                    let y = m + 0.5 * eta;
                    base.push(Interval { lo: m - 0.5, hi: m + 0.5 });
                    yc.push(y);
                    yn.push(match noise {
                        Some(n) => apply_additive(y, n.dist, n.c, rng),
                        None => y,
                    });
                }
            }
            ImageItem { base, y_noisy: yn, y_clean: Some(yc) }
        })
        .collect()
}
