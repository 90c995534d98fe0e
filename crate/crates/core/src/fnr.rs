//! Multi-label and segmentation scenarios for checking that FNR control on
//! noisy labels carries over to clean labels, plus a deliberately broken
//! scenario where it does not.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibrate::{crc_threshold, default_grid};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::trial_rng;

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Which generative story produces clean labels, noisy labels and the
/// noisy-label model scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MultiLabelScenario {
    /// Clean labels are the top `m(x) ∈ 1..=4` of `K` latent scores. With
    /// probability `β(x) ∈ [beta_lo, beta_hi]` one positive is swapped with
    /// one negative, so the noisy label count equals the clean one.
    Deterministic { k: usize, beta_lo: f64, beta_hi: f64 },
    /// `side × side` mask with independent Bernoulli pixels around a random
    /// disk; every pixel flips independently with the same rate `beta`.
    Independent { side: usize, beta: f64 },
    /// Clean labels are the top two latent scores; the top one is dropped
    /// from the noisy labels with probability `beta`. Violates the
    /// non-adversarial assumption when `beta ≥ 0.5`.
    TopDrop { k: usize, beta: f64 },
}

impl MultiLabelScenario {
    pub fn deterministic() -> Self {
        MultiLabelScenario::Deterministic { k: 10, beta_lo: 0.1, beta_hi: 0.45 }
    }

    pub fn independent() -> Self {
        MultiLabelScenario::Independent { side: 8, beta: 0.1 }
    }

    pub fn counterexample() -> Self {
        MultiLabelScenario::TopDrop { k: 4, beta: 0.9 }
    }

    /// Checks sizes and, for the two theory presets, that every flip rate is
    /// below one half.
    pub fn validate(&self) -> Result<()> {
        match *self {
            MultiLabelScenario::Deterministic { k, beta_lo, beta_hi } => {
                if !(6..=16).contains(&k) {
                    return Err(Error::Config(format!("deterministic preset needs 6 <= k <= 16, got {k}")));
                }
                if !(0.0 <= beta_lo && beta_lo <= beta_hi && beta_hi < 0.5) {
                    return Err(Error::Config(format!("need 0 <= beta_lo <= beta_hi < 0.5, got {beta_lo}, {beta_hi}")));
                }
            }
            MultiLabelScenario::Independent { side, beta } => {
                if !(3..=16).contains(&side) {
                    return Err(Error::Config(format!("independent preset needs 3 <= side <= 16, got {side}")));
                }
                if !(0.0..0.5).contains(&beta) {
                    return Err(Error::Config(format!("need 0 <= beta < 0.5, got {beta}")));
                }
            }
            MultiLabelScenario::TopDrop { k, beta } => {
                if !(3..=16).contains(&k) || !(0.0..=1.0).contains(&beta) {
                    return Err(Error::Config(format!("top-drop needs 3 <= k <= 16 and beta in [0,1], got {k}, {beta}")));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> usize {
        match *self {
            MultiLabelScenario::Deterministic { k, .. } | MultiLabelScenario::TopDrop { k, .. } => k,
            MultiLabelScenario::Independent { side, .. } => side * side,
        }
    }

    /// Draws one sample; clean and noisy label sets are both nonempty.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FnrSample {
        match *self {
            MultiLabelScenario::Deterministic { k, beta_lo, beta_hi } => {
                let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
                let (x0, x1): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
                let m = 1 + ((4.0 * logistic(1.7 * x0)) as usize).min(3);
                let beta = beta_lo + (beta_hi - beta_lo) * logistic(x1);
                let order = ranked(&z);
                let mut y = vec![false; k];
                for &i in &order[..m] {
                    y[i] = true;
                }
                let mut yn = y.clone();
                if rng.random::<f64>() < beta {
                    let pos = order[rng.random_range(0..m)];
                    let neg = order[m + rng.random_range(0..k - m)];
                    yn[pos] = false;
                    yn[neg] = true;
                }
                let pi = y.iter().map(|&b| if b { 1.0 - beta / m as f64 } else { beta / (k - m) as f64 }).collect();
                FnrSample { clean: y, noisy: yn, scores: pi }
            }
            MultiLabelScenario::Independent { side, beta } => loop {
                let (cx, cy) = (rng.random_range(0.0..side as f64), rng.random_range(0.0..side as f64));
                let mut y = Vec::with_capacity(side * side);
                let mut yn = Vec::with_capacity(side * side);
                let mut pi = Vec::with_capacity(side * side);
                for i in 0..side {
                    for j in 0..side {
                        let d = ((i as f64 + 0.5 - cx).powi(2) + (j as f64 + 0.5 - cy).powi(2)).sqrt();
                        let p = logistic(2.0 * (2.0 - d));
                        let b = rng.random::<f64>() < p;
                        y.push(b);
                        yn.push(if rng.random::<f64>() < beta { !b } else { b });
                        pi.push(p * (1.0 - beta) + (1.0 - p) * beta);
                    }
                }
                if y.contains(&true) && yn.contains(&true) {
                    break FnrSample { clean: y, noisy: yn, scores: pi };
                }
            },
            MultiLabelScenario::TopDrop { k, beta } => {
                let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
                let order = ranked(&z);
                let mut y = vec![false; k];
                y[order[0]] = true;
                y[order[1]] = true;
                let mut yn = y.clone();
                if rng.random::<f64>() < beta {
                    yn[order[0]] = false;
                }
                let mut pi = vec![0.0; k];
                pi[order[0]] = 1.0 - beta;
                pi[order[1]] = 1.0;
                FnrSample { clean: y, noisy: yn, scores: pi }
            }
        }
    }
}

/// Indices by descending value, ties to the lowest index.
fn ranked(z: &[f64]) -> Vec<usize> {
    let mut o: Vec<usize> = (0..z.len()).collect();
    o.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    o
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnrSample {
    pub clean: Vec<bool>,
    pub noisy: Vec<bool>,
    /// Noisy-label probability per label; the set at λ is `{k : s_k ≥ 1−λ}`.
    pub scores: Vec<f64>,
}

/// First grid index at which label score `s` enters the set. Uses the same
/// `s ≥ 1 − λ` comparison as [`crate::calibrate::fnr_set_from_lambda`].
fn entry_index(grid: &[f64], s: f64) -> usize {
    grid.partition_point(|&l| s < 1.0 - l)
}

fn fnr_at(y: &[bool], scores: &[f64], lambda: f64) -> f64 {
    let t = 1.0 - lambda;
    let pos = y.iter().filter(|&&b| b).count();
    let hit = y.iter().zip(scores).filter(|(&b, &s)| b && s >= t).count();
    1.0 - hit as f64 / pos as f64
}

/// Mean noisy-label FNR on every grid point, in `O(n·K + G)`.
pub fn noisy_risk_curve(samples: &[FnrSample], grid: &[f64]) -> Vec<f64> {
    let mut diff = vec![0.0; grid.len() + 1];
    let n = samples.len() as f64;
    for s in samples {
        let pos = s.noisy.iter().filter(|&&b| b).count() as f64;
        diff[0] += 1.0 / n;
        for (&b, &sc) in s.noisy.iter().zip(&s.scores) {
            if b {
                diff[entry_index(grid, sc)] -= 1.0 / (pos * n);
            }
        }
    }
    let mut acc = 0.0;
    diff[..grid.len()]
        .iter()
        .map(|d| {
            acc += d;
            acc.max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnrSettings {
    pub n_cal: usize,
    pub n_test: usize,
    pub trials: usize,
    pub seed: u64,
    pub grid_points: usize,
}

impl Default for FnrSettings {
    fn default() -> Self {
        Self { n_cal: 500, n_test: 500, trials: 2000, seed: 0, grid_points: 1001 }
    }
}

/// Per-trial result at one α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnrTrial {
    pub trial: usize,
    pub alpha: f64,
    pub lambda: Option<f64>,
    pub noisy_fnr: Option<f64>,
    pub clean_fnr: Option<f64>,
}

/// Aggregate over trials at one α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnrRow {
    pub alpha: f64,
    pub noisy_fnr: f64,
    pub clean_fnr: f64,
    /// Standard error of the mean paired difference `clean − noisy`.
    pub diff_se: f64,
    pub infeasible: usize,
}

impl FnrRow {
    /// `clean ≤ noisy + 3σ`.
    pub fn transfer_holds(&self) -> bool {
        self.clean_fnr <= self.noisy_fnr + 3.0 * self.diff_se
    }
}

/// Per trial: calibrate λ on noisy labels by risk control at each α, then
/// score the set on fresh test samples against both label versions.
pub fn simulate_fnr_trials(
    scenario: &MultiLabelScenario,
    alphas: &[f64],
    settings: &FnrSettings,
    exec: Execution,
) -> Result<Vec<Vec<FnrTrial>>> {
    scenario.validate()?;
    if settings.n_cal == 0 || settings.n_test == 0 || settings.trials == 0 {
        return Err(Error::Config("n_cal, n_test and trials must be positive".into()));
    }
    let grid = default_grid(settings.grid_points);
    Ok(exec.map(settings.trials, |t| {
        let mut rng = trial_rng(settings.seed, t);
        let cal: Vec<FnrSample> = (0..settings.n_cal).map(|_| scenario.sample(&mut rng)).collect();
        let test: Vec<FnrSample> = (0..settings.n_test).map(|_| scenario.sample(&mut rng)).collect();
        let risk = noisy_risk_curve(&cal, &grid);
        alphas
            .iter()
            .map(|&alpha| match crc_threshold(&risk, settings.n_cal, alpha, 1.0, &grid) {
                Ok(thr) => {
                    let m = test.len() as f64;
                    let noisy = test.iter().map(|s| fnr_at(&s.noisy, &s.scores, thr.lambda)).sum::<f64>() / m;
                    let clean = test.iter().map(|s| fnr_at(&s.clean, &s.scores, thr.lambda)).sum::<f64>() / m;
                    FnrTrial { trial: t, alpha, lambda: Some(thr.lambda), noisy_fnr: Some(noisy), clean_fnr: Some(clean) }
                }
                Err(_) => FnrTrial { trial: t, alpha, lambda: None, noisy_fnr: None, clean_fnr: None },
            })
            .collect()
    }))
}

pub fn summarize_fnr(trials: &[Vec<FnrTrial>], alphas: &[f64]) -> Vec<FnrRow> {
    alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let ok: Vec<(f64, f64)> = trials
                .iter()
                .filter_map(|t| Some((t[a].noisy_fnr?, t[a].clean_fnr?)))
                .collect();
            let n = ok.len() as f64;
            let noisy = ok.iter().map(|p| p.0).sum::<f64>() / n;
            let clean = ok.iter().map(|p| p.1).sum::<f64>() / n;
            let diffs: Vec<f64> = ok.iter().map(|p| p.1 - p.0).collect();
            let dm = clean - noisy;
            let var = diffs.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            FnrRow { alpha, noisy_fnr: noisy, clean_fnr: clean, diff_se: (var / n).sqrt(), infeasible: trials.len() - ok.len() }
        })
        .collect()
}

pub fn simulate_fnr_transfer(
    scenario: &MultiLabelScenario,
    alphas: &[f64],
    settings: &FnrSettings,
    exec: Execution,
) -> Result<Vec<FnrRow>> {
    let trials = simulate_fnr_trials(scenario, alphas, settings, exec)?;
    Ok(summarize_fnr(&trials, alphas))
}

/// Result of running a scenario that breaks an assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub row: FnrRow,
    /// Clean FNR exceeds noisy FNR by more than 3σ.
    pub violated: bool,
}

pub fn counterexample_probe(
    scenario: &MultiLabelScenario,
    alpha: f64,
    settings: &FnrSettings,
    exec: Execution,
) -> Result<ProbeReport> {
    let row = simulate_fnr_transfer(scenario, &[alpha], settings, exec)?[0];
    Ok(ProbeReport { violated: row.clean_fnr > row.noisy_fnr + 3.0 * row.diff_se, row })
}
