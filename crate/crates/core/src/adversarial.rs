//! Score functions and label attacks that break conformal coverage on clean
//! labels while noisy-label calibration still looks valid.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::conformal_quantile;
use crate::error::{check_index, Error, Result};
use crate::noise::disagreement;

/// Labels whose noisy mass strictly exceeds their clean mass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarySet {
    pub members: Vec<usize>,
}

impl AdversarySet {
    pub fn contains(&self, y: usize) -> bool {
        self.members.contains(&y)
    }
}

pub fn build_a_set(p_clean: &[f64], p_noisy: &[f64]) -> Result<AdversarySet> {
    if p_clean.len() != p_noisy.len() {
        return Err(Error::Domain(format!("vectors of length {} and {}", p_clean.len(), p_noisy.len())));
    }
    let members = p_clean.iter().zip(p_noisy).enumerate().filter(|(_, (p, q))| q > p).map(|(i, _)| i).collect();
    Ok(AdversarySet { members })
}

/// `1{y ∉ A}`.
pub fn prop3_score(y: usize, a: &AdversarySet) -> f64 {
    if a.contains(y) {
        0.0
    } else {
        1.0
    }
}

/// Corrupted labels and bookkeeping common to the budgeted attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub labels: Vec<usize>,
    pub achieved_rate: f64,
    pub requested_rate: f64,
    /// True when the attack ran out of eligible points before the budget.
    pub shortfall: bool,
}

fn budget(n: usize, eps: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!("budget must lie in [0,1], got {eps}")));
    }
    Ok((eps * n as f64).round() as usize)
}

/// Relabels misclassified points with the model's prediction, choosing
/// uniformly at random when there are more than `round(ε·n)` of them.
pub fn wrong_to_right<R: Rng + ?Sized>(labels: &[usize], preds: &[usize], eps: f64, rng: &mut R) -> Result<AttackOutcome> {
    if labels.len() != preds.len() {
        return Err(Error::Domain(format!("{} labels for {} predictions", labels.len(), preds.len())));
    }
    let m = budget(labels.len(), eps)?;
    let mut wrong: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != preds[i]).collect();
    let shortfall = wrong.len() < m;
    if !shortfall {
        wrong.shuffle(rng);
        wrong.truncate(m);
    }
    let mut out = labels.to_vec();
    for i in wrong {
        out[i] = preds[i];
    }
    if shortfall {
        log::warn!("wrong-to-right: only {} misclassified points for a budget of {m}", out.len() - labels.iter().zip(&out).filter(|(a, b)| a == b).count());
    }
    Ok(AttackOutcome { achieved_rate: disagreement(labels, &out), labels: out, requested_rate: eps, shortfall })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalOutcome {
    pub labels: Vec<usize>,
    /// `q̂` before the first swap and after each swap; nonincreasing.
    pub qhat_trajectory: Vec<f64>,
    pub swaps: usize,
}

/// Greedy worst-case relabeling. Each round computes `q̂` on the current
/// labels, then among points scoring above it relabels the one whose best
/// alternative label lowers its score the most (ties to the lowest index).
/// Stops when no such point can be lowered or after `max_swaps` swaps.
pub fn optimal_adversarial(scores: &[Vec<f64>], labels: &[usize], alpha: f64, max_swaps: usize) -> Result<OptimalOutcome> {
    if scores.len() != labels.len() {
        return Err(Error::Domain(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    for (row, &y) in scores.iter().zip(labels) {
        check_index(y, row.len())?;
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::Validation("non-finite score".into()));
        }
    }
    let mut cur = labels.to_vec();
    let mut cur_scores: Vec<f64> = scores.iter().zip(&cur).map(|(r, &y)| r[y]).collect();
    let mut traj = vec![conformal_quantile(&cur_scores, alpha)?.qhat];
    let mut swaps = 0;
    while swaps < max_swaps {
        let q = *traj.last().expect("nonempty");
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, row) in scores.iter().enumerate() {
            let s = cur_scores[i];
            if s <= q {
                continue;
            }
            let (k, alt) = row
                .iter()
                .enumerate()
                .fold((cur[i], s), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
            let gain = s - alt;
            if gain > 0.0 && best.is_none_or(|b| gain > b.2) {
                best = Some((i, k, gain));
            }
        }
        let Some((i, k, _)) = best else { break };
        cur[i] = k;
        cur_scores[i] = scores[i][k];
        swaps += 1;
        traj.push(conformal_quantile(&cur_scores, alpha)?.qhat);
    }
    Ok(OptimalOutcome { labels: cur, qhat_trajectory: traj, swaps })
}

/// Moves labels along the most frequent confusions: for the directed pair
/// `(i → j)` with the largest count, points labeled `i` are relabeled `j`
/// (in random order), then the next pair, until `round(ε·n)` labels change.
pub fn most_frequent_confusion<R: Rng + ?Sized>(
    labels: &[usize],
    counts: &[Vec<f64>],
    eps: f64,
    rng: &mut R,
) -> Result<AttackOutcome> {
    let k = counts.len();
    if counts.iter().any(|r| r.len() != k) {
        return Err(Error::Validation("confusion counts must be square".into()));
    }
    for &y in labels {
        check_index(y, k)?;
    }
    let m = budget(labels.len(), eps)?;
    let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
    pairs.retain(|&(i, j)| counts[i][j] > 0.0);
    pairs.sort_by(|a, b| counts[b.0][b.1].total_cmp(&counts[a.0][a.1]).then(a.cmp(b)));
    let mut out = labels.to_vec();
    let mut touched = vec![false; labels.len()];
    let mut changed = 0;
    for (i, j) in pairs {
        if changed >= m {
            break;
        }
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == i && !touched[t]).collect();
        idx.shuffle(rng);
        for t in idx.into_iter().take(m - changed) {
            out[t] = j;
            touched[t] = true;
            changed += 1;
        }
    }
    let shortfall = changed < m;
    if shortfall {
        log::warn!("most-frequent-confusion changed {changed} labels for a budget of {m}");
    }
    Ok(AttackOutcome { achieved_rate: disagreement(labels, &out), labels: out, requested_rate: eps, shortfall })
}

/// Smallest `q̂` over all relabelings within Hamming distance `swaps`.
/// Exponential; for tiny instances only.
pub fn brute_force_min_qhat(scores: &[Vec<f64>], labels: &[usize], alpha: f64, swaps: usize) -> Result<f64> {
    let n = labels.len();
    let k = scores.first().map_or(0, Vec::len);
    if n > 10 || k.pow(n as u32) > 1_000_000 {
        return Err(Error::Domain("instance too large for exhaustive search".into()));
    }
    let mut best = f64::INFINITY;
    let mut assign = vec![0usize; n];
    loop {
        let dist = assign.iter().zip(labels).filter(|(a, b)| a != b).count();
        if dist <= swaps {
            let s: Vec<f64> = assign.iter().enumerate().map(|(i, &y)| scores[i][y]).collect();
            best = best.min(conformal_quantile(&s, alpha)?.qhat);
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(best);
            }
            assign[pos] += 1;
            if assign[pos] < k {
                break;
            }
            assign[pos] = 0;
            pos += 1;
        }
    }
}
