//! Closed-form coverage and risk bounds, plus checks of the distributional
//! conditions under which they hold.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::calibrate::Interval;
use crate::error::{Error, Result};
use crate::losses::{h_of_d, second_derivative_extrema, SmoothLossParams};
use crate::noise::TransitionMatrix;

const ORDER_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-9;

/// Outcome of comparing the empirical CDFs of clean and noisy scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    /// `F̃(t) ≤ F(t) + tol` at every pooled support point.
    pub holds: bool,
    /// `max_t (F̃ − F)`, clipped at 0.
    pub max_violation: f64,
    /// `max_t (F − F̃)`, clipped at 0; the `u` of the coverage sandwich.
    pub max_gap: f64,
}

/// Two-sample DKW slack `2·√(ln(2/δ)/(2·min(n₁,n₂)))`.
pub fn dkw_tolerance(n1: usize, n2: usize, delta: f64) -> f64 {
    let m = n1.min(n2).max(1) as f64;
    2.0 * ((2.0 / delta).ln() / (2.0 * m)).sqrt()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Checks that noisy scores are stochastically larger than clean ones.
pub fn dominance_check(clean: &[f64], noisy: &[f64], tol: f64) -> Result<Dominance> {
    if clean.is_empty() || noisy.is_empty() {
        return Err(Error::Domain("dominance check needs two nonempty samples".into()));
    }
    let (c, n) = (sorted(clean), sorted(noisy));
    let (nc, nn) = (c.len() as f64, n.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut viol, mut gap) = (0.0f64, 0.0f64);
    while i < c.len() || j < n.len() {
        let t = match (c.get(i), n.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < c.len() && c[i] <= t {
            i += 1;
        }
        while j < n.len() && n[j] <= t {
            j += 1;
        }
        let (f, ft) = (i as f64 / nc, j as f64 / nn);
        viol = viol.max(ft - f);
        gap = gap.max(f - ft);
    }
    Ok(Dominance { holds: viol <= tol, max_violation: viol, max_gap: gap })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichTerms {
    pub alpha: f64,
    pub finite_sample: f64,
    pub noise: f64,
}

/// Coverage bracket `[1−α, 1−α + 1/(n+1) + noise]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSandwich {
    pub lower: f64,
    pub upper: f64,
    pub upper_clipped: f64,
    pub terms: SandwichTerms,
}

fn sandwich(alpha: f64, n: usize, noise: f64) -> CoverageSandwich {
    let fs = 1.0 / (n as f64 + 1.0);
    let upper = 1.0 - alpha + fs + noise;
    CoverageSandwich {
        lower: 1.0 - alpha,
        upper,
        upper_clipped: upper.min(1.0),
        terms: SandwichTerms { alpha, finite_sample: fs, noise },
    }
}

pub fn sandwich_from_dominance(alpha: f64, n: usize, u: f64) -> Result<CoverageSandwich> {
    if !(u >= 0.0) {
        return Err(Error::Domain(format!("u must be nonnegative, got {u}")));
    }
    Ok(sandwich(alpha, n, u))
}

fn check_prob(v: &[f64], what: &str) -> Result<()> {
    let s: f64 = v.iter().sum();
    if v.iter().any(|p| !(-NORM_TOL..=1.0 + NORM_TOL).contains(p)) || (s - 1.0).abs() > NORM_TOL {
        return Err(Error::Validation(format!("{what} is not a probability vector (sum {s})")));
    }
    Ok(())
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Domain(format!("vectors of length {} and {}", p.len(), q.len())));
    }
    Ok(())
}

/// Half the L1 distance between two label marginals.
pub fn class_marginal_tv_term(p_clean: &[f64], p_noisy: &[f64]) -> Result<f64> {
    check_pair(p_clean, p_noisy)?;
    check_prob(p_clean, "clean marginal")?;
    check_prob(p_noisy, "noisy marginal")?;
    Ok(0.5 * p_clean.iter().zip(p_noisy).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Bracket for uniform-over-all-labels flip noise: noise term `ε(K−1)/K`.
pub fn random_flip_sandwich(alpha: f64, n: usize, eps: f64, k: usize) -> Result<CoverageSandwich> {
    if !(0.0..1.0).contains(&eps) || k < 2 {
        return Err(Error::Domain(format!("need 0 <= eps < 1 and K >= 2, got eps={eps} K={k}")));
    }
    Ok(sandwich(alpha, n, eps * (k as f64 - 1.0) / k as f64))
}

/// `α + 2·n/(n+1)·ε`; calibrating at this level covers clean labels at
/// `1−α` when the noisy and clean laws are within TV distance `ε`.
pub fn tv_adjusted_alpha(alpha: f64, n: usize, eps: f64) -> Result<f64> {
    let nf = n as f64;
    let a = alpha + 2.0 * nf / (nf + 1.0) * eps;
    if a >= 1.0 {
        return Err(Error::Infeasible(format!("adjusted level {a} is not below 1")));
    }
    Ok(a)
}

/// `1−α + 1/(n+1) + n/(n+1)·ξ`, clipped to 1.
pub fn tv_coverage_upper(alpha: f64, n: usize, xi: f64) -> Result<f64> {
    if !(xi >= 0.0) {
        return Err(Error::Domain(format!("xi must be nonnegative, got {xi}")));
    }
    let nf = n as f64;
    Ok((1.0 - alpha + 1.0 / (nf + 1.0) + nf / (nf + 1.0) * xi).min(1.0))
}

/// Labels sorted by clean probability (descending, ties by index); every
/// prefix sum of `clean − noisy` must be nonnegative.
pub fn prefix_mass_check(p_clean: &[f64], p_noisy: &[f64]) -> Result<bool> {
    check_pair(p_clean, p_noisy)?;
    let mut order: Vec<usize> = (0..p_clean.len()).collect();
    order.sort_by(|&a, &b| p_clean[b].total_cmp(&p_clean[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    for i in order {
        acc += p_clean[i] - p_noisy[i];
        if acc < -ORDER_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// True when `p_i < p_j` implies `q_i ≤ q_j` and ties stay ties, up to a
/// `1e-12` rounding slack.
pub fn rank_preservation_check(p_clean: &[f64], p_noisy: &[f64]) -> Result<bool> {
    check_pair(p_clean, p_noisy)?;
    let k = p_clean.len();
    for i in 0..k {
        for j in 0..k {
            let (pi, pj, qi, qj) = (p_clean[i], p_clean[j], p_noisy[i], p_noisy[j]);
            if pi <= pj + ORDER_TOL && qi > qj + ORDER_TOL && pi <= pj - ORDER_TOL {
                return Ok(false);
            }
            if (pi - pj).abs() <= ORDER_TOL && (qi - qj).abs() > ORDER_TOL {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `|q_i − 1/K| ≤ |p_i − 1/K|` for every label.
pub fn towards_uniform_check(p_clean: &[f64], p_noisy: &[f64]) -> Result<bool> {
    check_pair(p_clean, p_noisy)?;
    let u = 1.0 / p_clean.len() as f64;
    Ok(p_clean.iter().zip(p_noisy).all(|(p, q)| (q - u).abs() <= (p - u).abs() + ORDER_TOL))
}

/// Per class `j`: `Σ_{j'} T[j][j']·F̃_{j'}(t) ≥ F_j(t)` on every grid point.
/// `clean[j]` and `noisy[j]` are class-conditional CDFs on a shared grid.
pub fn confusion_condition_check(t: &TransitionMatrix, clean: &[Vec<f64>], noisy: &[Vec<f64>]) -> Result<Vec<bool>> {
    let k = t.k();
    if clean.len() != k || noisy.len() != k {
        return Err(Error::Domain(format!("need {k} class CDFs, got {} and {}", clean.len(), noisy.len())));
    }
    let g = clean[0].len();
    if clean.iter().chain(noisy).any(|c| c.len() != g) {
        return Err(Error::Domain("CDFs are not on a common grid".into()));
    }
    Ok((0..k)
        .map(|j| {
            (0..g).all(|s| {
                let mix: f64 = (0..k).map(|jp| t.get(j, jp) * noisy[jp][s]).sum();
                mix >= clean[j][s] - ORDER_TOL
            })
        })
        .collect())
}

/// Clean-risk bracket from a second-order expansion of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorRiskBounds {
    pub lower: f64,
    pub upper: f64,
    pub q: f64,
    pub big_q: f64,
    pub var_z: f64,
}

/// `[α − ½·Q·Var(Z), α − ½·q·Var(Z)]` where `α` is the noisy risk.
pub fn taylor_risk_bounds(alpha_noisy: f64, q: f64, big_q: f64, var_z: f64) -> Result<TaylorRiskBounds> {
    if !(q <= big_q) || !(var_z >= 0.0) {
        return Err(Error::Domain(format!("need q <= Q and Var(Z) >= 0, got q={q} Q={big_q} var={var_z}")));
    }
    Ok(TaylorRiskBounds {
        lower: alpha_noisy - 0.5 * big_q * var_z,
        upper: alpha_noisy - 0.5 * q * var_z,
        q,
        big_q,
        var_z,
    })
}

/// Curvature extremes of the parameterized smooth loss on `[0, 1]`; for an
/// interval of width `w` they scale by `1/w²`.
pub fn unit_curvature(p: SmoothLossParams) -> Result<(f64, f64)> {
    let e = second_derivative_extrema(0.0, 1.0, p)?;
    Ok((e.q, e.big_q))
}

/// Averages of the per-interval curvature extremes `(E[q(X)], E[Q(X)])`.
pub fn mean_curvature(intervals: &[Interval], p: SmoothLossParams) -> Result<(f64, f64)> {
    if intervals.is_empty() {
        return Err(Error::Domain("no intervals".into()));
    }
    let (q1, big_q1) = unit_curvature(p)?;
    let mut s = (0.0, 0.0);
    for iv in intervals {
        let w = iv.length();
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Domain(format!("interval width {w} has no finite curvature")));
        }
        s.0 += q1 / (w * w);
        s.1 += big_q1 / (w * w);
    }
    let n = intervals.len() as f64;
    Ok((s.0 / n, s.1 / n))
}

/// `1 − (risk − ½·E[q]·Var(Z)) / h(d)`, clipped to `[0, 1]`.
pub fn smooth_coverage_lower_bound(noisy_smooth_risk: f64, mean_q: f64, var_z: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("d must be positive, got {d}")));
    }
    Ok((1.0 - (noisy_smooth_risk - 0.5 * mean_q * var_z) / h_of_d(d)).clamp(0.0, 1.0))
}

/// `P(Ỹ∈C) − E[|C|·K_X]·E[|Z|]`, clipped to `[0, 1]`.
pub fn lipschitz_coverage_bound(noisy_coverage: f64, mean_len_times_k: f64, mean_abs_z: f64) -> Result<f64> {
    if noisy_coverage < 0.0 || mean_len_times_k < 0.0 || mean_abs_z < 0.0 {
        return Err(Error::Domain("Lipschitz bound inputs must be nonnegative".into()));
    }
    Ok((noisy_coverage - mean_len_times_k * mean_abs_z).clamp(0.0, 1.0))
}

/// A single bound evaluation, as read from JSON by the command line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundRequest {
    Dominance { clean: Vec<f64>, noisy: Vec<f64>, tol: Option<f64> },
    Sandwich { alpha: f64, n: usize, u: f64 },
    RandomFlip { alpha: f64, n: usize, epsilon: f64, k: usize },
    MarginalTv { p_clean: Vec<f64>, p_noisy: Vec<f64> },
    TvAlpha { alpha: f64, n: usize, epsilon: f64 },
    TvUpper { alpha: f64, n: usize, xi: f64 },
    PrefixMass { p_clean: Vec<f64>, p_noisy: Vec<f64> },
    RankPreservation { p_clean: Vec<f64>, p_noisy: Vec<f64> },
    TowardsUniform { p_clean: Vec<f64>, p_noisy: Vec<f64> },
    ConfusionCondition { transition: Vec<Vec<f64>>, clean_cdfs: Vec<Vec<f64>>, noisy_cdfs: Vec<Vec<f64>> },
    Taylor { alpha: f64, q: f64, big_q: f64, var_z: f64 },
    Curvature { c: f64, d: f64, a: f64, b: f64 },
    SmoothCoverage { risk: f64, mean_q: f64, var_z: f64, d: f64 },
    Lipschitz { noisy_coverage: f64, mean_len_times_k: f64, mean_abs_z: f64 },
}

impl BoundRequest {
    /// Evaluates the request; the result echoes inputs next to the value.
    pub fn evaluate(&self) -> Result<Value> {
        let inputs = serde_json::to_value(self)?;
        let value = match self {
            BoundRequest::Dominance { clean, noisy, tol } => {
                let tol = tol.unwrap_or_else(|| dkw_tolerance(clean.len(), noisy.len(), 0.05));
                json!(dominance_check(clean, noisy, tol)?)
            }
            BoundRequest::Sandwich { alpha, n, u } => json!(sandwich_from_dominance(*alpha, *n, *u)?),
            BoundRequest::RandomFlip { alpha, n, epsilon, k } => json!(random_flip_sandwich(*alpha, *n, *epsilon, *k)?),
            BoundRequest::MarginalTv { p_clean, p_noisy } => json!(class_marginal_tv_term(p_clean, p_noisy)?),
            BoundRequest::TvAlpha { alpha, n, epsilon } => json!(tv_adjusted_alpha(*alpha, *n, *epsilon)?),
            BoundRequest::TvUpper { alpha, n, xi } => json!(tv_coverage_upper(*alpha, *n, *xi)?),
            BoundRequest::PrefixMass { p_clean, p_noisy } => json!(prefix_mass_check(p_clean, p_noisy)?),
            BoundRequest::RankPreservation { p_clean, p_noisy } => json!(rank_preservation_check(p_clean, p_noisy)?),
            BoundRequest::TowardsUniform { p_clean, p_noisy } => json!(towards_uniform_check(p_clean, p_noisy)?),
            BoundRequest::ConfusionCondition { transition, clean_cdfs, noisy_cdfs } => {
                let t = TransitionMatrix::new(transition.clone())?;
                json!(confusion_condition_check(&t, clean_cdfs, noisy_cdfs)?)
            }
            BoundRequest::Taylor { alpha, q, big_q, var_z } => json!(taylor_risk_bounds(*alpha, *q, *big_q, *var_z)?),
            BoundRequest::Curvature { c, d, a, b } => {
                json!(second_derivative_extrema(*a, *b, SmoothLossParams::new(*c, *d)?)?)
            }
            BoundRequest::SmoothCoverage { risk, mean_q, var_z, d } => {
                json!(smooth_coverage_lower_bound(*risk, *mean_q, *var_z, *d)?)
            }
            BoundRequest::Lipschitz { noisy_coverage, mean_len_times_k, mean_abs_z } => {
                json!(lipschitz_coverage_bound(*noisy_coverage, *mean_len_times_k, *mean_abs_z)?)
            }
        };
        Ok(json!({ "inputs": inputs, "value": value }))
    }
}
