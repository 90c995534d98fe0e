//! Split-conformal quantiles, conformal risk control thresholds, and the
//! set/interval constructors that invert a calibrated score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{class_score, ClassProbs, IntervalPred, ScoreKind};

/// `+∞` thresholds serialize as JSON `null`.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Calibrated conformal threshold; `qhat` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalThreshold {
    #[serde(with = "inf_as_null")]
    pub qhat: f64,
    pub alpha: f64,
    pub n: usize,
}

/// Rank `⌈(n+1)(1−α)⌉` used by the split-conformal quantile. The small
/// offset keeps values like `10·0.9` from rounding up to 10.000…1.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    (((n + 1) as f64) * (1.0 - alpha) - 1e-9).ceil().max(0.0) as usize
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// The `⌈(n+1)(1−α)⌉`-th smallest score, or `+∞` when that rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<ConformalThreshold> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::Domain("no calibration scores".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN calibration score".into()));
    }
    let n = scores.len();
    let rank = conformal_rank(n, alpha);
    let qhat = if rank > n {
        f64::INFINITY
    } else {
        let mut s = scores.to_vec();
        let (_, v, _) = s.select_nth_unstable_by(rank.max(1) - 1, f64::total_cmp);
        *v
    };
    Ok(ConformalThreshold { qhat, alpha, n })
}

/// Labels whose score is at most `qhat`. The same `u` is used for every
/// candidate label of one test point.
pub fn build_set_classification(p: &ClassProbs, thr: &ConformalThreshold, kind: ScoreKind, u: f64) -> Result<Vec<usize>> {
    if thr.qhat == f64::INFINITY {
        return Ok((0..p.k()).collect());
    }
    let mut set = Vec::new();
    for y in 0..p.k() {
        if class_score(kind, p, y, u)? <= thr.qhat {
            set.push(y);
        }
    }
    Ok(set)
}

/// Closed interval `[lo, hi]`; infinite endpoints allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

pub fn build_interval(pred: &IntervalPred, thr: &ConformalThreshold, kind: ScoreKind) -> Result<Interval> {
    let q = thr.qhat;
    if q == f64::INFINITY {
        return Ok(Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY });
    }
    match kind {
        ScoreKind::Cqr => Ok(Interval { lo: pred.lo - q, hi: pred.hi + q }),
        ScoreKind::Rm => {
            let (m, s) = pred
                .mean
                .zip(pred.scale)
                .ok_or_else(|| Error::Config("rm interval needs mean and scale".into()))?;
            Ok(Interval { lo: m - q * s, hi: m + q * s })
        }
        other => Err(Error::Config(format!("{other:?} is not a regression score"))),
    }
}

/// Calibrated risk-control threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskThreshold {
    pub lambda: f64,
    pub alpha: f64,
    pub b: f64,
    pub n: usize,
    pub grid_index: usize,
    /// Adjusted risk `(n·R̂(λ̂) + B)/(n+1)` at the chosen λ.
    pub adjusted_risk: f64,
    /// True when the empirical risk curve was not monotone and was replaced
    /// by its running-minimum envelope.
    pub repaired: bool,
}

/// `n` evenly spaced points on `[0, 1]`.
pub fn default_grid(n: usize) -> Vec<f64> {
    let m = (n.max(2) - 1) as f64;
    (0..n.max(2)).map(|i| i as f64 / m).collect()
}

/// Mean loss per grid point from an `n × G` loss table.
pub fn risk_curve(losses: &[Vec<f64>]) -> Result<Vec<f64>> {
    let g = losses.first().map(Vec::len).ok_or_else(|| Error::Domain("empty loss table".into()))?;
    let mut sum = vec![0.0; g];
    for (i, row) in losses.iter().enumerate() {
        if row.len() != g {
            return Err(Error::Domain(format!("loss row {i} has {} entries, expected {g}", row.len())));
        }
        for (s, l) in sum.iter_mut().zip(row) {
            *s += l;
        }
    }
    Ok(sum.into_iter().map(|s| s / losses.len() as f64).collect())
}

/// Smallest grid λ with `(n·R̂(λ) + B)/(n+1) ≤ α`. The grid must be
/// increasing and the empirical risk nonincreasing along it; a violating
/// curve is repaired with its running minimum and flagged.
pub fn crc_threshold(risk: &[f64], n: usize, alpha: f64, b: f64, grid: &[f64]) -> Result<RiskThreshold> {
    if risk.len() != grid.len() || grid.is_empty() {
        return Err(Error::Domain(format!("{} risks for {} grid points", risk.len(), grid.len())));
    }
    if n == 0 {
        return Err(Error::Domain("no calibration points".into()));
    }
    if !(alpha > 0.0) || !(b > 0.0) {
        return Err(Error::Domain(format!("need alpha > 0 and B > 0, got {alpha}, {b}")));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("lambda grid must be strictly increasing".into()));
    }
    if risk.iter().any(|r| r.is_nan() || *r > b + 1e-12) {
        return Err(Error::Validation(format!("empirical risk exceeds the loss bound B = {b}")));
    }
    let mut repaired = false;
    let mut env = Vec::with_capacity(risk.len());
    let mut run = f64::INFINITY;
    for &r in risk {
        if r > run + 1e-12 {
            repaired = true;
        }
        run = run.min(r);
        env.push(run);
    }
    if repaired {
        log::warn!("risk curve is not monotone in lambda; using its running minimum");
    }
    let nf = n as f64;
    let adjusted = |r: f64| (nf * r + b) / (nf + 1.0);
    match env.iter().position(|&r| adjusted(r) <= alpha) {
        Some(i) => Ok(RiskThreshold {
            lambda: grid[i],
            alpha,
            b,
            n,
            grid_index: i,
            adjusted_risk: adjusted(env[i]),
            repaired,
        }),
        None => Err(Error::Infeasible(format!(
            "no lambda reaches risk {alpha}; smallest adjusted risk is {}",
            adjusted(*env.last().expect("nonempty"))
        ))),
    }
}

/// `{k : score_k ≥ 1 − λ}`; grows with λ and keeps the top-scored labels.
pub fn fnr_set_from_lambda(scores: &[f64], lambda: f64) -> Vec<usize> {
    let t = 1.0 - lambda;
    scores.iter().enumerate().filter(|(_, &s)| s >= t).map(|(k, _)| k).collect()
}

/// Prediction sets that can be asked whether they contain a label.
pub trait Covers<L: ?Sized> {
    fn covers(&self, y: &L) -> bool;
}

impl Covers<usize> for Vec<usize> {
    fn covers(&self, y: &usize) -> bool {
        self.contains(y)
    }
}

impl Covers<f64> for Interval {
    fn covers(&self, y: &f64) -> bool {
        self.contains(*y)
    }
}

pub fn empirical_coverage<S: Covers<L>, L>(sets: &[S], labels: &[L]) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(Error::Domain(format!("{} sets for {} labels", sets.len(), labels.len())));
    }
    if sets.is_empty() {
        return Err(Error::Domain("no test points".into()));
    }
    let hits = sets.iter().zip(labels).filter(|(s, y)| s.covers(y)).count();
    Ok(hits as f64 / sets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn quantile_examples() {
        assert_eq!(conformal_quantile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap().qhat, 3.0);
        let nine: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(conformal_quantile(&nine, 0.1).unwrap().qhat, 9.0);
        assert_eq!(conformal_quantile(&[1.0, 2.0, 3.0], 0.1).unwrap().qhat, f64::INFINITY);
        assert!(matches!(conformal_quantile(&[], 0.1), Err(Error::Domain(_))));
        assert!(matches!(conformal_quantile(&[1.0, f64::NAN], 0.1), Err(Error::Validation(_))));
    }

    #[test]
    fn infinite_threshold_round_trips_as_null() {
        let t = ConformalThreshold { qhat: f64::INFINITY, alpha: 0.1, n: 3 };
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("null"));
        assert_eq!(serde_json::from_str::<ConformalThreshold>(&s).unwrap(), t);
    }

    #[test]
    fn set_examples() {
        let inf = ConformalThreshold { qhat: f64::INFINITY, alpha: 0.1, n: 5 };
        let p = ClassProbs::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert_eq!(build_set_classification(&p, &inf, ScoreKind::Hps, 0.0).unwrap(), vec![0, 1, 2]);
        let half = ConformalThreshold { qhat: 0.5, ..inf };
        assert_eq!(build_set_classification(&p, &half, ScoreKind::Hps, 0.0).unwrap(), vec![0]);
        let q = ClassProbs::new(vec![0.5, 0.3, 0.2]).unwrap();
        let t = ConformalThreshold { qhat: 0.8, ..inf };
        assert_eq!(build_set_classification(&q, &t, ScoreKind::Aps, 1.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn interval_examples() {
        let thr = |q| ConformalThreshold { qhat: q, alpha: 0.1, n: 10 };
        let pred = IntervalPred::new(1.0, 3.0).unwrap();
        assert_eq!(build_interval(&pred, &thr(0.0), ScoreKind::Cqr).unwrap(), Interval { lo: 1.0, hi: 3.0 });
        assert_eq!(build_interval(&pred, &thr(0.5), ScoreKind::Cqr).unwrap(), Interval { lo: 0.5, hi: 3.5 });
        let rm = IntervalPred::with_mean(2.0, 2.0).unwrap();
        assert_eq!(build_interval(&rm, &thr(1.5), ScoreKind::Rm).unwrap(), Interval { lo: -1.0, hi: 5.0 });
        let all = build_interval(&pred, &thr(f64::INFINITY), ScoreKind::Cqr).unwrap();
        assert!(all.contains(-1e300) && all.contains(1e300));
    }

    #[test]
    fn crc_examples() {
        let grid = default_grid(1001);
        assert_eq!(grid.len(), 1001);
        let zero = vec![0.0; grid.len()];
        assert_eq!(crc_threshold(&zero, 50, 0.1, 1.0, &grid).unwrap().lambda, 0.0);

        // Two candidates: (3·1+1)/4 = 1 > 0.5 and (3·0+1)/4 = 0.25 ≤ 0.5.
        let t = crc_threshold(&[1.0, 0.0], 3, 0.5, 1.0, &[0.0, 1.0]).unwrap();
        assert_eq!(t.lambda, 1.0);
        assert!((t.adjusted_risk - 0.25).abs() < 1e-12);

        let ones = vec![1.0; grid.len()];
        assert_eq!(crc_threshold(&ones, 10, 1.0, 1.0, &grid).unwrap().grid_index, 0);
        assert!(matches!(crc_threshold(&ones, 10, 0.5, 1.0, &grid), Err(Error::Infeasible(_))));
    }

    #[test]
    fn crc_repairs_non_monotone_curve() {
        let t = crc_threshold(&[0.9, 0.2, 0.6, 0.1], 100, 0.3, 1.0, &[0.0, 0.1, 0.2, 0.3]).unwrap();
        assert!(t.repaired);
        assert_eq!(t.grid_index, 1);
    }

    #[test]
    fn fnr_set_examples() {
        let s = [0.0, 0.2, 1.0, 0.6];
        let all = fnr_set_from_lambda(&s, 1.0);
        assert!([1, 2, 3].iter().all(|k| all.contains(k)));
        assert_eq!(fnr_set_from_lambda(&s, 0.0), vec![2]);
    }

    #[test]
    fn coverage_examples() {
        let sets = vec![vec![0, 1], vec![2], vec![1], vec![0]];
        assert_eq!(empirical_coverage(&sets, &[0, 2, 1, 0]).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&sets, &[2, 0, 0, 1]).unwrap(), 0.0);
        assert_eq!(empirical_coverage(&sets, &[1, 2, 0, 1]).unwrap(), 0.5);
        assert!(empirical_coverage(&sets, &[0]).is_err());
    }

    #[test]
    fn exchangeable_coverage_over_many_trials() {
        // Uniform scores: coverage given q̂ is q̂ itself, so E = rank/(n+1).
        let (n, alpha, trials) = (40, 0.1, 4000);
        let mut rng = stream_rng(1, 1);
        let cov: Vec<f64> = (0..trials)
            .map(|_| {
                let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                conformal_quantile(&s, alpha).unwrap().qhat.min(1.0)
            })
            .collect();
        let m = cov.iter().sum::<f64>() / trials as f64;
        let sd = (cov.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
        let se = sd / (trials as f64).sqrt();
        assert!(m >= 1.0 - alpha - 3.0 * se);
        assert!(m <= 1.0 - alpha + 1.0 / (n + 1) as f64 + 3.0 * se);
    }

    fn probs() -> impl Strategy<Value = ClassProbs> {
        prop::collection::vec(0.01f64..1.0, 2..10).prop_map(|w| {
            let s: f64 = w.iter().sum();
            ClassProbs::new_unchecked(w.into_iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn raising_a_score_never_lowers_qhat(
            s in prop::collection::vec(-5.0f64..5.0, 1..60),
            idx in 0usize..60,
            bump in 0.0f64..3.0,
            alpha in 0.01f64..0.99,
        ) {
            let i = idx % s.len();
            let mut t = s.clone();
            t[i] += bump;
            prop_assert!(conformal_quantile(&t, alpha).unwrap().qhat >= conformal_quantile(&s, alpha).unwrap().qhat);
        }

        #[test]
        fn hps_sets_are_superlevel_sets(p in probs(), q in 0.0f64..1.0) {
            let thr = ConformalThreshold { qhat: q, alpha: 0.1, n: 10 };
            let set = build_set_classification(&p, &thr, ScoreKind::Hps, 0.0).unwrap();
            let v = p.as_slice();
            for &m in &set {
                for k in 0..v.len() {
                    if v[k] >= v[m] {
                        prop_assert!(set.contains(&k));
                    }
                }
            }
        }

        #[test]
        fn crc_lambda_nonincreasing_in_alpha(
            mut r in prop::collection::vec(0.0f64..1.0, 5..40),
            n in 5usize..200,
            a1 in 0.05f64..1.0,
            a2 in 0.05f64..1.0,
        ) {
            r.sort_by(|a, b| b.total_cmp(a));
            let grid = default_grid(r.len());
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            if let Ok(t_lo) = crc_threshold(&r, n, lo, 1.0, &grid) {
                let t_hi = crc_threshold(&r, n, hi, 1.0, &grid).unwrap();
                prop_assert!(t_hi.lambda <= t_lo.lambda);
            }
        }

        #[test]
        fn fnr_sets_nest(s in prop::collection::vec(0.0f64..1.0, 1..20), l1 in 0.0f64..1.0, l2 in 0.0f64..1.0) {
            let (a, b) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
            let small = fnr_set_from_lambda(&s, a);
            let big = fnr_set_from_lambda(&s, b);
            prop_assert!(small.iter().all(|k| big.contains(k)));
        }
    }
}
