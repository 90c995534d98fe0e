//! Regression trials: conformal intervals under response noise, and smooth
//! miscoverage risk control with its Taylor and coverage bounds.

use serde_json::json;

use super::config::{BoundKind, ExperimentConfig, GeneratorSpec, LambdaGrid, ModelSpec};
use super::report::{BoundEval, TrialReport, TrialStatus};
use crate::bounds::{dkw_tolerance, dominance_check, mean_curvature, sandwich_from_dominance, smooth_coverage_lower_bound, taylor_risk_bounds};
use crate::calibrate::{build_interval, conformal_quantile, crc_threshold, Interval};
use crate::error::{Error, Result};
use crate::losses::{smooth_miscoverage_param, SmoothLossParams};
use crate::noise::{apply_additive, apply_contractive, apply_dispersive, AdditiveDist, NoiseKind, NoiseSpec};
use crate::rng::{trial_rng, SimRng};
use crate::scores::{interval_score, IntervalPred};
use crate::synth::{fit_linear_mean, fit_linear_quantile, gen_bimodal_adversarial, gen_regression, LabeledDataset, Responses};

fn generate(cfg: &ExperimentConfig, n: usize, rng: &mut SimRng) -> Result<LabeledDataset> {
    match &cfg.generator {
        GeneratorSpec::Regression(s) => gen_regression(n, s, rng),
        GeneratorSpec::Bimodal(s) => gen_bimodal_adversarial(n, s, rng),
        g => Err(Error::Config(format!("{g:?} is not a regression generator"))),
    }
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Additive noise scale for this trial: `√(ratio·Var(Y_train))` when a
/// variance ratio is configured, else the configured `c`.
fn noise_scale(cfg: &ExperimentConfig, train_y: &[f64]) -> f64 {
    match (cfg.noise_var_ratio, &cfg.noise) {
        (Some(r), _) => (r * variance(train_y)).sqrt(),
        (None, Some(n)) => n.c,
        (None, None) => 0.0,
    }
}

fn corrupt(noise: Option<&NoiseSpec>, c: f64, y: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
    match noise.map(|n| n.kind) {
        None => Ok(y.to_vec()),
        Some(NoiseKind::Additive) => {
            let dist = noise.and_then(|n| n.additive_dist).unwrap_or(AdditiveDist::Gauss);
            Ok(y.iter().map(|&v| apply_additive(v, dist, c, rng)).collect())
        }
        Some(NoiseKind::Contractive) => apply_contractive(y, rng),
        Some(NoiseKind::Dispersive) => apply_dispersive(y, rng),
        Some(k) => Err(Error::Config(format!("{k:?} noise does not apply to scalar responses"))),
    }
}

fn with_responses(d: &LabeledDataset, y: Vec<f64>) -> Result<LabeledDataset> {
    LabeledDataset::new(d.d, d.x.clone(), Responses::Scalar(y))
}

/// Fitted base predictor, evaluated row by row.
enum Fitted {
    Quantile(crate::synth::LinearPredictor, crate::synth::LinearPredictor),
    Mean { mean: crate::synth::LinearPredictor, spread: crate::synth::LinearPredictor, floor: f64 },
}

impl Fitted {
    fn fit(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<Self> {
        match cfg.model {
            ModelSpec::LinearQuantile => {
                let [lo, hi] = cfg.quantile_levels;
                let a = fit_linear_quantile(train, lo, cfg.quantile_fit)?.predictor;
                let b = fit_linear_quantile(train, hi, cfg.quantile_fit)?.predictor;
                Ok(Fitted::Quantile(a, b))
            }
            ModelSpec::LinearMean => {
                let mean = fit_linear_mean(train)?;
                let y = train.scalar_responses()?;
                let abs: Vec<f64> = train.rows().zip(y).map(|(x, v)| (v - mean.predict(x)).abs()).collect();
                let floor = 0.05 * abs.iter().sum::<f64>() / abs.len() as f64 + 1e-12;
                let spread = fit_linear_mean(&with_responses(train, abs)?)?;
                Ok(Fitted::Mean { mean, spread, floor })
            }
            m => Err(Error::Config(format!("{m:?} model does not apply to regression"))),
        }
    }

    fn predict(&self, x: &[f64]) -> Result<IntervalPred> {
        match self {
            Fitted::Quantile(a, b) => Ok(IntervalPred::from_quantiles(a.predict(x), b.predict(x))),
            Fitted::Mean { mean, spread, floor } => IntervalPred::with_mean(mean.predict(x), spread.predict(x).max(*floor)),
        }
    }
}

struct Splits {
    cal: LabeledDataset,
    test: LabeledDataset,
    cal_noisy: Vec<f64>,
    test_noisy: Vec<f64>,
    model: Fitted,
    c: f64,
}

fn prepare(cfg: &ExperimentConfig, t: usize) -> Result<Splits> {
    let mut rng = trial_rng(cfg.seed, t);
    let train = generate(cfg, cfg.n_train, &mut rng)?;
    let cal = generate(cfg, cfg.n_cal, &mut rng)?;
    let test = generate(cfg, cfg.n_test, &mut rng)?;
    let train_y = train.scalar_responses()?.to_vec();
    let c = noise_scale(cfg, &train_y);
    let noise = cfg.noise.as_ref();
    let cal_noisy = corrupt(noise, c, cal.scalar_responses()?, &mut rng)?;
    let test_noisy = corrupt(noise, c, test.scalar_responses()?, &mut rng)?;
    let fit_on = if cfg.noisy_train { with_responses(&train, corrupt(noise, c, &train_y, &mut rng)?)? } else { train };
    let model = Fitted::fit(cfg, &fit_on)?;
    Ok(Splits { cal, test, cal_noisy, test_noisy, model, c })
}

fn coverage(ivs: &[Interval], y: &[f64]) -> f64 {
    ivs.iter().zip(y).filter(|(iv, v)| iv.contains(**v)).count() as f64 / y.len() as f64
}

pub(super) fn trial(cfg: &ExperimentConfig, t: usize) -> Result<Vec<TrialReport>> {
    let kind = cfg.score.ok_or_else(|| Error::Config("regression needs a score".into()))?;
    let s = prepare(cfg, t)?;
    let cal_pred: Vec<IntervalPred> = s.cal.rows().map(|x| s.model.predict(x)).collect::<Result<_>>()?;
    let test_pred: Vec<IntervalPred> = s.test.rows().map(|x| s.model.predict(x)).collect::<Result<_>>()?;
    let scores = |y: &[f64]| -> Result<Vec<f64>> { cal_pred.iter().zip(y).map(|(p, &v)| interval_score(kind, p, v)).collect() };
    let clean_y = s.cal.scalar_responses()?;
    let clean_scores = scores(clean_y)?;
    let noisy_scores = scores(&s.cal_noisy)?;
    let test_y = s.test.scalar_responses()?;
    let intervals = |thr| -> Result<Vec<Interval>> { test_pred.iter().map(|p| build_interval(p, &thr, kind)).collect() };

    let mut out = Vec::new();
    for alpha in cfg.alphas() {
        let mut r = TrialReport::new(t, alpha);
        let thr = conformal_quantile(&noisy_scores, alpha)?;
        let ivs = intervals(thr)?;
        let base = intervals(conformal_quantile(&clean_scores, alpha)?)?;
        let cc = coverage(&ivs, test_y);
        let cn = coverage(&ivs, &s.test_noisy);
        r.coverage_clean = Some(cc);
        r.coverage_noisy = Some(cn);
        r.risk_clean = Some(1.0 - cc);
        r.risk_noisy = Some(1.0 - cn);
        r.baseline_coverage = Some(coverage(&base, test_y));
        r.size = Some(ivs.iter().map(Interval::length).sum::<f64>() / ivs.len() as f64);
        r.threshold = Some(thr.qhat);
        for b in &cfg.bounds {
            match b {
                BoundKind::Dominance | BoundKind::Sandwich => {
                    let n = clean_scores.len();
                    let tol = dkw_tolerance(n, n, 0.05);
                    let d = dominance_check(&clean_scores, &noisy_scores, tol)?;
                    if *b == BoundKind::Dominance {
                        r.bounds.push(BoundEval::new("dominance", if d.holds { 1.0 } else { 0.0 }, &json!({"tol": tol, "check": d}))?);
                    } else {
                        let sw = sandwich_from_dominance(alpha, n, d.max_gap)?;
                        r.bounds.push(BoundEval::new("sandwich-upper", sw.upper, &json!({"u": d.max_gap, "sandwich": sw}))?);
                    }
                }
                other => r.warnings.push(format!("{other:?} bound does not apply to conformal regression")),
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// λ grid for multiplicative half-width scaling when none is configured.
pub fn default_scale_grid() -> LambdaGrid {
    LambdaGrid { lo: 0.05, hi: 10.0, points: 1000 }
}

/// `[m − λ·h, m + λ·h]` around the base interval's midpoint `m` and
/// half-width `h`.
fn scaled(p: &IntervalPred, lambda: f64) -> Interval {
    let m = 0.5 * (p.lo + p.hi);
    let h = (0.5 * (p.hi - p.lo)).max(1e-9);
    Interval { lo: m - lambda * h, hi: m + lambda * h }
}

fn smooth_losses(ivs: &[Interval], y: &[f64], p: SmoothLossParams) -> Result<Vec<f64>> {
    ivs.iter().zip(y).map(|(iv, &v)| smooth_miscoverage_param(v, iv.lo, iv.hi, p)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Risk control of the base smooth miscoverage (values in `[1, 2)`, so
/// `B = 2`) on noisy calibration responses, with the Taylor window for the
/// clean risk and the grid-searched smooth coverage bound.
pub(super) fn bounds_trial(cfg: &ExperimentConfig, t: usize) -> Result<Vec<TrialReport>> {
    let s = prepare(cfg, t)?;
    let dist = cfg.noise.as_ref().and_then(|n| n.additive_dist).unwrap_or(AdditiveDist::Gauss);
    if cfg.noise.is_some() && dist != AdditiveDist::Gauss {
        return Err(Error::Config("Taylor bounds need gaussian (finite-variance) noise".into()));
    }
    let var_z = if cfg.noise.is_some() { s.c * s.c } else { 0.0 };
    let grid = cfg.lambda_grid.clone().unwrap_or_else(default_scale_grid).values();
    let cal_pred: Vec<IntervalPred> = s.cal.rows().map(|x| s.model.predict(x)).collect::<Result<_>>()?;
    let test_pred: Vec<IntervalPred> = s.test.rows().map(|x| s.model.predict(x)).collect::<Result<_>>()?;
    let n = cal_pred.len();
    let base = SmoothLossParams::BASE;
    let mut risk = vec![0.0; grid.len()];
    for (g, &l) in grid.iter().enumerate() {
        let ivs: Vec<Interval> = cal_pred.iter().map(|p| scaled(p, l)).collect();
        risk[g] = mean(&smooth_losses(&ivs, &s.cal_noisy, base)?);
    }
    let test_y = s.test.scalar_responses()?;
    let smooth_grid: Vec<SmoothLossParams> = cfg
        .smooth_grid
        .c
        .iter()
        .flat_map(|&c| cfg.smooth_grid.d.iter().map(move |&d| (c, d)))
        .map(|(c, d)| SmoothLossParams::new(c, d))
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for alpha in cfg.alphas() {
        let mut r = TrialReport::new(t, alpha);
        let thr = match crc_threshold(&risk, n, alpha, 2.0, &grid) {
            Ok(thr) => thr,
            Err(Error::Infeasible(m)) => {
                r.status = TrialStatus::Infeasible;
                r.warnings.push(m);
                out.push(r);
                continue;
            }
            Err(e) => return Err(e),
        };
        if thr.repaired {
            r.warnings.push("noisy smooth risk curve was not monotone".into());
        }
        let ivs: Vec<Interval> = test_pred.iter().map(|p| scaled(p, thr.lambda)).collect();
        let lc = smooth_losses(&ivs, test_y, base)?;
        let ln = smooth_losses(&ivs, &s.test_noisy, base)?;
        let rc = mean(&lc);
        let se = (lc.iter().map(|v| (v - rc).powi(2)).sum::<f64>() / (lc.len() - 1).max(1) as f64 / lc.len() as f64).sqrt();
        let cc = coverage(&ivs, test_y);
        r.coverage_clean = Some(cc);
        r.coverage_noisy = Some(coverage(&ivs, &s.test_noisy));
        r.risk_clean = Some(rc);
        r.risk_noisy = Some(mean(&ln));
        r.size = Some(ivs.iter().map(Interval::length).sum::<f64>() / ivs.len() as f64);
        r.threshold = Some(thr.lambda);
        for b in &cfg.bounds {
            match b {
                BoundKind::Taylor => {
                    let (q, big_q) = mean_curvature(&ivs, base)?;
                    let tb = taylor_risk_bounds(alpha, q, big_q, var_z)?;
                    let inputs = json!({"alpha": alpha, "mean_q": q, "mean_big_q": big_q, "var_z": var_z, "clean_risk_se": se});
                    r.bounds.push(BoundEval::new("taylor-lower", tb.lower, &inputs)?);
                    r.bounds.push(BoundEval::new("taylor-upper", tb.upper, &inputs)?);
                }
                BoundKind::SmoothCoverage => {
                    // Pick (c, d) by the bound's value on the calibration split,
                    // then evaluate the chosen bound on the test split.
                    let cal_ivs: Vec<Interval> = cal_pred.iter().map(|p| scaled(p, thr.lambda)).collect();
                    let mut best: Option<(SmoothLossParams, f64)> = None;
                    for &p in &smooth_grid {
                        let rk = mean(&smooth_losses(&cal_ivs, &s.cal_noisy, p)?);
                        let (q, _) = mean_curvature(&cal_ivs, p)?;
                        let v = smooth_coverage_lower_bound(rk, q, var_z, p.d)?;
                        if best.is_none_or(|b| v > b.1) {
                            best = Some((p, v));
                        }
                    }
                    let (p, cal_value) = best.ok_or_else(|| Error::Config("empty smooth grid".into()))?;
                    let rk = mean(&smooth_losses(&ivs, &s.test_noisy, p)?);
                    let (q, _) = mean_curvature(&ivs, p)?;
                    let v = smooth_coverage_lower_bound(rk, q, var_z, p.d)?;
                    let inputs = json!({"c": p.c, "d": p.d, "noisy_smooth_risk": rk, "mean_q": q, "var_z": var_z, "calibration_value": cal_value});
                    r.bounds.push(BoundEval::new("smooth-coverage", v, &inputs)?);
                }
                other => r.warnings.push(format!("{other:?} bound does not apply to smooth risk control")),
            }
        }
        out.push(r);
    }
    Ok(out)
}
