//! Synthetic classification trials with the oracle model.

use serde_json::json;

use super::config::{BoundKind, ExperimentConfig, ModelSpec};
use super::report::{BoundEval, TrialReport, TrialStatus};
use crate::adversarial::{most_frequent_confusion, optimal_adversarial, wrong_to_right};
use crate::bounds::{
    class_marginal_tv_term, dkw_tolerance, dominance_check, prefix_mass_check, random_flip_sandwich,
    rank_preservation_check, sandwich_from_dominance, towards_uniform_check, tv_coverage_upper,
};
use crate::calibrate::{build_set_classification, conformal_quantile, ConformalThreshold};
use crate::error::{Error, Result};
use crate::noise::{apply_confusion, disagreement, Attack, NoiseKind, RareToFrequentPlan, TransitionMatrix};
use crate::rng::trial_rng;
use crate::scores::{class_score, ClassProbs, ScoreKind};
use crate::synth::ClsModel;

struct Evaluated {
    coverage_clean: f64,
    coverage_noisy: Option<f64>,
    size: f64,
}

fn evaluate(
    probs: &[ClassProbs],
    us: &[f64],
    clean: &[usize],
    noisy: Option<&[usize]>,
    thr: &ConformalThreshold,
    kind: ScoreKind,
) -> Result<Evaluated> {
    let (mut cc, mut cn, mut size) = (0usize, 0usize, 0usize);
    for (i, (p, &u)) in probs.iter().zip(us).enumerate() {
        let set = build_set_classification(p, thr, kind, u)?;
        size += set.len();
        cc += set.contains(&clean[i]) as usize;
        if let Some(n) = noisy {
            cn += set.contains(&n[i]) as usize;
        }
    }
    let m = probs.len() as f64;
    Ok(Evaluated { coverage_clean: cc as f64 / m, coverage_noisy: noisy.map(|_| cn as f64 / m), size: size as f64 / m })
}

fn marginals(labels: &[usize], k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k];
    for &y in labels {
        m[y] += 1.0 / labels.len() as f64;
    }
    m
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn mean_probs(ps: &[ClassProbs], k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k];
    for p in ps {
        for (a, v) in m.iter_mut().zip(p.as_slice()) {
            *a += v / ps.len() as f64;
        }
    }
    m
}

pub(super) fn trial(cfg: &ExperimentConfig, model: &ClsModel, t: usize) -> Result<Vec<TrialReport>> {
    let mut rng = trial_rng(cfg.seed, t);
    let kind = cfg.score.ok_or_else(|| Error::Config("classification needs a score".into()))?;
    let k = model.k;
    let noise = cfg.noise.as_ref();
    let noise_kind = noise.map(|n| n.kind);
    let attack = noise.and_then(|n| n.attack).filter(|_| noise_kind == Some(NoiseKind::Adversarial));
    let eps = noise.map_or(0.0, |n| n.epsilon);

    let needs_train = noise_kind == Some(NoiseKind::RareToFrequent) || attack == Some(Attack::Mfc);
    let train = if needs_train { Some(model.gen_classification(cfg.n_train, &mut rng)?) } else { None };
    let cal = model.gen_classification(cfg.n_cal, &mut rng)?;
    let test = model.gen_classification(cfg.n_test, &mut rng)?;
    let y_cal = cal.class_labels()?.to_vec();
    let y_test = test.class_labels()?.to_vec();

    let channel: Option<TransitionMatrix> = match noise_kind {
        Some(NoiseKind::Flip) => Some(TransitionMatrix::flip(k, eps)),
        Some(NoiseKind::UniformFlip) => Some(TransitionMatrix::uniform_flip(k, eps)),
        Some(NoiseKind::Confusion) => {
            let rows = noise.and_then(|n| n.transition.clone()).ok_or_else(|| Error::Config("confusion noise needs a transition".into()))?;
            let t = TransitionMatrix::new(rows)?;
            if t.k() != k {
                return Err(Error::Config(format!("transition has {} classes, model has {k}", t.k())));
            }
            Some(t)
        }
        Some(NoiseKind::RareToFrequent) => {
            let train = train.as_ref().expect("train set drawn for rare-to-frequent");
            Some(RareToFrequentPlan::new(&marginals(train.class_labels()?, k), eps)?.channel())
        }
        Some(NoiseKind::Adversarial) | None => None,
        Some(other) => return Err(Error::Config(format!("{other:?} noise does not apply to class labels"))),
    };

    let clean_p = |d: &crate::synth::LabeledDataset| -> Vec<ClassProbs> { d.rows().map(|x| model.oracle_clean_probs(x)).collect() };
    let cal_clean = clean_p(&cal);
    let test_clean = clean_p(&test);
    let push = |ps: &[ClassProbs], t: &TransitionMatrix| -> Vec<ClassProbs> {
        ps.iter().map(|p| ClassProbs::new_unchecked(t.push(p.as_slice()))).collect()
    };
    let cal_noisy_p = channel.as_ref().map(|t| push(&cal_clean, t));
    let test_noisy_p = channel.as_ref().map(|t| push(&test_clean, t));
    let (cal_model, test_model) = match (cfg.model, &cal_noisy_p, &test_noisy_p) {
        (ModelSpec::Oracle, Some(a), Some(b)) => (a, b),
        (ModelSpec::Oracle | ModelSpec::CleanOracle, _, _) => (&cal_clean, &test_clean),
        (m, _, _) => return Err(Error::Config(format!("{m:?} model does not apply to classification"))),
    };

    let u_cal: Vec<f64> = (0..cal.n()).map(|_| rand::Rng::random(&mut rng)).collect();
    let u_test: Vec<f64> = (0..test.n()).map(|_| rand::Rng::random(&mut rng)).collect();

    // Channel noise is applied to both splits; attacks only touch calibration.
    let (noisy_cal_common, noisy_test) = match &channel {
        Some(ch) => {
            let a = y_cal.iter().map(|&y| apply_confusion(y, ch, &mut rng)).collect::<Result<Vec<_>>>()?;
            let b = y_test.iter().map(|&y| apply_confusion(y, ch, &mut rng)).collect::<Result<Vec<_>>>()?;
            (Some(a), Some(b))
        }
        None if attack.is_none() => (Some(y_cal.clone()), Some(y_test.clone())),
        None => (None, None),
    };
    let mut warnings = Vec::new();
    let attacked = match attack {
        Some(Attack::W2r) => {
            let preds: Vec<usize> = cal_model.iter().map(ClassProbs::argmax).collect();
            let out = wrong_to_right(&y_cal, &preds, eps, &mut rng)?;
            if out.shortfall {
                warnings.push(format!("wrong-to-right achieved rate {} below {eps}", out.achieved_rate));
            }
            Some(out.labels)
        }
        Some(Attack::Mfc) => {
            let train = train.as_ref().expect("train set drawn for mfc");
            let mut counts = vec![vec![0.0; k]; k];
            for (x, &y) in train.rows().zip(train.class_labels()?) {
                counts[y][model.oracle_clean_probs(x).argmax()] += 1.0;
            }
            let out = most_frequent_confusion(&y_cal, &counts, eps, &mut rng)?;
            if out.shortfall {
                warnings.push(format!("most-frequent-confusion achieved rate {} below {eps}", out.achieved_rate));
            }
            Some(out.labels)
        }
        Some(Attack::Prop3) => return Err(Error::Config("the prop3 attack runs in the discrete task".into())),
        Some(Attack::Optimal) | None => None,
    };
    let score_matrix = if attack == Some(Attack::Optimal) {
        Some(
            cal_model
                .iter()
                .zip(&u_cal)
                .map(|(p, &u)| (0..k).map(|y| class_score(kind, p, y, u)).collect::<Result<Vec<f64>>>())
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let scores_of = |labels: &[usize]| -> Result<Vec<f64>> {
        cal_model.iter().zip(labels).zip(&u_cal).map(|((p, &y), &u)| class_score(kind, p, y, u)).collect()
    };
    let clean_scores = scores_of(&y_cal)?;
    let mut out = Vec::new();
    for alpha in cfg.alphas() {
        let mut r = TrialReport::new(t, alpha);
        r.warnings = warnings.clone();
        let noisy_cal = match (&score_matrix, &attacked, &noisy_cal_common) {
            (Some(m), _, _) => {
                let max_swaps = (eps * cal.n() as f64).round() as usize;
                optimal_adversarial(m, &y_cal, alpha, max_swaps)?.labels
            }
            (None, Some(l), _) => l.clone(),
            (None, None, Some(l)) => l.clone(),
            (None, None, None) => unreachable!("labels exist for every noise branch"),
        };
        r.noise_rate = Some(disagreement(&y_cal, &noisy_cal));
        let noisy_scores = scores_of(&noisy_cal)?;
        let thr = conformal_quantile(&noisy_scores, alpha)?;
        let ev = evaluate(test_model, &u_test, &y_test, noisy_test.as_deref(), &thr, kind)?;
        let base_thr = conformal_quantile(&clean_scores, alpha)?;
        let base = evaluate(test_model, &u_test, &y_test, None, &base_thr, kind)?;
        r.coverage_clean = Some(ev.coverage_clean);
        r.coverage_noisy = ev.coverage_noisy;
        r.risk_clean = Some(1.0 - ev.coverage_clean);
        r.risk_noisy = ev.coverage_noisy.map(|c| 1.0 - c);
        r.baseline_coverage = Some(base.coverage_clean);
        r.size = Some(ev.size);
        r.threshold = Some(thr.qhat);

        let n = cal.n();
        for b in &cfg.bounds {
            let not_applicable = |r: &mut TrialReport| r.warnings.push(format!("{b:?} bound does not apply to this noise model"));
            match b {
                BoundKind::RandomFlip => match noise_kind {
                    Some(NoiseKind::Flip | NoiseKind::UniformFlip) => {
                        let s = random_flip_sandwich(alpha, n, eps, k)?;
                        r.bounds.push(BoundEval::new("random-flip-upper", s.upper, &json!({"epsilon": eps, "k": k, "n": n, "sandwich": s}))?);
                    }
                    _ => not_applicable(&mut r),
                },
                BoundKind::Dominance | BoundKind::Sandwich => {
                    let tol = dkw_tolerance(n, n, 0.05);
                    let d = dominance_check(&clean_scores, &noisy_scores, tol)?;
                    if *b == BoundKind::Dominance {
                        r.bounds.push(BoundEval::new("dominance", if d.holds { 1.0 } else { 0.0 }, &json!({"tol": tol, "check": d}))?);
                    } else {
                        let s = sandwich_from_dominance(alpha, n, d.max_gap)?;
                        r.bounds.push(BoundEval::new("sandwich-upper", s.upper, &json!({"u": d.max_gap, "sandwich": s}))?);
                    }
                }
                BoundKind::MarginalTv | BoundKind::ConditionalTv => match (&channel, &test_noisy_p) {
                    (Some(ch), Some(tn)) => {
                        let (name, xi) = if *b == BoundKind::MarginalTv {
                            let pc = mean_probs(&test_clean, k);
                            ("marginal-tv-upper", class_marginal_tv_term(&pc, &ch.push(&pc))?)
                        } else {
                            let xi = test_clean.iter().zip(tn).map(|(a, b)| tv(a.as_slice(), b.as_slice())).sum::<f64>() / test_clean.len() as f64;
                            ("conditional-tv-upper", xi)
                        };
                        let v = tv_coverage_upper(alpha, n, xi)?;
                        r.bounds.push(BoundEval::new(name, v, &json!({"alpha": alpha, "n": n, "xi": xi}))?);
                    }
                    _ => not_applicable(&mut r),
                },
                BoundKind::PrefixMass | BoundKind::RankPreservation | BoundKind::TowardsUniform => match &test_noisy_p {
                    Some(tn) => {
                        let check: fn(&[f64], &[f64]) -> Result<bool> = match b {
                            BoundKind::PrefixMass => prefix_mass_check,
                            BoundKind::RankPreservation => rank_preservation_check,
                            _ => towards_uniform_check,
                        };
                        let mut pass = 0usize;
                        for (a, bb) in test_clean.iter().zip(tn) {
                            pass += check(a.as_slice(), bb.as_slice())? as usize;
                        }
                        let frac = pass as f64 / test_clean.len() as f64;
                        r.bounds.push(BoundEval::new(b.names()[0], frac, &json!({"points": test_clean.len(), "passing": pass}))?);
                    }
                    None => not_applicable(&mut r),
                },
                _ => not_applicable(&mut r),
            }
        }
        r.status = TrialStatus::Ok;
        out.push(r);
    }
    Ok(out)
}
