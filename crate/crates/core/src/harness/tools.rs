//! Dataset dumps and stand-alone label attacks for the command line.

use rand::Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, GeneratorSpec};
use crate::adversarial::{most_frequent_confusion, optimal_adversarial, wrong_to_right};
use crate::error::{Error, Result};
use crate::noise::{disagreement, Attack, NoiseKind};
use crate::rng::{stream_rng, trial_rng, RUN_STREAM};
use crate::scores::{class_score, ClassProbs};
use crate::synth::{gen_bimodal_adversarial, gen_regression, ClsModel, LabeledDataset};

/// Draws `n` clean samples from the configured generator on the RNG stream
/// of `trial`.
pub fn generate_dataset(cfg: &ExperimentConfig, n: usize, trial: usize) -> Result<LabeledDataset> {
    let mut rng = trial_rng(cfg.seed, trial);
    match &cfg.generator {
        GeneratorSpec::Classification(spec) => {
            ClsModel::new(spec, &mut stream_rng(cfg.seed, RUN_STREAM))?.gen_classification(n, &mut rng)
        }
        GeneratorSpec::Regression(spec) => gen_regression(n, spec, &mut rng),
        GeneratorSpec::Bimodal(spec) => gen_bimodal_adversarial(n, spec, &mut rng),
        g => Err(Error::Config(format!("{g:?} has no tabular dataset form"))),
    }
}

/// Calibration split before and after an attack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackDump {
    #[serde(skip)]
    pub calibration: LabeledDataset,
    pub noisy_labels: Vec<usize>,
    pub attack: Attack,
    pub requested_rate: f64,
    pub achieved_rate: f64,
    pub shortfall: bool,
    /// Threshold after each swap (optimal attack only).
    pub qhat_trajectory: Option<Vec<f64>>,
}

/// Applies the configured classification attack to a fresh calibration
/// split scored by the clean oracle, at the first configured α.
pub fn attack_calibration(cfg: &ExperimentConfig, trial: usize) -> Result<AttackDump> {
    let GeneratorSpec::Classification(spec) = &cfg.generator else {
        return Err(Error::Config("attacks need the classification generator".into()));
    };
    let noise = cfg.noise.as_ref().filter(|n| n.kind == NoiseKind::Adversarial);
    let (attack, eps) = match noise.and_then(|n| n.attack.map(|a| (a, n.epsilon))) {
        Some(v) => v,
        None => return Err(Error::Config("attack needs noise.kind = adversarial with an attack".into())),
    };
    let kind = cfg.score.ok_or_else(|| Error::Config("attack needs a classification score".into()))?;
    let model = ClsModel::new(spec, &mut stream_rng(cfg.seed, RUN_STREAM))?;
    let mut rng = trial_rng(cfg.seed, trial);
    let train = if attack == Attack::Mfc { Some(model.gen_classification(cfg.n_train, &mut rng)?) } else { None };
    let cal = model.gen_classification(cfg.n_cal, &mut rng)?;
    let labels = cal.class_labels()?.to_vec();
    let probs: Vec<ClassProbs> = cal.rows().map(|x| model.oracle_clean_probs(x)).collect();
    let alpha = cfg.alphas()[0];
    let (noisy, shortfall, traj) = match attack {
        Attack::W2r => {
            let preds: Vec<usize> = probs.iter().map(ClassProbs::argmax).collect();
            let o = wrong_to_right(&labels, &preds, eps, &mut rng)?;
            (o.labels, o.shortfall, None)
        }
        Attack::Mfc => {
            let train = train.expect("drawn above");
            let mut counts = vec![vec![0.0; model.k]; model.k];
            for (x, &y) in train.rows().zip(train.class_labels()?) {
                counts[y][model.oracle_clean_probs(x).argmax()] += 1.0;
            }
            let o = most_frequent_confusion(&labels, &counts, eps, &mut rng)?;
            (o.labels, o.shortfall, None)
        }
        Attack::Optimal => {
            let us: Vec<f64> = (0..cal.n()).map(|_| rng.random()).collect();
            let scores = probs
                .iter()
                .zip(&us)
                .map(|(p, &u)| (0..model.k).map(|y| class_score(kind, p, y, u)).collect::<Result<Vec<f64>>>())
                .collect::<Result<Vec<_>>>()?;
            let budget = (eps * cal.n() as f64).round() as usize;
            let o = optimal_adversarial(&scores, &labels, alpha, budget)?;
            (o.labels, o.swaps < budget, Some(o.qhat_trajectory))
        }
        Attack::Prop3 => return Err(Error::Config("the prop3 attack runs through simulate with the discrete task".into())),
    };
    Ok(AttackDump {
        achieved_rate: disagreement(&labels, &noisy),
        calibration: cal,
        noisy_labels: noisy,
        attack,
        requested_rate: eps,
        shortfall,
        qhat_trajectory: traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(attack: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"task": "classification", "generator": {{"kind": "classification", "k": 5, "d": 8}}, "score": "hps",
                "noise": {{"kind": "adversarial", "attack": "{attack}", "epsilon": 0.1}}, "alpha": 0.1,
                "n_train": 300, "n_cal": 200, "trials": 1, "seed": 3}}"#
        ))
        .unwrap()
    }

    #[test]
    fn attacks_respect_budget() {
        for a in ["w2r", "mfc", "optimal"] {
            let d = attack_calibration(&cfg(a), 0).unwrap();
            assert!(d.achieved_rate <= 0.1 + 1e-12, "{a}");
            assert_eq!(d.noisy_labels.len(), 200);
        }
        let t = attack_calibration(&cfg("optimal"), 0).unwrap().qhat_trajectory.unwrap();
        assert!(t.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn dataset_dump_is_seeded() {
        let c = cfg("w2r");
        assert_eq!(generate_dataset(&c, 10, 0).unwrap(), generate_dataset(&c, 10, 0).unwrap());
        assert_ne!(generate_dataset(&c, 10, 0).unwrap(), generate_dataset(&c, 10, 1).unwrap());
    }
}
