//! Experiment configuration: one JSON document, kebab-case enum values,
//! unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnr::MultiLabelScenario;
use crate::losses::LossKind;
use crate::noise::{Attack, NoiseKind, NoiseSpec};
use crate::scores::ScoreKind;
use crate::synth::{BimodalSpec, ClsGenSpec, QuantileFit, RegGenSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Classification,
    Regression,
    /// Smooth-loss risk control with Taylor and coverage bounds.
    RegressionBounds,
    MultiLabel,
    Segmentation,
    /// Finite label space with known marginals and channel.
    Discrete,
}

/// Discrete label law for the `discrete` task: `Y ~ p`, `X ~ Unif[0,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSpec {
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Classification(ClsGenSpec),
    Regression(RegGenSpec),
    Bimodal(BimodalSpec),
    Scenario { scenario: MultiLabelScenario },
    Discrete(DiscreteSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Exact conditional law; uses the noisy-label law when the channel is known.
    #[default]
    Oracle,
    /// Exact clean conditional law, ignoring the noise channel.
    CleanOracle,
    LinearQuantile,
    LinearMean,
}

/// Bound evaluations a run can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    RandomFlip,
    Sandwich,
    MarginalTv,
    ConditionalTv,
    Dominance,
    PrefixMass,
    RankPreservation,
    TowardsUniform,
    Taylor,
    SmoothCoverage,
    Lipschitz,
}

impl BoundKind {
    /// CSV column names this bound fills.
    pub fn names(self) -> &'static [&'static str] {
        match self {
            BoundKind::RandomFlip => &["random-flip-upper"],
            BoundKind::Sandwich => &["sandwich-upper"],
            BoundKind::MarginalTv => &["marginal-tv-upper"],
            BoundKind::ConditionalTv => &["conditional-tv-upper"],
            BoundKind::Dominance => &["dominance"],
            BoundKind::PrefixMass => &["prefix-mass"],
            BoundKind::RankPreservation => &["rank-preservation"],
            BoundKind::TowardsUniform => &["towards-uniform"],
            BoundKind::Taylor => &["taylor-lower", "taylor-upper"],
            BoundKind::SmoothCoverage => &["smooth-coverage"],
            BoundKind::Lipschitz => &["lipschitz"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    One(f64),
    Many(Vec<f64>),
}

impl AlphaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            AlphaSpec::One(a) => vec![*a],
            AlphaSpec::Many(v) => v.clone(),
        }
    }
}

/// Candidate λ values for risk control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl LambdaGrid {
    pub fn values(&self) -> Vec<f64> {
        let m = (self.points.max(2) - 1) as f64;
        (0..self.points.max(2)).map(|i| self.lo + (self.hi - self.lo) * i as f64 / m).collect()
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0, points: 1001 }
    }
}

/// `(c, d)` candidates for the parameterized smooth loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothGrid {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl Default for SmoothGrid {
    fn default() -> Self {
        Self { c: vec![0.5, 1.0, 2.0], d: vec![0.5, 1.0, 2.0, 4.0] }
    }
}

fn default_n_train() -> usize {
    2000
}
fn default_n_cal() -> usize {
    500
}
fn default_n_test() -> usize {
    2000
}
fn default_trials() -> usize {
    100
}
fn default_levels() -> [f64; 2] {
    [0.05, 0.95]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    pub alpha: AlphaSpec,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_cal")]
    pub n_cal: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub bounds: Vec<BoundKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<LambdaGrid>,
    #[serde(default)]
    pub smooth_grid: SmoothGrid,
    #[serde(default)]
    pub quantile_fit: QuantileFit,
    /// Quantile levels of the lower/upper base models.
    #[serde(default = "default_levels")]
    pub quantile_levels: [f64; 2],
    /// Corrupt training responses too (regression).
    #[serde(default)]
    pub noisy_train: bool,
    /// Sets additive noise scale to `√(ratio·Var(Y_train))` per trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_var_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.alpha.values()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n_cal == 0 || self.n_test == 0 {
            return bad("n_cal and n_test must be positive".into());
        }
        let alphas = self.alphas();
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) {
            return bad("alpha must be one or more positive levels".into());
        }
        if let Some(n) = &self.noise {
            n.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(g) = &self.lambda_grid {
            if !(g.hi > g.lo) || g.points < 2 {
                return bad(format!("invalid lambda grid {g:?}"));
            }
        }
        let [lo, hi] = self.quantile_levels;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!("quantile levels must satisfy 0 < lo < hi < 1, got {lo}, {hi}"));
        }
        let score = self.score;
        let noise_kind = self.noise.as_ref().map(|n| n.kind);
        match (self.task, &self.generator) {
            (TaskKind::Classification, GeneratorSpec::Classification(_)) => {
                if !score.is_some_and(ScoreKind::is_classification) {
                    return bad("classification needs score hps, aps or aps-deterministic".into());
                }
                if matches!(noise_kind, Some(NoiseKind::Additive | NoiseKind::Contractive | NoiseKind::Dispersive | NoiseKind::VectorFlip)) {
                    return bad("response noise does not apply to class labels".into());
                }
                if alphas.iter().any(|a| *a >= 1.0) {
                    return bad("alpha must lie in (0,1)".into());
                }
            }
            (TaskKind::Regression, GeneratorSpec::Regression(_) | GeneratorSpec::Bimodal(_)) => {
                match (self.model, score) {
                    (ModelSpec::LinearQuantile, Some(ScoreKind::Cqr)) | (ModelSpec::LinearMean, Some(ScoreKind::Rm)) => {}
                    _ => return bad("regression needs linear-quantile with cqr or linear-mean with rm".into()),
                }
                if !matches!(noise_kind, None | Some(NoiseKind::Additive | NoiseKind::Contractive | NoiseKind::Dispersive)) {
                    return bad("regression noise must be additive, contractive or dispersive".into());
                }
                if alphas.iter().any(|a| *a >= 1.0) {
                    return bad("alpha must lie in (0,1)".into());
                }
            }
            (TaskKind::RegressionBounds, GeneratorSpec::Regression(_) | GeneratorSpec::Bimodal(_)) => {
                if self.model != ModelSpec::LinearQuantile {
                    return bad("regression-bounds uses the linear-quantile model".into());
                }
                if !matches!(noise_kind, None | Some(NoiseKind::Additive)) {
                    return bad("regression-bounds needs additive noise".into());
                }
                if alphas.iter().any(|a| !(1.0..2.0).contains(a)) {
                    return bad("smooth-loss risk levels live in [1, 2)".into());
                }
            }
            (TaskKind::MultiLabel | TaskKind::Segmentation, GeneratorSpec::Scenario { scenario }) => {
                scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
                if alphas.iter().any(|a| *a >= 1.0) {
                    return bad("FNR levels must lie in (0,1)".into());
                }
            }
            (TaskKind::Discrete, GeneratorSpec::Discrete(d)) => {
                crate::scores::ClassProbs::new(d.p.clone()).map_err(|e| Error::Config(e.to_string()))?;
                match &self.noise {
                    Some(n) if n.kind == NoiseKind::Confusion => {}
                    Some(n) if n.kind == NoiseKind::Adversarial && n.attack == Some(Attack::Prop3) && n.transition.is_some() => {}
                    None => {}
                    _ => return bad("discrete task takes confusion noise or the prop3 attack with a transition".into()),
                }
            }
            (t, g) => return bad(format!("generator {g:?} does not fit task {t:?}")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "task": "classification",
        "generator": {"kind": "classification", "k": 10, "d": 100},
        "score": "hps",
        "noise": {"kind": "uniform-flip", "epsilon": 0.05},
        "alpha": 0.1,
        "trials": 5,
        "seed": 7
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.n_cal, 500);
        assert_eq!(c.model, ModelSpec::Oracle);
        assert_eq!(c.alphas(), vec![0.1]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_combinations() {
        let typo = BASE.replace("\"trials\"", "\"trails\"");
        assert!(matches!(ExperimentConfig::from_json(&typo), Err(Error::Config(_))));
        let no_seed = BASE.replace("\"seed\": 7", "\"jobs\": 2");
        assert!(ExperimentConfig::from_json(&no_seed).is_err());
        let wrong_score = BASE.replace("\"hps\"", "\"cqr\"");
        assert!(ExperimentConfig::from_json(&wrong_score).is_err());
        let zero = BASE.replace("\"trials\": 5", "\"trials\": 0");
        assert!(ExperimentConfig::from_json(&zero).is_err());
    }

    #[test]
    fn alpha_lists_and_grids() {
        let c = ExperimentConfig::from_json(&BASE.replace("\"alpha\": 0.1", "\"alpha\": [0.05, 0.1]")).unwrap();
        assert_eq!(c.alphas(), vec![0.05, 0.1]);
        let g = LambdaGrid { lo: 0.5, hi: 1.5, points: 3 }.values();
        assert_eq!(g, vec![0.5, 1.0, 1.5]);
    }
}
