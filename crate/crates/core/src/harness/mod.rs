//! Experiment orchestration: config in, per-trial reports and an aggregate
//! summary out.
//!
//! Every trial draws from its own RNG stream keyed by the trial index, so
//! results do not depend on scheduling. Run-level randomness (such as the
//! classification weights) comes from stream 0.

pub mod config;
pub mod online;
pub mod report;
pub mod tools;

mod classification;
mod discrete;
mod regression;

use std::path::Path;

pub use config::{AlphaSpec, BoundKind, DiscreteSpec, ExperimentConfig, GeneratorSpec, LambdaGrid, ModelSpec, SmoothGrid, TaskKind};
pub use discrete::DiscreteInstance;
pub use online::{run_online_streams, summarize_online, write_steps_csv, OnlineSettings, OnlineSummary};
pub use regression::default_scale_grid;
pub use tools::{attack_calibration, generate_dataset, AttackDump};
pub use report::{
    emit_csv, emit_json, read_reports_csv, summarize, write_reports_csv, AlphaSummary, BoundEval, Stats, Summary, TrialReport,
    TrialStatus,
};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fnr::{simulate_fnr_trials, FnrSettings};
use crate::rng::{stream_rng, RUN_STREAM};
use crate::synth::ClsModel;

/// Fraction of failed trials above which a run is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub reports: Vec<TrialReport>,
    pub bound_names: Vec<String>,
    pub summary: Summary,
}

impl ExperimentOutput {
    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_reports_csv(&self.reports, &self.bound_names, &mut buf)?;
        Ok(buf)
    }

    /// Writes `trials.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        emit_csv(&self.reports, &self.bound_names, &dir.join("trials.csv"))?;
        emit_json(&self.summary, &dir.join("summary.json"))
    }
}

fn bound_names(cfg: &ExperimentConfig) -> Vec<String> {
    let mut v: Vec<String> = Vec::new();
    for b in &cfg.bounds {
        for n in b.names() {
            if !v.iter().any(|x| x == n) {
                v.push(n.to_string());
            }
        }
    }
    v
}

fn notes(cfg: &ExperimentConfig) -> Vec<String> {
    let mut n = Vec::new();
    if matches!(cfg.generator, GeneratorSpec::Bimodal(_)) {
        n.push("bimodal generator is a two-component location mixture standing in for a sharply bimodal conditional law".into());
    }
    if cfg.noise.as_ref().is_some_and(|s| s.kind == crate::noise::NoiseKind::Adversarial) && cfg.task == TaskKind::Classification {
        n.push("attacks corrupt calibration labels only; noisy-test columns are empty".into());
    }
    if cfg.task == TaskKind::RegressionBounds {
        n.push("risk levels are on the [1, 2) scale of the smooth miscoverage loss".into());
    }
    n
}

fn run_trials<F>(cfg: &ExperimentConfig, exec: Execution, f: F) -> Vec<TrialReport>
where
    F: Fn(usize) -> Result<Vec<TrialReport>> + Sync + Send,
{
    let alphas = cfg.alphas();
    exec.map(cfg.trials, |t| match f(t) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("trial {t} failed: {e}");
            alphas.iter().map(|&a| TrialReport::failed(t, a, &e)).collect()
        }
    })
    .into_iter()
    .flatten()
    .collect()
}

fn fnr_reports(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<TrialReport>> {
    let GeneratorSpec::Scenario { scenario } = &cfg.generator else {
        return Err(Error::Config("multi-label tasks need a scenario generator".into()));
    };
    let settings = FnrSettings {
        n_cal: cfg.n_cal,
        n_test: cfg.n_test,
        trials: cfg.trials,
        seed: cfg.seed,
        grid_points: cfg.lambda_grid.as_ref().map_or(1001, |g| g.points),
    };
    let trials = simulate_fnr_trials(scenario, &cfg.alphas(), &settings, exec)?;
    Ok(trials
        .into_iter()
        .flatten()
        .map(|ft| {
            let mut r = TrialReport::new(ft.trial, ft.alpha);
            match (ft.lambda, ft.noisy_fnr, ft.clean_fnr) {
                (Some(l), Some(n), Some(c)) => {
                    r.threshold = Some(l);
                    r.risk_noisy = Some(n);
                    r.risk_clean = Some(c);
                }
                _ => r.status = TrialStatus::Infeasible,
            }
            r
        })
        .collect())
}

/// Runs every trial of `cfg` and aggregates. A failing trial yields
/// `failed` rows; more than 10% failed trials aborts with
/// [`Error::TooManyFailures`].
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let reports = match (&cfg.task, &cfg.generator) {
        (TaskKind::Classification, GeneratorSpec::Classification(spec)) => {
            let model = ClsModel::new(spec, &mut stream_rng(cfg.seed, RUN_STREAM))?;
            run_trials(cfg, exec, |t| classification::trial(cfg, &model, t))
        }
        (TaskKind::Regression, _) => run_trials(cfg, exec, |t| regression::trial(cfg, t)),
        (TaskKind::RegressionBounds, _) => run_trials(cfg, exec, |t| regression::bounds_trial(cfg, t)),
        (TaskKind::MultiLabel | TaskKind::Segmentation, _) => fnr_reports(cfg, exec)?,
        (TaskKind::Discrete, GeneratorSpec::Discrete(spec)) => {
            let inst = DiscreteInstance::new(cfg, spec)?;
            run_trials(cfg, exec, |t| discrete::trial(cfg, &inst, t))
        }
        (t, g) => return Err(Error::Config(format!("generator {g:?} does not fit task {t:?}"))),
    };
    let summary = summarize(&reports, &cfg.alphas(), cfg.seed, notes(cfg));
    if summary.failed_trials as f64 > MAX_FAILURE_FRACTION * cfg.trials as f64 {
        return Err(Error::TooManyFailures { failed: summary.failed_trials, total: cfg.trials });
    }
    Ok(ExperimentOutput { reports, bound_names: bound_names(cfg), summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cls(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"task": "classification", "generator": {{"kind": "classification", "k": 4, "d": 5}},
                "score": "aps", "alpha": [0.1, 0.2], "n_cal": 100, "n_test": 200, "trials": 6, "seed": 11 {extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn one_row_per_trial_and_alpha() {
        let out = run_experiment(&cls(""), Execution::Sequential).unwrap();
        assert_eq!(out.reports.len(), 12);
        assert!(out.reports.iter().all(|r| r.status == TrialStatus::Ok));
        for r in &out.reports {
            for v in [r.coverage_clean, r.coverage_noisy, r.baseline_coverage].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v));
            }
            // Without noise the noisy and clean evaluations coincide.
            assert_eq!(r.coverage_clean, r.baseline_coverage);
        }
    }

    #[test]
    fn output_is_independent_of_execution_mode() {
        let c = cls(r#", "noise": {"kind": "uniform-flip", "epsilon": 0.1}, "bounds": ["random-flip", "dominance", "towards-uniform"]"#);
        let a = run_experiment(&c, Execution::Sequential).unwrap().csv_bytes().unwrap();
        let b = run_experiment(&c, Execution::ParallelJobs(3)).unwrap().csv_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bound_columns_carry_inputs() {
        let c = cls(r#", "noise": {"kind": "uniform-flip", "epsilon": 0.1}, "bounds": ["random-flip", "marginal-tv"]"#);
        let out = run_experiment(&c, Execution::Sequential).unwrap();
        assert_eq!(out.bound_names, vec!["random-flip-upper", "marginal-tv-upper"]);
        let r = &out.reports[0];
        let b = r.bound("random-flip-upper").unwrap();
        assert_eq!(b.inputs["k"], 4);
        assert!(r.bound("marginal-tv-upper").unwrap().inputs.get("xi").is_some());
    }

    #[test]
    fn regression_runs_for_both_scores() {
        for (model, score) in [("linear-quantile", "cqr"), ("linear-mean", "rm")] {
            let c = ExperimentConfig::from_json(&format!(
                r#"{{"task": "regression", "generator": {{"kind": "regression", "d": 3}}, "model": "{model}", "score": "{score}",
                    "noise": {{"kind": "additive", "additive_dist": "gauss", "c": 0.2}}, "alpha": 0.1,
                    "n_train": 300, "n_cal": 200, "n_test": 300, "trials": 3, "seed": 4,
                    "quantile_fit": {{"steps": 100, "step_size": 0.5}}}}"#
            ))
            .unwrap();
            let out = run_experiment(&c, Execution::Sequential).unwrap();
            assert!(out.reports.iter().all(|r| r.status == TrialStatus::Ok), "{model}");
            assert!(out.summary.per_alpha[0].metrics["coverage_noisy"].mean > 0.8);
        }
    }

    #[test]
    fn fnr_task_reports_risks() {
        let c = ExperimentConfig::from_json(
            r#"{"task": "multi-label", "generator": {"kind": "scenario", "scenario": {"preset": "deterministic", "k": 10, "beta_lo": 0.1, "beta_hi": 0.4}},
                "alpha": [0.1, 0.3], "n_cal": 100, "n_test": 100, "trials": 4, "seed": 2}"#,
        )
        .unwrap();
        let out = run_experiment(&c, Execution::Sequential).unwrap();
        assert_eq!(out.reports.len(), 8);
        assert!(out.reports.iter().all(|r| r.risk_clean.is_some() && r.threshold.is_some()));
    }

    #[test]
    fn failing_trials_abort_the_run() {
        // Rare-to-frequent needs a train split; an empty one fails every trial.
        let c = cls(r#", "noise": {"kind": "rare-to-frequent", "epsilon": 0.05}, "n_train": 0"#);
        assert!(matches!(run_experiment(&c, Execution::Sequential), Err(Error::TooManyFailures { failed: 6, total: 6 })));
    }
}
