use noisy_conformal::harness::{read_reports_csv, run_experiment, ExperimentConfig, Summary};
use noisy_conformal::Execution;

const CONFIG: &str = r#"{"task": "classification", "generator": {"kind": "classification", "k": 6, "d": 8},
    "score": "aps", "noise": {"kind": "uniform-flip", "epsilon": 0.1}, "alpha": [0.1, 0.3],
    "n_cal": 150, "n_test": 150, "trials": 5, "seed": 12, "bounds": ["random-flip", "dominance"]}"#;

#[test]
fn config_file_run_round_trips_through_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, CONFIG).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, ExperimentConfig::from_json(CONFIG).unwrap());

    let out = run_experiment(&cfg, Execution::Parallel).unwrap();
    out.write(dir.path()).unwrap();

    let f = std::fs::File::open(dir.path().join("trials.csv")).unwrap();
    let (reports, names) = read_reports_csv(f).unwrap();
    assert_eq!(names, out.bound_names);
    assert_eq!(reports, out.reports);

    let summary: Summary = serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, out.summary);
}

#[test]
fn missing_config_file_is_io_error() {
    let err = ExperimentConfig::load(std::path::Path::new("/nonexistent/cfg.json")).unwrap_err();
    assert!(!err.is_config());
}
