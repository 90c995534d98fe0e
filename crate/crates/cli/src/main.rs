//! `ncp`: run noisy-label conformal experiments from the command line.
//!
//! Exit codes: 0 success, 1 other errors, 2 configuration errors,
//! 3 infeasible thresholds, 4 too many failed trials.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use noisy_conformal::bounds::BoundRequest;
use noisy_conformal::calibrate::{conformal_quantile, crc_threshold, risk_curve};
use noisy_conformal::harness::{
    attack_calibration, generate_dataset, run_experiment, run_online_streams, summarize_online, write_steps_csv, ExperimentConfig,
    OnlineSettings,
};
use noisy_conformal::noise::{AdditiveDist, NoiseKind, NoiseSpec};
use noisy_conformal::online::{OnlineConfig, OnlineLoss, StreamNoise};
use noisy_conformal::{Error, Execution};

#[derive(Parser, Debug)]
#[command(name = "ncp", version, about = "Conformal prediction and risk control under label noise")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the config trial count.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment config; writes trials.csv and summary.json.
    Simulate,
    /// Calibrate a threshold from a score CSV or a per-λ loss table.
    Calibrate(CalibrateArgs),
    /// Evaluate one bound from a JSON request ("-" reads stdin).
    Bounds {
        input: PathBuf,
    },
    /// Online risk control on a synthetic stream.
    Online(OnlineArgs),
    /// Corrupt a calibration split with the configured attack.
    Attack {
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Dump a generated dataset as CSV.
    Gen {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Output file; defaults to <out-dir>/dataset.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Quantile,
    Crc,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Scores (one column, optional `score` header) or, in crc mode, a loss
    /// table whose header row holds the λ values.
    input: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Mode::Quantile)]
    mode: Mode,
    /// Loss upper bound B for risk control.
    #[arg(long, default_value_t = 1.0)]
    b_bound: f64,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum LossArg {
    Miscoverage,
    Image,
}

#[derive(Args, Debug)]
struct OnlineArgs {
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    theta0: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Miscoverage)]
    loss: LossArg,
    /// Response noise: `<dist>:<c>` (e.g. `gauss:0.3`) or a noise JSON object.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long, default_value_t = 1)]
    streams: usize,
    /// Image side length for the image loss.
    #[arg(long, default_value_t = 8)]
    side: usize,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let path = g.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.trials {
        cfg.trials = t;
    }
    if g.jobs.is_some() {
        cfg.jobs = g.jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global, cfg: Option<&ExperimentConfig>) -> PathBuf {
    g.out_dir
        .clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn simulate(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let dir = out_dir(g, Some(&cfg));
    let out = run_experiment(&cfg, Execution::from_jobs(cfg.jobs))?;
    out.write(&dir)?;
    for a in &out.summary.per_alpha {
        let m = |k: &str| a.metrics.get(k).map_or("-".to_string(), |s| format!("{:.4}", s.mean));
        println!(
            "alpha {}: ok {} infeasible {} failed {} | coverage clean {} noisy {} | risk clean {} noisy {}",
            a.alpha,
            a.ok,
            a.infeasible,
            a.failed,
            m("coverage_clean"),
            m("coverage_noisy"),
            m("risk_clean"),
            m("risk_noisy")
        );
    }
    log::info!("wrote {}", dir.display());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut v = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(0).unwrap_or("").trim();
        match cell.parse::<f64>() {
            Ok(x) => v.push(x),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Validation(format!("row {}: bad score {cell:?}", i + 1)).into()),
        }
    }
    Ok(v)
}

fn read_loss_table(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_path(path)?;
    let grid = rd
        .headers()?
        .iter()
        .map(|h| h.trim().parse::<f64>().map_err(|_| Error::Validation(format!("header {h:?} is not a lambda value"))))
        .collect::<std::result::Result<Vec<f64>, Error>>()?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let row = rec?
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|_| Error::Validation(format!("bad loss {c:?}"))))
            .collect::<std::result::Result<Vec<f64>, Error>>()?;
        rows.push(row);
    }
    Ok((grid, rows))
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let value = match a.mode {
        Mode::Quantile => {
            let thr = conformal_quantile(&read_scores(&a.input)?, a.alpha)?;
            serde_json::to_value(thr)?
        }
        Mode::Crc => {
            let (grid, rows) = read_loss_table(&a.input)?;
            let thr = crc_threshold(&risk_curve(&rows)?, rows.len(), a.alpha, a.b_bound, &grid)?;
            json!({"lambda": thr.lambda, "alpha": thr.alpha, "n": thr.n, "adjusted_risk": thr.adjusted_risk, "repaired": thr.repaired})
        }
    };
    write_json(&value, a.out.as_deref())
}

fn bounds(input: &Path) -> Result<()> {
    let mut text = String::new();
    if input == Path::new("-") {
        std::io::stdin().read_to_string(&mut text)?;
    } else {
        text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    }
    let req: BoundRequest = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    write_json(&req.evaluate()?, None)
}

fn parse_noise(s: &str) -> Result<StreamNoise> {
    if s.trim_start().starts_with('{') {
        let spec: NoiseSpec = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        if spec.kind != NoiseKind::Additive {
            bail!(Error::Config("online streams take additive noise".into()));
        }
        return Ok(StreamNoise { dist: spec.additive_dist.unwrap_or(AdditiveDist::Gauss), c: spec.c });
    }
    let (d, c) = s.split_once(':').ok_or_else(|| Error::Config(format!("noise {s:?} is not <dist>:<c>")))?;
    let dist: AdditiveDist = serde_json::from_value(json!(d)).map_err(|_| Error::Config(format!("unknown noise distribution {d:?}")))?;
    let c: f64 = c.parse().map_err(|_| Error::Config(format!("bad noise scale {c:?}")))?;
    if !(c >= 0.0) {
        bail!(Error::Config("noise scale must be nonnegative".into()));
    }
    Ok(StreamNoise { dist, c })
}

fn online(g: &Global, a: &OnlineArgs) -> Result<()> {
    let settings = OnlineSettings {
        steps: a.steps,
        control: OnlineConfig { alpha: a.alpha, gamma: a.gamma, theta0: a.theta0 },
        loss: match a.loss {
            LossArg::Miscoverage => OnlineLoss::Miscoverage,
            LossArg::Image => OnlineLoss::Image,
        },
        noise: a.noise.as_deref().map(parse_noise).transpose()?,
        streams: a.streams,
        seed: g.seed.unwrap_or(0),
        side: a.side,
    };
    let reports = run_online_streams(&settings, Execution::from_jobs(g.jobs))?;
    let dir = out_dir(g, None);
    std::fs::create_dir_all(&dir)?;
    for (i, r) in reports.iter().enumerate() {
        let f = File::create(dir.join(format!("online_stream_{i}.csv")))?;
        write_steps_csv(&r.steps, BufWriter::new(f))?;
    }
    let summary = summarize_online(&settings, &reports)?;
    write_json(&serde_json::to_value(&summary)?, Some(&dir.join("online_summary.json")))?;
    println!(
        "mean miscoverage noisy {:.4} clean {} | max drift {:.4}",
        summary.loss_noisy.mean,
        summary.loss_clean.map_or("-".into(), |s| format!("{:.4}", s.mean)),
        summary.max_drift
    );
    Ok(())
}

fn attack(g: &Global, trial: usize) -> Result<()> {
    let cfg = load_config(g)?;
    let dump = attack_calibration(&cfg, trial)?;
    let dir = out_dir(g, Some(&cfg));
    std::fs::create_dir_all(&dir)?;
    let cal = &dump.calibration;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("attacked.csv"))?));
    let mut header: Vec<String> = (0..cal.d).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    header.push("noisy_label".into());
    w.write_record(&header)?;
    for ((row, y), yn) in cal.rows().zip(cal.class_labels()?).zip(&dump.noisy_labels) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(y.to_string());
        rec.push(yn.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_json(&serde_json::to_value(&dump)?, Some(&dir.join("attack.json")))?;
    println!("{:?}: achieved rate {:.4} (requested {})", dump.attack, dump.achieved_rate, dump.requested_rate);
    Ok(())
}

fn gen(g: &Global, n: Option<usize>, trial: usize, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(g)?;
    let data = generate_dataset(&cfg, n.unwrap_or(cfg.n_train), trial)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = out_dir(g, Some(&cfg));
            std::fs::create_dir_all(&dir)?;
            dir.join("dataset.csv")
        }
    };
    data.save_csv(&path)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "wrote {} rows to {}", data.n(), path.display())?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_config() => 2,
        Some(Error::Infeasible(_)) => 3,
        Some(Error::TooManyFailures { .. }) => 4,
        _ => {
            if err.chain().any(|e| e.downcast_ref::<clap::Error>().is_some()) {
                2
            } else {
                1
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate => simulate(g),
        Command::Calibrate(a) => calibrate(a),
        Command::Bounds { input } => bounds(input),
        Command::Online(a) => online(g, a),
        Command::Attack { trial } => attack(g, *trial),
        Command::Gen { n, trial, out } => gen(g, *n, *trial, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
