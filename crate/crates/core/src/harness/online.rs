//! Repeated online streams and their per-step CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::report::Stats;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::online::{gen_image_stream, gen_regression_stream, run_online, run_online_image, OnlineConfig, OnlineLoss, OnlineReport, StepRecord, StreamNoise};
use crate::rng::trial_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineSettings {
    pub steps: usize,
    pub control: OnlineConfig,
    pub loss: OnlineLoss,
    pub noise: Option<StreamNoise>,
    /// Independent streams, each on its own RNG stream.
    pub streams: usize,
    pub seed: u64,
    /// Image side length for the image loss.
    pub side: usize,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        Self { steps: 10_000, control: OnlineConfig::default(), loss: OnlineLoss::Miscoverage, noise: None, streams: 1, seed: 0, side: 8 }
    }
}

pub fn run_online_streams(s: &OnlineSettings, exec: Execution) -> Result<Vec<OnlineReport>> {
    if s.steps == 0 || s.streams == 0 {
        return Err(Error::Config("steps and streams must be positive".into()));
    }
    exec.map(s.streams, |r| {
        let mut rng = trial_rng(s.seed, r);
        match s.loss {
            OnlineLoss::Miscoverage => run_online(&gen_regression_stream(s.steps, s.noise, &mut rng), s.control),
            OnlineLoss::Image => run_online_image(&gen_image_stream(s.steps, s.side, s.noise, &mut rng), s.control),
        }
    })
    .into_iter()
    .collect()
}

/// Writes `t, theta, loss_noisy, loss_clean, mc_noisy, mc_clean`.
pub fn write_steps_csv<W: Write>(steps: &[StepRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "theta", "loss_noisy", "loss_clean", "mc_noisy", "mc_clean"])?;
    for s in steps {
        wr.write_record([
            s.t.to_string(),
            s.theta.to_string(),
            s.loss_noisy.to_string(),
            s.loss_clean.map(|v| v.to_string()).unwrap_or_default(),
            s.mc_noisy.to_string(),
            s.mc_clean.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Across-stream statistics of the long-run averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineSummary {
    pub settings: OnlineSettings,
    pub loss_noisy: Stats,
    pub loss_clean: Option<Stats>,
    pub mc_noisy: Stats,
    pub mc_clean: Option<Stats>,
    /// Paired `clean − noisy` counter averages.
    pub mc_diff: Option<Stats>,
    /// Largest `|θ_T − θ_0| / (γT)` over streams.
    pub max_drift: f64,
}

pub fn summarize_online(s: &OnlineSettings, reports: &[OnlineReport]) -> Result<OnlineSummary> {
    let stats = |v: Vec<f64>| Stats::of(&v).ok_or_else(|| Error::Domain("no streams".into()));
    let opt = |v: Option<Vec<f64>>| v.and_then(|v| Stats::of(&v));
    Ok(OnlineSummary {
        settings: *s,
        loss_noisy: stats(reports.iter().map(|r| r.mean_loss_noisy).collect())?,
        loss_clean: opt(reports.iter().map(|r| r.mean_loss_clean).collect()),
        mc_noisy: stats(reports.iter().map(|r| r.mean_mc_noisy).collect())?,
        mc_clean: opt(reports.iter().map(|r| r.mean_mc_clean).collect()),
        mc_diff: opt(reports.iter().map(|r| r.mean_mc_clean.map(|c| c - r.mean_mc_noisy)).collect()),
        max_drift: reports.iter().map(|r| r.drift_bound(&s.control)).fold(0.0, f64::max),
    })
}
