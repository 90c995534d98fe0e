//! Per-trial rows, aggregate summaries, and their CSV/JSON encodings.
//!
//! CSV schema, one row per (trial, α):
//! `trial, alpha, status, coverage_clean, coverage_noisy, baseline_coverage,
//! risk_clean, risk_noisy, size, threshold, noise_rate`, then for each
//! requested bound `bound.<name>` and `bound.<name>.inputs` (compact JSON),
//! then `warnings` (`; `-joined) and `error`. Missing values are empty
//! cells; an infinite threshold is written as `inf`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Ok,
    /// No threshold reaches the requested level; not counted as a failure.
    Infeasible,
    Failed,
}

impl TrialStatus {
    fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Infeasible => "infeasible",
            TrialStatus::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(TrialStatus::Ok),
            "infeasible" => Ok(TrialStatus::Infeasible),
            "failed" => Ok(TrialStatus::Failed),
            other => Err(Error::Validation(format!("unknown status {other:?}"))),
        }
    }
}

/// One evaluated bound with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEval {
    pub name: String,
    pub value: f64,
    pub inputs: Value,
}

impl BoundEval {
    pub fn new<T: Serialize>(name: &str, value: f64, inputs: &T) -> Result<Self> {
        Ok(Self { name: name.to_string(), value, inputs: serde_json::to_value(inputs)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub alpha: f64,
    pub status: TrialStatus,
    /// Coverage on clean test labels (one minus the clean risk for risk tasks).
    pub coverage_clean: Option<f64>,
    pub coverage_noisy: Option<f64>,
    /// Clean coverage when calibrating on the clean calibration labels.
    pub baseline_coverage: Option<f64>,
    pub risk_clean: Option<f64>,
    pub risk_noisy: Option<f64>,
    /// Mean set size or interval length.
    pub size: Option<f64>,
    /// `q̂` or `λ̂`.
    pub threshold: Option<f64>,
    /// Achieved label disagreement on the calibration split.
    pub noise_rate: Option<f64>,
    pub bounds: Vec<BoundEval>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl TrialReport {
    pub fn new(trial: usize, alpha: f64) -> Self {
        Self {
            trial,
            alpha,
            status: TrialStatus::Ok,
            coverage_clean: None,
            coverage_noisy: None,
            baseline_coverage: None,
            risk_clean: None,
            risk_noisy: None,
            size: None,
            threshold: None,
            noise_rate: None,
            bounds: Vec::new(),
            warnings: Vec::new(),
            error: None,
        }
    }

    pub fn failed(trial: usize, alpha: f64, err: &Error) -> Self {
        Self { status: TrialStatus::Failed, error: Some(err.to_string()), ..Self::new(trial, alpha) }
    }

    pub fn bound(&self, name: &str) -> Option<&BoundEval> {
        self.bounds.iter().find(|b| b.name == name)
    }
}

const FIXED: [&str; 11] = [
    "trial",
    "alpha",
    "status",
    "coverage_clean",
    "coverage_noisy",
    "baseline_coverage",
    "risk_clean",
    "risk_noisy",
    "size",
    "threshold",
    "noise_rate",
];

pub fn csv_header(bound_names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    for b in bound_names {
        h.push(format!("bound.{b}"));
        h.push(format!("bound.{b}.inputs"));
    }
    h.push("warnings".into());
    h.push("error".into());
    h
}

fn fmt_f(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn parse_f(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::Validation(format!("bad number {s:?}"))),
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f(s).map(Some)
    }
}

/// Writes the reports with a fixed column order; an empty list gives a
/// header-only file.
pub fn write_reports_csv<W: Write>(reports: &[TrialReport], bound_names: &[String], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(csv_header(bound_names))?;
    for r in reports {
        let mut rec = vec![
            r.trial.to_string(),
            fmt_f(r.alpha),
            r.status.as_str().to_string(),
            fmt_opt(r.coverage_clean),
            fmt_opt(r.coverage_noisy),
            fmt_opt(r.baseline_coverage),
            fmt_opt(r.risk_clean),
            fmt_opt(r.risk_noisy),
            fmt_opt(r.size),
            fmt_opt(r.threshold),
            fmt_opt(r.noise_rate),
        ];
        for name in bound_names {
            match r.bound(name) {
                Some(b) => {
                    rec.push(fmt_f(b.value));
                    rec.push(serde_json::to_string(&b.inputs)?);
                }
                None => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        rec.push(r.warnings.join("; "));
        rec.push(r.error.clone().unwrap_or_default());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn emit_csv(reports: &[TrialReport], bound_names: &[String], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_reports_csv(reports, bound_names, std::io::BufWriter::new(f))
}

/// Parses a file written by [`write_reports_csv`].
pub fn read_reports_csv<R: Read>(r: R) -> Result<(Vec<TrialReport>, Vec<String>)> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let nb = header.len().checked_sub(FIXED.len() + 2).filter(|m| m % 2 == 0).ok_or_else(|| {
        Error::Validation(format!("unexpected column count {}", header.len()))
    })? / 2;
    if header[..FIXED.len()] != FIXED {
        return Err(Error::Validation("unexpected fixed columns".into()));
    }
    let names: Vec<String> = (0..nb)
        .map(|i| header[FIXED.len() + 2 * i].trim_start_matches("bound.").to_string())
        .collect();
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| parse_opt(&rec[i]);
        let mut r = TrialReport::new(
            rec[0].parse().map_err(|_| Error::Validation(format!("bad trial {:?}", &rec[0])))?,
            parse_f(&rec[1])?,
        );
        r.status = TrialStatus::parse(&rec[2])?;
        r.coverage_clean = f(3)?;
        r.coverage_noisy = f(4)?;
        r.baseline_coverage = f(5)?;
        r.risk_clean = f(6)?;
        r.risk_noisy = f(7)?;
        r.size = f(8)?;
        r.threshold = f(9)?;
        r.noise_rate = f(10)?;
        for (i, name) in names.iter().enumerate() {
            let c = FIXED.len() + 2 * i;
            if !rec[c].is_empty() {
                r.bounds.push(BoundEval { name: name.clone(), value: parse_f(&rec[c])?, inputs: serde_json::from_str(&rec[c + 1])? });
            }
        }
        let w = &rec[header.len() - 2];
        r.warnings = if w.is_empty() { Vec::new() } else { w.split("; ").map(str::to_string).collect() };
        let e = &rec[header.len() - 1];
        r.error = (!e.is_empty()).then(|| e.to_string());
        out.push(r);
    }
    Ok((out, names))
}

/// Mean, spread and quartiles of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        let mut s = v;
        s.sort_by(f64::total_cmp);
        // Linear interpolation between order statistics.
        let quant = |p: f64| {
            let h = p * (n - 1) as f64;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        };
        Some(Self { n, mean, sd, se: sd / (n as f64).sqrt(), q25: quant(0.25), median: quant(0.5), q75: quant(0.75) })
    }
}

/// Aggregates at one α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub ok: usize,
    pub infeasible: usize,
    pub failed: usize,
    pub metrics: std::collections::BTreeMap<String, Stats>,
    pub bounds: std::collections::BTreeMap<String, Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub failed_trials: usize,
    pub seed: u64,
    pub per_alpha: Vec<AlphaSummary>,
    pub notes: Vec<String>,
}

pub fn summarize(reports: &[TrialReport], alphas: &[f64], seed: u64, notes: Vec<String>) -> Summary {
    let trials = reports.iter().map(|r| r.trial + 1).max().unwrap_or(0);
    let mut failed_ids: Vec<usize> = reports.iter().filter(|r| r.status == TrialStatus::Failed).map(|r| r.trial).collect();
    failed_ids.dedup();
    let per_alpha = alphas
        .iter()
        .map(|&a| {
            let rows: Vec<&TrialReport> = reports.iter().filter(|r| r.alpha == a).collect();
            let ok: Vec<&&TrialReport> = rows.iter().filter(|r| r.status == TrialStatus::Ok).collect();
            let mut metrics = std::collections::BTreeMap::new();
            let fields: [(&str, fn(&TrialReport) -> Option<f64>); 8] = [
                ("coverage_clean", |r| r.coverage_clean),
                ("coverage_noisy", |r| r.coverage_noisy),
                ("baseline_coverage", |r| r.baseline_coverage),
                ("risk_clean", |r| r.risk_clean),
                ("risk_noisy", |r| r.risk_noisy),
                ("size", |r| r.size),
                ("threshold", |r| r.threshold),
                ("noise_rate", |r| r.noise_rate),
            ];
            for (name, get) in fields {
                let v: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
                if let Some(s) = Stats::of(&v) {
                    metrics.insert(name.to_string(), s);
                }
            }
            let mut bounds = std::collections::BTreeMap::new();
            let mut names: Vec<&str> = ok.iter().flat_map(|r| r.bounds.iter().map(|b| b.name.as_str())).collect();
            names.sort_unstable();
            names.dedup();
            for name in names {
                let v: Vec<f64> = ok.iter().filter_map(|r| r.bound(name).map(|b| b.value)).collect();
                if let Some(s) = Stats::of(&v) {
                    bounds.insert(name.to_string(), s);
                }
            }
            AlphaSummary {
                alpha: a,
                ok: ok.len(),
                infeasible: rows.iter().filter(|r| r.status == TrialStatus::Infeasible).count(),
                failed: rows.iter().filter(|r| r.status == TrialStatus::Failed).count(),
                metrics,
                bounds,
            }
        })
        .collect();
    Summary { trials, failed_trials: failed_ids.len(), seed, per_alpha, notes }
}

pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Vec<TrialReport> {
        let mut a = TrialReport::new(0, 0.1);
        a.coverage_clean = Some(0.912);
        a.coverage_noisy = Some(0.1 + 0.2);
        a.threshold = Some(f64::INFINITY);
        a.bounds.push(BoundEval { name: "random-flip-upper".into(), value: 0.955, inputs: json!({"eps": 0.05, "k": 10}) });
        a.warnings = vec!["first".into(), "second, with comma".into()];
        let b = TrialReport::failed(1, 0.1, &Error::Training("diverged".into()));
        vec![a, b]
    }

    #[test]
    fn empty_list_is_header_only() {
        let mut buf = Vec::new();
        write_reports_csv(&[], &["dominance".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end().split(',').count(), FIXED.len() + 4);
    }

    #[test]
    fn csv_round_trip() {
        let names = vec!["random-flip-upper".to_string(), "dominance".to_string()];
        let mut buf = Vec::new();
        write_reports_csv(&sample(), &names, &mut buf).unwrap();
        let (back, back_names) = read_reports_csv(buf.as_slice()).unwrap();
        assert_eq!(back_names, names);
        assert_eq!(back, sample());
        // Column count is the same on every row.
        let text = String::from_utf8(buf).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let width = rd.headers().unwrap().len();
        assert!(rd.records().all(|r| r.unwrap().len() == width));
    }

    #[test]
    fn stats_quartiles() {
        let s = Stats::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.median, s.q25, s.q75), (3.0, 3.0, 2.0, 4.0));
        assert!((s.sd - 2.5f64.sqrt()).abs() < 1e-12);
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn summary_counts_failures() {
        let s = summarize(&sample(), &[0.1], 3, vec![]);
        assert_eq!((s.trials, s.failed_trials), (2, 1));
        assert_eq!(s.per_alpha[0].ok, 1);
        assert_eq!(s.per_alpha[0].metrics["coverage_clean"].mean, 0.912);
    }
}
