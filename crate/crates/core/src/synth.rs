//! Synthetic data generators, the analytic oracle classifier, and two small
//! linear learners (pinball-loss quantile regression and ridge-damped OLS).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{sample_categorical, BinaryGrid, NoiseKind, NoiseSpec, TransitionMatrix};
use crate::scores::ClassProbs;

/// Responses for one of the supported task kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum Responses {
    Class(Vec<usize>),
    Binary(Vec<BinaryGrid>),
    Scalar(Vec<f64>),
    /// Matrix responses stored row-major, all `rows × cols`.
    Matrix { rows: usize, cols: usize, values: Vec<Vec<f64>> },
}

impl Responses {
    pub fn len(&self) -> usize {
        match self {
            Responses::Class(v) => v.len(),
            Responses::Binary(v) => v.len(),
            Responses::Scalar(v) => v.len(),
            Responses::Matrix { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Features (row-major `n × d`) plus responses.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Responses,
}

impl LabeledDataset {
    pub fn new(d: usize, x: Vec<f64>, y: Responses) -> Result<Self> {
        if d == 0 || x.len() != d * y.len() {
            return Err(Error::Domain(format!("{} features for {} rows of dim {d}", x.len(), y.len())));
        }
        Ok(Self { d, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    pub fn class_labels(&self) -> Result<&[usize]> {
        match &self.y {
            Responses::Class(v) => Ok(v),
            _ => Err(Error::Config("dataset does not hold class labels".into())),
        }
    }

    pub fn scalar_responses(&self) -> Result<&[f64]> {
        match &self.y {
            Responses::Scalar(v) => Ok(v),
            _ => Err(Error::Config("dataset does not hold scalar responses".into())),
        }
    }

    /// Writes one row per sample: `x0..x{d-1}` then the response column(s).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        match &self.y {
            Responses::Class(_) => header.push("label".into()),
            Responses::Scalar(_) => header.push("y".into()),
            Responses::Binary(v) => {
                let m = v.first().map_or(0, |g| g.data.len());
                header.extend((0..m).map(|j| format!("y{j}")));
            }
            Responses::Matrix { rows, cols, .. } => header.extend((0..rows * cols).map(|j| format!("y{j}"))),
        }
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            match &self.y {
                Responses::Class(v) => rec.push(v[i].to_string()),
                Responses::Scalar(v) => rec.push(v[i].to_string()),
                Responses::Binary(v) => rec.extend(v[i].data.iter().map(|&b| u8::from(b).to_string())),
                Responses::Matrix { values, .. } => rec.extend(values[i].iter().map(|v| v.to_string())),
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the format produced by [`write_csv`](Self::write_csv). Binary and
    /// matrix responses come back as single-row grids / `1 × m` matrices.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let d = header.iter().take_while(|h| h.starts_with('x')).count();
        let resp: Vec<&str> = header.iter().skip(d).collect();
        if d == 0 || resp.is_empty() {
            return Err(Error::Validation("csv needs x* feature columns and a response".into()));
        }
        let mut x = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Validation(format!("bad number {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != d + resp.len() {
                return Err(Error::Validation(format!("row has {} fields, expected {}", vals.len(), d + resp.len())));
            }
            x.extend_from_slice(&vals[..d]);
            rows.push(vals[d..].to_vec());
        }
        let y = match resp.as_slice() {
            ["label"] => Responses::Class(
                rows.iter()
                    .map(|r| {
                        let v = r[0];
                        if v < 0.0 || v.fract() != 0.0 {
                            Err(Error::Validation(format!("label {v} is not a class index")))
                        } else {
                            Ok(v as usize)
                        }
                    })
                    .collect::<Result<_>>()?,
            ),
            ["y"] => Responses::Scalar(rows.into_iter().map(|r| r[0]).collect()),
            _ if rows.iter().flatten().all(|&v| v == 0.0 || v == 1.0) && !rows.is_empty() => Responses::Binary(
                rows.into_iter().map(|r| BinaryGrid::from_vec(r.into_iter().map(|v| v == 1.0).collect())).collect(),
            ),
            _ => Responses::Matrix { rows: 1, cols: resp.len(), values: rows },
        };
        LabeledDataset::new(d, x, y)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn default_k() -> usize {
    10
}
fn default_cls_d() -> usize {
    100
}

/// Settings for the softmax-multinomial classification generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClsGenSpec {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_cls_d")]
    pub d: usize,
    /// `d × K` weights; drawn i.i.d. standard normal when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

impl Default for ClsGenSpec {
    fn default() -> Self {
        Self { k: default_k(), d: default_cls_d(), b: None }
    }
}

/// Instantiated classification generator with fixed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsModel {
    pub k: usize,
    pub d: usize,
    /// Row-major `d × K`.
    pub b: Vec<f64>,
}

impl ClsModel {
    pub fn new<R: Rng + ?Sized>(spec: &ClsGenSpec, rng: &mut R) -> Result<Self> {
        if spec.k < 2 || spec.d < 1 {
            return Err(Error::Config(format!("need k >= 2 and d >= 1, got k={} d={}", spec.k, spec.d)));
        }
        let b = match &spec.b {
            Some(rows) => {
                if rows.len() != spec.d || rows.iter().any(|r| r.len() != spec.k) {
                    return Err(Error::Config(format!("weights must be {}x{}", spec.d, spec.k)));
                }
                rows.iter().flatten().copied().collect()
            }
            None => (0..spec.d * spec.k).map(|_| StandardNormal.sample(rng)).collect(),
        };
        Ok(Self { k: spec.k, d: spec.d, b })
    }

    /// `softmax(xᵀB)`.
    pub fn oracle_clean_probs(&self, x: &[f64]) -> ClassProbs {
        let mut logits = vec![0.0; self.k];
        for (xi, row) in x.iter().zip(self.b.chunks_exact(self.k)) {
            for (l, w) in logits.iter_mut().zip(row) {
                *l += xi * w;
            }
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - m).exp();
            s += *l;
        }
        for l in logits.iter_mut() {
            *l /= s;
        }
        ClassProbs::new_unchecked(logits)
    }

    /// Exact conditional law of the noisy label for channel-type noise.
    pub fn oracle_noisy_probs(&self, x: &[f64], noise: &NoiseSpec) -> Result<ClassProbs> {
        let w = self.oracle_clean_probs(x).into_vec();
        let k = self.k as f64;
        let e = noise.epsilon;
        let out = match noise.kind {
            NoiseKind::Flip => w.iter().map(|p| (1.0 - e) * p + e / k).collect(),
            NoiseKind::UniformFlip => w.iter().map(|p| (1.0 - e) * p + e / (k - 1.0) * (1.0 - p)).collect(),
            NoiseKind::Confusion => {
                let rows = noise
                    .transition
                    .clone()
                    .ok_or_else(|| Error::Config("confusion noise needs a transition matrix".into()))?;
                let t = TransitionMatrix::new(rows)?;
                if t.k() != self.k {
                    return Err(Error::Config(format!("transition is {}x{}, model has {} classes", t.k(), t.k(), self.k)));
                }
                t.push(&w)
            }
            other => return Err(Error::Config(format!("no closed-form noisy oracle for {other:?} noise"))),
        };
        Ok(ClassProbs::new_unchecked(out))
    }

    /// Pushforward of the clean oracle through an arbitrary channel.
    pub fn channel_probs(&self, x: &[f64], t: &TransitionMatrix) -> ClassProbs {
        ClassProbs::new_unchecked(t.push(self.oracle_clean_probs(x).as_slice()))
    }

    pub fn sample_features<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n * self.d).map(|_| StandardNormal.sample(rng)).collect()
    }

    pub fn gen_classification<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<LabeledDataset> {
        if n == 0 {
            return Err(Error::Domain("n must be at least 1".into()));
        }
        let x = self.sample_features(n, rng);
        let y = x
            .chunks_exact(self.d)
            .map(|row| sample_categorical(self.oracle_clean_probs(row).as_slice(), rng))
            .collect();
        LabeledDataset::new(self.d, x, Responses::Class(y))
    }
}

fn default_reg_d() -> usize {
    100
}
fn default_outlier_prob() -> f64 {
    0.01
}
fn default_outlier_scale() -> f64 {
    25.0
}

/// Poisson-plus-heteroscedastic-noise regression generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegGenSpec {
    #[serde(default = "default_reg_d")]
    pub d: usize,
    #[serde(default = "default_outlier_prob")]
    pub outlier_prob: f64,
    #[serde(default = "default_outlier_scale")]
    pub outlier_scale: f64,
}

impl Default for RegGenSpec {
    fn default() -> Self {
        Self { d: default_reg_d(), outlier_prob: default_outlier_prob(), outlier_scale: default_outlier_scale() }
    }
}

/// Poisson draw by CDF inversion; fine for the small means used here.
pub fn poisson_inversion<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u64;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

/// `X ~ Unif[0,5]^d`, `Y = Pois(sin²(X̄)+0.1) + 0.03·X̄·η₁ + s·η₂·1{U<p}`.
pub fn gen_regression<R: Rng + ?Sized>(n: usize, spec: &RegGenSpec, rng: &mut R) -> Result<LabeledDataset> {
    if n == 0 || spec.d == 0 {
        return Err(Error::Domain("n and d must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.outlier_prob) {
        return Err(Error::Config(format!("outlier_prob {} outside [0,1]", spec.outlier_prob)));
    }
    let mut x = Vec::with_capacity(n * spec.d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..spec.d).map(|_| rng.random_range(0.0..5.0)).collect();
        let xbar = row.iter().sum::<f64>() / spec.d as f64;
        let pois = poisson_inversion(xbar.sin().powi(2) + 0.1, rng) as f64;
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let u: f64 = rng.random();
        let out = if u < spec.outlier_prob { spec.outlier_scale * e2 } else { 0.0 };
        y.push(pois + 0.03 * xbar * e1 + out);
        x.extend(row);
    }
    LabeledDataset::new(spec.d, x, Responses::Scalar(y))
}

fn default_bimodal_d() -> usize {
    1
}
fn default_gap() -> f64 {
    4.0
}
fn default_width() -> f64 {
    0.25
}
fn default_slope() -> f64 {
    2.0
}

/// Two-component location mixture: `Y = slope·X̄ ± gap/2 + width·η` with the
/// sign a fair coin and `X ~ Unif[0,1]^d`. A stand-in for a sharply bimodal
/// conditional density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BimodalSpec {
    #[serde(default = "default_bimodal_d")]
    pub d: usize,
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_slope")]
    pub slope: f64,
}

impl Default for BimodalSpec {
    fn default() -> Self {
        Self { d: default_bimodal_d(), gap: default_gap(), width: default_width(), slope: default_slope() }
    }
}

pub fn gen_bimodal_adversarial<R: Rng + ?Sized>(n: usize, spec: &BimodalSpec, rng: &mut R) -> Result<LabeledDataset> {
    if n == 0 || spec.d == 0 {
        return Err(Error::Domain("n and d must be at least 1".into()));
    }
    if !(spec.gap >= 0.0) || !(spec.width > 0.0) {
        return Err(Error::Config("bimodal gap must be >= 0 and width > 0".into()));
    }
    let mut x = Vec::with_capacity(n * spec.d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..spec.d).map(|_| rng.random::<f64>()).collect();
        let xbar = row.iter().sum::<f64>() / spec.d as f64;
        let side = if rng.random_bool(0.5) { 0.5 } else { -0.5 };
        let eta: f64 = StandardNormal.sample(rng);
        y.push(spec.slope * xbar + side * spec.gap + spec.width * eta);
        x.extend(row);
    }
    LabeledDataset::new(spec.d, x, Responses::Scalar(y))
}

/// `f(x) = w·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearPredictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.b + self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

pub fn pinball(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Subgradient descent settings for [`fit_linear_quantile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileFit {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for QuantileFit {
    fn default() -> Self {
        Self { steps: 400, step_size: 0.5 }
    }
}

/// Fitted quantile model with the best-so-far pinball loss at checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFitReport {
    pub predictor: LinearPredictor,
    pub checkpoints: Vec<f64>,
}

fn column_stats(x: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (x.len() / d) as f64;
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for ((s, v), m) in sd.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let sd = sd.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

fn empirical_quantile(v: &[f64], tau: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((tau * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    s[idx]
}

/// Minimizes mean pinball loss at level `tau` over linear predictors by
/// full-batch subgradient descent on standardized features. The step at
/// iteration `t` is `step_size·sd(y)/√t`; the best iterate is returned.
pub fn fit_linear_quantile(train: &LabeledDataset, tau: f64, fit: QuantileFit) -> Result<QuantileFitReport> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0,1), got {tau}")));
    }
    let y = train.scalar_responses()?;
    let (d, n) = (train.d, train.n());
    let (mu, sd) = column_stats(&train.x, d);
    let z: Vec<f64> = train
        .rows()
        .flat_map(|row| row.iter().zip(&mu).zip(&sd).map(|((v, m), s)| (v - m) / s))
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-12);

    let mut w = vec![0.0; d];
    let mut b = empirical_quantile(y, tau);
    let loss_of = |w: &[f64], b: f64| -> f64 {
        z.chunks_exact(d)
            .zip(y)
            .map(|(row, &yi)| pinball(yi - b - row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>(), tau))
            .sum::<f64>()
            / n as f64
    };
    let mut best = (loss_of(&w, b), w.clone(), b);
    let every = (fit.steps / 20).max(1);
    let mut checkpoints = vec![best.0];
    let mut gw = vec![0.0; d];
    for t in 1..=fit.steps {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (row, &yi) in z.chunks_exact(d).zip(y) {
            let r = yi - b - row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            loss += pinball(r, tau);
            // d/df of pinball(y - f): -tau above, 1 - tau below.
            let g = if r > 0.0 { -tau } else { 1.0 - tau };
            gb += g;
            for (acc, a) in gw.iter_mut().zip(row) {
                *acc += g * a;
            }
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite pinball loss at step {t}")));
        }
        if loss < best.0 {
            best = (loss, w.clone(), b);
        }
        let eta = fit.step_size * y_sd / (t as f64).sqrt();
        b -= eta * gb / n as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta * g / n as f64;
        }
        if t % every == 0 {
            checkpoints.push(best.0);
        }
    }
    let last = loss_of(&w, b);
    if !last.is_finite() {
        return Err(Error::Training("non-finite pinball loss after the final step".into()));
    }
    if last < best.0 {
        best = (last, w, b);
    }
    checkpoints.push(best.0);
    let (_, wz, bz) = best;
    // Undo the standardization.
    let w: Vec<f64> = wz.iter().zip(&sd).map(|(w, s)| w / s).collect();
    let b = bz - wz.iter().zip(&mu).zip(&sd).map(|((w, m), s)| w * m / s).sum::<f64>();
    Ok(QuantileFitReport { predictor: LinearPredictor { w, b }, checkpoints })
}

/// Ordinary least squares with intercept via the normal equations, damped by
/// a `1e-8` ridge.
pub fn fit_linear_mean(train: &LabeledDataset) -> Result<LinearPredictor> {
    let y = train.scalar_responses()?;
    let (d, n) = (train.d, train.n());
    let p = d + 1;
    let a = DMatrix::from_fn(n, p, |i, j| if j == d { 1.0 } else { train.x[i * d + j] });
    let yv = DVector::from_column_slice(y);
    let mut ata = a.transpose() * &a;
    for i in 0..p {
        ata[(i, i)] += 1e-8;
    }
    let aty = a.transpose() * yv;
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Training("normal equations are singular even with ridge damping".into()))?;
    let beta = chol.solve(&aty);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite least-squares solution".into()));
    }
    Ok(LinearPredictor { w: beta.rows(0, d).iter().copied().collect(), b: beta[d] })
}
