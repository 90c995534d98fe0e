//! Label and response corruption models. Every transform draws only from the
//! RNG it is handed, so a fixed seed replays the same corruption.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};

const ROW_TOL: f64 = 1e-9;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Flip,
    UniformFlip,
    Confusion,
    RareToFrequent,
    Additive,
    Contractive,
    Dispersive,
    VectorFlip,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdditiveDist {
    Gauss,
    T1,
    GumbelNormalized,
    AbsT1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorMode {
    Independent,
    Dependent,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attack {
    Prop3,
    W2r,
    Optimal,
    Mfc,
}

/// Axis-aligned box of cells, `[row, row+height) × [col, col+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Noise configuration as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub additive_dist: Option<AdditiveDist>,
    #[serde(default)]
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector_mode: Option<VectorMode>,
    #[serde(default)]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rects: Option<Vec<Rect>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<Attack>,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            transition: None,
            additive_dist: None,
            c: 0.0,
            vector_mode: None,
            beta: 0.0,
            rects: None,
            attack: None,
        }
    }

    pub fn additive(dist: AdditiveDist, c: f64) -> Self {
        Self { additive_dist: Some(dist), c, ..Self::new(NoiseKind::Additive, 0.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Validation(format!("epsilon must lie in [0,1), got {}", self.epsilon)));
        }
        if !(self.c >= 0.0) {
            return Err(Error::Validation(format!("c must be nonnegative, got {}", self.c)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Validation(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        match self.kind {
            NoiseKind::Confusion => {
                let rows = self
                    .transition
                    .clone()
                    .ok_or_else(|| Error::Config("confusion noise needs a transition matrix".into()))?;
                TransitionMatrix::new(rows)?;
            }
            NoiseKind::Additive if self.additive_dist.is_none() => {
                return Err(Error::Config("additive noise needs additive_dist".into()));
            }
            NoiseKind::VectorFlip if self.vector_mode.is_none() => {
                return Err(Error::Config("vector-flip noise needs vector_mode".into()));
            }
            NoiseKind::Adversarial if self.attack.is_none() => {
                return Err(Error::Config("adversarial noise needs an attack".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {k}")));
    }
    Ok(())
}

/// With probability `eps`, replaces `y` by a uniform draw over all `k` labels.
pub fn apply_flip<R: Rng + ?Sized>(y: usize, k: usize, eps: f64, rng: &mut R) -> Result<usize> {
    check_k(k)?;
    check_index(y, k)?;
    if rng.random::<f64>() < eps {
        Ok(rng.random_range(0..k))
    } else {
        Ok(y)
    }
}

/// With probability `eps`, replaces `y` by a uniform draw over the other labels.
pub fn apply_uniform_flip<R: Rng + ?Sized>(y: usize, k: usize, eps: f64, rng: &mut R) -> Result<usize> {
    check_k(k)?;
    check_index(y, k)?;
    if rng.random::<f64>() < eps {
        let j = rng.random_range(0..k - 1);
        Ok(if j >= y { j + 1 } else { j })
    } else {
        Ok(y)
    }
}

/// Row-stochastic matrix, `rows[i][j] = P(noisy = j | clean = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::Validation("empty transition matrix".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::Validation(format!("row {i} has {} entries, expected {k}", r.len())));
            }
            if r.iter().any(|&v| !(0.0..=1.0 + ROW_TOL).contains(&v)) {
                return Err(Error::Validation(format!("row {i} has an entry outside [0,1]")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::Validation(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(k: usize) -> Self {
        let rows = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self { rows }
    }

    /// Channel of `apply_flip`.
    pub fn flip(k: usize, eps: f64) -> Self {
        let off = eps / k as f64;
        let rows = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 - eps + off } else { off }).collect())
            .collect();
        Self { rows }
    }

    /// Channel of `apply_uniform_flip`.
    pub fn uniform_flip(k: usize, eps: f64) -> Self {
        let off = eps / (k - 1) as f64;
        let rows = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 - eps } else { off }).collect())
            .collect();
        Self { rows }
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    /// Pushforward `wᵀT` of a distribution over clean labels.
    pub fn push(&self, w: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut out = vec![0.0; k];
        for (i, &wi) in w.iter().enumerate() {
            for (o, t) in out.iter_mut().zip(&self.rows[i]) {
                *o += wi * t;
            }
        }
        out
    }

    /// Expected flip probability `Σ π_i (1 − T_ii)`.
    pub fn flip_rate(&self, marginals: &[f64]) -> f64 {
        marginals.iter().enumerate().map(|(i, p)| p * (1.0 - self.rows[i][i])).sum()
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left a sliver of mass; return the last positive entry.
    w.iter().rposition(|&p| p > 0.0).unwrap_or(w.len() - 1)
}

pub fn apply_confusion<R: Rng + ?Sized>(y: usize, t: &TransitionMatrix, rng: &mut R) -> Result<usize> {
    check_index(y, t.k())?;
    Ok(sample_categorical(&t.rows[y], rng))
}

/// Turns oracle confusion counts (rows = true class) into a transition matrix
/// whose total expected flip probability, under the row-count marginals, is
/// `eps`. Off-diagonal rates keep the oracle's per-row shape and share one
/// global scale factor.
pub fn build_confusion_from_oracle(counts: &[Vec<f64>], eps: f64) -> Result<TransitionMatrix> {
    let k = counts.len();
    check_k(k)?;
    if counts.iter().any(|r| r.len() != k || r.iter().any(|&c| !(c >= 0.0))) {
        return Err(Error::Validation("confusion counts must be a nonnegative square matrix".into()));
    }
    let totals: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
    let grand: f64 = totals.iter().sum();
    if grand <= 0.0 {
        return Ok(TransitionMatrix::identity(k));
    }
    let rates: Vec<Vec<f64>> = counts
        .iter()
        .zip(&totals)
        .enumerate()
        .map(|(i, (r, &tot))| {
            (0..k)
                .map(|j| if j == i || tot <= 0.0 { 0.0 } else { r[j] / tot })
                .collect()
        })
        .collect();
    let off_mass: Vec<f64> = rates.iter().map(|r| r.iter().sum()).collect();
    let base: f64 = totals.iter().zip(&off_mass).map(|(t, m)| t / grand * m).sum();
    if eps == 0.0 || base <= 0.0 {
        if eps > 0.0 {
            log::warn!("oracle made no confusions; returning identity channel");
        }
        return Ok(TransitionMatrix::identity(k));
    }
    let kappa = eps / base;
    if let Some(i) = off_mass.iter().position(|m| kappa * m > 1.0 + ROW_TOL) {
        return Err(Error::Infeasible(format!(
            "flip rate {eps} needs row {i} to flip with probability {}",
            kappa * off_mass[i]
        )));
    }
    let rows = rates
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            for v in r.iter_mut() {
                *v *= kappa;
            }
            r[i] = (1.0 - kappa * off_mass[i]).max(0.0);
            r
        })
        .collect();
    TransitionMatrix::new(rows)
}

/// Per-class flip probabilities for rare-to-frequent noise.
#[derive(Debug, Clone, PartialEq)]
pub struct RareToFrequentPlan {
    pub target: usize,
    pub flip_prob: Vec<f64>,
    /// Expected flip probability actually reachable (≤ eps).
    pub planned_rate: f64,
}

impl RareToFrequentPlan {
    /// Flips the rarest class into the most frequent one, then the next
    /// rarest, until total probability `eps` is used up. Ties go to the
    /// lowest index.
    pub fn new(marginals: &[f64], eps: f64) -> Result<Self> {
        let k = marginals.len();
        check_k(k)?;
        let mut target = 0;
        for (i, &p) in marginals.iter().enumerate() {
            if p > marginals[target] {
                target = i;
            }
        }
        let mut order: Vec<usize> = (0..k).filter(|&i| i != target).collect();
        order.sort_by(|&a, &b| marginals[a].total_cmp(&marginals[b]).then(a.cmp(&b)));
        let mut flip_prob = vec![0.0; k];
        let mut remaining = eps;
        for c in order {
            if remaining <= 0.0 {
                break;
            }
            let pc = marginals[c];
            if pc <= 0.0 {
                continue;
            }
            let f = (remaining / pc).min(1.0);
            flip_prob[c] = f;
            remaining -= f * pc;
        }
        let planned_rate = eps - remaining.max(0.0);
        if remaining > 1e-12 {
            log::warn!("rare-to-frequent: requested rate {eps} exceeds flippable mass; using {planned_rate}");
        }
        Ok(Self { target, flip_prob, planned_rate })
    }

    pub fn channel(&self) -> TransitionMatrix {
        let k = self.flip_prob.len();
        let mut t = TransitionMatrix::identity(k);
        for (c, &f) in self.flip_prob.iter().enumerate() {
            if f > 0.0 {
                t.rows[c][c] = 1.0 - f;
                t.rows[c][self.target] = f;
            }
        }
        t
    }
}

/// Applies rare-to-frequent noise; returns the corrupted labels and the
/// achieved (empirical) flip rate.
pub fn apply_rare_to_frequent<R: Rng + ?Sized>(
    labels: &[usize],
    marginals: &[f64],
    eps: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, f64)> {
    let plan = RareToFrequentPlan::new(marginals, eps)?;
    let k = marginals.len();
    let mut out = Vec::with_capacity(labels.len());
    for &y in labels {
        check_index(y, k)?;
        let f = plan.flip_prob[y];
        out.push(if f > 0.0 && rng.random::<f64>() < f { plan.target } else { y });
    }
    Ok((out.clone(), disagreement(labels, &out)))
}

pub fn disagreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// One draw of the standardized additive noise variable `Z`.
pub fn sample_additive<R: Rng + ?Sized>(dist: AdditiveDist, rng: &mut R) -> f64 {
    match dist {
        AdditiveDist::Gauss => StandardNormal.sample(rng),
        AdditiveDist::T1 => Cauchy::new(0.0, 1.0).expect("valid cauchy").sample(rng),
        AdditiveDist::GumbelNormalized => {
            let g: f64 = Gumbel::new(0.0, 1.0).expect("valid gumbel").sample(rng);
            (g - EULER_GAMMA) / (std::f64::consts::PI / 6f64.sqrt())
        }
        AdditiveDist::AbsT1 => {
            let t: f64 = Cauchy::new(0.0, 1.0).expect("valid cauchy").sample(rng);
            t.abs()
        }
    }
}

pub fn apply_additive<R: Rng + ?Sized>(y: f64, dist: AdditiveDist, c: f64, rng: &mut R) -> f64 {
    if c == 0.0 {
        return y;
    }
    y + c * sample_additive(dist, rng)
}

/// `Y_i − sign·(Y_i − mean)·U_i` with caller-chosen `U_i`. Exposed so tests
/// can freeze the draws.
pub fn shift_about_mean(batch: &[f64], us: &[f64], dispersive: bool) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if us.len() != batch.len() {
        return Err(Error::Domain(format!("{} draws for {} responses", us.len(), batch.len())));
    }
    let mean = batch.iter().sum::<f64>() / batch.len() as f64;
    let sign = if dispersive { 1.0 } else { -1.0 };
    Ok(batch.iter().zip(us).map(|(y, u)| y + sign * (y - mean) * u).collect())
}

fn half_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..=0.5)).collect()
}

/// Pulls each response toward the batch mean by a fraction `U ~ Unif[0, 0.5]`.
pub fn apply_contractive<R: Rng + ?Sized>(batch: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let us = half_uniform(batch.len(), rng);
    shift_about_mean(batch, &us, false)
}

/// Pushes each response away from the batch mean by `U ~ Unif[0, 0.5]`.
pub fn apply_dispersive<R: Rng + ?Sized>(batch: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let us = half_uniform(batch.len(), rng);
    shift_about_mean(batch, &us, true)
}

/// Row-major binary matrix; a multi-label vector is a single row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Domain(format!("{} cells for a {rows}x{cols} grid", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_vec(data: Vec<bool>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn flip_rect(&mut self, r: &Rect) {
        for i in r.row..r.row + r.height {
            for j in r.col..r.col + r.width {
                let idx = i * self.cols + j;
                self.data[idx] = !self.data[idx];
            }
        }
    }
}

/// Two boxes of roughly 10% of the area each, top-left and bottom-right.
pub fn default_rects(rows: usize, cols: usize) -> Vec<Rect> {
    let area = (rows * cols) as f64 * 0.1;
    let height = ((rows as f64 * 0.1f64.sqrt()).round() as usize).clamp(1, rows);
    let width = ((area / height as f64).round() as usize).clamp(1, cols);
    vec![
        Rect { row: 0, col: 0, height, width },
        Rect { row: rows - height, col: cols - width, height, width },
    ]
}

fn check_rect(r: &Rect, g: &BinaryGrid) -> Result<()> {
    if r.height == 0 || r.width == 0 || r.row + r.height > g.rows || r.col + r.width > g.cols {
        return Err(Error::Validation(format!("rectangle {r:?} outside {}x{} grid", g.rows, g.cols)));
    }
    Ok(())
}

/// Vector-flip noise. Independent mode flips each cell with probability
/// `beta`; dependent mode also flips each configured rectangle as a block
/// with probability `beta`; partial mode flips only the first rectangle.
pub fn apply_vector_flip<R: Rng + ?Sized>(
    y: &BinaryGrid,
    mode: VectorMode,
    beta: f64,
    rects: Option<&[Rect]>,
    rng: &mut R,
) -> Result<BinaryGrid> {
    let defaults;
    let rects = match rects {
        Some(r) => r,
        None => {
            defaults = default_rects(y.rows, y.cols);
            &defaults
        }
    };
    for r in rects {
        check_rect(r, y)?;
    }
    let mut out = y.clone();
    match mode {
        VectorMode::Independent | VectorMode::Dependent => {
            for b in out.data.iter_mut() {
                if rng.random::<f64>() < beta {
                    *b = !*b;
                }
            }
            if mode == VectorMode::Dependent {
                for r in rects.iter().take(2) {
                    if rng.random::<f64>() < beta {
                        out.flip_rect(r);
                    }
                }
            }
        }
        VectorMode::Partial => {
            let r = rects.first().ok_or_else(|| Error::Config("partial vector flip needs a rectangle".into()))?;
            if rng.random::<f64>() < beta {
                out.flip_rect(r);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    const N: usize = 1_000_000;

    #[test]
    fn flip_examples() {
        let mut rng = stream_rng(1, 1);
        assert!((0..1000).all(|_| apply_flip(3, 10, 0.0, &mut rng).unwrap() == 3));
        let same = (0..N).filter(|_| apply_flip(0, 2, 1.0 - 1e-12, &mut rng).unwrap() == 0).count();
        assert!((same as f64 / N as f64 - 0.5).abs() < 0.002);
        let moved = (0..N).filter(|_| apply_flip(4, 10, 0.05, &mut rng).unwrap() != 4).count();
        assert!((moved as f64 / N as f64 - 0.045).abs() < 0.002);
        assert!(matches!(apply_flip(0, 1, 0.1, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_flip_examples() {
        let mut rng = stream_rng(2, 1);
        assert_eq!(apply_uniform_flip(5, 10, 0.0, &mut rng).unwrap(), 5);
        assert!((0..1000).all(|_| apply_uniform_flip(0, 2, 1.0, &mut rng).unwrap() == 1));
        let moved = (0..N).filter(|_| apply_uniform_flip(4, 10, 0.05, &mut rng).unwrap() != 4).count();
        assert!((moved as f64 / N as f64 - 0.05).abs() < 0.002);
        assert!(apply_uniform_flip(0, 1, 0.1, &mut rng).is_err());
    }

    #[test]
    fn flip_marginal_within_binomial_tolerance() {
        let (k, eps, y) = (5, 0.3, 2);
        let mut rng = stream_rng(3, 1);
        let mut counts = vec![0usize; k];
        let n = 200_000;
        for _ in 0..n {
            counts[apply_flip(y, k, eps, &mut rng).unwrap()] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            let p = (1.0 - eps) * f64::from(j == y) + eps / k as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * sd + 1e-12, "class {j}");
        }
    }

    #[test]
    fn confusion_examples() {
        let mut rng = stream_rng(4, 1);
        let id = TransitionMatrix::identity(4);
        assert!((0..1000).all(|_| apply_confusion(2, &id, &mut rng).unwrap() == 2));

        let uni = TransitionMatrix::new(vec![vec![0.25; 4]; 4]).unwrap();
        let mut counts = [0usize; 4];
        for _ in 0..N {
            counts[apply_confusion(1, &uni, &mut rng).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| (c as f64 / N as f64 - 0.25).abs() < 0.002));

        let t = TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let zeros = (0..N).filter(|_| apply_confusion(1, &t, &mut rng).unwrap() == 0).count();
        assert!((zeros as f64 / N as f64 - 0.2).abs() < 0.002);

        assert!(TransitionMatrix::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn confusion_from_oracle() {
        let zero_off = vec![vec![5.0, 0.0], vec![0.0, 7.0]];
        assert_eq!(build_confusion_from_oracle(&zero_off, 0.1).unwrap(), TransitionMatrix::identity(2));
        let counts = vec![vec![50.0, 3.0, 1.0], vec![4.0, 40.0, 2.0], vec![0.0, 6.0, 30.0]];
        assert_eq!(build_confusion_from_oracle(&counts, 0.0).unwrap(), TransitionMatrix::identity(3));

        let mut rng = stream_rng(5, 1);
        for _ in 0..20 {
            let k = 6;
            let counts: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..k).map(|j| if i == j { 200.0 } else { rng.random_range(0.0..10.0) }).collect())
                .collect();
            let t = build_confusion_from_oracle(&counts, 0.05).unwrap();
            let totals: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
            let g: f64 = totals.iter().sum();
            let pi: Vec<f64> = totals.iter().map(|t| t / g).collect();
            assert!((t.flip_rate(&pi) - 0.05).abs() < 1e-9);
            // Off-diagonal shape follows the counts within each row.
            let r = &t.rows()[0];
            assert!((r[1] / r[2] - counts[0][1] / counts[0][2]).abs() < 1e-9);
        }
    }

    #[test]
    fn rare_to_frequent_examples() {
        let mut rng = stream_rng(6, 1);
        let labels: Vec<usize> = (0..100_000).map(|i| usize::from(i % 10 == 0)).collect();
        let (same, rate) = apply_rare_to_frequent(&labels, &[0.9, 0.1], 0.0, &mut rng).unwrap();
        assert_eq!(same, labels);
        assert_eq!(rate, 0.0);

        let (out, rate) = apply_rare_to_frequent(&labels, &[0.9, 0.1], 0.05, &mut rng).unwrap();
        let rare = labels.iter().filter(|&&y| y == 1).count() as f64;
        let flipped = labels.iter().zip(&out).filter(|(a, b)| **a == 1 && **b == 0).count() as f64;
        let sd = (0.25 / rare).sqrt();
        assert!((flipped / rare - 0.5).abs() < 4.0 * sd);
        assert_eq!(rate, disagreement(&labels, &out));
        assert!(labels.iter().zip(&out).all(|(a, b)| a == b || (*a == 1 && *b == 0)));
    }

    #[test]
    fn rare_to_frequent_plan_orders_by_rarity() {
        let plan = RareToFrequentPlan::new(&[0.5, 0.1, 0.3, 0.1], 0.25).unwrap();
        assert_eq!(plan.target, 0);
        assert_eq!(plan.flip_prob[1], 1.0);
        assert_eq!(plan.flip_prob[3], 1.0);
        assert!((plan.flip_prob[2] - 0.05 / 0.3).abs() < 1e-12);
        assert!((plan.channel().flip_rate(&[0.5, 0.1, 0.3, 0.1]) - 0.25).abs() < 1e-12);
        let over = RareToFrequentPlan::new(&[0.9, 0.1], 0.5).unwrap();
        assert!((over.planned_rate - 0.1).abs() < 1e-12);
    }

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, s)
    }

    #[test]
    fn additive_examples() {
        let mut rng = stream_rng(7, 1);
        assert_eq!(apply_additive(3.0, AdditiveDist::Gauss, 0.0, &mut rng), 3.0);
        let g: Vec<f64> = (0..N).map(|_| apply_additive(1.0, AdditiveDist::Gauss, 1.0, &mut rng) - 1.0).collect();
        assert!(mean_var(&g).0.abs() < 0.005);
        let gum: Vec<f64> = (0..N).map(|_| sample_additive(AdditiveDist::GumbelNormalized, &mut rng)).collect();
        let (m, v) = mean_var(&gum);
        assert!(m.abs() < 0.005, "mean {m}");
        assert!((v - 1.0).abs() < 0.01, "var {v}");
        assert!((0..1000).all(|_| sample_additive(AdditiveDist::AbsT1, &mut rng) >= 0.0));
    }

    #[test]
    fn contractive_dispersive_examples() {
        let mut rng = stream_rng(8, 1);
        assert_eq!(apply_contractive(&[2.0; 5], &mut rng).unwrap(), vec![2.0; 5]);
        assert_eq!(shift_about_mean(&[0.0, 10.0], &[0.5, 0.5], false).unwrap(), vec![2.5, 7.5]);
        assert!(apply_dispersive(&[], &mut rng).is_err());

        let batch: Vec<f64> = (0..100_000).map(|_| sample_additive(AdditiveDist::Gauss, &mut rng)).collect();
        let v0 = mean_var(&batch).1;
        let vc = mean_var(&apply_contractive(&batch, &mut rng).unwrap()).1;
        let vd = mean_var(&apply_dispersive(&batch, &mut rng).unwrap()).1;
        assert!(vc < v0 && v0 < vd);
    }

    #[test]
    fn deviation_scales_by_one_minus_and_plus_mean_u() {
        // E[Ỹ − Ȳ] / (Y − Ȳ) is 1 ∓ E[U] = 0.75 / 1.25.
        let mut rng = stream_rng(9, 1);
        let batch: Vec<f64> = (0..200_000).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let c = apply_contractive(&batch, &mut rng).unwrap();
        let d = apply_dispersive(&batch, &mut rng).unwrap();
        let ratio = |v: &[f64]| v.iter().zip(&batch).map(|(a, y)| a * y).sum::<f64>() / batch.len() as f64;
        assert!((ratio(&c) - 0.75).abs() < 0.003);
        assert!((ratio(&d) - 1.25).abs() < 0.003);
    }

    #[test]
    fn vector_flip_examples() {
        let mut rng = stream_rng(10, 1);
        let y = BinaryGrid::new(4, 4, (0..16).map(|i| i % 3 == 0).collect()).unwrap();
        assert_eq!(apply_vector_flip(&y, VectorMode::Independent, 0.0, None, &mut rng).unwrap(), y);
        let comp = apply_vector_flip(&y, VectorMode::Independent, 1.0, None, &mut rng).unwrap();
        assert!(comp.data.iter().zip(&y.data).all(|(a, b)| a != b));

        let big = BinaryGrid::new(1000, 1000, vec![false; N]).unwrap();
        let out = apply_vector_flip(&big, VectorMode::Independent, 0.1, None, &mut rng).unwrap();
        assert!((out.count_ones() as f64 / N as f64 - 0.1).abs() < 0.001);

        let bad = [Rect { row: 3, col: 3, height: 2, width: 2 }];
        assert!(matches!(
            apply_vector_flip(&y, VectorMode::Partial, 0.5, Some(&bad), &mut rng),
            Err(Error::Validation(_))
        ));
        let part = apply_vector_flip(&y, VectorMode::Partial, 1.0, None, &mut rng).unwrap();
        let r = default_rects(4, 4)[0];
        assert_eq!(part.data.iter().zip(&y.data).filter(|(a, b)| a != b).count(), r.height * r.width);
    }

    #[test]
    fn default_rects_cover_about_ten_percent() {
        for (r, c) in [(8, 8), (16, 16), (10, 20)] {
            for rect in default_rects(r, c) {
                let frac = (rect.height * rect.width) as f64 / (r * c) as f64;
                assert!((0.05..=0.15).contains(&frac), "{r}x{c}: {frac}");
            }
        }
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let labels: Vec<usize> = (0..500).map(|i| i % 7).collect();
        let run = |seed| {
            let mut rng = stream_rng(seed, 3);
            labels.iter().map(|&y| apply_uniform_flip(y, 7, 0.3, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn spec_parses_kebab_case_and_rejects_unknown_keys() {
        let s: NoiseSpec = serde_json::from_str(r#"{"kind":"uniform-flip","epsilon":0.05}"#).unwrap();
        assert_eq!(s.kind, NoiseKind::UniformFlip);
        s.validate().unwrap();
        assert!(serde_json::from_str::<NoiseSpec>(r#"{"kind":"flip","epsilonn":0.05}"#).is_err());
        let a: NoiseSpec =
            serde_json::from_str(r#"{"kind":"additive","additive_dist":"gumbel-normalized","c":1}"#).unwrap();
        assert_eq!(a.additive_dist, Some(AdditiveDist::GumbelNormalized));
        assert!(NoiseSpec::new(NoiseKind::Flip, 1.0).validate().is_err());
        assert!(NoiseSpec::new(NoiseKind::Confusion, 0.1).validate().is_err());
    }
}
