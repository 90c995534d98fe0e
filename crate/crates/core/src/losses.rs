//! Loss functions: 0/1 miscoverage, FNR, the smooth sigmoid miscoverage
//! surrogate and its parameterized family, image miscoverage and the
//! consecutive-miss counter.
//!
//! The smooth surrogate takes values in `[1, 2)`: it equals 1 at the interval
//! center and `h(d)` at the endpoints, so it is an offset version of 0/1
//! miscoverage. Risk levels for it live on that scale.

use serde::{Deserialize, Serialize};

use crate::calibrate::Interval;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Miscoverage,
    Fnr,
    Smooth,
    Image,
    Counter,
}

pub fn miscoverage(covered: bool) -> f64 {
    if covered {
        0.0
    } else {
        1.0
    }
}

pub fn miscoverage_in(y: usize, set: &[usize]) -> f64 {
    miscoverage(set.contains(&y))
}

/// `1 − |y ∩ c| / |y|`.
pub fn fnr(y: &[usize], c: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Domain("FNR is undefined for an empty label set".into()));
    }
    let hit = y.iter().filter(|k| c.contains(k)).count();
    Ok(1.0 - hit as f64 / y.len() as f64)
}

/// FNR for boolean masks of equal length.
pub fn fnr_mask(y: &[bool], c: &[bool]) -> Result<f64> {
    if y.len() != c.len() {
        return Err(Error::Domain(format!("mask lengths differ: {} vs {}", y.len(), c.len())));
    }
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 {
        return Err(Error::Domain("FNR is undefined for an empty label set".into()));
    }
    let hit = y.iter().zip(c).filter(|(&a, &b)| a && b).count();
    Ok(1.0 - hit as f64 / pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothLossParams {
    pub c: f64,
    pub d: f64,
}

impl SmoothLossParams {
    pub const BASE: Self = Self { c: 1.0, d: 1.0 };

    pub fn new(c: f64, d: f64) -> Result<Self> {
        if !(c > 0.0 && d > 0.0) {
            return Err(Error::Domain(format!("smooth loss needs c > 0 and d > 0, got c={c} d={d}")));
        }
        Ok(Self { c, d })
    }
}

fn check_ab(a: f64, b: f64) -> Result<()> {
    if !(a < b) {
        return Err(Error::Domain(format!("need a < b, got [{a}, {b}]")));
    }
    Ok(())
}

#[inline]
fn smooth_unchecked(y: f64, a: f64, b: f64, p: SmoothLossParams) -> f64 {
    let z = 2.0 * (y - a) / (b - a) - 1.0;
    2.0 / (1.0 + (-p.d * (z * z).powf(p.c)).exp())
}

/// `2 / (1 + exp(−(2(y−a)/(b−a) − 1)²))`.
pub fn smooth_miscoverage(y: f64, a: f64, b: f64) -> Result<f64> {
    check_ab(a, b)?;
    Ok(smooth_unchecked(y, a, b, SmoothLossParams::BASE))
}

/// `2 / (1 + exp(−d·((2(y−a)/(b−a) − 1)²)^c))`.
pub fn smooth_miscoverage_param(y: f64, a: f64, b: f64, p: SmoothLossParams) -> Result<f64> {
    check_ab(a, b)?;
    Ok(smooth_unchecked(y, a, b, p))
}

/// Value of the parameterized loss at the interval endpoints.
pub fn h_of_d(d: f64) -> f64 {
    2.0 / (1.0 + (-d).exp())
}

/// Extremes of `∂²L/∂y²` over the sweep window, with their locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureExtrema {
    pub q: f64,
    pub big_q: f64,
    pub y_at_q: f64,
    pub y_at_big_q: f64,
}

const SWEEP_POINTS: usize = 10_000;

/// Sweeps `y` over `[a − 3w, b + 3w]` (`w = b − a`) at 10⁴ points and takes
/// central second differences with step `w·1e-4`. Outside the window the
/// sigmoid is saturated. For `c < 1` the loss has a cusp at the center and
/// the maximum is large and step-dependent.
pub fn second_derivative_extrema(a: f64, b: f64, p: SmoothLossParams) -> Result<CurvatureExtrema> {
    check_ab(a, b)?;
    let w = b - a;
    let (lo, hi) = (a - 3.0 * w, b + 3.0 * w);
    let h = w * 1e-4;
    let mut ext = CurvatureExtrema { q: f64::INFINITY, big_q: f64::NEG_INFINITY, y_at_q: lo, y_at_big_q: lo };
    for i in 0..SWEEP_POINTS {
        let y = lo + (hi - lo) * i as f64 / (SWEEP_POINTS - 1) as f64;
        let f = |t: f64| smooth_unchecked(t, a, b, p);
        let dd = (f(y + h) - 2.0 * f(y) + f(y - h)) / (h * h);
        if !dd.is_finite() {
            return Err(Error::Numeric(format!("non-finite second derivative at y={y}")));
        }
        if dd < ext.q {
            ext.q = dd;
            ext.y_at_q = y;
        }
        if dd > ext.big_q {
            ext.big_q = dd;
            ext.y_at_big_q = y;
        }
    }
    Ok(ext)
}

/// Fraction of pixels outside their intervals.
pub fn image_miscoverage(y: &[f64], c: &[Interval]) -> Result<f64> {
    if y.len() != c.len() {
        return Err(Error::Domain(format!("{} pixels for {} intervals", y.len(), c.len())));
    }
    if y.is_empty() {
        return Err(Error::Domain("empty image".into()));
    }
    let miss = y.iter().zip(c).filter(|(v, i)| !i.contains(**v)).count();
    Ok(miss as f64 / y.len() as f64)
}

/// Consecutive-miss counter: resets on coverage, increments on a miss.
pub fn miscoverage_counter(prev: u64, covered: bool) -> u64 {
    if covered {
        0
    } else {
        prev + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn miscoverage_examples() {
        assert_eq!(miscoverage_in(1, &[0, 1]), 0.0);
        assert_eq!(miscoverage_in(2, &[0, 1]), 1.0);
        assert_eq!(miscoverage_in(0, &[]), 1.0);
    }

    #[test]
    fn fnr_examples() {
        assert!((fnr(&[1, 2, 3], &[1, 2]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(fnr(&[1, 2], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(fnr(&[1, 2], &[0, 3]).unwrap(), 1.0);
        assert!(matches!(fnr(&[], &[1]), Err(Error::Domain(_))));
        assert_eq!(fnr_mask(&[true, true, false], &[true, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn smooth_examples() {
        assert!((smooth_miscoverage(1.5, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((smooth_miscoverage(1.0, 1.0, 2.0).unwrap() - 2.0 / (1.0 + 1.0 / E)).abs() < 1e-12);
        assert!((smooth_miscoverage(1.0, 1.0, 2.0).unwrap() - 1.46212).abs() < 1e-5);
        assert!((smooth_miscoverage(1e6, 1.0, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(smooth_miscoverage(0.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn parameterized_examples() {
        for y in [-3.0, 0.1, 0.7, 4.0] {
            let a = smooth_miscoverage(y, 0.0, 1.0).unwrap();
            let b = smooth_miscoverage_param(y, 0.0, 1.0, SmoothLossParams::BASE).unwrap();
            assert_eq!(a, b);
        }
        for d in [0.5, 1.0, 2.0, 4.0] {
            let p = SmoothLossParams::new(2.0, d).unwrap();
            assert!((smooth_miscoverage_param(-1.0, -1.0, 3.0, p).unwrap() - h_of_d(d)).abs() < 1e-12);
        }
        assert!(SmoothLossParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn threshold_identity_on_a_grid() {
        for p in [SmoothLossParams::BASE, SmoothLossParams { c: 0.5, d: 4.0 }, SmoothLossParams { c: 2.0, d: 0.5 }] {
            let (a, b) = (-1.0, 2.0);
            let h = h_of_d(p.d);
            for i in 0..10_000 {
                let y = -5.0 + 12.0 * i as f64 / 9999.0;
                if y == a || y == b {
                    continue;
                }
                let outside = !(a..=b).contains(&y);
                assert_eq!(outside, smooth_miscoverage_param(y, a, b, p).unwrap() > h, "y={y}");
            }
        }
    }

    #[test]
    fn h_examples() {
        assert!((h_of_d(50.0) - 2.0).abs() < 1e-12);
        assert!((h_of_d(1e-12) - 1.0).abs() < 1e-9);
        assert!((h_of_d(1.0) - 1.46212).abs() < 1e-5);
    }

    #[test]
    fn curvature_symmetry_sign_and_scaling() {
        let e = second_derivative_extrema(0.0, 1.0, SmoothLossParams::BASE).unwrap();
        assert!(e.q < 0.0 && 0.0 < e.big_q);
        // Mirror: the minimum of the even function has a twin on the other side.
        let mirror = 1.0 - e.y_at_q;
        let f = |y: f64| smooth_miscoverage(y, 0.0, 1.0).unwrap();
        let h = 1e-4;
        let dd = (f(mirror + h) - 2.0 * f(mirror) + f(mirror - h)) / (h * h);
        assert!((dd - e.q).abs() < 1e-3 * e.q.abs());

        let e2 = second_derivative_extrema(0.0, 2.0, SmoothLossParams::BASE).unwrap();
        assert!((e.q - 4.0 * e2.q).abs() < 1e-6 * e.q.abs());
        assert!((e.big_q - 4.0 * e2.big_q).abs() < 1e-6 * e.big_q.abs());
    }

    #[test]
    fn sweep_window_is_saturated_at_its_edges() {
        let p = SmoothLossParams::BASE;
        let e = second_derivative_extrema(0.0, 1.0, p).unwrap();
        let f = |y: f64| smooth_miscoverage(y, 0.0, 1.0).unwrap();
        let h = 1e-4;
        for y in [-3.0, 4.0] {
            let dd = (f(y + h) - 2.0 * f(y) + f(y - h)) / (h * h);
            assert!(dd.abs() < 1e-3 * e.q.abs().max(e.big_q));
        }
    }

    #[test]
    fn image_examples() {
        let iv = Interval { lo: 0.0, hi: 1.0 };
        assert_eq!(image_miscoverage(&[0.1, 0.5, 0.9, 1.0], &[iv; 4]).unwrap(), 0.0);
        assert_eq!(image_miscoverage(&[0.1, 0.5, 0.9, 2.0], &[iv; 4]).unwrap(), 0.25);
        assert_eq!(image_miscoverage(&[-1.0, 3.0], &[iv; 2]).unwrap(), 1.0);
        assert!(image_miscoverage(&[0.0], &[iv; 2]).is_err());
    }

    #[test]
    fn counter_examples() {
        let run = |cov: &[bool]| {
            let mut s = 0;
            cov.iter().map(|&c| {
                s = miscoverage_counter(s, c);
                s
            }).collect::<Vec<_>>()
        };
        assert_eq!(run(&[false, false, true, false]), vec![1, 2, 0, 1]);
        assert_eq!(run(&[true; 5]), vec![0; 5]);
        assert_eq!(*run(&[false; 7]).last().unwrap(), 7);
    }

    proptest! {
        #[test]
        fn smooth_range_and_center_minimum(a in -5.0f64..5.0, w in 0.01f64..5.0, y in -50.0f64..50.0) {
            let l = smooth_miscoverage(y, a, a + w).unwrap();
            // Rounds to exactly 2 once exp(−z²) drops below machine epsilon.
            let z = 2.0 * (y - a) / w - 1.0;
            prop_assert!((1.0..2.0).contains(&l) || (l == 2.0 && z.abs() > 5.0));
            prop_assert!(l >= smooth_miscoverage(a + w / 2.0, a, a + w).unwrap());
        }

        #[test]
        fn fnr_monotone_in_set(
            y in prop::collection::btree_set(0usize..12, 1..6),
            c1 in prop::collection::btree_set(0usize..12, 0..8),
            extra in prop::collection::btree_set(0usize..12, 0..8),
        ) {
            let y: Vec<usize> = y.into_iter().collect();
            let small: Vec<usize> = c1.iter().copied().collect();
            let big: Vec<usize> = c1.union(&extra).copied().collect();
            prop_assert!(fnr(&y, &small).unwrap() >= fnr(&y, &big).unwrap());
        }

        #[test]
        fn image_loss_is_mean_of_pixel_losses(v in prop::collection::vec((-3.0f64..3.0, -2.0f64..2.0, 0.0f64..2.0), 1..64)) {
            let y: Vec<f64> = v.iter().map(|t| t.0).collect();
            let c: Vec<Interval> = v.iter().map(|t| Interval { lo: t.1, hi: t.1 + t.2 }).collect();
            let mean = y.iter().zip(&c).map(|(y, c)| miscoverage(c.contains(*y))).sum::<f64>() / y.len() as f64;
            prop_assert!((image_miscoverage(&y, &c).unwrap() - mean).abs() < 1e-12);
        }

        #[test]
        fn counter_sum_dominates_misses(cov in prop::collection::vec(any::<bool>(), 1..200)) {
            let mut s = 0;
            let mut total = 0;
            for &c in &cov {
                s = miscoverage_counter(s, c);
                total += s;
            }
            prop_assert!(total >= cov.iter().filter(|&&c| !c).count() as u64);
        }
    }
}
