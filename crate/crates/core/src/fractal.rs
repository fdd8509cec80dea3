//! Box-counting fractal dimension of per-class object locations.
//!
//! For a class with `n` instances the grid sizes `G = 1..=t` with
//! `t = floor(sqrt(n))` are counted, and the dimension is the least-squares
//! slope of `ln(nu)` against `ln(G)`, where `nu` is the number of occupied
//! cells. Classes with fewer than four instances cannot fill even a `2 x 2`
//! grid; they receive the neutral dimension 1.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::annotations::Dataset;
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::Center;

/// Smallest instance count that allows a fitted (non-fallback) dimension.
pub const MIN_FIT_INSTANCES: u64 = 4;
/// Dimension assigned to classes too small to fit.
pub const FALLBACK_PHI: f64 = 1.0;
pub const MAX_PHI: f64 = 2.0;

/// Which box-count statistic enters the log-log fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    /// `ln(nu)`.
    #[default]
    Box,
    /// `ln(nu / G^2)`, the occupied fraction of the grid.
    Info,
    /// `1 + ln(sum over cells of (1 + occupied) / G^2)`.
    SmoothInfo,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Box => "box",
            Variant::Info => "info",
            Variant::SmoothInfo => "smooth_info",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Variant::Box),
            "info" => Ok(Variant::Info),
            "smooth_info" | "smooth-info" | "smoothinfo" => Ok(Variant::SmoothInfo),
            other => Err(invalid_arg!("unknown fractal variant `{other}`")),
        }
    }
}

/// Occupied-cell counts `(G, nu)` for `G = 1..=t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxCountSeries {
    pub class_id: u64,
    pub pairs: Vec<(usize, u64)>,
}

impl BoxCountSeries {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractalEstimate {
    pub class_id: u64,
    pub instance_count: u64,
    pub phi: f64,
    pub variant: Variant,
    /// Largest grid size used; at least 1.
    pub t: usize,
    /// Number of `(G, nu)` points in the fit, 0 for fallbacks.
    pub pair_count: usize,
    pub fallback: bool,
    /// Series the fit was computed from; `None` for fallbacks.
    pub series: Option<BoxCountSeries>,
}

/// Options for [`estimate_class`] and [`estimate_all`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractalConfig {
    pub variant: Variant,
    /// Upper bound on `t`; `None` keeps the unbounded quadratic rule.
    pub t_cap: Option<usize>,
    /// Shift Info/SmoothInfo slopes by `+2` so they share the box range.
    pub shift_info: bool,
}

impl Default for FractalConfig {
    fn default() -> Self {
        FractalConfig { variant: Variant::Box, t_cap: None, shift_info: true }
    }
}

impl FractalConfig {
    pub fn validate(&self) -> Result<()> {
        match self.t_cap {
            Some(cap) if cap < 2 => Err(invalid_arg!("t_cap must be at least 2, got {cap}")),
            _ => Ok(()),
        }
    }
}

/// Quadratic rule: `floor(sqrt(n))`, optionally capped.
pub fn fit_threshold(instance_count: u64, t_cap: Option<usize>) -> usize {
    let t = isqrt(instance_count) as usize;
    match t_cap {
        Some(cap) => t.min(cap),
        None => t,
    }
}

fn isqrt(n: u64) -> u64 {
    let mut r = libm::sqrt(n as f64) as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Count occupied cells of each grid `G = 1..=t`. The grids are not nested,
/// so `nu` need not be monotone in `G`.
pub fn build_box_count_series(class_id: u64, points: &[Center], t: usize) -> Result<BoxCountSeries> {
    if points.is_empty() {
        return Err(invalid_arg!("cannot box-count an empty point set (class {class_id})"));
    }
    if t == 0 {
        return Err(invalid_arg!("fit threshold must be at least 1"));
    }
    // stamp[cell] == g marks the cell as seen for grid g
    let mut stamp = vec![0usize; t * t];
    let mut pairs = Vec::with_capacity(t);
    for g in 1..=t {
        let mut nu = 0u64;
        for p in points {
            let (i, j) = p.cell(g);
            let slot = &mut stamp[j * g + i];
            if *slot != g {
                *slot = g;
                nu += 1;
            }
        }
        pairs.push((g, nu));
    }
    Ok(BoxCountSeries { class_id, pairs })
}

/// Ordinary least-squares slope of `ys` on `xs`, with intercept.
pub(crate) fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

fn variant_ordinate(variant: Variant, g: usize, nu: u64) -> f64 {
    let cells = (g * g) as f64;
    let nu = nu as f64;
    match variant {
        Variant::Box => libm::log(nu),
        Variant::Info => libm::log(nu / cells),
        Variant::SmoothInfo => 1.0 + libm::log((cells + nu) / cells),
    }
}

/// Fit the dimension from a box-count series. The fitted slope is clamped
/// to `[0, 2]`.
pub fn fit_dimension(series: &BoxCountSeries, variant: Variant, shift_info: bool) -> Result<FractalEstimate> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(alloc::format!(
            "class {} has {} box-count pairs, need at least 2",
            series.class_id,
            series.len()
        )));
    }
    let xs: Vec<f64> = series.pairs.iter().map(|&(g, _)| libm::log(g as f64)).collect();
    let ys: Vec<f64> = series.pairs.iter().map(|&(g, nu)| variant_ordinate(variant, g, nu)).collect();
    let mut slope = ols_slope(&xs, &ys);
    if shift_info && variant != Variant::Box {
        slope += 2.0;
    }
    let phi = if slope.is_nan() { 0.0 } else { slope.clamp(0.0, MAX_PHI) };
    let t = series.pairs.last().map_or(1, |&(g, _)| g);
    Ok(FractalEstimate {
        class_id: series.class_id,
        instance_count: 0,
        phi,
        variant,
        t,
        pair_count: series.len(),
        fallback: false,
        series: Some(series.clone()),
    })
}

fn fallback_estimate(class_id: u64, instance_count: u64, config: &FractalConfig) -> FractalEstimate {
    FractalEstimate {
        class_id,
        instance_count,
        phi: FALLBACK_PHI,
        variant: config.variant,
        t: fit_threshold(instance_count, config.t_cap).max(1),
        pair_count: 0,
        fallback: true,
        series: None,
    }
}

/// Dimension of one class from its instance centers.
pub fn estimate_class(class_id: u64, points: &[Center], config: &FractalConfig) -> Result<FractalEstimate> {
    config.validate()?;
    let n = points.len() as u64;
    if n < MIN_FIT_INSTANCES {
        return Ok(fallback_estimate(class_id, n, config));
    }
    let t = fit_threshold(n, config.t_cap);
    let series = build_box_count_series(class_id, points, t)?;
    let mut est = fit_dimension(&series, config.variant, config.shift_info)?;
    est.instance_count = n;
    Ok(est)
}

/// Dimension of every catalog category, in class-id order.
pub fn estimate_all(ds: &Dataset, config: &FractalConfig) -> Result<BTreeMap<u64, FractalEstimate>> {
    config.validate()?;
    ds.centers_by_class()
        .into_iter()
        .map(|(class_id, pts)| estimate_class(class_id, &pts, config).map(|e| (class_id, e)))
        .collect()
}

/// Sample Pearson correlation coefficient, accumulated in a single pass.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(invalid_arg!("length mismatch: {} vs {}", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(invalid_arg!("need at least 2 samples, got {}", xs.len()));
    }
    // Welford-style running co-moments
    let (mut mx, mut my, mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (k + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        cxx += dx * (x - mx);
        cyy += dy * (y - my);
        cxy += dx * (y - my);
    }
    if cxx <= 0.0 {
        return Err(Error::UndefinedCorrelation("first sample has zero variance"));
    }
    if cyy <= 0.0 {
        return Err(Error::UndefinedCorrelation("second sample has zero variance"));
    }
    Ok((cxy / libm::sqrt(cxx * cyy)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(pairs: &[(usize, u64)]) -> BoxCountSeries {
        BoxCountSeries { class_id: 0, pairs: pairs.to_vec() }
    }

    fn pts(v: &[(f64, f64)]) -> Vec<Center> {
        v.iter().map(|&(x, y)| Center::new(x, y)).collect()
    }

    #[test]
    fn series_examples() {
        let same = pts(&[(0.3, 0.7); 9]);
        assert_eq!(build_box_count_series(0, &same, 3).unwrap().pairs, vec![(1, 1), (2, 1), (3, 1)]);

        let quad = pts(&[(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]);
        assert_eq!(build_box_count_series(0, &quad, 2).unwrap().pairs, vec![(1, 1), (2, 4)]);

        let central = pts(&[(0.49, 0.49), (0.51, 0.49), (0.49, 0.51), (0.51, 0.51)]);
        let s = build_box_count_series(0, &central, 3).unwrap();
        assert_eq!(s.pairs[1], (2, 4));
        assert_eq!(s.pairs[2], (3, 1));
    }

    #[test]
    fn series_rejects_empty() {
        assert!(matches!(build_box_count_series(0, &[], 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fit_examples() {
        let full = series(&[(1, 1), (2, 4), (3, 9), (4, 16)]);
        assert!((fit_dimension(&full, Variant::Box, true).unwrap().phi - 2.0).abs() < 1e-12);
        let flat = series(&[(1, 1), (2, 1), (3, 1)]);
        assert_eq!(fit_dimension(&flat, Variant::Box, true).unwrap().phi, 0.0);
        let line = series(&[(1, 1), (2, 2), (3, 3), (4, 4)]);
        assert!((fit_dimension(&line, Variant::Box, true).unwrap().phi - 1.0).abs() < 1e-12);

        let info = fit_dimension(&full, Variant::Info, true).unwrap();
        assert!((info.phi - 2.0).abs() < 1e-12);
        // unshifted info slope is 0 on the full series
        assert!(fit_dimension(&full, Variant::Info, false).unwrap().phi.abs() < 1e-12);
        // line series: info raw slope is -1, shifted to 1
        assert!((fit_dimension(&line, Variant::Info, true).unwrap().phi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_info_ordinate() {
        // nu = G^2: ordinate is the constant 1 + ln 2, slope 0, shifted to 2
        let full = series(&[(1, 1), (2, 4), (3, 9)]);
        let est = fit_dimension(&full, Variant::SmoothInfo, true).unwrap();
        assert!((est.phi - 2.0).abs() < 1e-12);
        assert!((variant_ordinate(Variant::SmoothInfo, 2, 4) - (1.0 + libm::log(2.0))).abs() < 1e-15);
        assert!((variant_ordinate(Variant::SmoothInfo, 2, 1) - (1.0 + libm::log(5.0 / 4.0))).abs() < 1e-15);
    }

    #[test]
    fn fit_needs_two_pairs() {
        assert!(matches!(fit_dimension(&series(&[(1, 1)]), Variant::Box, true), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn quadratic_rule() {
        assert_eq!(fit_threshold(12, None), 3);
        assert_eq!(fit_threshold(4, None), 2);
        assert_eq!(fit_threshold(3, None), 1);
        assert_eq!(fit_threshold(15, None), 3);
        assert_eq!(fit_threshold(16, None), 4);
        assert_eq!(fit_threshold(10_000, Some(32)), 32);
        assert_eq!(fit_threshold(u32::MAX as u64 * 4, None), 131_071);
    }

    #[test]
    fn estimate_class_rules() {
        let cfg = FractalConfig::default();
        let twelve: Vec<Center> = (0..12).map(|k| Center::new(k as f64 / 12.0, 0.5)).collect();
        let est = estimate_class(5, &twelve, &cfg).unwrap();
        assert_eq!(est.t, 3);
        assert_eq!(est.pair_count, 3);
        let gs: Vec<usize> = est.series.unwrap().pairs.iter().map(|p| p.0).collect();
        assert_eq!(gs, vec![1, 2, 3]);

        let three = pts(&[(0.1, 0.1), (0.5, 0.5), (0.9, 0.9)]);
        let est = estimate_class(5, &three, &cfg).unwrap();
        assert!(est.fallback);
        assert_eq!(est.phi, 1.0);

        let four = pts(&[(0.1, 0.1), (0.5, 0.5), (0.9, 0.9), (0.2, 0.8)]);
        let est = estimate_class(5, &four, &cfg).unwrap();
        assert!(!est.fallback);
        assert_eq!(est.t, 2);

        let none = estimate_class(5, &[], &cfg).unwrap();
        assert!(none.fallback);
        assert_eq!(none.phi, 1.0);
        assert_eq!(none.t, 1);
    }

    #[test]
    fn bad_cap_rejected() {
        let cfg = FractalConfig { t_cap: Some(1), ..Default::default() };
        assert!(estimate_class(0, &pts(&[(0.5, 0.5); 9]), &cfg).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson_correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_correlation(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
        assert!(matches!(pearson_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson_correlation(&[1.0], &[1.0]).is_err());
        assert!(pearson_correlation(&[1.0, 2.0], &[1.0]).is_err());
    }

    /// Two-pass covariance formula, kept separate from the single-pass path.
    fn pearson_two_pass(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        cov / (vx * vy).sqrt()
    }

    proptest! {
        #[test]
        fn pearson_matches_two_pass(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60)
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = pearson_correlation(&xs, &ys).unwrap();
            prop_assert!((r - pearson_two_pass(&xs, &ys)).abs() < 1e-12);
        }

        #[test]
        fn series_bounds_and_phi_range(
            raw in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..300),
        ) {
            let points = pts(&raw);
            let n = points.len() as u64;
            let t = fit_threshold(n, None).max(1);
            let s = build_box_count_series(0, &points, t).unwrap();
            for (k, &(g, nu)) in s.pairs.iter().enumerate() {
                prop_assert_eq!(g, k + 1);
                prop_assert!(nu >= 1 && nu <= n.min((g * g) as u64));
            }
            for variant in [Variant::Box, Variant::Info, Variant::SmoothInfo] {
                let cfg = FractalConfig { variant, ..Default::default() };
                let est = estimate_class(0, &points, &cfg).unwrap();
                prop_assert!((0.0..=2.0).contains(&est.phi));
                prop_assert_eq!(est.fallback, n < 4);
                if est.fallback {
                    prop_assert_eq!(est.phi, 1.0);
                } else {
                    prop_assert_eq!(est.pair_count, est.t);
                }
            }
        }

        #[test]
        fn constant_factor_in_nu_keeps_slope(
            nus in prop::collection::vec(1u64..1000, 3..12),
            factor in 2u64..50,
        ) {
            let base: Vec<(usize, u64)> = nus.iter().enumerate().map(|(k, &nu)| (k + 1, nu)).collect();
            let scaled: Vec<(usize, u64)> = base.iter().map(|&(g, nu)| (g, nu * factor)).collect();
            let xs: Vec<f64> = base.iter().map(|p| (p.0 as f64).ln()).collect();
            let y0: Vec<f64> = base.iter().map(|p| (p.1 as f64).ln()).collect();
            let y1: Vec<f64> = scaled.iter().map(|p| (p.1 as f64).ln()).collect();
            prop_assert!((ols_slope(&xs, &y0) - ols_slope(&xs, &y1)).abs() < 1e-9);
        }
    }
}
