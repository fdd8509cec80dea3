//! Post-hoc calibration of detector classification logits.
//!
//! Two logit layouts are supported. In [`Mode::Softmax`] a record carries
//! `C + 1` logits with the background logit last; in [`Mode::Sigmoid`] it
//! carries `C` independent foreground logits. Logit index `k` always refers
//! to the `k`-th class of the [`CalibrationWeights`] table.
//!
//! The background entry is never adjusted: the object-vs-background
//! distribution is assumed to be shared by train and test data.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{invalid_arg, Error, Result};
use crate::geometry::NormBox;

pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_LAMBDA: f64 = 2.0;
pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Floor for empty grid cells inside the log prior.
pub const GRID_EPSILON: f64 = 1e-12;
/// Floor applied to `phi` before it is raised to `lambda`.
pub const PHI_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// `C` foreground logits followed by one background logit.
    Softmax,
    /// `C` independent foreground logits.
    Sigmoid,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Softmax => "softmax",
            Mode::Sigmoid => "sigmoid",
        }
    }

    pub fn logit_len(&self, num_classes: usize) -> usize {
        match self {
            Mode::Softmax => num_classes + 1,
            Mode::Sigmoid => num_classes,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Mode::Softmax),
            "sigmoid" => Ok(Mode::Sigmoid),
            other => Err(invalid_arg!("unknown logit mode `{other}`")),
        }
    }
}

/// Frozen training statistics of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPrior {
    pub class_id: u64,
    pub count: u64,
    pub phi: f64,
}

/// Per-class table read by every calibration routine.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationWeights {
    classes: Vec<ClassPrior>,
    priors: Vec<f64>,
    beta: f64,
    lambda: f64,
    /// grid size -> `p_s(y, u)` laid out as `k * G^2 + j * G + i`
    grid_priors: BTreeMap<usize, Vec<f64>>,
    grid_epsilon: f64,
}

impl CalibrationWeights {
    /// Zero counts are replaced by 1 inside the priors so that every log prior
    /// stays finite; see [`CalibrationWeights::surrogate_classes`].
    pub fn new(classes: Vec<ClassPrior>, beta: f64, lambda: f64) -> Result<Self> {
        if classes.is_empty() {
            return Err(invalid_arg!("calibration needs at least one class"));
        }
        check_params(beta, lambda)?;
        let mut seen = alloc::collections::BTreeSet::new();
        for c in &classes {
            if !seen.insert(c.class_id) {
                return Err(invalid_arg!("duplicate class id {}", c.class_id));
            }
            if !(0.0..=2.0).contains(&c.phi) {
                return Err(invalid_arg!("class {} has phi {} outside [0, 2]", c.class_id, c.phi));
            }
        }
        let total: f64 = classes.iter().map(|c| c.count.max(1) as f64).sum();
        let priors = classes.iter().map(|c| c.count.max(1) as f64 / total).collect();
        Ok(CalibrationWeights {
            classes,
            priors,
            beta,
            lambda,
            grid_priors: BTreeMap::new(),
            grid_epsilon: GRID_EPSILON,
        })
    }

    /// Same table with different hyperparameters.
    pub fn with_params(&self, beta: f64, lambda: f64) -> Result<Self> {
        check_params(beta, lambda)?;
        Ok(CalibrationWeights { beta, lambda, ..self.clone() })
    }

    /// Probability used in place of `p_s(y, u)` for empty cells.
    pub fn with_grid_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid_arg!("grid epsilon must lie in (0, 1), got {epsilon}"));
        }
        self.grid_epsilon = epsilon;
        Ok(self)
    }

    pub fn grid_epsilon(&self) -> f64 {
        self.grid_epsilon
    }

    /// Attach per-cell counts for grid calibration. `counts[k]` is the
    /// row-major `G x G` histogram of class `k`.
    pub fn with_grid_counts(mut self, grid_size: usize, counts: &[Vec<u64>]) -> Result<Self> {
        if grid_size == 0 {
            return Err(invalid_arg!("grid size must be at least 1"));
        }
        if counts.len() != self.classes.len() {
            return Err(invalid_arg!("grid counts for {} classes, expected {}", counts.len(), self.classes.len()));
        }
        let cells = grid_size * grid_size;
        if let Some(bad) = counts.iter().position(|c| c.len() != cells) {
            return Err(invalid_arg!(
                "class {} has {} grid cells, expected {cells}",
                self.classes[bad].class_id,
                counts[bad].len()
            ));
        }
        let total: u64 = counts.iter().flatten().sum();
        if total == 0 {
            return Err(invalid_arg!("grid counts are all zero"));
        }
        let total = total as f64;
        let probs = counts.iter().flatten().map(|&n| n as f64 / total).collect();
        self.grid_priors.insert(grid_size, probs);
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassPrior] {
        &self.classes
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.classes.iter().map(|c| c.class_id)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Source prior `p_s(y)` of class index `k`.
    pub fn prior(&self, k: usize) -> f64 {
        self.priors[k]
    }

    pub fn grid_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.grid_priors.keys().copied()
    }

    /// Classes whose zero count was replaced by 1 in the priors.
    pub fn surrogate_classes(&self) -> Vec<u64> {
        self.classes.iter().filter(|c| c.count == 0).map(|c| c.class_id).collect()
    }

    /// Classes whose `phi` is raised to [`PHI_MIN`] before weighting.
    pub fn floored_classes(&self) -> Vec<u64> {
        if self.lambda == 0.0 {
            return Vec::new();
        }
        self.classes.iter().filter(|c| c.phi < PHI_MIN).map(|c| c.class_id).collect()
    }

    fn phi_weight(&self, k: usize) -> f64 {
        libm::pow(self.classes[k].phi.max(PHI_MIN), self.lambda)
    }

    fn log_beta(&self, x: f64) -> f64 {
        libm::log(x) / libm::log(self.beta)
    }

    fn check_len(&self, logits: &[f64], mode: Mode) -> Result<()> {
        let expected = mode.logit_len(self.num_classes());
        if logits.len() != expected {
            return Err(invalid_arg!(
                "{mode} record has {} logits, expected {expected} for {} classes",
                logits.len(),
                self.num_classes()
            ));
        }
        Ok(())
    }
}

/// Accepts `beta > 1` and `lambda >= 0`, both finite.
pub fn check_params(beta: f64, lambda: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 1.0) {
        return Err(invalid_arg!("log base beta must be > 1, got {beta}"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid_arg!("lambda must be >= 0, got {lambda}"));
    }
    Ok(())
}

/// One candidate detection with its raw classification logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    pub image_id: u64,
    pub bbox: NormBox,
    pub logits: Vec<f64>,
}

/// Calibrated class scores, same length and layout as the input logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedScores {
    pub scores: Vec<f64>,
}

impl CalibratedScores {
    pub fn foreground(&self, mode: Mode) -> &[f64] {
        match mode {
            Mode::Softmax => &self.scores[..self.scores.len() - 1],
            Mode::Sigmoid => &self.scores,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| libm::exp(v - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

fn activate(z: &[f64], mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Softmax => softmax(z),
        Mode::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
    }
}

fn require_mode(actual: Mode, wanted: Mode, what: &str) -> Result<()> {
    if actual != wanted {
        return Err(invalid_arg!("{what} requires {wanted} logits, got {actual}"));
    }
    Ok(())
}

/// Class calibration: `z_y - log_b(p_s(y)) + log_b(1/C)` on foreground
/// logits.
pub fn class_calibrate(rec: &LogitRecord, mode: Mode, w: &CalibrationWeights) -> Result<Vec<f64>> {
    w.check_len(&rec.logits, mode)?;
    let c = w.num_classes();
    let target = w.log_beta(1.0 / c as f64);
    let mut out = rec.logits.clone();
    for (k, z) in out.iter_mut().take(c).enumerate() {
        *z += target - w.log_beta(w.prior(k));
    }
    Ok(out)
}

/// Grid calibration: like [`class_calibrate`] but with the joint prior of
/// the class and the grid cell holding the box center, against a uniform
/// target `1 / (C G^2)`.
pub fn grid_calibrate(rec: &LogitRecord, mode: Mode, w: &CalibrationWeights, grid_size: usize) -> Result<Vec<f64>> {
    w.check_len(&rec.logits, mode)?;
    let probs = w.grid_priors.get(&grid_size).ok_or_else(|| invalid_arg!("no grid priors for G = {grid_size}"))?;
    let c = w.num_classes();
    let cells = grid_size * grid_size;
    let center = rec.bbox.center();
    let clamped = crate::geometry::Center::new(center.x.clamp(0.0, 1.0), center.y.clamp(0.0, 1.0));
    let (i, j) = clamped.cell(grid_size);
    let cell = j * grid_size + i;
    let target = w.log_beta(1.0 / (c * cells) as f64);
    let mut out = rec.logits.clone();
    for (k, z) in out.iter_mut().take(c).enumerate() {
        let p = probs[k * cells + cell];
        let p = if p > 0.0 { p } else { w.grid_epsilon };
        *z += target - w.log_beta(p);
    }
    Ok(out)
}

/// Space calibration of a softmax probability vector (background last):
/// foreground entries are divided by `phi^lambda`.
pub fn space_calibrate(probs: &[f64], w: &CalibrationWeights) -> Result<Vec<f64>> {
    w.check_len(probs, Mode::Softmax)?;
    let mut out = probs.to_vec();
    for (k, p) in out.iter_mut().take(w.num_classes()).enumerate() {
        *p /= w.phi_weight(k);
    }
    Ok(out)
}

/// Fractal calibration: softmax of the class-calibrated logits, divided by
/// `phi^lambda`, renormalized over all `C + 1` entries.
pub fn fracal(rec: &LogitRecord, mode: Mode, w: &CalibrationWeights) -> Result<CalibratedScores> {
    require_mode(mode, Mode::Softmax, "fracal")?;
    let probs = softmax(&class_calibrate(rec, mode, w)?);
    let spaced = space_calibrate(&probs, w)?;
    Ok(CalibratedScores { scores: normalize(spaced) })
}

/// Ablation of [`fracal`] that multiplies by `phi^lambda` instead of dividing.
pub fn fracal_opposite(rec: &LogitRecord, mode: Mode, w: &CalibrationWeights) -> Result<CalibratedScores> {
    require_mode(mode, Mode::Softmax, "fracal-opposite")?;
    let mut probs = softmax(&class_calibrate(rec, mode, w)?);
    for (k, p) in probs.iter_mut().take(w.num_classes()).enumerate() {
        *p *= w.phi_weight(k);
    }
    Ok(CalibratedScores { scores: normalize(probs) })
}

/// Fractal calibration for sigmoid detectors. Class and space calibration
/// are both applied in logit space and the result is gated by the raw
/// sigmoid score of the same logit.
pub fn fracal_binary(rec: &LogitRecord, mode: Mode, w: &CalibrationWeights) -> Result<CalibratedScores> {
    require_mode(mode, Mode::Sigmoid, "fracal-binary")?;
    let calibrated = class_calibrate(rec, mode, w)?;
    let c = w.num_classes();
    let weights: Vec<f64> = (0..c).map(|k| w.phi_weight(k)).collect();
    let total: f64 = weights.iter().sum();
    let target = w.log_beta(1.0 / c as f64);
    let scores = calibrated
        .iter()
        .zip(&rec.logits)
        .zip(&weights)
        .map(|((&cz, &z), &wk)| sigmoid(cz - w.log_beta(wk / total) + target) * sigmoid(z))
        .collect();
    Ok(CalibratedScores { scores })
}

/// Frequency-only post-hoc adjustments from prior work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    /// Logit adjustment, `z - tau ln p_s(y)`.
    La { tau: f64 },
    /// Inverse image frequency, `-z ln p_s(y)`.
    Iif,
    /// Post-calibrated softmax, `z - ln p_s(y) + ln(1/C)`.
    Pcsa,
    /// Probability-space reweighting by `n_y^gamma`, renormalized together
    /// with the background probability.
    NorCal { gamma: f64 },
}

/// Apply a baseline to a softmax-mode record.
pub fn baseline_calibrate(
    rec: &LogitRecord,
    mode: Mode,
    w: &CalibrationWeights,
    kind: Baseline,
) -> Result<CalibratedScores> {
    require_mode(mode, Mode::Softmax, "baseline calibration")?;
    w.check_len(&rec.logits, mode)?;
    let c = w.num_classes();
    let mut z = rec.logits.clone();
    let scores = match kind {
        Baseline::La { tau } => {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(invalid_arg!("tau must be >= 0, got {tau}"));
            }
            for (k, v) in z.iter_mut().take(c).enumerate() {
                *v -= tau * libm::log(w.prior(k));
            }
            softmax(&z)
        }
        Baseline::Iif => {
            for (k, v) in z.iter_mut().take(c).enumerate() {
                *v *= -libm::log(w.prior(k));
            }
            softmax(&z)
        }
        Baseline::Pcsa => {
            let target = libm::log(1.0 / c as f64);
            for (k, v) in z.iter_mut().take(c).enumerate() {
                *v += target - libm::log(w.prior(k));
            }
            softmax(&z)
        }
        Baseline::NorCal { gamma } => {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(invalid_arg!("gamma must be >= 0, got {gamma}"));
            }
            let mut p = softmax(&z);
            for (k, v) in p.iter_mut().take(c).enumerate() {
                *v /= libm::pow(w.classes[k].count.max(1) as f64, gamma);
            }
            normalize(p)
        }
    };
    Ok(CalibratedScores { scores })
}

/// Every scoring method exposed by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Plain activation of the raw logits.
    None,
    ClassOnly,
    Grid(usize),
    Fracal,
    FracalBinary,
    Opposite,
    Baseline(Baseline),
}

impl Method {
    /// Modes the method accepts.
    pub fn accepts(&self, mode: Mode) -> bool {
        match self {
            Method::None | Method::ClassOnly | Method::Grid(_) => true,
            Method::FracalBinary => mode == Mode::Sigmoid,
            Method::Fracal | Method::Opposite | Method::Baseline(_) => mode == Mode::Softmax,
        }
    }

    pub fn apply(&self, rec: &LogitRecord, mode: Mode, w: &CalibrationWeights) -> Result<CalibratedScores> {
        if !self.accepts(mode) {
            return Err(invalid_arg!("method {self} cannot be applied to {mode} logits"));
        }
        match *self {
            Method::None => {
                w.check_len(&rec.logits, mode)?;
                Ok(CalibratedScores { scores: activate(&rec.logits, mode) })
            }
            Method::ClassOnly => {
                let z = class_calibrate(rec, mode, w)?;
                Ok(CalibratedScores { scores: activate(&z, mode) })
            }
            Method::Grid(g) => {
                let z = grid_calibrate(rec, mode, w, g)?;
                Ok(CalibratedScores { scores: activate(&z, mode) })
            }
            Method::Fracal => fracal(rec, mode, w),
            Method::FracalBinary => fracal_binary(rec, mode, w),
            Method::Opposite => fracal_opposite(rec, mode, w),
            Method::Baseline(kind) => baseline_calibrate(rec, mode, w, kind),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::None => f.write_str("none"),
            Method::ClassOnly => f.write_str("class_only"),
            Method::Grid(g) => write!(f, "grid({g})"),
            Method::Fracal => f.write_str("fracal"),
            Method::FracalBinary => f.write_str("fracal_binary"),
            Method::Opposite => f.write_str("opposite"),
            Method::Baseline(Baseline::La { tau }) => write!(f, "la({tau})"),
            Method::Baseline(Baseline::Iif) => f.write_str("iif"),
            Method::Baseline(Baseline::Pcsa) => f.write_str("pcsa"),
            Method::Baseline(Baseline::NorCal { gamma }) => write!(f, "norcal({gamma})"),
        }
    }
}

/// Parses `name` or `name(arg)`, e.g. `fracal`, `grid(4)`, `la(0.5)`,
/// `norcal`. `la` and `norcal` default their parameter to 1.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            Some(_) => return Err(invalid_arg!("malformed method `{s}`")),
            None => (s, None),
        };
        let name = name.trim().to_ascii_lowercase().replace('-', "_");
        let real = |default: f64| -> Result<f64> {
            match arg {
                None => Ok(default),
                Some(a) => a.trim().parse::<f64>().map_err(|_| invalid_arg!("bad parameter in `{s}`")),
            }
        };
        let no_arg = |m: Method| -> Result<Method> {
            match arg {
                None => Ok(m),
                Some(_) => Err(invalid_arg!("method `{name}` takes no parameter")),
            }
        };
        match name.as_str() {
            "none" => no_arg(Method::None),
            "class_only" | "class" | "c" => no_arg(Method::ClassOnly),
            "fracal" => no_arg(Method::Fracal),
            "fracal_binary" | "binary" => no_arg(Method::FracalBinary),
            "opposite" | "fracal_opposite" => no_arg(Method::Opposite),
            "iif" => no_arg(Method::Baseline(Baseline::Iif)),
            "pcsa" => no_arg(Method::Baseline(Baseline::Pcsa)),
            "la" => {
                let tau = real(DEFAULT_TAU)?;
                if tau < 0.0 {
                    return Err(invalid_arg!("tau must be >= 0, got {tau}"));
                }
                Ok(Method::Baseline(Baseline::La { tau }))
            }
            "norcal" => {
                let gamma = real(DEFAULT_GAMMA)?;
                if gamma < 0.0 {
                    return Err(invalid_arg!("gamma must be >= 0, got {gamma}"));
                }
                Ok(Method::Baseline(Baseline::NorCal { gamma }))
            }
            "grid" => {
                let g: usize = arg
                    .ok_or_else(|| invalid_arg!("grid needs a size, e.g. grid(4)"))?
                    .trim()
                    .parse()
                    .map_err(|_| invalid_arg!("bad grid size in `{s}`"))?;
                if g == 0 {
                    return Err(invalid_arg!("grid size must be at least 1"));
                }
                Ok(Method::Grid(g))
            }
            other => Err(Error::InvalidArgument(alloc::format!("unknown method `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn weights(counts: &[u64], phis: &[f64], beta: f64, lambda: f64) -> CalibrationWeights {
        let classes = counts
            .iter()
            .zip(phis)
            .enumerate()
            .map(|(k, (&count, &phi))| ClassPrior { class_id: k as u64 + 1, count, phi })
            .collect();
        CalibrationWeights::new(classes, beta, lambda).unwrap()
    }

    fn rec(logits: &[f64]) -> LogitRecord {
        LogitRecord { image_id: 1, bbox: NormBox::new(0.5, 0.5, 0.1, 0.1), logits: logits.to_vec() }
    }

    #[test]
    fn validation() {
        let c = vec![ClassPrior { class_id: 1, count: 3, phi: 1.0 }];
        assert!(CalibrationWeights::new(c.clone(), 1.0, 2.0).is_err());
        assert!(CalibrationWeights::new(c.clone(), 10.0, -1.0).is_err());
        assert!(CalibrationWeights::new(vec![], 10.0, 2.0).is_err());
        let bad_phi = vec![ClassPrior { class_id: 1, count: 3, phi: 2.5 }];
        assert!(CalibrationWeights::new(bad_phi, 10.0, 2.0).is_err());
        let dup = vec![c[0], c[0]];
        assert!(CalibrationWeights::new(dup, 10.0, 2.0).is_err());
    }

    #[test]
    fn priors_sum_to_one_with_surrogate() {
        let w = weights(&[0, 5, 10], &[1.0; 3], 10.0, 2.0);
        let sum: f64 = (0..3).map(|k| w.prior(k)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(w.surrogate_classes(), vec![1]);
        assert!((w.prior(0) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn class_calibration_example() {
        let w = weights(&[10, 90], &[1.0, 1.0], 10.0, 2.0);
        let out = class_calibrate(&rec(&[1.0, 2.0, 0.5]), Mode::Softmax, &w).unwrap();
        assert!((out[0] - 1.698_970_004_336_018_8).abs() < 1e-12);
        assert!((out[1] - 1.744_727_494_896_693_7).abs() < 1e-12);
        assert_eq!(out[2], 0.5);
    }

    #[test]
    fn rarer_class_gets_higher_logit() {
        let w = weights(&[3, 300], &[1.0, 1.0], 10.0, 2.0);
        let out = class_calibrate(&rec(&[0.7, 0.7, 0.0]), Mode::Softmax, &w).unwrap();
        assert!(out[0] > out[1]);
    }

    #[test]
    fn wrong_length_rejected() {
        let w = weights(&[10, 90], &[1.0, 1.0], 10.0, 2.0);
        assert!(class_calibrate(&rec(&[1.0, 2.0]), Mode::Softmax, &w).is_err());
        assert!(class_calibrate(&rec(&[1.0, 2.0, 0.5]), Mode::Sigmoid, &w).is_err());
    }

    #[test]
    fn space_example() {
        let w = weights(&[1, 1], &[2.0, 1.0], 10.0, 2.0);
        let out = space_calibrate(&[0.2, 0.5, 0.3], &w).unwrap();
        assert!((out[0] - 0.05).abs() < 1e-15);
        assert_eq!(&out[1..], &[0.5, 0.3]);
    }

    #[test]
    fn zero_phi_is_floored() {
        let w = weights(&[1, 1], &[0.0, 1.0], 10.0, 2.0);
        assert_eq!(w.floored_classes(), vec![1]);
        let out = space_calibrate(&[0.2, 0.5, 0.3], &w).unwrap();
        assert!((out[0] - 0.2 / (PHI_MIN * PHI_MIN)).abs() < 1e-6);
        assert!(w.with_params(10.0, 0.0).unwrap().floored_classes().is_empty());
    }

    #[test]
    fn grid_calibration() {
        let w = weights(&[2, 6], &[1.0, 1.0], 10.0, 2.0)
            .with_grid_counts(1, &[vec![2], vec![6]])
            .unwrap()
            .with_grid_counts(2, &[vec![2, 0, 0, 0], vec![3, 3, 0, 0]])
            .unwrap();
        let r = rec(&[0.3, -0.2, 1.0]);
        assert_eq!(grid_calibrate(&r, Mode::Softmax, &w, 1).unwrap(), class_calibrate(&r, Mode::Softmax, &w).unwrap());
        // center (0.5, 0.5) falls in cell (1, 1), empty for both classes
        let out = grid_calibrate(&r, Mode::Softmax, &w, 2).unwrap();
        let boost = -(GRID_EPSILON.log10()) + (1.0f64 / 8.0).log10();
        assert!((out[0] - (0.3 + boost)).abs() < 1e-9);
        assert!(out[0] > 10.0);
        assert_eq!(out[2], 1.0);
        assert!(grid_calibrate(&r, Mode::Softmax, &w, 4).is_err());
        assert!(w.clone().with_grid_counts(2, &[vec![1; 4]]).is_err());
        assert!(w.with_grid_counts(2, &[vec![0; 4], vec![0; 4]]).is_err());
    }

    #[test]
    fn fracal_example() {
        // softmax of these logits is [0.2, 0.5, 0.3]; equal counts make C the identity
        let z = [0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()];
        let w = weights(&[7, 7], &[2.0, 1.0], 10.0, 2.0);
        let out = fracal(&rec(&z), Mode::Softmax, &w).unwrap();
        let expected = [0.05 / 0.85, 0.5 / 0.85, 0.3 / 0.85];
        for (a, b) in out.scores.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let opp = fracal_opposite(&rec(&z), Mode::Softmax, &w).unwrap();
        let expected = [0.8 / 1.6, 0.5 / 1.6, 0.3 / 1.6];
        for (a, b) in opp.scores.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fracal(&rec(&[0.0, 0.0]), Mode::Sigmoid, &w).is_err());
    }

    #[test]
    fn fracal_rescaled_phi_moves_background_share() {
        let z = [0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()];
        let w = weights(&[7, 7], &[2.0, 1.0], 10.0, 2.0);
        let doubled = weights(&[7, 7], &[1.0, 0.5], 10.0, 2.0);
        let a = fracal(&rec(&z), Mode::Softmax, &w).unwrap();
        let b = fracal(&rec(&z), Mode::Softmax, &doubled).unwrap();
        // halving every phi multiplies the foreground mass by 4 before renormalizing
        assert!((b.scores[2] - 0.3 / (0.2 + 2.0 + 0.3)).abs() < 1e-12);
        assert!((a.scores[2] - b.scores[2]).abs() > 0.2);
    }

    #[test]
    fn binary_example() {
        let w = weights(&[5, 5], &[1.0, 1.0], 10.0, 2.0);
        let out = fracal_binary(&rec(&[0.0, 0.0]), Mode::Sigmoid, &w).unwrap();
        assert!((out.scores[0] - 0.25).abs() < 1e-15);
        let low = fracal_binary(&rec(&[-60.0, 0.0]), Mode::Sigmoid, &w).unwrap();
        assert!(low.scores[0] < 1e-20);
        assert!(fracal_binary(&rec(&[0.0, 0.0, 0.0]), Mode::Softmax, &w).is_err());
    }

    #[test]
    fn norcal_example() {
        let z = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        let w = weights(&[10, 100], &[1.0, 1.0], 10.0, 2.0);
        let out = baseline_calibrate(&rec(&z), Mode::Softmax, &w, Baseline::NorCal { gamma: 1.0 }).unwrap();
        assert!((out.scores[0] - 0.02 / 0.523).abs() < 1e-12);
        assert!((out.scores[1] - 0.003 / 0.523).abs() < 1e-12);
        assert!((out.scores[2] - 0.5 / 0.523).abs() < 1e-12);
    }

    #[test]
    fn baseline_identities() {
        let w = weights(&[10, 90, 3], &[1.0, 1.5, 0.5], core::f64::consts::E, 2.0);
        let r = rec(&[0.4, -1.0, 2.0, 0.1]);
        let la0 = baseline_calibrate(&r, Mode::Softmax, &w, Baseline::La { tau: 0.0 }).unwrap();
        assert_eq!(la0.scores, softmax(&r.logits));
        let pcsa = baseline_calibrate(&r, Mode::Softmax, &w, Baseline::Pcsa).unwrap();
        let class_e = Method::ClassOnly.apply(&r, Mode::Softmax, &w).unwrap();
        for (a, b) in pcsa.scores.iter().zip(&class_e.scores) {
            assert!((a - b).abs() < 1e-12);
        }
        let iif = baseline_calibrate(&r, Mode::Softmax, &w, Baseline::Iif).unwrap();
        let manual: Vec<f64> = vec![0.4 * -(w.prior(0).ln()), -1.0 * -(w.prior(1).ln()), 2.0 * -(w.prior(2).ln()), 0.1];
        for (a, b) in iif.scores.iter().zip(softmax(&manual)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(baseline_calibrate(&r, Mode::Softmax, &w, Baseline::La { tau: -1.0 }).is_err());
        assert!(baseline_calibrate(&r, Mode::Softmax, &w, Baseline::NorCal { gamma: -0.5 }).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("fracal".parse::<Method>().unwrap(), Method::Fracal);
        assert_eq!("grid(4)".parse::<Method>().unwrap(), Method::Grid(4));
        assert_eq!("la(0.5)".parse::<Method>().unwrap(), Method::Baseline(Baseline::La { tau: 0.5 }));
        assert_eq!("norcal".parse::<Method>().unwrap(), Method::Baseline(Baseline::NorCal { gamma: 1.0 }));
        assert_eq!("fracal-binary".parse::<Method>().unwrap(), Method::FracalBinary);
        assert_eq!("class_only".parse::<Method>().unwrap(), Method::ClassOnly);
        for bad in ["grid", "grid(0)", "la(-1)", "foo", "fracal(2)", "grid(4"] {
            assert!(bad.parse::<Method>().is_err(), "{bad}");
        }
        for m in [Method::Fracal, Method::Grid(3), Method::Baseline(Baseline::La { tau: 0.25 })] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn method_mode_checks() {
        let w = weights(&[1, 2], &[1.0, 1.0], 10.0, 2.0);
        assert!(Method::FracalBinary.apply(&rec(&[0.0, 0.0, 0.0]), Mode::Softmax, &w).is_err());
        assert!(Method::Fracal.apply(&rec(&[0.0, 0.0]), Mode::Sigmoid, &w).is_err());
        let none = Method::None.apply(&rec(&[0.0, 0.0]), Mode::Sigmoid, &w).unwrap();
        assert_eq!(none.scores, vec![0.5, 0.5]);
    }

    fn logits_strategy() -> impl Strategy<Value = (Vec<u64>, Vec<f64>, Vec<f64>)> {
        (2usize..8).prop_flat_map(|c| {
            (
                prop::collection::vec(1u64..5000, c),
                prop::collection::vec(0.05f64..2.0, c),
                prop::collection::vec(-8.0f64..8.0, c + 1),
            )
        })
    }

    proptest! {
        #[test]
        fn fracal_is_a_distribution((counts, phis, z) in logits_strategy(), lambda in 0.0f64..4.0) {
            let w = weights(&counts, &phis, 10.0, lambda);
            let out = fracal(&rec(&z), Mode::Softmax, &w).unwrap();
            prop_assert!(out.scores.iter().all(|&s| s >= 0.0));
            prop_assert!((out.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn identity_chain((counts, phis, z) in logits_strategy()) {
            let c = counts.len();
            let equal = weights(&vec![counts[0]; c], &phis, 10.0, 0.0);
            let r = rec(&z);
            let calibrated = class_calibrate(&r, Mode::Softmax, &equal).unwrap();
            for (a, b) in calibrated.iter().zip(&z) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let p = softmax(&z);
            let w = weights(&counts, &phis, 10.0, 0.0);
            prop_assert_eq!(space_calibrate(&p, &w).unwrap(), p.clone());
            let f = fracal(&r, Mode::Softmax, &equal).unwrap();
            for (a, b) in f.scores.iter().zip(&p) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn phi_scale_invariance((counts, phis, z) in logits_strategy(), scale in 0.1f64..1.0) {
            let w = weights(&counts, &phis, 10.0, 2.0);
            let scaled: Vec<f64> = phis.iter().map(|p| p * scale).collect();
            let ws = weights(&counts, &scaled, 10.0, 2.0);
            // the background entry is not reweighted, so only ratios between
            // foreground scores survive a common rescaling of phi
            let a = fracal(&rec(&z), Mode::Softmax, &w).unwrap();
            let b = fracal(&rec(&z), Mode::Softmax, &ws).unwrap();
            let c = counts.len();
            for k in 1..c {
                let ra = a.scores[k] / a.scores[0];
                let rb = b.scores[k] / b.scores[0];
                prop_assert!((ra - rb).abs() <= 1e-12 * ra.abs().max(1.0));
            }
            let zs = &z[..counts.len()];
            let a = fracal_binary(&rec(zs), Mode::Sigmoid, &w).unwrap();
            let b = fracal_binary(&rec(zs), Mode::Sigmoid, &ws).unwrap();
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariance((counts, phis, z) in logits_strategy(), shift in -50.0f64..50.0) {
            let w = weights(&counts, &phis, 10.0, 2.0);
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let a = fracal(&rec(&z), Mode::Softmax, &w).unwrap();
            let b = fracal(&rec(&shifted), Mode::Softmax, &w).unwrap();
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn grid_one_equals_class((counts, phis, z) in logits_strategy()) {
            let grid: Vec<Vec<u64>> = counts.iter().map(|&n| vec![n]).collect();
            let w = weights(&counts, &phis, 10.0, 2.0).with_grid_counts(1, &grid).unwrap();
            let r = rec(&z);
            prop_assert_eq!(
                grid_calibrate(&r, Mode::Softmax, &w, 1).unwrap(),
                class_calibrate(&r, Mode::Softmax, &w).unwrap()
            );
        }
    }
}
