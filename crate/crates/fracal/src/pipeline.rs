//! In-memory pipeline stages shared by the CLI and the test suites.

use std::collections::BTreeMap;

use fracal_core::annotations::{compute_class_frequencies, spatial_histogram};
use fracal_core::calibration::{CalibratedScores, CalibrationWeights, ClassPrior, LogitRecord, Method, Mode};
use fracal_core::eval::{detections_from_scores, evaluate, EvalConfig, EvalReport};
use fracal_core::fractal::{estimate_class, pearson_correlation, FractalConfig, FractalEstimate};
use fracal_core::synthetic::SimulatedBatch;
use fracal_core::{ClassFrequency, Dataset, Group};
use rayon::prelude::*;

use crate::error::Result;

/// [`fracal_core::fractal::estimate_all`] with classes spread over the rayon
/// pool. The result does not depend on the thread count.
pub fn estimate_all_par(ds: &Dataset, config: &FractalConfig) -> Result<BTreeMap<u64, FractalEstimate>> {
    config.validate()?;
    let by_class: Vec<_> = ds.centers_by_class().into_iter().collect();
    let estimates = by_class
        .par_iter()
        .map(|(class_id, pts)| estimate_class(*class_id, pts, config).map(|e| (*class_id, e)))
        .collect::<std::result::Result<BTreeMap<_, _>, _>>()?;
    Ok(estimates)
}

/// Everything the calibration stage needs from a training split.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub frequencies: BTreeMap<u64, ClassFrequency>,
    pub estimates: BTreeMap<u64, FractalEstimate>,
    /// Row-major per-class cell counts, keyed by grid size then class id.
    pub grid_counts: BTreeMap<usize, BTreeMap<u64, Vec<u64>>>,
}

impl Fitted {
    pub fn groups(&self) -> BTreeMap<u64, Group> {
        self.frequencies.iter().map(|(&id, f)| (id, f.group)).collect()
    }

    pub fn class_ids(&self) -> Vec<u64> {
        self.frequencies.keys().copied().collect()
    }

    /// Calibration table over every catalog class in id order.
    pub fn weights(&self, beta: f64, lambda: f64) -> Result<CalibrationWeights> {
        let classes = self
            .frequencies
            .values()
            .map(|f| ClassPrior { class_id: f.class_id, count: f.instance_count, phi: self.estimates[&f.class_id].phi })
            .collect();
        let mut w = CalibrationWeights::new(classes, beta, lambda)?;
        for (&g, per_class) in &self.grid_counts {
            let counts: Vec<Vec<u64>> = per_class.values().cloned().collect();
            w = w.with_grid_counts(g, &counts)?;
        }
        Ok(w)
    }

    /// Pearson correlation of `phi` against `ln n_y` over classes with at
    /// least one instance, with the number of classes used.
    pub fn phi_frequency_correlation(&self) -> Result<(f64, usize)> {
        phi_frequency_correlation(self.estimates.values().map(|e| (e.instance_count, e.phi)))
    }
}

pub fn phi_frequency_correlation(pairs: impl Iterator<Item = (u64, f64)>) -> Result<(f64, usize)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.filter(|(n, _)| *n > 0).map(|(n, phi)| ((n as f64).ln(), phi)).unzip();
    let r = pearson_correlation(&xs, &ys)?;
    Ok((r, xs.len()))
}

/// Frequencies, dimensions and the requested grid histograms of `ds`.
pub fn fit(ds: &Dataset, config: &FractalConfig, grid_sizes: &[usize]) -> Result<Fitted> {
    let frequencies = compute_class_frequencies(ds);
    let estimates = estimate_all_par(ds, config)?;
    let mut grid_counts = BTreeMap::new();
    for &g in grid_sizes {
        let mut per_class = BTreeMap::new();
        for &class_id in frequencies.keys() {
            let hist = spatial_histogram(ds, Some(class_id), g)?;
            per_class.insert(class_id, hist.counts().to_vec());
        }
        grid_counts.insert(g, per_class);
    }
    Ok(Fitted { frequencies, estimates, grid_counts })
}

/// Apply `method` to every record, in parallel, keeping input order.
pub fn calibrate_all(
    records: &[LogitRecord],
    mode: Mode,
    method: Method,
    weights: &CalibrationWeights,
) -> Result<Vec<CalibratedScores>> {
    let scores =
        records.par_iter().map(|r| method.apply(r, mode, weights)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(scores)
}

/// Calibrate a simulated batch with weights fitted on its training split and
/// evaluate against its evaluation split.
pub fn evaluate_batch(
    batch: &SimulatedBatch,
    fitted: &Fitted,
    weights: &CalibrationWeights,
    method: Method,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let scores = calibrate_all(&batch.proposals, batch.mode, method, weights)?;
    let dets = detections_from_scores(&batch.proposals, &scores, &batch.class_ids, batch.mode, 0.0)?;
    Ok(evaluate(&dets, &batch.ground_truth, &fitted.groups(), config)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fracal_core::fractal::estimate_all;
    use fracal_core::synthetic::{simulate_scenario, ScenarioSpec};

    #[test]
    fn parallel_estimates_match_sequential() {
        let spec = ScenarioSpec { num_classes: 15, images: 40, ..Default::default() };
        let batch = simulate_scenario(&spec).unwrap();
        let cfg = FractalConfig::default();
        assert_eq!(estimate_all_par(&batch.train, &cfg).unwrap(), estimate_all(&batch.train, &cfg).unwrap());
    }

    #[test]
    fn grid_one_weights_match_class_only() {
        let spec = ScenarioSpec { num_classes: 10, images: 30, ..Default::default() };
        let batch = simulate_scenario(&spec).unwrap();
        let fitted = fit(&batch.train, &FractalConfig::default(), &[1]).unwrap();
        let w = fitted.weights(10.0, 2.0).unwrap();
        let a = calibrate_all(&batch.proposals, batch.mode, Method::Grid(1), &w).unwrap();
        let b = calibrate_all(&batch.proposals, batch.mode, Method::ClassOnly, &w).unwrap();
        assert_eq!(a, b);
    }
}
