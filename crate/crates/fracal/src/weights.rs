//! Weights file: per-class statistics plus the calibration header.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fracal_core::calibration::{CalibrationWeights, ClassPrior, Mode};
use fracal_core::fractal::Variant;
use fracal_core::{Dataset, Group};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::Fitted;

pub const BACKGROUND_LAST: &str = "last";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub n: u64,
    pub image_count: u64,
    pub group: String,
    pub phi: f64,
    pub variant: String,
    pub fallback: bool,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub beta: f64,
    pub lambda: f64,
    pub mode: String,
    pub background_convention: String,
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_cap: Option<usize>,
    pub classes: BTreeMap<u64, ClassEntry>,
    /// Grid size -> class id -> row-major cell counts.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grid_counts: BTreeMap<usize, BTreeMap<u64, Vec<u64>>>,
}

impl WeightsFile {
    pub fn from_fitted(
        ds: &Dataset,
        fitted: &Fitted,
        variant: Variant,
        t_cap: Option<usize>,
        beta: f64,
        lambda: f64,
        mode: Mode,
    ) -> Self {
        let classes = fitted
            .frequencies
            .values()
            .map(|f| {
                let est = &fitted.estimates[&f.class_id];
                let entry = ClassEntry {
                    name: ds.categories().get(&f.class_id).cloned().unwrap_or_default(),
                    n: f.instance_count,
                    image_count: f.image_count,
                    group: f.group.as_str().to_string(),
                    phi: est.phi,
                    variant: est.variant.as_str().to_string(),
                    fallback: est.fallback,
                    t: est.t,
                };
                (f.class_id, entry)
            })
            .collect();
        WeightsFile {
            beta,
            lambda,
            mode: mode.as_str().to_string(),
            background_convention: BACKGROUND_LAST.to_string(),
            variant: variant.as_str().to_string(),
            t_cap,
            classes,
            grid_counts: fitted.grid_counts.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: WeightsFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, 0, e))?;
        file.check(path)?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::io(path, e.into()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn check(&self, path: &Path) -> Result<()> {
        if self.background_convention != BACKGROUND_LAST {
            return Err(Error::record(
                path,
                "header",
                format!("unsupported background convention `{}`", self.background_convention),
            ));
        }
        self.mode.parse::<Mode>().map_err(|e| Error::record(path, "header", e.to_string()))?;
        for (id, c) in &self.classes {
            if Group::parse(&c.group).is_none() {
                return Err(Error::record(path, format!("class {id}"), format!("unknown group `{}`", c.group)));
            }
        }
        for (g, per_class) in &self.grid_counts {
            if per_class.keys().ne(self.classes.keys()) {
                return Err(Error::record(path, format!("grid_counts[{g}]"), "class ids differ from `classes`"));
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode.parse().expect("checked on read")
    }

    pub fn class_ids(&self) -> Vec<u64> {
        self.classes.keys().copied().collect()
    }

    pub fn groups(&self) -> BTreeMap<u64, Group> {
        self.classes.iter().filter_map(|(&id, c)| Group::parse(&c.group).map(|g| (id, g))).collect()
    }

    /// Calibration table in class-id order. `beta`/`lambda` override the
    /// header values when given.
    pub fn calibration(&self, beta: Option<f64>, lambda: Option<f64>) -> Result<CalibrationWeights> {
        let classes =
            self.classes.iter().map(|(&class_id, c)| ClassPrior { class_id, count: c.n, phi: c.phi }).collect();
        let mut w = CalibrationWeights::new(classes, beta.unwrap_or(self.beta), lambda.unwrap_or(self.lambda))?;
        for (&g, per_class) in &self.grid_counts {
            let counts: Vec<Vec<u64>> = per_class.values().cloned().collect();
            w = w.with_grid_counts(g, &counts)?;
        }
        Ok(w)
    }
}
