//! CSV and JSON exports of annotation statistics.

use std::collections::BTreeMap;
use std::io::Write;

use fracal_core::fractal::FractalEstimate;
use fracal_core::{ClassFrequency, Dataset, SpatialHistogram};
use serde::Serialize;

/// `class_id,name,instance_count,image_count,group`, one row per category.
pub fn write_stats_csv<W: Write>(w: W, ds: &Dataset, freq: &BTreeMap<u64, ClassFrequency>) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["class_id", "name", "instance_count", "image_count", "group"])?;
    for f in freq.values() {
        let name = ds.categories().get(&f.class_id).map(String::as_str).unwrap_or("");
        out.write_record([
            f.class_id.to_string().as_str(),
            name,
            &f.instance_count.to_string(),
            &f.image_count.to_string(),
            f.group.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `G` rows of `G` counts; row `j` holds cells `(0, j) .. (G - 1, j)`.
pub fn write_histogram_csv<W: Write>(w: W, hist: &SpatialHistogram) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in hist.rows() {
        out.write_record(row.iter().map(u64::to_string))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HistogramJson<'a> {
    class_id: Option<u64>,
    grid_size: usize,
    total: u64,
    counts: Vec<&'a [u64]>,
}

pub fn histogram_json(hist: &SpatialHistogram, class_id: Option<u64>) -> serde_json::Value {
    let body =
        HistogramJson { class_id, grid_size: hist.grid_size(), total: hist.total(), counts: hist.rows().collect() };
    serde_json::to_value(body).expect("histogram serializes")
}

/// `class_id,G,nu` for every fitted class.
pub fn write_series_csv<W: Write>(w: W, estimates: &BTreeMap<u64, FractalEstimate>) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["class_id", "G", "nu"])?;
    for est in estimates.values() {
        let Some(series) = &est.series else { continue };
        for &(g, nu) in &series.pairs {
            out.write_record([est.class_id.to_string(), g.to_string(), nu.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
