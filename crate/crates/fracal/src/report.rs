//! Evaluation report as JSON and as a plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fracal_core::eval::{EvalConfig, EvalReport};
use fracal_core::Group;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
pub struct ReportFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub ap_overall: Option<f64>,
    pub ap_rare: Option<f64>,
    pub ap_common: Option<f64>,
    pub ap_frequent: Option<f64>,
    pub per_class: BTreeMap<u64, f64>,
    pub counts: Counts,
    pub config: ConfigEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_unix: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct Counts {
    pub input: usize,
    pub after_nms: usize,
    pub suppressed: usize,
    pub capped: usize,
    pub evaluated: usize,
}

#[derive(Debug, Serialize)]
pub struct ConfigEcho {
    pub nms_iou: Option<f64>,
    pub classwise_nms: bool,
    pub iou_match: f64,
    pub max_per_image: usize,
}

impl ReportFile {
    pub fn new(report: &EvalReport, config: &EvalConfig, method: Option<String>, timestamp: bool) -> Self {
        let c = report.counts;
        ReportFile {
            method,
            ap_overall: report.ap_overall,
            ap_rare: report.ap_rare,
            ap_common: report.ap_common,
            ap_frequent: report.ap_frequent,
            per_class: report.per_class.clone(),
            counts: Counts {
                input: c.input,
                after_nms: c.after_nms,
                suppressed: c.suppressed,
                capped: c.capped,
                evaluated: c.evaluated,
            },
            config: ConfigEcho {
                nms_iou: config.nms_iou,
                classwise_nms: config.classwise_nms,
                iou_match: config.iou_match,
                max_per_image: config.max_per_image,
            },
            generated_unix: timestamp
                .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::io(path, e.into()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Group summary followed by detection counts.
pub fn render_table(report: &EvalReport, groups: &BTreeMap<u64, Group>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>8} {:>8}", "group", "classes", "AP@0.5");
    let _ = writeln!(out, "{:<10} {:>8} {:>8}", "overall", report.per_class.len(), fmt_ap(report.ap_overall));
    for g in [Group::Rare, Group::Common, Group::Frequent] {
        let n = report.per_class.keys().filter(|id| groups.get(id) == Some(&g)).count();
        let _ = writeln!(out, "{:<10} {:>8} {:>8}", g.as_str(), n, fmt_ap(report.group_ap(g)));
    }
    let c = report.counts;
    let _ = writeln!(
        out,
        "detections: {} in, {} after NMS ({} suppressed), {} over the per-image cap, {} evaluated",
        c.input, c.after_nms, c.suppressed, c.capped, c.evaluated
    );
    out
}
