//! JSON Lines streams: logits, calibrated scores and detections.
//!
//! Logit and score files start with one header line
//! `{"mode": .., "num_classes": C, "class_ids": [..]}` followed by one record
//! per candidate box, `{"image_id": .., "box": [cx, cy, w, h], "logits": [..]}`
//! (`"scores"` in score files). Detection files have no header.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fracal_core::calibration::{CalibratedScores, LogitRecord, Mode};
use fracal_core::eval::{detections_from_scores, Detection};
use fracal_core::NormBox;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub mode: String,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_ids: Option<Vec<u64>>,
    /// Scoring method, set on score files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Generator algorithm and seed, set on simulated files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl StreamHeader {
    pub fn new(mode: Mode, class_ids: &[u64]) -> Self {
        StreamHeader {
            mode: mode.as_str().to_string(),
            num_classes: class_ids.len(),
            class_ids: Some(class_ids.to_vec()),
            method: None,
            rng: None,
            seed: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LogitLine {
    image_id: u64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    image_id: u64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    image_id: u64,
    class_id: u64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

fn box_array(b: &NormBox) -> [f64; 4] {
    [b.cx, b.cy, b.w, b.h]
}

fn box_from(a: [f64; 4]) -> NormBox {
    NormBox::new(a[0], a[1], a[2], a[3])
}

/// A header plus its records; shared shape of logit and score files.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream<T> {
    pub header: StreamHeader,
    pub mode: Mode,
    /// Class id of every foreground entry, `1..=C` when the header omits them.
    pub class_ids: Vec<u64>,
    pub records: Vec<T>,
}

/// A box with its calibrated scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub image_id: u64,
    pub bbox: NormBox,
    pub scores: Vec<f64>,
}

fn non_empty_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<'a, T: Deserialize<'a>>(path: &Path, line_no: usize, line: &'a str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::json(path, line_no - 1, e))
}

fn read_stream<L, T>(path: &Path, convert: impl Fn(L) -> (T, usize)) -> Result<Stream<T>>
where
    L: for<'a> Deserialize<'a>,
{
    let lines = non_empty_lines(path)?;
    let Some((first_no, first)) = lines.first() else {
        return Err(Error::record(path, "header", "file is empty"));
    };
    let header: StreamHeader = parse_line(path, *first_no, first)?;
    let mode: Mode =
        header.mode.parse().map_err(|e: fracal_core::Error| Error::record(path, "header", e.to_string()))?;
    let class_ids = match &header.class_ids {
        Some(ids) if ids.len() != header.num_classes => {
            return Err(Error::record(
                path,
                "header",
                format!("{} class ids for num_classes {}", ids.len(), header.num_classes),
            ))
        }
        Some(ids) => ids.clone(),
        None => (1..=header.num_classes as u64).collect(),
    };
    let expected = mode.logit_len(header.num_classes);
    let mut records = Vec::with_capacity(lines.len() - 1);
    for (line_no, line) in &lines[1..] {
        let raw: L = parse_line(path, *line_no, line)?;
        let (rec, len) = convert(raw);
        if len != expected {
            return Err(Error::record(
                path,
                format!("line {line_no}"),
                format!("{len} values, expected {expected} for {mode} mode with {} classes", header.num_classes),
            ));
        }
        records.push(rec);
    }
    Ok(Stream { header, mode, class_ids, records })
}

fn write_lines<T: Serialize>(path: &Path, header: Option<&StreamHeader>, lines: impl Iterator<Item = T>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let emit = || -> std::io::Result<()> {
        if let Some(h) = header {
            serde_json::to_writer(&mut w, h)?;
            w.write_all(b"\n")?;
        }
        for line in lines {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

pub fn read_logits(path: &Path) -> Result<Stream<LogitRecord>> {
    read_stream(path, |l: LogitLine| {
        let len = l.logits.len();
        (LogitRecord { image_id: l.image_id, bbox: box_from(l.bbox), logits: l.logits }, len)
    })
}

pub fn write_logits(path: &Path, header: &StreamHeader, records: &[LogitRecord]) -> Result<()> {
    let lines =
        records.iter().map(|r| LogitLine { image_id: r.image_id, bbox: box_array(&r.bbox), logits: r.logits.clone() });
    write_lines(path, Some(header), lines)
}

pub fn read_scores(path: &Path) -> Result<Stream<ScoredBox>> {
    read_stream(path, |l: ScoreLine| {
        let len = l.scores.len();
        (ScoredBox { image_id: l.image_id, bbox: box_from(l.bbox), scores: l.scores }, len)
    })
}

pub fn write_scores(
    path: &Path,
    header: &StreamHeader,
    records: &[LogitRecord],
    scores: &[CalibratedScores],
) -> Result<()> {
    let lines = records.iter().zip(scores).map(|(r, s)| ScoreLine {
        image_id: r.image_id,
        bbox: box_array(&r.bbox),
        scores: s.scores.clone(),
    });
    write_lines(path, Some(header), lines)
}

impl Stream<ScoredBox> {
    /// One detection per foreground class with score at least `threshold`.
    pub fn detections(&self, threshold: f64) -> Result<Vec<Detection>> {
        let records: Vec<LogitRecord> = self
            .records
            .iter()
            .map(|r| LogitRecord { image_id: r.image_id, bbox: r.bbox, logits: Vec::new() })
            .collect();
        let scores: Vec<CalibratedScores> =
            self.records.iter().map(|r| CalibratedScores { scores: r.scores.clone() }).collect();
        Ok(detections_from_scores(&records, &scores, &self.class_ids, self.mode, threshold)?)
    }
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (line_no, line) in non_empty_lines(path)? {
        let d: DetectionLine = parse_line(path, line_no, &line)?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::record(path, format!("line {line_no}"), format!("score {} outside [0, 1]", d.score)));
        }
        out.push(Detection { image_id: d.image_id, class_id: d.class_id, bbox: box_from(d.bbox), score: d.score });
    }
    Ok(out)
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let lines = dets.iter().map(|d| DetectionLine {
        image_id: d.image_id,
        class_id: d.class_id,
        bbox: box_array(&d.bbox),
        score: d.score,
    });
    write_lines(path, None, lines)
}

/// Detections from either a score file (expanded per class, keeping scores
/// at least `threshold`) or a detection file, told apart by the first line.
pub fn read_detections_any(path: &Path, threshold: f64) -> Result<Vec<Detection>> {
    let lines = non_empty_lines(path)?;
    let Some((line_no, first)) = lines.first() else {
        return Ok(Vec::new());
    };
    let value: serde_json::Value = parse_line(path, *line_no, first)?;
    if value.get("mode").is_some() {
        read_scores(path)?.detections(threshold)
    } else {
        let dets = read_detections(path)?;
        Ok(dets.into_iter().filter(|d| d.score >= threshold).collect())
    }
}
