//! COCO / LVIS style annotation files.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use fracal_core::{Dataset, ImageSize, NormBox, ObjectInstance};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawFile {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<RawCategory>,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
struct RawAnnotation {
    #[serde(default)]
    id: Option<u64>,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default, deserialize_with = "crowd_flag")]
    iscrowd: bool,
}

#[derive(Deserialize)]
struct RawCategory {
    id: u64,
    #[serde(default)]
    name: String,
}

// COCO writes 0/1, some exporters write booleans.
fn crowd_flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    Ok(match serde_json::Value::deserialize(d)? {
        serde_json::Value::Bool(b) => b,
        serde_json::Value::Number(n) => n.as_f64().is_some_and(|v| v != 0.0),
        _ => false,
    })
}

/// What the loader dropped or adjusted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub annotations: usize,
    pub crowd: usize,
    pub degenerate: usize,
    /// Boxes whose center fell outside the image and were clipped to it.
    pub clipped: usize,
}

pub fn load_annotations(path: &Path) -> Result<Dataset> {
    load_annotations_with_summary(path).map(|(ds, _)| ds)
}

pub fn load_annotations_with_summary(path: &Path) -> Result<(Dataset, LoadSummary)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw: RawFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, 0, e))?;
    let out = build_dataset(path, raw)?;
    let s = out.1;
    if s.crowd > 0 {
        log::info!("{}: excluded {} crowd annotations", path.display(), s.crowd);
    }
    if s.degenerate > 0 {
        log::warn!("{}: excluded {} degenerate boxes", path.display(), s.degenerate);
    }
    if s.clipped > 0 {
        log::warn!("{}: clipped {} boxes centered outside their image", path.display(), s.clipped);
    }
    Ok(out)
}

fn build_dataset(path: &Path, raw: RawFile) -> Result<(Dataset, LoadSummary)> {
    let mut images = BTreeMap::new();
    for img in &raw.images {
        if !(img.width > 0.0 && img.height > 0.0) {
            return Err(Error::record(
                path,
                format!("image {}", img.id),
                format!("non-positive size {}x{}", img.width, img.height),
            ));
        }
        if images.insert(img.id, ImageSize { width: img.width, height: img.height }).is_some() {
            return Err(Error::record(path, format!("image {}", img.id), "duplicate image id"));
        }
    }
    let mut categories = BTreeMap::new();
    for cat in raw.categories {
        match categories.entry(cat.id) {
            Entry::Vacant(v) => {
                v.insert(cat.name);
            }
            Entry::Occupied(_) => {
                return Err(Error::record(path, format!("category {}", cat.id), "duplicate category id"));
            }
        }
    }

    let mut summary = LoadSummary { annotations: raw.annotations.len(), ..Default::default() };
    let mut instances = Vec::with_capacity(raw.annotations.len());
    for (index, ann) in raw.annotations.iter().enumerate() {
        let id = ann.id.unwrap_or(index as u64 + 1);
        let record = || format!("annotation {id} (#{index})");
        let Some(size) = images.get(&ann.image_id) else {
            return Err(Error::record(path, record(), format!("unknown image {}", ann.image_id)));
        };
        if !categories.contains_key(&ann.category_id) {
            return Err(Error::record(path, record(), format!("unknown category {}", ann.category_id)));
        }
        let [x, y, w, h] = ann.bbox;
        if !ann.bbox.iter().all(|v| v.is_finite()) {
            return Err(Error::record(path, record(), "non-finite bbox"));
        }
        if ann.iscrowd {
            summary.crowd += 1;
            continue;
        }
        if w <= 0.0 || h <= 0.0 {
            summary.degenerate += 1;
            continue;
        }
        let mut bbox = NormBox::from_xywh(x / size.width, y / size.height, w / size.width, h / size.height);
        if !bbox.center().in_unit_square() {
            bbox = bbox.clipped();
            if bbox.w <= 0.0 || bbox.h <= 0.0 {
                summary.degenerate += 1;
                continue;
            }
            summary.clipped += 1;
        }
        instances.push(ObjectInstance { id, class_id: ann.category_id, image_id: ann.image_id, bbox });
    }
    let ds = Dataset::new(categories, images, instances)?;
    Ok((ds, summary))
}

#[derive(Serialize)]
struct OutFile<'a> {
    images: Vec<OutImage>,
    annotations: Vec<OutAnnotation>,
    categories: Vec<OutCategory<'a>>,
}

#[derive(Serialize)]
struct OutImage {
    id: u64,
    width: f64,
    height: f64,
}

#[derive(Serialize)]
struct OutAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u8,
}

#[derive(Serialize)]
struct OutCategory<'a> {
    id: u64,
    name: &'a str,
}

/// Write `ds` back out with pixel boxes.
pub fn write_annotations(path: &Path, ds: &Dataset) -> Result<()> {
    let images = ds.images().iter().map(|(&id, s)| OutImage { id, width: s.width, height: s.height }).collect();
    let annotations = ds
        .instances()
        .iter()
        .map(|inst| {
            let size = ds.images()[&inst.image_id];
            let (x0, y0, _, _) = inst.bbox.corners();
            let w = inst.bbox.w * size.width;
            let h = inst.bbox.h * size.height;
            OutAnnotation {
                id: inst.id,
                image_id: inst.image_id,
                category_id: inst.class_id,
                bbox: [x0 * size.width, y0 * size.height, w, h],
                area: w * h,
                iscrowd: 0,
            }
        })
        .collect();
    let categories = ds.categories().iter().map(|(&id, name)| OutCategory { id, name }).collect();
    let file = OutFile { images, annotations, categories };

    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &file).map_err(|e| Error::io(path, e.into()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(json: &str) -> Result<(Dataset, LoadSummary)> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(json.as_bytes()).unwrap();
        load_annotations_with_summary(f.path())
    }

    const CATS: &str = r#""categories": [{"id": 1, "name": "cow"}, {"id": 2, "name": "tiara"}]"#;

    #[test]
    fn center_from_pixel_box() {
        let json = format!(
            r#"{{"images": [{{"id": 7, "width": 100, "height": 200}}],
                "annotations": [{{"id": 1, "image_id": 7, "category_id": 1, "bbox": [10, 20, 30, 40]}},
                                {{"id": 2, "image_id": 7, "category_id": 2, "bbox": [0, 0, 100, 200]}}],
                {CATS}}}"#
        );
        let (ds, _) = load_str(&json).unwrap();
        let c = ds.instances()[0].center();
        assert!((c.x - 0.25).abs() < 1e-12 && (c.y - 0.2).abs() < 1e-12);
        let full = ds.instances()[1].center();
        assert_eq!((full.x, full.y), (0.5, 0.5));
        assert_eq!(ds.categories()[&2], "tiara");
    }

    #[test]
    fn crowd_and_degenerate_excluded() {
        let json = format!(
            r#"{{"images": [{{"id": 1, "width": 10, "height": 10}}],
                "annotations": [{{"id": 1, "image_id": 1, "category_id": 1, "bbox": [1, 1, 2, 2], "iscrowd": 1}},
                                {{"id": 2, "image_id": 1, "category_id": 1, "bbox": [1, 1, 2, 2]}},
                                {{"id": 3, "image_id": 1, "category_id": 2, "bbox": [1, 1, 0, 2], "iscrowd": false}}],
                {CATS}}}"#
        );
        let (ds, s) = load_str(&json).unwrap();
        assert_eq!(ds.instances().len(), 1);
        assert_eq!(ds.instances()[0].id, 2);
        assert_eq!((s.crowd, s.degenerate, s.annotations), (1, 1, 3));
        assert_eq!(ds.categories().len(), 2);
    }

    #[test]
    fn unknown_references_name_the_record() {
        let json = format!(
            r#"{{"images": [{{"id": 1, "width": 10, "height": 10}}],
                "annotations": [{{"id": 41, "image_id": 9, "category_id": 1, "bbox": [1, 1, 2, 2]}}],
                {CATS}}}"#
        );
        let err = load_str(&json).unwrap_err().to_string();
        assert!(err.contains("annotation 41") && err.contains("unknown image 9"), "{err}");

        let json = format!(
            r#"{{"images": [{{"id": 1, "width": 10, "height": 10}}],
                "annotations": [{{"id": 5, "image_id": 1, "category_id": 3, "bbox": [1, 1, 2, 2]}}],
                {CATS}}}"#
        );
        let err = load_str(&json).unwrap_err().to_string();
        assert!(err.contains("annotation 5") && err.contains("unknown category 3"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = load_str("{\n\"images\": [\n}").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 3, .. }), "{err}");
        assert!(matches!(load_annotations(Path::new("/nonexistent/x.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn boxes_centered_outside_are_clipped() {
        let json = format!(
            r#"{{"images": [{{"id": 1, "width": 10, "height": 10}}],
                "annotations": [{{"id": 1, "image_id": 1, "category_id": 1, "bbox": [8, 2, 6, 2]}},
                                {{"id": 2, "image_id": 1, "category_id": 1, "bbox": [12, 2, 2, 2]}}],
                {CATS}}}"#
        );
        let (ds, s) = load_str(&json).unwrap();
        assert_eq!((s.clipped, s.degenerate), (1, 1));
        assert!(ds.instances()[0].center().in_unit_square());
    }

    #[test]
    fn write_then_load_round_trips() {
        let json = format!(
            r#"{{"images": [{{"id": 3, "width": 640, "height": 480}}],
                "annotations": [{{"id": 8, "image_id": 3, "category_id": 2, "bbox": [64, 48, 32, 96]}}],
                {CATS}}}"#
        );
        let (ds, _) = load_str(&json).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        write_annotations(&p, &ds).unwrap();
        let back = load_annotations(&p).unwrap();
        assert_eq!(back.categories(), ds.categories());
        let (a, b) = (ds.instances()[0], back.instances()[0]);
        assert_eq!((a.id, a.class_id, a.image_id), (b.id, b.class_id, b.image_id));
        assert!((a.bbox.cx - b.bbox.cx).abs() < 1e-12 && (a.bbox.h - b.bbox.h).abs() < 1e-12);
    }
}
