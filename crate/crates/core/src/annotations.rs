//! Normalized annotation statistics: instances, class frequencies and
//! spatial histograms.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{Center, NormBox};

/// One annotated object. The box is normalized by its image's width and
/// height, so the center lies in the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectInstance {
    pub id: u64,
    pub class_id: u64,
    pub image_id: u64,
    pub bbox: NormBox,
}

impl ObjectInstance {
    pub fn center(&self) -> Center {
        self.bbox.center()
    }
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

/// Immutable container of normalized instances with their catalogs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    instances: Vec<ObjectInstance>,
    categories: BTreeMap<u64, String>,
    images: BTreeMap<u64, ImageSize>,
}

impl Dataset {
    /// Validates that every instance references a known image and category,
    /// that image sizes are positive, and that centers are normalized.
    pub fn new(
        categories: BTreeMap<u64, String>,
        images: BTreeMap<u64, ImageSize>,
        instances: Vec<ObjectInstance>,
    ) -> Result<Self> {
        for (id, size) in &images {
            if !(size.width > 0.0 && size.height > 0.0) {
                return Err(Error::InvalidDataset(alloc::format!(
                    "image {id} has non-positive size {}x{}",
                    size.width,
                    size.height
                )));
            }
        }
        for inst in &instances {
            if !images.contains_key(&inst.image_id) {
                return Err(Error::InvalidDataset(alloc::format!(
                    "instance {} references unknown image {}",
                    inst.id,
                    inst.image_id
                )));
            }
            if !categories.contains_key(&inst.class_id) {
                return Err(Error::InvalidDataset(alloc::format!(
                    "instance {} references unknown category {}",
                    inst.id,
                    inst.class_id
                )));
            }
            if !inst.center().in_unit_square() {
                return Err(Error::InvalidDataset(alloc::format!(
                    "instance {} has center ({}, {}) outside the unit square",
                    inst.id,
                    inst.bbox.cx,
                    inst.bbox.cy
                )));
            }
        }
        Ok(Dataset { instances, categories, images })
    }

    pub fn instances(&self) -> &[ObjectInstance] {
        &self.instances
    }

    pub fn categories(&self) -> &BTreeMap<u64, String> {
        &self.categories
    }

    pub fn images(&self) -> &BTreeMap<u64, ImageSize> {
        &self.images
    }

    /// Centers grouped by class. Every catalog category is present, possibly
    /// with an empty list.
    pub fn centers_by_class(&self) -> BTreeMap<u64, Vec<Center>> {
        let mut out: BTreeMap<u64, Vec<Center>> = self.categories.keys().map(|&c| (c, Vec::new())).collect();
        for inst in &self.instances {
            out.entry(inst.class_id).or_default().push(inst.center());
        }
        out
    }
}

/// LVIS-style frequency group, assigned from the number of training images
/// containing the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Rare,
    Common,
    Frequent,
}

impl Group {
    pub fn from_image_count(image_count: u64) -> Self {
        match image_count {
            0..=9 => Group::Rare,
            10..=100 => Group::Common,
            _ => Group::Frequent,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Rare => "rare",
            Group::Common => "common",
            Group::Frequent => "frequent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rare" | "r" => Some(Group::Rare),
            "common" | "c" => Some(Group::Common),
            "frequent" | "f" => Some(Group::Frequent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassFrequency {
    pub class_id: u64,
    pub instance_count: u64,
    pub image_count: u64,
    pub group: Group,
}

/// Instance and image counts per catalog category. Categories without
/// instances are reported with zero counts (and therefore as rare).
pub fn compute_class_frequencies(ds: &Dataset) -> BTreeMap<u64, ClassFrequency> {
    let mut instances: BTreeMap<u64, u64> = ds.categories.keys().map(|&c| (c, 0)).collect();
    let mut images: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for inst in &ds.instances {
        *instances.entry(inst.class_id).or_default() += 1;
        images.entry(inst.class_id).or_default().insert(inst.image_id);
    }
    instances
        .into_iter()
        .map(|(class_id, instance_count)| {
            let image_count = images.get(&class_id).map_or(0, |s| s.len() as u64);
            let freq =
                ClassFrequency { class_id, instance_count, image_count, group: Group::from_image_count(image_count) };
            (class_id, freq)
        })
        .collect()
}

/// Occurrence counts over a `G x G` grid. `counts` is row-major with the
/// row index being the vertical cell `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialHistogram {
    grid_size: usize,
    counts: Vec<u64>,
}

impl SpatialHistogram {
    pub fn from_centers<'a, I>(centers: I, grid_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Center>,
    {
        if grid_size == 0 {
            return Err(invalid_arg!("grid size must be at least 1"));
        }
        let mut counts = vec![0u64; grid_size * grid_size];
        for c in centers {
            let (i, j) = c.cell(grid_size);
            counts[j * grid_size + i] += 1;
        }
        Ok(SpatialHistogram { grid_size, counts })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Count in the cell at column `i`, row `j`.
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[j * self.grid_size + i]
    }

    /// Row-major counts, `counts[j * G + i]`.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.grid_size)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram of instance centers, optionally restricted to one class. With
/// no filter every class contributes (the generic object distribution).
pub fn spatial_histogram(ds: &Dataset, class_filter: Option<u64>, grid_size: usize) -> Result<SpatialHistogram> {
    let centers: Vec<Center> = ds
        .instances
        .iter()
        .filter(|inst| class_filter.is_none_or(|c| inst.class_id == c))
        .map(ObjectInstance::center)
        .collect();
    SpatialHistogram::from_centers(centers.iter(), grid_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn dataset(points: &[(u64, u64, f64, f64)]) -> Dataset {
        let categories = (1..=3).map(|c| (c, alloc::format!("c{c}"))).collect();
        let images = (1..=20).map(|i| (i, ImageSize { width: 100.0, height: 100.0 })).collect();
        let instances = points
            .iter()
            .enumerate()
            .map(|(k, &(class_id, image_id, x, y))| ObjectInstance {
                id: k as u64,
                class_id,
                image_id,
                bbox: NormBox::new(x, y, 0.0, 0.0),
            })
            .collect();
        Dataset::new(categories, images, instances).unwrap()
    }

    #[test]
    fn rejects_unknown_references() {
        let cats: BTreeMap<u64, String> = [(1, "a".to_string())].into_iter().collect();
        let imgs: BTreeMap<u64, ImageSize> = [(1, ImageSize { width: 10.0, height: 10.0 })].into_iter().collect();
        let inst =
            |class_id, image_id| ObjectInstance { id: 7, class_id, image_id, bbox: NormBox::new(0.5, 0.5, 0.1, 0.1) };
        assert!(Dataset::new(cats.clone(), imgs.clone(), vec![inst(1, 1)]).is_ok());
        assert!(matches!(Dataset::new(cats.clone(), imgs.clone(), vec![inst(1, 2)]), Err(Error::InvalidDataset(_))));
        assert!(matches!(Dataset::new(cats.clone(), imgs, vec![inst(2, 1)]), Err(Error::InvalidDataset(_))));
        let bad: BTreeMap<u64, ImageSize> = [(1, ImageSize { width: 0.0, height: 10.0 })].into_iter().collect();
        assert!(Dataset::new(cats, bad, vec![]).is_err());
    }

    #[test]
    fn group_boundaries() {
        assert_eq!(Group::from_image_count(0), Group::Rare);
        assert_eq!(Group::from_image_count(5), Group::Rare);
        assert_eq!(Group::from_image_count(9), Group::Rare);
        assert_eq!(Group::from_image_count(10), Group::Common);
        assert_eq!(Group::from_image_count(100), Group::Common);
        assert_eq!(Group::from_image_count(101), Group::Frequent);
        assert_eq!(Group::from_image_count(500), Group::Frequent);
    }

    #[test]
    fn frequencies_count_instances_and_images() {
        let ds = dataset(&[(1, 1, 0.1, 0.1), (1, 1, 0.2, 0.2), (1, 1, 0.3, 0.3), (2, 2, 0.5, 0.5)]);
        let freq = compute_class_frequencies(&ds);
        assert_eq!(freq[&1].instance_count, 3);
        assert_eq!(freq[&1].image_count, 1);
        assert_eq!(freq[&2].instance_count, 1);
        assert_eq!(freq[&3].instance_count, 0);
        assert_eq!(freq[&3].image_count, 0);
        assert_eq!(freq[&3].group, Group::Rare);
    }

    #[test]
    fn five_distinct_images_is_rare() {
        let pts: Vec<_> = (1..=5).map(|i| (1, i, 0.5, 0.5)).collect();
        let freq = compute_class_frequencies(&dataset(&pts));
        assert_eq!(freq[&1].image_count, 5);
        assert_eq!(freq[&1].group, Group::Rare);
    }

    #[test]
    fn histogram_examples() {
        let ds = dataset(&[(1, 1, 0.5, 0.5)]);
        let h = spatial_histogram(&ds, None, 1).unwrap();
        assert_eq!(h.counts(), &[1]);

        let ds = dataset(&[(1, 1, 1.0, 1.0)]);
        let h = spatial_histogram(&ds, None, 4).unwrap();
        assert_eq!(h.get(3, 3), 1);
        assert_eq!(h.total(), 1);

        let ds = dataset(&[(1, 1, 0.1, 0.1), (2, 1, 0.9, 0.9)]);
        let h = spatial_histogram(&ds, None, 2).unwrap();
        assert_eq!(h.counts(), &[1, 0, 0, 1]);
        let only2 = spatial_histogram(&ds, Some(2), 2).unwrap();
        assert_eq!(only2.counts(), &[0, 0, 0, 1]);

        assert!(matches!(spatial_histogram(&ds, None, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn histogram_is_row_major_by_vertical_cell() {
        let ds = dataset(&[(1, 1, 0.9, 0.1)]);
        let h = spatial_histogram(&ds, None, 2).unwrap();
        // column i = 1, row j = 0
        assert_eq!(h.get(1, 0), 1);
        assert_eq!(h.counts(), &[0, 1, 0, 0]);
    }

    proptest! {
        #[test]
        fn histogram_mass_is_conserved(
            pts in prop::collection::vec((1u64..=3, 1u64..=20, 0.0f64..=1.0, 0.0f64..=1.0), 0..200),
            g in 1usize..40,
            filter in prop::option::of(1u64..=3),
        ) {
            let ds = dataset(&pts);
            let h = spatial_histogram(&ds, filter, g).unwrap();
            let expected = pts.iter().filter(|p| filter.is_none_or(|c| p.0 == c)).count() as u64;
            prop_assert_eq!(h.total(), expected);
            let single = spatial_histogram(&ds, filter, 1).unwrap();
            prop_assert_eq!(single.counts(), &[expected][..]);
        }

        #[test]
        fn frequency_totals_match_instances(
            pts in prop::collection::vec((1u64..=3, 1u64..=20, 0.0f64..=1.0, 0.0f64..=1.0), 0..200),
        ) {
            let ds = dataset(&pts);
            let freq = compute_class_frequencies(&ds);
            let total: u64 = freq.values().map(|f| f.instance_count).sum();
            prop_assert_eq!(total, pts.len() as u64);
            for f in freq.values() {
                prop_assert!(f.image_count <= f.instance_count);
                prop_assert_eq!(f.group, Group::from_image_count(f.image_count));
            }
        }
    }
}
