//! Seeded point processes of known fractal dimension and synthetic
//! long-tailed detection scenarios.
//!
//! All generators draw from a ChaCha20 stream seeded with the caller's seed, so
//! a spec always produces the same output.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::annotations::{Dataset, ImageSize, ObjectInstance};
use crate::calibration::{LogitRecord, Mode};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{Center, NormBox};

/// Name of the generator algorithm, recorded in output metadata.
pub const RNG_ALGORITHM: &str = "ChaCha20";
const SIERPINSKI_BURN_IN: usize = 20;
const SQRT3_2: f64 = 0.866_025_403_784_438_6;

fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Point process over the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointProcess {
    Uniform,
    /// Uniform on the segment between two points.
    Line {
        from: Center,
        to: Center,
    },
    /// Isotropic Gaussian, resampled until the point falls inside the square.
    GaussianCluster {
        mean: Center,
        sigma: f64,
    },
    /// Chaos game on the triangle `(0,0), (1,0), (1/2, sqrt(3)/2)`.
    Sierpinski,
    /// Every point at the center of cell `(i, j)` of a `grid x grid` grid.
    SingleCell {
        grid: usize,
        i: usize,
        j: usize,
    },
}

impl PointProcess {
    pub fn kind(&self) -> &'static str {
        match self {
            PointProcess::Uniform => "uniform",
            PointProcess::Line { .. } => "line",
            PointProcess::GaussianCluster { .. } => "gaussian_cluster",
            PointProcess::Sierpinski => "sierpinski",
            PointProcess::SingleCell { .. } => "single_cell",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            PointProcess::Line { from, to } if !(from.in_unit_square() && to.in_unit_square()) => {
                Err(invalid_arg!("line endpoints must lie in the unit square"))
            }
            PointProcess::GaussianCluster { mean, sigma } => {
                if !mean.in_unit_square() {
                    return Err(invalid_arg!("cluster mean must lie in the unit square"));
                }
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(invalid_arg!("cluster sigma must be positive, got {sigma}"));
                }
                Ok(())
            }
            PointProcess::SingleCell { grid, i, j } if grid == 0 || i >= grid || j >= grid => {
                Err(invalid_arg!("cell ({i}, {j}) is not inside a {grid}x{grid} grid"))
            }
            _ => Ok(()),
        }
    }

    fn sample_into<R: Rng>(&self, count: usize, rng: &mut R, out: &mut Vec<Center>) {
        match *self {
            PointProcess::Uniform => {
                out.extend((0..count).map(|_| Center::new(rng.random(), rng.random())));
            }
            PointProcess::Line { from, to } => {
                out.extend((0..count).map(|_| {
                    let t: f64 = rng.random();
                    Center::new(from.x + t * (to.x - from.x), from.y + t * (to.y - from.y))
                }));
            }
            PointProcess::GaussianCluster { mean, sigma } => {
                for _ in 0..count {
                    let p = loop {
                        let dx: f64 = StandardNormal.sample(rng);
                        let dy: f64 = StandardNormal.sample(rng);
                        let p = Center::new(mean.x + sigma * dx, mean.y + sigma * dy);
                        if p.in_unit_square() {
                            break p;
                        }
                    };
                    out.push(p);
                }
            }
            PointProcess::Sierpinski => {
                const VERTICES: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.5, SQRT3_2)];
                let (mut x, mut y): (f64, f64) = (rng.random(), rng.random());
                for step in 0..count + SIERPINSKI_BURN_IN {
                    let (vx, vy) = VERTICES[rng.random_range(0..3)];
                    x = (x + vx) / 2.0;
                    y = (y + vy) / 2.0;
                    if step >= SIERPINSKI_BURN_IN {
                        out.push(Center::new(x, y));
                    }
                }
            }
            PointProcess::SingleCell { grid, i, j } => {
                let g = grid as f64;
                let c = Center::new((i as f64 + 0.5) / g, (j as f64 + 0.5) / g);
                out.extend(core::iter::repeat_n(c, count));
            }
        }
    }

    /// How strongly a detector trained on this class favours location `u`,
    /// in `[0, 1]`.
    pub fn affinity(&self, u: Center) -> f64 {
        match *self {
            PointProcess::Uniform => 1.0,
            PointProcess::Line { from, to } => {
                let d = distance_to_segment(u, from, to);
                libm::exp(-d * d / (2.0 * LINE_AFFINITY_WIDTH * LINE_AFFINITY_WIDTH))
            }
            PointProcess::GaussianCluster { mean, sigma } => {
                let (dx, dy) = (u.x - mean.x, u.y - mean.y);
                libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
            }
            PointProcess::Sierpinski => {
                // inside the triangle hull
                let inside = u.y >= 0.0 && u.y <= SQRT3_2 * (1.0 - libm::fabs(2.0 * u.x - 1.0));
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            PointProcess::SingleCell { grid, i, j } => {
                if u.cell(grid) == (i, j) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

const LINE_AFFINITY_WIDTH: f64 = 0.05;

fn distance_to_segment(p: Center, a: Center, b: Center) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (p.x - (a.x + t * abx), p.y - (a.y + t * aby));
    libm::sqrt(dx * dx + dy * dy)
}

/// Process kinds by name, with default parameters: the main diagonal for
/// `line`, a centered cluster with sigma 0.1, and the central cell of a
/// `4 x 4` grid for `single_cell`.
impl FromStr for PointProcess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PointProcess::Uniform),
            "line" | "diagonal" => Ok(PointProcess::Line { from: Center::new(0.0, 0.0), to: Center::new(1.0, 1.0) }),
            "gaussian_cluster" | "gaussian-cluster" | "cluster" => {
                Ok(PointProcess::GaussianCluster { mean: Center::new(0.5, 0.5), sigma: 0.1 })
            }
            "sierpinski" => Ok(PointProcess::Sierpinski),
            "single_cell" | "single-cell" => Ok(PointProcess::SingleCell { grid: 4, i: 1, j: 1 }),
            other => Err(invalid_arg!("unknown point process kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointProcessSpec {
    pub process: PointProcess,
    pub count: usize,
    pub seed: u64,
}

/// Sample `spec.count` points; every point lies in the unit square.
pub fn generate_points(spec: &PointProcessSpec) -> Result<Vec<Center>> {
    if spec.count == 0 {
        return Err(invalid_arg!("point count must be at least 1"));
    }
    spec.process.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    spec.process.sample_into(spec.count, &mut rng, &mut out);
    Ok(out)
}

/// Long-tailed instance schedule `n_k = max(1, round(max_count (k+1)^-exponent))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyLaw {
    pub exponent: f64,
    pub max_count: u64,
}

impl FrequencyLaw {
    pub fn counts(&self, num_classes: usize) -> Vec<u64> {
        (0..num_classes)
            .map(|k| {
                let n = self.max_count as f64 * libm::pow((k + 1) as f64, -self.exponent);
                (libm::round(n) as u64).max(1)
            })
            .collect()
    }
}

/// Family of a class's location distribution; concrete parameters are drawn
/// per class from the scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialKind {
    Uniform,
    Line,
    Cluster,
    Sierpinski,
}

/// Strength of the simulated detector's biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorBias {
    /// Weight of `ln(n_y + 1)` added to every foreground logit of class `y`.
    pub frequency: f64,
    /// Weight of the class's spatial affinity at the proposal center.
    pub spatial: f64,
    /// Logit margin of the true class (and of background on clutter).
    pub separation: f64,
    /// Standard deviation of the Gaussian noise on every logit.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub num_classes: usize,
    pub frequency_law: FrequencyLaw,
    /// Cycled over classes in index order.
    pub spatial_law: Vec<SpatialKind>,
    pub detector_bias: DetectorBias,
    /// Mean number of background proposals per image.
    pub clutter_rate: f64,
    /// Fraction of evaluation objects placed uniformly instead of by their
    /// class process. Training objects always follow the process.
    pub location_shift: f64,
    /// Images per split.
    pub images: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            num_classes: 60,
            frequency_law: FrequencyLaw { exponent: 1.2, max_count: 400 },
            spatial_law: alloc::vec![
                SpatialKind::Uniform,
                SpatialKind::Cluster,
                SpatialKind::Line,
                SpatialKind::Cluster,
                SpatialKind::Sierpinski,
            ],
            detector_bias: DetectorBias { frequency: 1.0, spatial: 1.5, separation: 4.0, noise: 1.0 },
            clutter_rate: 10.0,
            location_shift: 0.5,
            images: 150,
            seed: 7,
        }
    }
}

impl ScenarioSpec {
    /// Uniformly spread classes with a flat tail of eight- to ten-object
    /// classes and a well separated detector: the regime where per-cell
    /// location priors become sparse as the grid is refined.
    pub fn sparse_grid() -> Self {
        ScenarioSpec {
            frequency_law: FrequencyLaw { exponent: 1.0, max_count: 400 },
            spatial_law: alloc::vec![SpatialKind::Uniform],
            detector_bias: DetectorBias { frequency: 1.0, spatial: 1.5, separation: 18.0, noise: 3.0 },
            location_shift: 0.0,
            ..ScenarioSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(invalid_arg!("scenario needs at least one class"));
        }
        if self.images == 0 {
            return Err(invalid_arg!("scenario needs at least one image"));
        }
        if self.spatial_law.is_empty() {
            return Err(invalid_arg!("spatial law must name at least one kind"));
        }
        if self.frequency_law.exponent.is_nan()
            || self.frequency_law.exponent < 0.0
            || self.frequency_law.max_count == 0
        {
            return Err(invalid_arg!("frequency law needs exponent >= 0 and max_count >= 1"));
        }
        let b = &self.detector_bias;
        if b.noise.is_nan()
            || b.noise < 0.0
            || !b.frequency.is_finite()
            || !b.spatial.is_finite()
            || !b.separation.is_finite()
        {
            return Err(invalid_arg!("detector bias parameters must be finite with noise >= 0"));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(invalid_arg!("clutter rate must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.location_shift) {
            return Err(invalid_arg!("location shift must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Ground truth plus simulated softmax-mode proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedBatch {
    /// Annotations the calibration statistics are fitted on.
    pub train: Dataset,
    /// Annotations the proposals are drawn around and evaluated against.
    pub ground_truth: Dataset,
    /// Logit index `k` belongs to `class_ids[k]`.
    pub class_ids: Vec<u64>,
    pub mode: Mode,
    pub proposals: Vec<LogitRecord>,
    /// Matched ground-truth instance id per proposal, `None` for clutter.
    pub truth_link: Vec<Option<u64>>,
    /// Location process of every class, keyed by class id.
    pub processes: BTreeMap<u64, PointProcess>,
}

pub const IMAGE_WIDTH: f64 = 640.0;
pub const IMAGE_HEIGHT: f64 = 480.0;
const BOX_SIZE: (f64, f64) = (0.04, 0.12);
const PLACEMENT_ATTEMPTS: usize = 64;
const MAX_GT_OVERLAP: f64 = 0.3;

fn draw_process<R: Rng>(kind: SpatialKind, rng: &mut R) -> PointProcess {
    match kind {
        SpatialKind::Uniform => PointProcess::Uniform,
        SpatialKind::Sierpinski => PointProcess::Sierpinski,
        SpatialKind::Cluster => PointProcess::GaussianCluster {
            mean: Center::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)),
            sigma: rng.random_range(0.1..0.2),
        },
        SpatialKind::Line => {
            let from = Center::new(rng.random_range(0.05..0.3), rng.random_range(0.05..0.95));
            let to = Center::new(rng.random_range(0.7..0.95), rng.random_range(0.05..0.95));
            PointProcess::Line { from, to }
        }
    }
}

/// Zero-mean normal draw; consumes no randomness when `sigma` is 0.
fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    } else {
        0.0
    }
}

fn jitter_box<R: Rng>(b: NormBox, rng: &mut R) -> NormBox {
    let j = NormBox::new(
        b.cx + rng.random_range(-0.08..0.08) * b.w,
        b.cy + rng.random_range(-0.08..0.08) * b.h,
        b.w * rng.random_range(0.9..1.1),
        b.h * rng.random_range(0.9..1.1),
    );
    if j.iou(&b) >= 0.5 {
        j
    } else {
        b
    }
}

fn single_quadrant(centers: &[Center]) -> bool {
    centers.windows(2).all(|w| w[0].cell(2) == w[1].cell(2))
}

/// Draw `counts[k]` objects of every class, spread over `images` images while
/// avoiding heavy overlap with objects already placed in the same image.
/// Training draws (`shift == 0`) of four or more objects are redrawn while
/// they sit in a single quadrant, which would give the class a zero dimension.
fn place_instances<R: Rng>(
    counts: &[u64],
    class_ids: &[u64],
    processes: &[PointProcess],
    shift: f64,
    images: usize,
    rng: &mut R,
) -> Vec<ObjectInstance> {
    let mut per_image: BTreeMap<u64, Vec<NormBox>> = BTreeMap::new();
    let mut instances = Vec::new();
    let mut centers = Vec::new();
    for (k, (&n, process)) in counts.iter().zip(processes).enumerate() {
        centers.clear();
        process.sample_into(n as usize, rng, &mut centers);
        if shift == 0.0 {
            for _ in 0..PLACEMENT_ATTEMPTS {
                if n < 4 || !single_quadrant(&centers) {
                    break;
                }
                centers.clear();
                process.sample_into(n as usize, rng, &mut centers);
            }
        }
        for center in &mut centers {
            if shift > 0.0 && rng.random_bool(shift) {
                *center = Center::new(rng.random(), rng.random());
            }
        }
        for center in &centers {
            let w = rng.random_range(BOX_SIZE.0..BOX_SIZE.1);
            let h = rng.random_range(BOX_SIZE.0..BOX_SIZE.1);
            let bbox = NormBox::new(center.x, center.y, w, h);
            let mut image_id = rng.random_range(1..=images as u64);
            for _ in 0..PLACEMENT_ATTEMPTS {
                let clash =
                    per_image.get(&image_id).is_some_and(|boxes| boxes.iter().any(|b| b.iou(&bbox) > MAX_GT_OVERLAP));
                if !clash {
                    break;
                }
                image_id = rng.random_range(1..=images as u64);
            }
            per_image.entry(image_id).or_default().push(bbox);
            instances.push(ObjectInstance { id: instances.len() as u64 + 1, class_id: class_ids[k], image_id, bbox });
        }
    }
    instances
}

/// Generate a scenario: a training split whose objects follow each class's
/// location process, an evaluation split where a `location_shift` fraction of
/// objects is placed uniformly, one proposal per evaluation object and
/// clutter proposals, with logits
/// `z_y = s 1(y = true) + a ln(n_y + 1) + b affinity_y(u) + noise`.
pub fn simulate_scenario(spec: &ScenarioSpec) -> Result<SimulatedBatch> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let c = spec.num_classes;
    let counts = spec.frequency_law.counts(c);
    let class_ids: Vec<u64> = (1..=c as u64).collect();
    let processes: Vec<PointProcess> =
        (0..c).map(|k| draw_process(spec.spatial_law[k % spec.spatial_law.len()], &mut rng)).collect();

    let categories: BTreeMap<u64, String> = class_ids.iter().map(|&id| (id, alloc::format!("class_{id:03}"))).collect();
    let images: BTreeMap<u64, ImageSize> =
        (1..=spec.images as u64).map(|id| (id, ImageSize { width: IMAGE_WIDTH, height: IMAGE_HEIGHT })).collect();

    let train = place_instances(&counts, &class_ids, &processes, 0.0, spec.images, &mut rng);
    let instances = place_instances(&counts, &class_ids, &processes, spec.location_shift, spec.images, &mut rng);

    let bias = spec.detector_bias;
    let freq_bias: Vec<f64> = counts.iter().map(|&n| bias.frequency * libm::log(n as f64 + 1.0)).collect();
    let foreground_logits = |rng: &mut ChaCha20Rng, u: Center, logits: &mut Vec<f64>| {
        logits.clear();
        for k in 0..c {
            logits.push(freq_bias[k] + bias.spatial * processes[k].affinity(u) + gaussian(rng, bias.noise));
        }
    };

    let mut proposals = Vec::new();
    let mut truth_link = Vec::new();
    let mut logits = Vec::with_capacity(c + 1);
    for inst in &instances {
        let bbox = jitter_box(inst.bbox, &mut rng);
        foreground_logits(&mut rng, bbox.center(), &mut logits);
        logits[(inst.class_id - 1) as usize] += bias.separation;
        logits.push(gaussian(&mut rng, bias.noise));
        proposals.push(LogitRecord { image_id: inst.image_id, bbox, logits: logits.clone() });
        truth_link.push(Some(inst.id));
    }
    let total_clutter = libm::round(spec.clutter_rate * spec.images as f64) as usize;
    for _ in 0..total_clutter {
        let image_id = rng.random_range(1..=spec.images as u64);
        let bbox = NormBox::new(
            rng.random(),
            rng.random(),
            rng.random_range(BOX_SIZE.0..BOX_SIZE.1),
            rng.random_range(BOX_SIZE.0..BOX_SIZE.1),
        );
        foreground_logits(&mut rng, bbox.center(), &mut logits);
        logits.push(bias.separation + gaussian(&mut rng, bias.noise));
        proposals.push(LogitRecord { image_id, bbox, logits: logits.clone() });
        truth_link.push(None);
    }

    let train = Dataset::new(categories.clone(), images.clone(), train)?;
    let ground_truth = Dataset::new(categories, images, instances)?;
    Ok(SimulatedBatch {
        train,
        ground_truth,
        processes: class_ids.iter().copied().zip(processes).collect(),
        class_ids,
        mode: Mode::Softmax,
        proposals,
        truth_link,
    })
}
