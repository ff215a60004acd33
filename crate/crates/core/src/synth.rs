//! Synthetic hyperspectral data with planted ground truth.
//!
//! Seeds come in twin pairs: one diploid and one haploid sharing blob geometry
//! and base spectrum, differing only by the class offset inside the signal
//! interval (and by independent noise). Class differences outside the signal
//! interval are therefore exactly zero by construction, and on noise-free
//! bands no classifier can beat chance there.
//!
//! All draws derive from `rng_seed` per pair / per (seed, band), so per-seed
//! generation parallelizes without changing the output.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cube::{default_wavelength_table, CalibrationFrames, CubeMeta, HyperCube};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, seeded_rng, standard_normal};
use crate::screen::{partition_bands, BandInterval};
use crate::segment::{BinaryMask, BoundingBox, SeedClass, SeedROI};
use rand::Rng;

/// Elliptical seed-shape parameters, as fractions of the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobGeometry {
    pub center_jitter: f64,
    pub min_axis_frac: f64,
    pub max_axis_frac: f64,
}

impl Default for BlobGeometry {
    fn default() -> Self {
        BlobGeometry { center_jitter: 0.06, min_axis_frac: 0.22, max_axis_frac: 0.34 }
    }
}

/// Synthetic dataset layout: planted per-interval noise levels and one
/// class-discriminative interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub band_count: usize,
    pub seeds_per_class: usize,
    pub image_size: usize,
    pub intervals: Vec<BandInterval>,
    /// One noise standard deviation per interval.
    pub noise_std: Vec<f64>,
    /// 1-based index into `intervals` carrying the class signal.
    pub signal_interval: usize,
    /// Mean reflectance offset of haploid blobs inside the signal interval.
    pub signal_strength: f64,
    pub blob: BlobGeometry,
    /// Ground-truth rule: an interval is "noisy" when its std exceeds
    /// `noisy_factor` times the minimum std.
    pub noisy_factor: f64,
    pub rng_seed: u64,
    pub cultivar: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            band_count: 50,
            seeds_per_class: 20,
            image_size: 32,
            intervals: partition_bands(50, 5).expect("static partition"),
            noise_std: vec![0.5, 0.05, 0.05, 0.05, 0.5],
            signal_interval: 4,
            signal_strength: 0.3,
            blob: BlobGeometry::default(),
            noisy_factor: 2.0,
            rng_seed: 0,
            cultivar: "synthetic-a".into(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.band_count < 1 || self.seeds_per_class < 1 || self.image_size < 4 {
            return Err(Error::InvalidConfig {
                detail: "band_count, seeds_per_class >= 1 and image_size >= 4 required".into(),
            });
        }
        if self.intervals.is_empty() || self.noise_std.len() != self.intervals.len() {
            return Err(Error::InvalidConfig {
                detail: format!(
                    "{} noise levels for {} intervals",
                    self.noise_std.len(),
                    self.intervals.len()
                ),
            });
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig { detail: "noise_std entries must be >= 0".into() });
        }
        if self.signal_interval < 1 || self.signal_interval > self.intervals.len() {
            return Err(Error::InvalidConfig {
                detail: format!("signal_interval {} of {}", self.signal_interval, self.intervals.len()),
            });
        }
        if !(self.signal_strength >= 0.0) {
            return Err(Error::InvalidConfig { detail: "signal_strength must be >= 0".into() });
        }
        if !(self.blob.min_axis_frac > 0.0)
            || self.blob.min_axis_frac > self.blob.max_axis_frac
            || self.blob.max_axis_frac + self.blob.center_jitter > 0.47
        {
            return Err(Error::InvalidConfig {
                detail: "blob axes must satisfy 0 < min <= max and max + jitter <= 0.47".into(),
            });
        }
        self.band_interval_map().map(|_| ())
    }

    /// 0-based interval index per band; intervals must tile `1..=band_count`.
    pub fn band_interval_map(&self) -> Result<Vec<usize>> {
        let mut map = vec![usize::MAX; self.band_count];
        for (idx, interval) in self.intervals.iter().enumerate() {
            interval.validate(self.band_count)?;
            for band in interval.bands() {
                if map[band - 1] != usize::MAX {
                    return Err(Error::InvalidConfig {
                        detail: format!("band {} covered by two intervals", band),
                    });
                }
                map[band - 1] = idx;
            }
        }
        if let Some(band) = map.iter().position(|&i| i == usize::MAX) {
            return Err(Error::InvalidConfig {
                detail: format!("band {} not covered by any interval", band + 1),
            });
        }
        Ok(map)
    }

    /// 1-based indices of intervals whose noise exceeds the planted floor.
    pub fn noisy_intervals(&self) -> Vec<usize> {
        let min = self.noise_std.iter().cloned().fold(f64::INFINITY, f64::min);
        self.noise_std
            .iter()
            .enumerate()
            .filter(|(_, &std)| std > self.noisy_factor * min)
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// Middle band of the quietest interval; a good segmentation reference.
    pub fn cleanest_band(&self) -> usize {
        let mut best = 0;
        for (i, &std) in self.noise_std.iter().enumerate() {
            if std < self.noise_std[best] {
                best = i;
            }
        }
        let interval = &self.intervals[best];
        (interval.start + interval.end) / 2
    }
}

/// Planted truth accompanying a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// 1-based interval indices planted as noisy.
    pub noisy_intervals: Vec<usize>,
    /// 1-based interval index carrying the class signal.
    pub discriminative_interval: usize,
    pub labels: Vec<SeedClass>,
}

/// Per-pair shape and spectrum parameters; twins share one blueprint.
#[derive(Debug, Clone, Copy)]
struct SeedBlueprint {
    jitter_row: f64,
    jitter_col: f64,
    semi_major: f64,
    semi_minor: f64,
    angle: f64,
    base_level: f64,
    base_amplitude: f64,
    base_frequency: f64,
    base_phase: f64,
}

fn blueprint(spec: &SynthSpec, pair: u64) -> SeedBlueprint {
    let mut rng = seeded_rng(derive_seed(spec.rng_seed, "synth-geom", &[pair]));
    let size = spec.image_size as f64;
    SeedBlueprint {
        jitter_row: rng.gen_range(-1.0..1.0),
        jitter_col: rng.gen_range(-1.0..1.0),
        semi_major: rng.gen_range(spec.blob.min_axis_frac..=spec.blob.max_axis_frac) * size,
        semi_minor: rng.gen_range(spec.blob.min_axis_frac..=spec.blob.max_axis_frac) * size,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
        base_level: rng.gen_range(0.45..0.55),
        base_amplitude: rng.gen_range(0.0..0.1),
        base_frequency: rng.gen_range(0.5..1.5),
        base_phase: rng.gen_range(0.0..std::f64::consts::TAU),
    }
}

impl SeedBlueprint {
    fn base_at(&self, band: usize, band_count: usize) -> f64 {
        let span = (band_count.max(2) - 1) as f64;
        let phase = std::f64::consts::TAU * self.base_frequency * (band - 1) as f64 / span;
        self.base_level + self.base_amplitude * (phase + self.base_phase).sin()
    }

    fn contains(&self, row: f64, col: f64, center_row: f64, center_col: f64) -> bool {
        let dr = row - center_row;
        let dc = col - center_col;
        let (sin, cos) = self.angle.sin_cos();
        let u = dc * cos + dr * sin;
        let v = -dc * sin + dr * cos;
        (u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2) <= 1.0
    }
}

/// Blob pixels inside the rectangle `[row0, row1) x [col0, col1)`, row-major.
fn blob_pixels(
    bp: &SeedBlueprint,
    center_row: f64,
    center_col: f64,
    row0: usize,
    row1: usize,
    col0: usize,
    col1: usize,
) -> Vec<(usize, usize)> {
    let mut pixels = Vec::new();
    for r in row0..row1 {
        for c in col0..col1 {
            if bp.contains(r as f64, c as f64, center_row, center_col) {
                pixels.push((r, c));
            }
        }
    }
    pixels
}

fn bbox_of(pixels: &[(usize, usize)]) -> BoundingBox {
    let mut bx = BoundingBox {
        row_min: usize::MAX,
        row_max: 0,
        col_min: usize::MAX,
        col_max: 0,
    };
    for &(r, c) in pixels {
        bx.row_min = bx.row_min.min(r);
        bx.row_max = bx.row_max.max(r);
        bx.col_min = bx.col_min.min(c);
        bx.col_max = bx.col_max.max(c);
    }
    bx
}

fn label_of(seed_id: usize) -> SeedClass {
    if seed_id % 2 == 0 {
        SeedClass::Diploid
    } else {
        SeedClass::Haploid
    }
}

fn ground_truth(spec: &SynthSpec, labels: Vec<SeedClass>) -> GroundTruth {
    GroundTruth {
        noisy_intervals: spec.noisy_intervals(),
        discriminative_interval: spec.signal_interval,
        labels,
    }
}

/// Ready-made ROI stacks with planted noise and class signal.
pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<(Vec<SeedROI>, GroundTruth)> {
    spec.validate()?;
    let band_map = spec.band_interval_map()?;
    let n = 2 * spec.seeds_per_class;
    let size = spec.image_size;
    let signal = &spec.intervals[spec.signal_interval - 1];

    let rois: Vec<SeedROI> = par::map((0..n).collect(), |seed_id| {
        let bp = blueprint(spec, (seed_id / 2) as u64);
        let center_row =
            size as f64 / 2.0 + bp.jitter_row * spec.blob.center_jitter * size as f64;
        let center_col =
            size as f64 / 2.0 + bp.jitter_col * spec.blob.center_jitter * size as f64;
        let pixels = blob_pixels(&bp, center_row, center_col, 0, size, 0, size);
        let label = label_of(seed_id);

        let mut stack = Array3::<f64>::zeros((size, size, spec.band_count));
        for band in 1..=spec.band_count {
            let base = bp.base_at(band, spec.band_count);
            let offset = if label == SeedClass::Haploid && signal.contains(band) {
                spec.signal_strength
            } else {
                0.0
            };
            let std = spec.noise_std[band_map[band - 1]];
            let mut noise_rng = seeded_rng(derive_seed(
                spec.rng_seed,
                "synth-noise",
                &[seed_id as u64, band as u64],
            ));
            for &(r, c) in &pixels {
                stack[[r, c, band - 1]] = base + offset + std * standard_normal(&mut noise_rng);
            }
        }
        SeedROI {
            stack,
            label,
            seed_id,
            source_box: bbox_of(&pixels),
            cultivar: spec.cultivar.clone(),
        }
    });

    let labels = rois.iter().map(|r| r.label).collect();
    Ok((rois, ground_truth(spec, labels)))
}

/// A raw-count scene exercising calibration and segmentation end to end.
#[derive(Debug, Clone)]
pub struct RawScene {
    pub raw: HyperCube,
    pub frames: CalibrationFrames,
    /// True blob mask over the scene.
    pub mask: BinaryMask,
    /// True per-seed boxes, sorted by `(row_min, col_min)` scan order.
    pub boxes: Vec<BoundingBox>,
    /// Labels aligned with `boxes`.
    pub labels: Vec<SeedClass>,
    /// Underlying reflectance scene that calibration must recover.
    pub reflectance: Array3<f64>,
    /// Clean band suitable for threshold segmentation.
    pub reference_band: usize,
}

const SCENE_PAD: usize = 8;
const BACKGROUND_JITTER: f64 = 5e-4;

/// Embeds the seed blobs on a dark background in raw-count space, with
/// synthetic dark/white frames such that `calibrate()` recovers the scene.
///
/// One border pixel carries the exact background maximum, so the
/// border-maximum threshold separates background from blobs deterministically.
pub fn generate_raw_cube(spec: &SynthSpec) -> Result<RawScene> {
    spec.validate()?;
    let band_map = spec.band_interval_map()?;
    let n = 2 * spec.seeds_per_class;
    let size = spec.image_size;
    let cell = size + 2 * SCENE_PAD;
    let grid_cols = (n as f64).sqrt().ceil() as usize;
    let grid_rows = n.div_ceil(grid_cols);
    let rows = grid_rows * cell;
    let cols = grid_cols * cell;
    let bands = spec.band_count;
    let signal = &spec.intervals[spec.signal_interval - 1];

    // Background jitter strictly below BACKGROUND_JITTER, with the exact
    // maximum pinned at the corner (a border pixel on every band).
    let mut reflectance = Array3::<f64>::zeros((rows, cols, bands));
    let mut bg_rng = seeded_rng(derive_seed(spec.rng_seed, "synth-bg", &[]));
    let mut background = Array2::<f64>::zeros((rows, cols));
    for v in background.iter_mut() {
        *v = bg_rng.gen_range(0.0..0.99 * BACKGROUND_JITTER);
    }
    background[[0, 0]] = BACKGROUND_JITTER;
    for r in 0..rows {
        for c in 0..cols {
            let bg = background[[r, c]];
            for b in 0..bands {
                reflectance[[r, c, b]] = bg;
            }
        }
    }

    let mut mask = Array2::<bool>::from_elem((rows, cols), false);
    let mut placed: Vec<(BoundingBox, SeedClass)> = Vec::with_capacity(n);
    for seed_id in 0..n {
        let bp = blueprint(spec, (seed_id / 2) as u64);
        let grid_r = seed_id / grid_cols;
        let grid_c = seed_id % grid_cols;
        let center_row = (grid_r * cell) as f64 + cell as f64 / 2.0
            + bp.jitter_row * spec.blob.center_jitter * size as f64;
        let center_col = (grid_c * cell) as f64 + cell as f64 / 2.0
            + bp.jitter_col * spec.blob.center_jitter * size as f64;
        let pixels = blob_pixels(
            &bp,
            center_row,
            center_col,
            grid_r * cell,
            (grid_r + 1) * cell,
            grid_c * cell,
            (grid_c + 1) * cell,
        );
        if pixels.is_empty() {
            return Err(Error::InvalidConfig { detail: "blob collapsed to zero pixels".into() });
        }
        let label = label_of(seed_id);
        for band in 1..=bands {
            let base = bp.base_at(band, bands);
            let offset = if label == SeedClass::Haploid && signal.contains(band) {
                spec.signal_strength
            } else {
                0.0
            };
            let std = spec.noise_std[band_map[band - 1]];
            let mut noise_rng = seeded_rng(derive_seed(
                spec.rng_seed,
                "synth-noise",
                &[seed_id as u64, band as u64],
            ));
            for &(r, c) in &pixels {
                reflectance[[r, c, band - 1]] = base + offset + std * standard_normal(&mut noise_rng);
            }
        }
        for &(r, c) in &pixels {
            mask[[r, c]] = true;
        }
        placed.push((bbox_of(&pixels), label));
    }
    placed.sort_by_key(|(bx, _)| (bx.row_min, bx.col_min));
    let (boxes, labels): (Vec<_>, Vec<_>) = placed.into_iter().unzip();

    let mut dark_rng = seeded_rng(derive_seed(spec.rng_seed, "synth-dark", &[]));
    let mut white_rng = seeded_rng(derive_seed(spec.rng_seed, "synth-white", &[]));
    let dark = Array2::from_shape_fn((rows, cols), |_| 100.0 + dark_rng.gen_range(0.0..5.0));
    let white = Array2::from_shape_fn((rows, cols), |_| 900.0 + white_rng.gen_range(0.0..5.0));

    let mut raw_data = Array3::<f64>::zeros((rows, cols, bands));
    for r in 0..rows {
        for c in 0..cols {
            let (d, w) = (dark[[r, c]], white[[r, c]]);
            for b in 0..bands {
                raw_data[[r, c, b]] = d + reflectance[[r, c, b]] * (w - d);
            }
        }
    }

    let meta = CubeMeta {
        cultivar: spec.cultivar.clone(),
        acquisition: format!("synthetic-{}", spec.rng_seed),
        calibrated: false,
    };
    let raw = HyperCube::new(raw_data, default_wavelength_table(bands), meta)?;
    let frames = CalibrationFrames::from_planes(dark, white)?;
    Ok(RawScene {
        raw,
        frames,
        mask: BinaryMask { data: mask },
        boxes,
        labels,
        reflectance,
        reference_band: spec.cleanest_band(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::calibrate;
    use crate::segment::{binarize, estimate_background_threshold, extract_bounding_boxes};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            band_count: 10,
            seeds_per_class: 4,
            image_size: 16,
            intervals: partition_bands(10, 2).unwrap(),
            noise_std: vec![0.4, 0.02],
            signal_interval: 2,
            signal_strength: 0.3,
            rng_seed: 5,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        SynthSpec::default().validate().unwrap();
        assert_eq!(SynthSpec::default().noisy_intervals(), vec![1, 5]);
        assert_eq!(SynthSpec::default().cleanest_band(), 15);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let (a, ta) = generate_synthetic_dataset(&spec).unwrap();
        let (b, tb) = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);

        let ra = generate_raw_cube(&spec).unwrap();
        let rb = generate_raw_cube(&spec).unwrap();
        assert_eq!(ra.raw, rb.raw);
        assert_eq!(ra.boxes, rb.boxes);
    }

    #[test]
    fn no_noise_no_signal_makes_classes_identical() {
        let spec = SynthSpec {
            noise_std: vec![0.0, 0.0],
            signal_strength: 0.0,
            ..small_spec()
        };
        let (rois, _) = generate_synthetic_dataset(&spec).unwrap();
        // Twins share geometry and base; with nothing planted they are equal,
        // so the class mean images are equal too.
        for pair in rois.chunks(2) {
            assert_eq!(pair[0].stack, pair[1].stack);
            assert_ne!(pair[0].label, pair[1].label);
        }
    }

    #[test]
    fn planted_offset_appears_only_in_the_signal_interval() {
        let spec = SynthSpec { noise_std: vec![0.0, 0.0], ..small_spec() };
        let (rois, truth) = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(truth.discriminative_interval, 2);
        let signal = &spec.intervals[1];
        for pair in rois.chunks(2) {
            let (diploid, haploid) = (&pair[0], &pair[1]);
            for band in 1..=spec.band_count {
                let mut gap_sum = 0.0;
                let mut count = 0usize;
                for r in 0..spec.image_size {
                    for c in 0..spec.image_size {
                        let d = diploid.stack[[r, c, band - 1]];
                        let h = haploid.stack[[r, c, band - 1]];
                        if d != 0.0 || h != 0.0 {
                            gap_sum += h - d;
                            count += 1;
                        }
                    }
                }
                let gap = gap_sum / count as f64;
                let expected = if signal.contains(band) { spec.signal_strength } else { 0.0 };
                assert!(
                    (gap - expected).abs() < 1e-12,
                    "band {}: gap {} expected {}",
                    band,
                    gap,
                    expected
                );
            }
        }
    }

    #[test]
    fn empirical_noise_matches_the_planted_std() {
        let spec = SynthSpec { seeds_per_class: 10, ..small_spec() };
        let noiseless = SynthSpec { noise_std: vec![0.0, 0.0], ..spec.clone() };
        let (noisy, _) = generate_synthetic_dataset(&spec).unwrap();
        let (clean, _) = generate_synthetic_dataset(&noiseless).unwrap();
        let band_map = spec.band_interval_map().unwrap();
        for band in 1..=spec.band_count {
            let mut diffs = Vec::new();
            for (a, b) in noisy.iter().zip(clean.iter()) {
                for r in 0..spec.image_size {
                    for c in 0..spec.image_size {
                        let clean_v = b.stack[[r, c, band - 1]];
                        let noisy_v = a.stack[[r, c, band - 1]];
                        if clean_v != 0.0 {
                            diffs.push(noisy_v - clean_v);
                        }
                    }
                }
            }
            assert!(diffs.len() >= 1000, "band {}: {} blob pixels", band, diffs.len());
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                / (diffs.len() as f64 - 1.0);
            let expected = spec.noise_std[band_map[band - 1]];
            assert!(
                (var.sqrt() - expected).abs() <= 0.1 * expected,
                "band {}: std {} expected {}",
                band,
                var.sqrt(),
                expected
            );
        }
    }

    #[test]
    fn calibration_recovers_the_reflectance_scene() {
        let scene = generate_raw_cube(&small_spec()).unwrap();
        let calibrated = calibrate(&scene.raw, &scene.frames).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in calibrated.data.iter().zip(scene.reflectance.iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-6, "worst calibration error {}", worst);
    }

    #[test]
    fn ground_truth_boxes_come_from_the_mask() {
        let scene = generate_raw_cube(&small_spec()).unwrap();
        let boxes = extract_bounding_boxes(&scene.mask, 1);
        assert_eq!(boxes, scene.boxes);
        assert_eq!(scene.labels.len(), scene.boxes.len());
    }

    #[test]
    fn threshold_segmentation_recovers_the_blobs() {
        let spec = small_spec();
        let scene = generate_raw_cube(&spec).unwrap();
        let calibrated = calibrate(&scene.raw, &scene.frames).unwrap();
        let reference = calibrated.band_image(scene.reference_band).unwrap();
        let threshold = estimate_background_threshold(reference, SCENE_PAD, 1.0).unwrap();
        let mask = binarize(reference, threshold);

        let truth_count = scene.mask.count_true();
        let mut recovered = 0usize;
        let mut spurious = 0usize;
        for (a, b) in mask.data.iter().zip(scene.mask.data.iter()) {
            match (a, b) {
                (true, true) => recovered += 1,
                (true, false) => spurious += 1,
                _ => {}
            }
        }
        assert_eq!(spurious, 0, "background pixels above the pinned threshold");
        assert!(
            recovered as f64 >= 0.99 * truth_count as f64,
            "recovered {} of {}",
            recovered,
            truth_count
        );
    }
}
