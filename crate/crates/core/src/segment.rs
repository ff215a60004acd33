//! Seed/background separation, bounding boxes, and per-seed ROI extraction.
//!
//! Segmentation runs on one configured reference band: the border of the image
//! is taken as background, its maximum (or a chosen percentile) becomes the
//! binarization threshold, 8-connected components above a minimum area become
//! seeds, and each seed's crop is masked, resized and stacked across all bands.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cube::{load_native, save_native, CubeMeta, HyperCube};
use crate::error::{Error, Result};
use crate::par;

/// Binary classification target: seed ploidy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedClass {
    Haploid,
    Diploid,
}

impl SeedClass {
    /// Class index used by the classifiers: diploid 0, haploid 1.
    pub fn index(self) -> usize {
        match self {
            SeedClass::Diploid => 0,
            SeedClass::Haploid => 1,
        }
    }

    pub fn from_index(index: usize) -> SeedClass {
        if index == 1 {
            SeedClass::Haploid
        } else {
            SeedClass::Diploid
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SeedClass::Haploid => "haploid",
            SeedClass::Diploid => "diploid",
        }
    }
}

impl std::str::FromStr for SeedClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haploid" => Ok(SeedClass::Haploid),
            "diploid" => Ok(SeedClass::Diploid),
            other => Err(Error::InvalidConfig { detail: format!("unknown class {:?}", other) }),
        }
    }
}

/// Boolean foreground mask over a band image.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub data: Array2<bool>,
}

impl BinaryMask {
    pub fn rows(&self) -> usize {
        self.data.dim().0
    }

    pub fn cols(&self) -> usize {
        self.data.dim().1
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Inclusive pixel-coordinate rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }
}

/// One seed's masked, size-normalized image stack across all bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedROI {
    /// `[target][target][bands]`, exactly zero outside the seed mask.
    pub stack: Array3<f64>,
    pub label: SeedClass,
    pub seed_id: usize,
    pub source_box: BoundingBox,
    pub cultivar: String,
}

impl SeedROI {
    pub fn size(&self) -> usize {
        self.stack.dim().0
    }

    pub fn bands(&self) -> usize {
        self.stack.dim().2
    }

    /// Single-band image view (1-based band index).
    pub fn band_image(&self, band: usize) -> ArrayView2<'_, f64> {
        self.stack.index_axis(ndarray::Axis(2), band - 1)
    }
}

/// Per-seed section stored in the header of a native ROI file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiHeader {
    pub seed_id: usize,
    pub label: SeedClass,
    pub source_box: BoundingBox,
}

/// Background level estimate from the image border.
///
/// The border strip of width `margin` is assumed to contain no seed pixels;
/// `percentile` 1.0 returns its maximum, lower values trim hot pixels. The
/// percentile is realized by sorting the border values and indexing at
/// `ceil(percentile * n)` (1-based).
pub fn estimate_background_threshold(
    image: ArrayView2<'_, f64>,
    margin: usize,
    percentile: f64,
) -> Result<f64> {
    let (rows, cols) = image.dim();
    if margin < 1 || 2 * margin >= rows || 2 * margin >= cols {
        return Err(Error::MarginTooLarge { margin, rows, cols });
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::InvalidConfig {
            detail: format!("percentile {} outside (0, 1]", percentile),
        });
    }
    let mut border = Vec::with_capacity(2 * margin * (rows + cols));
    for r in 0..rows {
        for c in 0..cols {
            if r < margin || r >= rows - margin || c < margin || c >= cols - margin {
                border.push(image[[r, c]]);
            }
        }
    }
    border.sort_by(|a, b| a.partial_cmp(b).expect("finite border values"));
    let rank = (percentile * border.len() as f64).ceil() as usize;
    Ok(border[rank.saturating_sub(1)])
}

/// Foreground mask: true where the pixel is strictly above the threshold.
pub fn binarize(image: ArrayView2<'_, f64>, threshold: f64) -> BinaryMask {
    BinaryMask { data: image.map(|&v| v > threshold) }
}

/// Bounding boxes of 8-connected foreground components with at least
/// `min_area` pixels, sorted by `(row_min, col_min)`.
pub fn extract_bounding_boxes(mask: &BinaryMask, min_area: usize) -> Vec<BoundingBox> {
    let (rows, cols) = mask.data.dim();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }

    // Two-pass labeling with union-find over the previous row's neighbours.
    let mut labels = vec![0u32; rows * cols]; // 0 = background
    let mut parent: Vec<u32> = vec![0]; // parent[label]; label 0 unused
    let at = |r: usize, c: usize| r * cols + c;

    fn find(parent: &mut Vec<u32>, mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    fn union(parent: &mut Vec<u32>, a: u32, b: u32) {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi as usize] = lo;
        }
    }

    for r in 0..rows {
        for c in 0..cols {
            if !mask.data[[r, c]] {
                continue;
            }
            let mut neighbour = 0u32;
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if c > 0 && labels[at(r, c - 1)] != 0 {
                neighbours[n] = labels[at(r, c - 1)];
                n += 1;
            }
            if r > 0 {
                for dc in -1i64..=1 {
                    let cc = c as i64 + dc;
                    if cc >= 0 && (cc as usize) < cols {
                        let l = labels[at(r - 1, cc as usize)];
                        if l != 0 {
                            neighbours[n] = l;
                            n += 1;
                        }
                    }
                }
            }
            if n > 0 {
                neighbour = neighbours[..n].iter().copied().min().unwrap();
                for &other in &neighbours[..n] {
                    union(&mut parent, neighbour, other);
                }
            }
            if neighbour == 0 {
                let fresh = parent.len() as u32;
                parent.push(fresh);
                labels[at(r, c)] = fresh;
            } else {
                labels[at(r, c)] = neighbour;
            }
        }
    }

    #[derive(Clone)]
    struct Extent {
        row_min: usize,
        row_max: usize,
        col_min: usize,
        col_max: usize,
        area: usize,
    }
    let mut extents: Vec<Option<Extent>> = vec![None; parent.len()];
    for r in 0..rows {
        for c in 0..cols {
            let l = labels[at(r, c)];
            if l == 0 {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            let e = extents[root].get_or_insert(Extent {
                row_min: r,
                row_max: r,
                col_min: c,
                col_max: c,
                area: 0,
            });
            e.row_min = e.row_min.min(r);
            e.row_max = e.row_max.max(r);
            e.col_min = e.col_min.min(c);
            e.col_max = e.col_max.max(c);
            e.area += 1;
        }
    }

    let mut boxes: Vec<BoundingBox> = extents
        .into_iter()
        .flatten()
        .filter(|e| e.area >= min_area)
        .map(|e| BoundingBox {
            row_min: e.row_min,
            row_max: e.row_max,
            col_min: e.col_min,
            col_max: e.col_max,
        })
        .collect();
    boxes.sort_by_key(|b| (b.row_min, b.col_min));
    boxes
}

/// Bilinear resize of a single band image to `out_h` x `out_w`.
///
/// Output pixel centers map to `(dst + 0.5) * src/dst - 0.5` in source
/// coordinates, clamped at the edges.
pub fn resize_bilinear(src: ArrayView2<'_, f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (rows, cols) = src.dim();
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    let scale_r = rows as f64 / out_h as f64;
    let scale_c = cols as f64 / out_w as f64;
    for i in 0..out_h {
        let sr = ((i as f64 + 0.5) * scale_r - 0.5).clamp(0.0, rows as f64 - 1.0);
        let r0 = sr.floor() as usize;
        let r1 = (r0 + 1).min(rows - 1);
        let fr = sr - r0 as f64;
        for j in 0..out_w {
            let sc = ((j as f64 + 0.5) * scale_c - 0.5).clamp(0.0, cols as f64 - 1.0);
            let c0 = sc.floor() as usize;
            let c1 = (c0 + 1).min(cols - 1);
            let fc = sc - c0 as f64;
            out[[i, j]] = (1.0 - fr) * (1.0 - fc) * src[[r0, c0]]
                + (1.0 - fr) * fc * src[[r0, c1]]
                + fr * (1.0 - fc) * src[[r1, c0]]
                + fr * fc * src[[r1, c1]];
        }
    }
    out
}

/// Nearest-neighbour resize of a boolean mask, consistent with the bilinear
/// coordinate mapping.
pub fn resize_nearest(src: &Array2<bool>, out_h: usize, out_w: usize) -> Array2<bool> {
    let (rows, cols) = src.dim();
    let scale_r = rows as f64 / out_h as f64;
    let scale_c = cols as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let sr = (((i as f64 + 0.5) * scale_r) as usize).min(rows - 1);
        let sc = (((j as f64 + 0.5) * scale_c) as usize).min(cols - 1);
        src[[sr, sc]]
    })
}

/// Crops, masks and size-normalizes one ROI per bounding box.
///
/// Pixels where the mask is false are zeroed before resizing, and the
/// nearest-neighbour-resized mask is re-applied afterwards so every pixel
/// outside the seed is exactly zero in the output stack.
pub fn extract_rois(
    cube: &HyperCube,
    boxes: &[BoundingBox],
    mask: &BinaryMask,
    labels: &[SeedClass],
    target_size: usize,
) -> Result<Vec<SeedROI>> {
    let (rows, cols, bands) = cube.data.dim();
    if mask.rows() != rows || mask.cols() != cols {
        return Err(Error::DimensionMismatch {
            context: format!(
                "mask {}x{} vs cube {}x{}",
                mask.rows(),
                mask.cols(),
                rows,
                cols
            ),
        });
    }
    if labels.len() != boxes.len() {
        return Err(Error::LabelCountMismatch { boxes: boxes.len(), labels: labels.len() });
    }
    if target_size == 0 {
        return Err(Error::InvalidConfig { detail: "target size must be >= 1".into() });
    }
    for b in boxes {
        if b.row_max >= rows || b.col_max >= cols || b.row_min > b.row_max || b.col_min > b.col_max
        {
            return Err(Error::BoxOutOfBounds {
                row_max: b.row_max,
                col_max: b.col_max,
                rows,
                cols,
            });
        }
    }

    let jobs: Vec<(usize, BoundingBox, SeedClass)> =
        boxes.iter().zip(labels).enumerate().map(|(i, (b, l))| (i, *b, *l)).collect();
    let rois = par::map(jobs, |(seed_id, bx, label)| {
        let (h, w) = (bx.height(), bx.width());
        let crop_mask = Array2::from_shape_fn((h, w), |(r, c)| {
            mask.data[[bx.row_min + r, bx.col_min + c]]
        });
        let resized_mask = resize_nearest(&crop_mask, target_size, target_size);

        let mut stack = Array3::<f64>::zeros((target_size, target_size, bands));
        for band in 0..bands {
            let mut crop = Array2::<f64>::zeros((h, w));
            for r in 0..h {
                for c in 0..w {
                    if crop_mask[[r, c]] {
                        crop[[r, c]] = cube.data[[bx.row_min + r, bx.col_min + c, band]];
                    }
                }
            }
            let resized = resize_bilinear(crop.view(), target_size, target_size);
            for r in 0..target_size {
                for c in 0..target_size {
                    stack[[r, c, band]] = if resized_mask[[r, c]] { resized[[r, c]] } else { 0.0 };
                }
            }
        }
        SeedROI { stack, label, seed_id, source_box: bx, cultivar: cube.meta.cultivar.clone() }
    });
    Ok(rois)
}

/// ROI collection plus the wavelength table shared by all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSet {
    pub rois: Vec<SeedROI>,
    pub wavelengths: Vec<f64>,
}

impl RoiSet {
    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn labels(&self) -> Vec<SeedClass> {
        self.rois.iter().map(|r| r.label).collect()
    }
}

/// Writes one ROI as a native cube file with the per-seed header section.
pub fn save_roi(roi: &SeedROI, wavelengths: &[f64], path: &Path) -> Result<()> {
    let meta = CubeMeta { cultivar: roi.cultivar.clone(), acquisition: String::new(), calibrated: true };
    let cube = HyperCube::new(roi.stack.clone(), wavelengths.to_vec(), meta)?;
    let header =
        RoiHeader { seed_id: roi.seed_id, label: roi.label, source_box: roi.source_box };
    save_native(&cube, Some(&header), path)
}

pub fn load_roi(path: &Path) -> Result<(SeedROI, Vec<f64>)> {
    let (cube, roi) = load_native(path)?;
    let header = roi.ok_or_else(|| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: "missing roi section".into(),
    })?;
    let roi = SeedROI {
        stack: cube.data,
        label: header.label,
        seed_id: header.seed_id,
        source_box: header.source_box,
        cultivar: cube.meta.cultivar,
    };
    Ok((roi, cube.wavelengths))
}

/// Loads every `*.cube` file in a directory, sorted by file name.
pub fn load_roi_set(dir: &Path) -> Result<RoiSet> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |ext| ext == "cube"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidConfig { detail: format!("no .cube files in {}", dir.display()) });
    }
    let mut rois = Vec::with_capacity(paths.len());
    let mut wavelengths: Option<Vec<f64>> = None;
    for path in &paths {
        let (roi, wl) = load_roi(path)?;
        match &wavelengths {
            None => wavelengths = Some(wl),
            Some(existing) if *existing != wl => {
                return Err(Error::DimensionMismatch {
                    context: format!("{}: wavelength table differs from the set", path.display()),
                });
            }
            _ => {}
        }
        rois.push(roi);
    }
    Ok(RoiSet { rois, wavelengths: wavelengths.expect("nonempty set") })
}

/// Writes each ROI under `dir` as `seed_<id>.cube`.
pub fn save_roi_set(set: &RoiSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for roi in &set.rois {
        let path = dir.join(format!("seed_{:04}.cube", roi.seed_id));
        save_roi(roi, &set.wavelengths, &path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::default_wavelength_table;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn border_threshold_examples() {
        // Border 0.2, interior 0.9: threshold is the border maximum.
        let mut image = Array2::from_elem((7, 7), 0.2);
        for r in 2..5 {
            for c in 2..5 {
                image[[r, c]] = 0.9;
            }
        }
        let t = estimate_background_threshold(image.view(), 2, 1.0).unwrap();
        assert_eq!(t, 0.2);

        // Non-constant border: maximum of the border values.
        let mut image = Array2::from_elem((5, 5), 0.1);
        image[[0, 3]] = 0.3;
        image[[2, 2]] = 0.95;
        let t = estimate_background_threshold(image.view(), 1, 1.0).unwrap();
        assert_eq!(t, 0.3);

        assert!(matches!(
            estimate_background_threshold(image.view(), 3, 1.0),
            Err(Error::MarginTooLarge { .. })
        ));
        assert!(estimate_background_threshold(image.view(), 1, 0.0).is_err());
    }

    // Sort-and-index oracle for sub-maximum percentiles.
    #[test]
    fn border_threshold_percentile_matches_sort_oracle() {
        let mut rng = crate::rng::seeded_rng(31);
        for _ in 0..50 {
            let image: Array2<f64> = Array2::from_shape_fn((9, 8), |_| rng.gen_range(0.0..1.0));
            let margin = rng.gen_range(1..4);
            let percentile = rng.gen_range(0.05..=1.0);
            let t = estimate_background_threshold(image.view(), margin, percentile).unwrap();

            let (rows, cols) = image.dim();
            let mut border = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if r < margin || r >= rows - margin || c < margin || c >= cols - margin {
                        border.push(image[[r, c]]);
                    }
                }
            }
            border.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rank = (percentile * border.len() as f64).ceil() as usize;
            assert_eq!(t, border[rank - 1]);
        }
    }

    #[test]
    fn binarize_is_elementwise_and_monotone() {
        let image = array![[0.1, 0.5], [0.9, 0.5]];
        let low = binarize(image.view(), 0.0);
        assert!(low.data.iter().all(|&v| v));
        let high = binarize(image.view(), 1.0);
        assert!(high.data.iter().all(|&v| !v));
        let mid = binarize(image.view(), 0.5);
        assert_eq!(mid.data, array![[false, false], [true, false]]);

        // Raising the threshold never turns a false pixel true.
        let mut rng = crate::rng::seeded_rng(7);
        for _ in 0..30 {
            let image: Array2<f64> = Array2::from_shape_fn((6, 6), |_| rng.gen_range(0.0..1.0));
            let t1 = rng.gen_range(0.0..1.0);
            let t2 = rng.gen_range(t1..1.0);
            let m1 = binarize(image.view(), t1);
            let m2 = binarize(image.view(), t2);
            for (a, b) in m1.data.iter().zip(m2.data.iter()) {
                assert!(*a || !*b);
            }
        }
    }

    /// Brute-force flood fill, independent of the union-find path.
    fn flood_fill_boxes(mask: &BinaryMask, min_area: usize) -> Vec<BoundingBox> {
        let (rows, cols) = mask.data.dim();
        let mut seen = Array2::from_elem((rows, cols), false);
        let mut boxes = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if !mask.data[[r, c]] || seen[[r, c]] {
                    continue;
                }
                let mut stack = vec![(r, c)];
                seen[[r, c]] = true;
                let (mut rmin, mut rmax, mut cmin, mut cmax, mut area) = (r, r, c, c, 0usize);
                while let Some((pr, pc)) = stack.pop() {
                    area += 1;
                    rmin = rmin.min(pr);
                    rmax = rmax.max(pr);
                    cmin = cmin.min(pc);
                    cmax = cmax.max(pc);
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let (nr, nc) = (pr as i64 + dr, pc as i64 + dc);
                            if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                                continue;
                            }
                            let (nr, nc) = (nr as usize, nc as usize);
                            if mask.data[[nr, nc]] && !seen[[nr, nc]] {
                                seen[[nr, nc]] = true;
                                stack.push((nr, nc));
                            }
                        }
                    }
                }
                if area >= min_area {
                    boxes.push(BoundingBox { row_min: rmin, row_max: rmax, col_min: cmin, col_max: cmax });
                }
            }
        }
        boxes.sort_by_key(|b| (b.row_min, b.col_min));
        boxes
    }

    #[test]
    fn bounding_boxes_examples() {
        let empty = BinaryMask { data: Array2::from_elem((6, 6), false) };
        assert!(extract_bounding_boxes(&empty, 1).is_empty());

        let mut data = Array2::from_elem((8, 10), false);
        for r in 2..=4 {
            for c in 5..=7 {
                data[[r, c]] = true;
            }
        }
        let mask = BinaryMask { data };
        assert_eq!(
            extract_bounding_boxes(&mask, 1),
            vec![BoundingBox { row_min: 2, row_max: 4, col_min: 5, col_max: 7 }]
        );

        // Two disjoint blocks come back in scan order.
        let mut data = Array2::from_elem((8, 10), false);
        data[[6, 1]] = true;
        data[[6, 2]] = true;
        for r in 1..=2 {
            for c in 6..=8 {
                data[[r, c]] = true;
            }
        }
        let mask = BinaryMask { data };
        let boxes = extract_bounding_boxes(&mask, 1);
        assert_eq!(
            boxes,
            vec![
                BoundingBox { row_min: 1, row_max: 2, col_min: 6, col_max: 8 },
                BoundingBox { row_min: 6, row_max: 6, col_min: 1, col_max: 2 },
            ]
        );
        // min_area suppresses the 2-pixel speck.
        assert_eq!(extract_bounding_boxes(&mask, 3).len(), 1);
    }

    #[test]
    fn bounding_boxes_match_flood_fill_oracle() {
        let mut rng = crate::rng::seeded_rng(17);
        for _ in 0..100 {
            let data = Array2::from_shape_fn((12, 14), |_| rng.gen_bool(0.35));
            let mask = BinaryMask { data };
            let min_area = rng.gen_range(1..4);
            assert_eq!(
                extract_bounding_boxes(&mask, min_area),
                flood_fill_boxes(&mask, min_area)
            );
        }
    }

    #[test]
    fn diagonal_pixels_form_one_component() {
        let mut data = Array2::from_elem((4, 4), false);
        data[[0, 0]] = true;
        data[[1, 1]] = true;
        data[[2, 2]] = true;
        let mask = BinaryMask { data };
        let boxes = extract_bounding_boxes(&mask, 1);
        assert_eq!(boxes, vec![BoundingBox { row_min: 0, row_max: 2, col_min: 0, col_max: 2 }]);
    }

    fn toy_cube(rows: usize, cols: usize, bands: usize, value: f64) -> HyperCube {
        HyperCube::new(
            Array3::from_elem((rows, cols, bands), value),
            default_wavelength_table(bands),
            CubeMeta { cultivar: "toy".into(), acquisition: "t".into(), calibrated: true },
        )
        .unwrap()
    }

    #[test]
    fn roi_constant_region_stays_constant() {
        let cube = toy_cube(10, 10, 3, 0.7);
        let mask = BinaryMask { data: Array2::from_elem((10, 10), true) };
        let bx = BoundingBox { row_min: 2, row_max: 7, col_min: 1, col_max: 6 };
        let rois =
            extract_rois(&cube, &[bx], &mask, &[SeedClass::Haploid], 4).unwrap();
        assert_eq!(rois.len(), 1);
        assert!(rois[0].stack.iter().all(|&v| (v - 0.7).abs() < 1e-12));
        assert_eq!(rois[0].source_box, bx);
        assert_eq!(rois[0].label, SeedClass::Haploid);
    }

    #[test]
    fn roi_all_false_mask_is_zero() {
        let cube = toy_cube(10, 10, 2, 0.7);
        let mask = BinaryMask { data: Array2::from_elem((10, 10), false) };
        let bx = BoundingBox { row_min: 0, row_max: 5, col_min: 0, col_max: 5 };
        let rois = extract_rois(&cube, &[bx], &mask, &[SeedClass::Diploid], 4).unwrap();
        assert!(rois[0].stack.iter().all(|&v| v == 0.0));
    }

    // Direct bilinear formula per output pixel, written out independently.
    #[test]
    fn bilinear_matches_direct_formula() {
        let mut rng = crate::rng::seeded_rng(3);
        for _ in 0..50 {
            let src: Array2<f64> = Array2::from_shape_fn((4, 4), |_| rng.gen_range(0.0..1.0));
            let out = resize_bilinear(src.view(), 2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    let sr: f64 = ((i as f64 + 0.5) * 2.0 - 0.5).clamp(0.0, 3.0);
                    let sc: f64 = ((j as f64 + 0.5) * 2.0 - 0.5).clamp(0.0, 3.0);
                    let (r0, c0) = (sr.floor() as usize, sc.floor() as usize);
                    let (r1, c1) = ((r0 + 1).min(3), (c0 + 1).min(3));
                    let (fr, fc) = (sr - r0 as f64, sc - c0 as f64);
                    let expected = src[[r0, c0]] * (1.0 - fr) * (1.0 - fc)
                        + src[[r0, c1]] * (1.0 - fr) * fc
                        + src[[r1, c0]] * fr * (1.0 - fc)
                        + src[[r1, c1]] * fr * fc;
                    assert!((out[[i, j]] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn roi_pixels_outside_mask_are_exactly_zero() {
        let mut rng = crate::rng::seeded_rng(41);
        let mut data = Array3::<f64>::zeros((16, 16, 4));
        for v in data.iter_mut() {
            *v = rng.gen_range(0.1..1.0);
        }
        let cube = HyperCube::new(data, default_wavelength_table(4), CubeMeta::default()).unwrap();
        // Circular-ish blob mask.
        let mask_data = Array2::from_shape_fn((16, 16), |(r, c)| {
            let (dr, dc) = (r as f64 - 8.0, c as f64 - 8.0);
            dr * dr + dc * dc <= 20.0
        });
        let mask = BinaryMask { data: mask_data };
        let boxes = extract_bounding_boxes(&mask, 1);
        assert_eq!(boxes.len(), 1);
        let rois = extract_rois(&cube, &boxes, &mask, &[SeedClass::Haploid], 8).unwrap();
        let roi = &rois[0];

        let bx = boxes[0];
        let crop_mask = Array2::from_shape_fn((bx.height(), bx.width()), |(r, c)| {
            mask.data[[bx.row_min + r, bx.col_min + c]]
        });
        let resized_mask = resize_nearest(&crop_mask, 8, 8);
        let mut outside_sum = 0.0;
        for r in 0..8 {
            for c in 0..8 {
                if !resized_mask[[r, c]] {
                    for b in 0..4 {
                        outside_sum += roi.stack[[r, c, b]].abs();
                    }
                }
            }
        }
        assert_eq!(outside_sum, 0.0);
    }

    #[test]
    fn roi_box_out_of_bounds_is_an_error() {
        let cube = toy_cube(8, 8, 2, 0.5);
        let mask = BinaryMask { data: Array2::from_elem((8, 8), true) };
        let bx = BoundingBox { row_min: 4, row_max: 9, col_min: 0, col_max: 3 };
        assert!(matches!(
            extract_rois(&cube, &[bx], &mask, &[SeedClass::Haploid], 4),
            Err(Error::BoxOutOfBounds { .. })
        ));
    }

    #[test]
    fn roi_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::rng::seeded_rng(8);
        let wl = default_wavelength_table(3);
        let mut rois = Vec::new();
        for seed_id in 0..3 {
            let mut stack = Array3::<f64>::zeros((4, 4, 3));
            for v in stack.iter_mut() {
                *v = f64::from(rng.gen::<f32>());
            }
            rois.push(SeedROI {
                stack,
                label: if seed_id % 2 == 0 { SeedClass::Haploid } else { SeedClass::Diploid },
                seed_id,
                source_box: BoundingBox { row_min: 0, row_max: 3, col_min: 0, col_max: 3 },
                cultivar: "toy".into(),
            });
        }
        let set = RoiSet { rois, wavelengths: wl };
        save_roi_set(&set, dir.path()).unwrap();
        let loaded = load_roi_set(dir.path()).unwrap();
        assert_eq!(set, loaded);
    }
}
