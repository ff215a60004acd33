//! Band-by-band CNN accuracy profiling, dense-interval selection, top-band
//! selection, and verification statistics.
//!
//! The CNN trains on every (train seed, band) single-band image of a band set;
//! the test set is then evaluated one band at a time to build an accuracy
//! profile. Band evaluations are pure and run as a parallel map.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{train_classifier, CnnArch, CnnParams, Dataset, ModelSpec, TrainConfig, TrainOutcome};
use crate::nn::cnn_forward;
use crate::par;
use crate::screen::BandInterval;
use crate::segment::SeedROI;

/// Seeded per-class split size; the split is by seed identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub rng_seed: u64,
}

/// Seed-id lists for the two sides of a split, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Samples `train_per_class` seeds per class uniformly without replacement.
///
/// Splitting is by seed identity: every band image of a seed lands on the
/// same side. Identical specs give identical splits.
pub fn split_dataset(rois: &[SeedROI], spec: &SplitSpec) -> Result<Split> {
    if spec.train_per_class < 1 {
        return Err(Error::InvalidConfig { detail: "train_per_class must be >= 1".into() });
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut seen = std::collections::HashSet::new();
    for roi in rois {
        if !seen.insert(roi.seed_id) {
            return Err(Error::InvalidConfig {
                detail: format!("duplicate seed id {}", roi.seed_id),
            });
        }
        by_class[roi.label.index()].push(roi.seed_id);
    }
    let mut rng = crate::rng::seeded_rng(spec.rng_seed);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (class_index, ids) in by_class.iter_mut().enumerate() {
        ids.sort_unstable();
        if ids.len() <= spec.train_per_class {
            let class = if class_index == 0 { "diploid" } else { "haploid" };
            return Err(Error::InsufficientSeeds {
                class,
                have: ids.len(),
                need: spec.train_per_class + 1,
            });
        }
        // Partial Fisher-Yates: the first train_per_class slots become the
        // training sample.
        use rand::Rng;
        for k in 0..spec.train_per_class {
            let j = rng.gen_range(k..ids.len());
            ids.swap(k, j);
        }
        train_ids.extend_from_slice(&ids[..spec.train_per_class]);
        test_ids.extend_from_slice(&ids[spec.train_per_class..]);
    }
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(Split { train_ids, test_ids })
}

fn roi_index(rois: &[SeedROI]) -> HashMap<usize, &SeedROI> {
    rois.iter().map(|r| (r.seed_id, r)).collect()
}

fn expand_bands(band_set: &[BandInterval]) -> Vec<usize> {
    band_set.iter().flat_map(|interval| interval.bands()).collect()
}

/// Trains a fresh CNN on all (train seed, band in `band_set`) images.
pub fn train_scan_cnn(
    rois: &[SeedROI],
    band_set: &[BandInterval],
    split: &Split,
    arch: &CnnArch,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let bands = expand_bands(band_set);
    if bands.is_empty() {
        return Err(Error::EmptyBandSet);
    }
    let band_count = rois.first().map(|r| r.bands()).unwrap_or(0);
    for interval in band_set {
        interval.validate(band_count)?;
    }
    let index = roi_index(rois);
    let mut data = Dataset::default();
    for &seed_id in &split.train_ids {
        let roi = index.get(&seed_id).ok_or_else(|| Error::InvalidConfig {
            detail: format!("train split references unknown seed {}", seed_id),
        })?;
        for &band in &bands {
            data.push(roi.band_image(band).to_owned(), roi.label.index());
        }
    }
    let spec = ModelSpec::Cnn { arch: *arch };
    train_classifier(&spec, &data, config)
}

/// Per-band test accuracy with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandAccuracyProfile {
    pub bands: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub interval_label: String,
}

impl BandAccuracyProfile {
    pub fn accuracy_of(&self, band: usize) -> Option<f64> {
        self.bands.iter().position(|&b| b == band).map(|i| self.accuracy[i])
    }

    /// Restriction of the profile to one interval.
    pub fn slice_interval(&self, interval: &BandInterval) -> BandAccuracyProfile {
        let mut bands = Vec::new();
        let mut accuracy = Vec::new();
        for (&b, &a) in self.bands.iter().zip(self.accuracy.iter()) {
            if interval.contains(b) {
                bands.push(b);
                accuracy.push(a);
            }
        }
        BandAccuracyProfile { bands, accuracy, interval_label: interval.label.clone() }
    }
}

/// Fraction of test seeds whose band-`b` image is classified correctly, for
/// each band. Evaluations are independent and run in parallel.
pub fn per_band_accuracy(
    params: &CnnParams,
    rois: &[SeedROI],
    test_ids: &[usize],
    bands: &[usize],
) -> Result<BandAccuracyProfile> {
    if bands.is_empty() {
        return Err(Error::EmptyBandSet);
    }
    if test_ids.is_empty() {
        return Err(Error::InvalidConfig { detail: "empty test set".into() });
    }
    let index = roi_index(rois);
    let mut test_rois = Vec::with_capacity(test_ids.len());
    for &seed_id in test_ids {
        test_rois.push(*index.get(&seed_id).ok_or_else(|| Error::InvalidConfig {
            detail: format!("test split references unknown seed {}", seed_id),
        })?);
    }

    let accuracy = par::try_map(bands.to_vec(), |band| -> Result<f64> {
        let mut correct = 0usize;
        for roi in &test_rois {
            let probs = cnn_forward(roi.band_image(band), params)?;
            let predicted = if probs[1] > probs[0] { 1 } else { 0 };
            if predicted == roi.label.index() {
                correct += 1;
            }
        }
        Ok(correct as f64 / test_rois.len() as f64)
    })?;
    Ok(BandAccuracyProfile {
        bands: bands.to_vec(),
        accuracy,
        interval_label: String::new(),
    })
}

/// Pooled accuracy over all (test seed, band) images; with one image per seed
/// and band this equals the mean of the per-band accuracies.
pub fn pooled_accuracy(
    params: &CnnParams,
    rois: &[SeedROI],
    test_ids: &[usize],
    bands: &[usize],
) -> Result<f64> {
    let profile = per_band_accuracy(params, rois, test_ids, bands)?;
    Ok(profile.accuracy.iter().sum::<f64>() / profile.accuracy.len() as f64)
}

/// Summary statistics of an accuracy profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileStats {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
    pub count_ge_threshold: usize,
    pub threshold: f64,
}

/// Mean, max, sample standard deviation (n-1) and the count of bands with
/// accuracy at or above the threshold. A single-band profile reports std 0.
pub fn profile_stats(profile: &BandAccuracyProfile, threshold: f64) -> Result<ProfileStats> {
    let n = profile.accuracy.len();
    if n == 0 {
        return Err(Error::InvalidConfig { detail: "empty accuracy profile".into() });
    }
    let mean = profile.accuracy.iter().sum::<f64>() / n as f64;
    let max = profile.accuracy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let std = if n < 2 {
        0.0
    } else {
        let ss: f64 = profile.accuracy.iter().map(|a| (a - mean) * (a - mean)).sum();
        (ss / (n as f64 - 1.0)).sqrt()
    };
    let count_ge_threshold = profile.accuracy.iter().filter(|&&a| a >= threshold).count();
    Ok(ProfileStats { mean, max, std, count_ge_threshold, threshold })
}

/// Interval with the densest high accuracy: maximal by
/// `(count_ge_threshold, mean, max)` lexicographically, ties broken by the
/// lower band start so ordering of the input never matters.
pub fn select_dense_interval<'a>(
    stats: &'a [(BandInterval, ProfileStats)],
) -> Result<&'a BandInterval> {
    if stats.is_empty() {
        return Err(Error::InvalidConfig { detail: "no interval statistics".into() });
    }
    let mut best = &stats[0];
    for candidate in &stats[1..] {
        let a = (&candidate.1, &candidate.0);
        let b = (&best.1, &best.0);
        let ord = a
            .0
            .count_ge_threshold
            .cmp(&b.0.count_ge_threshold)
            .then(a.0.mean.partial_cmp(&b.0.mean).expect("finite mean"))
            .then(a.0.max.partial_cmp(&b.0.max).expect("finite max"))
            .then(b.1.start.cmp(&a.1.start));
        if ord == std::cmp::Ordering::Greater {
            best = candidate;
        }
    }
    Ok(&best.0)
}

/// Sorted band indices whose accuracy is at or above the threshold.
pub fn select_top_bands(profile: &BandAccuracyProfile, threshold: f64) -> Vec<usize> {
    let mut bands: Vec<usize> = profile
        .bands
        .iter()
        .zip(profile.accuracy.iter())
        .filter(|(_, &a)| a >= threshold)
        .map(|(&b, _)| b)
        .collect();
    bands.sort_unstable();
    bands
}

/// Pearson product-moment correlation of two equal-length vectors.
pub fn pearson_corr(v1: &[f64], v2: &[f64]) -> Result<f64> {
    if v1.len() != v2.len() || v1.len() < 2 {
        return Err(Error::DimensionMismatch {
            context: format!("correlation of lengths {} and {}", v1.len(), v2.len()),
        });
    }
    let n = v1.len() as f64;
    let mean1 = v1.iter().sum::<f64>() / n;
    let mean2 = v2.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var1 = 0.0;
    let mut var2 = 0.0;
    for (a, b) in v1.iter().zip(v2.iter()) {
        cov += (a - mean1) * (b - mean2);
        var1 += (a - mean1) * (a - mean1);
        var2 += (b - mean2) * (b - mean2);
    }
    if var1 == 0.0 || var2 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(cov / (var1.sqrt() * var2.sqrt()))
}

/// Profile as CSV with columns `band,wavelength_nm,accuracy`.
pub fn write_profile_csv(
    profile: &BandAccuracyProfile,
    wavelengths: &[f64],
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "band,wavelength_nm,accuracy").map_err(|e| Error::io(path, e))?;
    for (&band, &acc) in profile.bands.iter().zip(profile.accuracy.iter()) {
        let wl = crate::cube::wavelength_of(band, wavelengths)?;
        writeln!(writer, "{},{},{}", band, wl, acc).map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads back a profile CSV written by [`write_profile_csv`].
pub fn read_profile_csv(path: &Path) -> Result<BandAccuracyProfile> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut bands = Vec::new();
    let mut accuracy = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                detail: format!("expected 3 columns at line {}", i + 1),
            });
        }
        bands.push(fields[0].trim().parse().map_err(|_| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("bad band at line {}", i + 1),
        })?);
        accuracy.push(fields[2].trim().parse().map_err(|_| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("bad accuracy at line {}", i + 1),
        })?);
    }
    Ok(BandAccuracyProfile { bands, accuracy, interval_label: String::new() })
}
