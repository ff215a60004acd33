//! Noise screening: train an LSTM per band interval, detect the iteration at
//! which its cost function converges, and remove slow-converging (noisy)
//! intervals.
//!
//! Every (seed, band) single-band ROI image inside an interval is one training
//! sample, labeled by the seed's class. Interval trainings are independent and
//! run as a parallel map; each repeat draws its seed from the base seed alone,
//! so identical interval data produce identical curves and parallel and serial
//! schedules yield the same report.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{train_classifier, CandidateActivation, Dataset, LossCurve, ModelSpec, TrainConfig};
use crate::par;
use crate::rng::derive_seed;
use crate::segment::SeedROI;

/// Contiguous 1-based inclusive range of band indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandInterval {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl BandInterval {
    pub fn new(start: usize, end: usize) -> BandInterval {
        BandInterval { start, end, label: format!("{}-{}", start, end) }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bands(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }

    pub fn contains(&self, band: usize) -> bool {
        band >= self.start && band <= self.end
    }

    pub fn validate(&self, band_count: usize) -> Result<()> {
        if self.start < 1 || self.start > self.end || self.end > band_count {
            return Err(Error::IntervalOutOfRange { label: self.label.clone(), bands: band_count });
        }
        Ok(())
    }
}

impl fmt::Display for BandInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)
    }
}

/// Splits `1..=band_count` into `n_intervals` contiguous intervals.
///
/// The first `n - 1` intervals share one size: `band_count / n` rounded down,
/// and further rounded down to a multiple of ten when that quotient is at
/// least ten (instrument-style grouping; 256 bands in 5 intervals gives four
/// of 50 and a final 56). The last interval absorbs the remainder.
pub fn partition_bands(band_count: usize, n_intervals: usize) -> Result<Vec<BandInterval>> {
    if n_intervals < 1 || n_intervals > band_count {
        return Err(Error::InvalidConfig {
            detail: format!("{} intervals for {} bands", n_intervals, band_count),
        });
    }
    let mut size = band_count / n_intervals;
    if size >= 10 {
        size -= size % 10;
    }
    let mut intervals = Vec::with_capacity(n_intervals);
    let mut start = 1;
    for _ in 0..n_intervals - 1 {
        intervals.push(BandInterval::new(start, start + size - 1));
        start += size;
    }
    intervals.push(BandInterval::new(start, band_count));
    Ok(intervals)
}

/// Windowed relative-decrease convergence test over recorded loss points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceCriterion {
    /// Window length in recorded points.
    pub window: usize,
    /// Relative decrease of the window mean below which a window counts as flat.
    pub rel_eps: f64,
    /// Consecutive flat windows required.
    pub patience: usize,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        ConvergenceCriterion { window: 20, rel_eps: 1e-3, patience: 2 }
    }
}

impl ConvergenceCriterion {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 || self.patience < 1 || !(self.rel_eps > 0.0) {
            return Err(Error::InvalidConfig {
                detail: format!(
                    "convergence criterion window {} rel_eps {} patience {}",
                    self.window, self.rel_eps, self.patience
                ),
            });
        }
        Ok(())
    }
}

/// First recorded iteration at which the loss has been flat for `patience`
/// consecutive windows; the final recorded iteration (budget cap) if never.
///
/// Flatness at recorded index `j` compares the mean of the `window` points
/// ending at `j` against the mean of the `window` points before them; the
/// criterion is scale-free.
pub fn convergence_iteration(curve: &LossCurve, crit: &ConvergenceCriterion) -> usize {
    assert!(!curve.is_empty(), "convergence of an empty curve");
    let w = crit.window;
    let n = curve.len();
    let flat_at = |j: usize| -> bool {
        let cur: f64 = curve.losses[j + 1 - w..=j].iter().sum::<f64>() / w as f64;
        let prev: f64 = curve.losses[j + 1 - 2 * w..=j - w].iter().sum::<f64>() / w as f64;
        if prev <= 0.0 {
            return true;
        }
        (prev - cur) / prev < crit.rel_eps
    };
    let mut run = 0usize;
    for j in 0..n {
        if j + 1 >= 2 * w && flat_at(j) {
            run += 1;
            if run >= crit.patience {
                return curve.iterations[j];
            }
        } else if j + 1 >= 2 * w {
            run = 0;
        }
    }
    curve.iterations[n - 1]
}

/// How mean convergence iterations map to removal verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RemovalRule {
    /// Remove intervals whose mean convergence iteration exceeds the
    /// across-interval mean (by more than one iteration of tolerance).
    AboveMean,
    /// Remove the `k` slowest intervals.
    TopK { k: usize },
    /// Remove intervals exceeding `c` times the median.
    Factor { c: f64 },
}

impl std::str::FromStr for RemovalRule {
    type Err = Error;

    /// Accepts `above-mean`, `top-k:<k>` and `factor:<c>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("above-mean") || s.eq_ignore_ascii_case("above_mean") {
            return Ok(RemovalRule::AboveMean);
        }
        if let Some(rest) = s.strip_prefix("top-k:").or_else(|| s.strip_prefix("top_k:")) {
            let k = rest.parse().map_err(|_| Error::InvalidConfig {
                detail: format!("bad top-k rule {:?}", s),
            })?;
            return Ok(RemovalRule::TopK { k });
        }
        if let Some(rest) = s.strip_prefix("factor:") {
            let c = rest.parse().map_err(|_| Error::InvalidConfig {
                detail: format!("bad factor rule {:?}", s),
            })?;
            return Ok(RemovalRule::Factor { c });
        }
        Err(Error::InvalidConfig { detail: format!("unknown removal rule {:?}", s) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Remove,
}

/// Tolerance (in iterations) for the above-mean comparison, so symmetric
/// inputs never remove anything through rounding alone.
const ABOVE_MEAN_TOLERANCE: f64 = 1.0;

/// Applies a removal rule to the vector of mean convergence iterations.
///
/// Verdicts depend only on the values and the rule: permuting the input
/// permutes the verdicts identically.
pub fn removal_verdicts(mean_iterations: &[f64], rule: &RemovalRule) -> Vec<Verdict> {
    let n = mean_iterations.len();
    match rule {
        RemovalRule::AboveMean => {
            let mean = mean_iterations.iter().sum::<f64>() / n as f64;
            mean_iterations
                .iter()
                .map(|&m| if m > mean + ABOVE_MEAN_TOLERANCE { Verdict::Remove } else { Verdict::Keep })
                .collect()
        }
        RemovalRule::TopK { k } => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                mean_iterations[b]
                    .partial_cmp(&mean_iterations[a])
                    .expect("finite iterations")
                    .then(a.cmp(&b))
            });
            let mut verdicts = vec![Verdict::Keep; n];
            for &idx in order.iter().take(*k) {
                verdicts[idx] = Verdict::Remove;
            }
            verdicts
        }
        RemovalRule::Factor { c } => {
            let mut sorted = mean_iterations.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite iterations"));
            let median = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            };
            mean_iterations
                .iter()
                .map(|&m| if m > c * median { Verdict::Remove } else { Verdict::Keep })
                .collect()
        }
    }
}

/// Screening configuration: the LSTM, its training budget, the convergence
/// detector, repeat count and removal rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenConfig {
    pub hidden_size: usize,
    pub candidate: CandidateActivation,
    pub train: TrainConfig,
    pub criterion: ConvergenceCriterion,
    pub repeats: usize,
    pub rule: RemovalRule,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            hidden_size: 32,
            candidate: CandidateActivation::Sigmoid,
            train: TrainConfig {
                batch_size: 16,
                learning_rate: 0.002,
                iterations: 800,
                loss_record_stride: 10,
                ..TrainConfig::default()
            },
            criterion: ConvergenceCriterion::default(),
            repeats: 3,
            rule: RemovalRule::AboveMean,
        }
    }
}

/// Screening outcome for one interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalScreenResult {
    pub interval: BandInterval,
    pub convergence_iterations: Vec<usize>,
    pub mean_convergence_iteration: usize,
    pub verdict: Verdict,
    pub curves: Vec<LossCurve>,
}

/// Per-interval convergence data and keep/remove verdicts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub intervals: Vec<IntervalScreenResult>,
    pub rule: RemovalRule,
    pub repeats: usize,
}

impl ConvergenceReport {
    pub fn kept(&self) -> Vec<BandInterval> {
        self.intervals
            .iter()
            .filter(|r| r.verdict == Verdict::Keep)
            .map(|r| r.interval.clone())
            .collect()
    }

    pub fn removed(&self) -> Vec<BandInterval> {
        self.intervals
            .iter()
            .filter(|r| r.verdict == Verdict::Remove)
            .map(|r| r.interval.clone())
            .collect()
    }
}

/// One sample per (seed, band in interval), labeled by seed class.
pub fn interval_dataset(rois: &[SeedROI], interval: &BandInterval) -> Dataset {
    let mut data = Dataset::default();
    for roi in rois {
        for band in interval.bands() {
            data.push(roi.band_image(band).to_owned(), roi.label.index());
        }
    }
    data
}

/// Trains an LSTM per interval (`repeats` times), detects convergence
/// iterations, and applies the removal rule.
pub fn screen_intervals(
    rois: &[SeedROI],
    intervals: &[BandInterval],
    config: &ScreenConfig,
) -> Result<ConvergenceReport> {
    if rois.is_empty() {
        return Err(Error::InvalidConfig { detail: "no ROIs to screen".into() });
    }
    if intervals.is_empty() {
        return Err(Error::InvalidConfig { detail: "no intervals to screen".into() });
    }
    if config.repeats < 1 {
        return Err(Error::InvalidConfig { detail: "repeats must be >= 1".into() });
    }
    config.train.validate()?;
    config.criterion.validate()?;
    let band_count = rois[0].bands();
    for interval in intervals {
        interval.validate(band_count)?;
    }

    let datasets: Vec<Dataset> =
        intervals.iter().map(|interval| interval_dataset(rois, interval)).collect();
    for (interval, data) in intervals.iter().zip(&datasets) {
        if data.len() < config.train.batch_size {
            return Err(Error::TooFewSamples {
                label: interval.label.clone(),
                samples: data.len(),
                batch: config.train.batch_size,
            });
        }
    }

    let spec = ModelSpec::Lstm { hidden_size: config.hidden_size, candidate: config.candidate };
    let tasks: Vec<(usize, usize)> = (0..intervals.len())
        .flat_map(|i| (0..config.repeats).map(move |r| (i, r)))
        .collect();
    // The repeat seed is shared across intervals: equal interval data must
    // produce equal convergence iterations.
    let curves: Vec<LossCurve> = par::try_map(tasks, |(interval_idx, repeat)| {
        let cfg = TrainConfig {
            rng_seed: derive_seed(config.train.rng_seed, "screen", &[repeat as u64]),
            ..config.train
        };
        train_classifier(&spec, &datasets[interval_idx], &cfg).map(|out| out.curve)
    })?;

    let mut results = Vec::with_capacity(intervals.len());
    for (i, interval) in intervals.iter().enumerate() {
        let interval_curves: Vec<LossCurve> =
            (0..config.repeats).map(|r| curves[i * config.repeats + r].clone()).collect();
        let iterations: Vec<usize> = interval_curves
            .iter()
            .map(|curve| convergence_iteration(curve, &config.criterion))
            .collect();
        let mean = (iterations.iter().sum::<usize>() as f64 / iterations.len() as f64).round()
            as usize;
        results.push(IntervalScreenResult {
            interval: interval.clone(),
            convergence_iterations: iterations,
            mean_convergence_iteration: mean,
            verdict: Verdict::Keep,
            curves: interval_curves,
        });
    }

    let means: Vec<f64> = results.iter().map(|r| r.mean_convergence_iteration as f64).collect();
    let verdicts = removal_verdicts(&means, &config.rule);
    for (result, verdict) in results.iter_mut().zip(verdicts) {
        result.verdict = verdict;
    }
    Ok(ConvergenceReport { intervals: results, rule: config.rule, repeats: config.repeats })
}

/// Loss curves as CSV with columns `interval,repeat,iteration,loss`.
pub fn write_curves_csv(report: &ConvergenceReport, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "interval,repeat,iteration,loss").map_err(|e| Error::io(path, e))?;
    for result in &report.intervals {
        for (repeat, curve) in result.curves.iter().enumerate() {
            for (it, loss) in curve.iterations.iter().zip(curve.losses.iter()) {
                writeln!(writer, "{},{},{},{}", result.interval.label, repeat, it, loss)
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
