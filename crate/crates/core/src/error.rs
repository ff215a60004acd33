//! Crate-wide error type.

use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// File could not be read or written.
    Io { path: PathBuf, source: io::Error },
    /// Header is missing, not valid JSON, or declares invalid fields.
    MalformedHeader { path: PathBuf, detail: String },
    /// Dimensions declared by a header disagree with the payload, or two
    /// inputs that must share a shape do not.
    DimensionMismatch { context: String },
    /// A value that must be finite is NaN or infinite.
    NonFinite { context: String },
    /// Calibration denominator `white - dark` is zero at the named cell.
    CalibrationDivideByZero { row: usize, col: usize, band: usize },
    /// 1-based band index outside the wavelength table.
    BandIndexOutOfRange { index: usize, bands: usize },
    /// Wavelength table is empty, wrong length, or not strictly increasing.
    InvalidWavelengths { detail: String },
    /// Histogram requested on an empty image.
    EmptyImage,
    /// Histogram bin count or value range is unusable.
    InvalidHistogram { detail: String },
    /// Border margin leaves no interior pixels.
    MarginTooLarge { margin: usize, rows: usize, cols: usize },
    /// Bounding box reaches outside the image or cube extent.
    BoxOutOfBounds { row_max: usize, col_max: usize, rows: usize, cols: usize },
    /// One label per bounding box is required.
    LabelCountMismatch { boxes: usize, labels: usize },
    /// Generic invalid configuration (validated up front, never mid-run).
    InvalidConfig { detail: String },
    /// Training loss became NaN or infinite at the reported iteration.
    NonFiniteLoss { iteration: usize },
    /// Not enough seeds of one class to honour the requested split.
    InsufficientSeeds { class: &'static str, have: usize, need: usize },
    /// Band set for training or evaluation is empty.
    EmptyBandSet,
    /// A band interval does not fit the available band count.
    IntervalOutOfRange { label: String, bands: usize },
    /// Interval holds fewer samples than one training batch.
    TooFewSamples { label: String, samples: usize, batch: usize },
    /// Pearson correlation of a zero-variance vector is undefined.
    ZeroVariance,
    /// A pipeline stage failed; wraps the underlying cause.
    StageFailed { stage: &'static str, source: Box<Error> },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            Error::MalformedHeader { path, detail } => {
                write!(f, "{}: malformed header: {}", path.display(), detail)
            }
            Error::DimensionMismatch { context } => write!(f, "dimension mismatch: {}", context),
            Error::NonFinite { context } => write!(f, "non-finite value: {}", context),
            Error::CalibrationDivideByZero { row, col, band } => write!(
                f,
                "calibration divides by zero: white == dark at row {}, col {}, band {}",
                row, col, band
            ),
            Error::BandIndexOutOfRange { index, bands } => {
                write!(f, "band index {} outside 1..={}", index, bands)
            }
            Error::InvalidWavelengths { detail } => write!(f, "invalid wavelengths: {}", detail),
            Error::EmptyImage => write!(f, "histogram of an empty image"),
            Error::InvalidHistogram { detail } => write!(f, "invalid histogram: {}", detail),
            Error::MarginTooLarge { margin, rows, cols } => write!(
                f,
                "margin {} leaves no interior in a {}x{} image",
                margin, rows, cols
            ),
            Error::BoxOutOfBounds { row_max, col_max, rows, cols } => write!(
                f,
                "bounding box reaching ({}, {}) exceeds {}x{} extent",
                row_max, col_max, rows, cols
            ),
            Error::LabelCountMismatch { boxes, labels } => {
                write!(f, "{} bounding boxes but {} labels", boxes, labels)
            }
            Error::InvalidConfig { detail } => write!(f, "invalid configuration: {}", detail),
            Error::NonFiniteLoss { iteration } => {
                write!(f, "training loss became non-finite at iteration {}", iteration)
            }
            Error::InsufficientSeeds { class, have, need } => {
                write!(f, "class {}: {} seeds available, {} required", class, have, need)
            }
            Error::EmptyBandSet => write!(f, "band set is empty"),
            Error::IntervalOutOfRange { label, bands } => {
                write!(f, "interval {} outside the {}-band range", label, bands)
            }
            Error::TooFewSamples { label, samples, batch } => write!(
                f,
                "interval {} holds {} samples, fewer than the batch size {}",
                label, samples, batch
            ),
            Error::ZeroVariance => write!(f, "correlation of a zero-variance vector"),
            Error::StageFailed { stage, source } => write!(f, "stage {} failed: {}", stage, source),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::StageFailed { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn stage(stage: &'static str, source: Error) -> Self {
        Error::StageFailed { stage, source: Box::new(source) }
    }
}
