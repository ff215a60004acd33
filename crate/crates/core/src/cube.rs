//! Hyperspectral cube storage, radiometric calibration, and wavelength mapping.
//!
//! Two on-disk formats are supported:
//!
//! * **native** — one JSON header line (dimensions, wavelengths, metadata,
//!   optional ROI section) terminated by `\n`, followed by a band-sequential
//!   little-endian 32-bit float payload.
//! * **flat_csv** — a `# rows=.. cols=.. bands=..` comment line, then one CSV
//!   row per pixel in row-major order with one column per band; wavelengths
//!   live in a `<stem>.wavelengths.csv` sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::RoiHeader;

/// Spectral range of the reference instrument in nanometers.
pub const SPECTRAL_RANGE_NM: (f64, f64) = (862.9, 1704.2);

/// Cube-level metadata carried through calibration and segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeMeta {
    pub cultivar: String,
    pub acquisition: String,
    pub calibrated: bool,
}

impl Default for CubeMeta {
    fn default() -> Self {
        CubeMeta { cultivar: String::new(), acquisition: String::new(), calibrated: false }
    }
}

/// Calibrated or raw reflectance cube, indexed `[row][col][band]`.
///
/// Invariants enforced at construction: all values finite, wavelengths
/// strictly increasing with one entry per band, every dimension at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    pub data: Array3<f64>,
    pub wavelengths: Vec<f64>,
    pub meta: CubeMeta,
}

impl HyperCube {
    pub fn new(data: Array3<f64>, wavelengths: Vec<f64>, meta: CubeMeta) -> Result<Self> {
        let (rows, cols, bands) = data.dim();
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::DimensionMismatch {
                context: format!("cube dimensions {}x{}x{} must all be >= 1", rows, cols, bands),
            });
        }
        validate_wavelengths(&wavelengths, bands)?;
        if let Some(((r, c, b), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("cube value {} at row {}, col {}, band {}", v, r, c, b),
            });
        }
        Ok(HyperCube { data, wavelengths, meta })
    }

    pub fn rows(&self) -> usize {
        self.data.dim().0
    }

    pub fn cols(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    /// Single-band image view (1-based band index).
    pub fn band_image(&self, band: usize) -> Result<ArrayView2<'_, f64>> {
        if band < 1 || band > self.bands() {
            return Err(Error::BandIndexOutOfRange { index: band, bands: self.bands() });
        }
        Ok(self.data.index_axis(ndarray::Axis(2), band - 1))
    }

    /// Wavelength of a 1-based band index from this cube's table.
    pub fn wavelength_of(&self, band: usize) -> Result<f64> {
        wavelength_of(band, &self.wavelengths)
    }
}

fn validate_wavelengths(wavelengths: &[f64], bands: usize) -> Result<()> {
    if wavelengths.len() != bands {
        return Err(Error::InvalidWavelengths {
            detail: format!("{} entries for {} bands", wavelengths.len(), bands),
        });
    }
    if wavelengths.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidWavelengths { detail: "non-finite entry".into() });
    }
    if wavelengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidWavelengths { detail: "not strictly increasing".into() });
    }
    Ok(())
}

/// Evenly spaced default wavelength table over [`SPECTRAL_RANGE_NM`].
///
/// The instrument's true per-band table is not published; callers with a
/// measured table should pass it instead of this default.
pub fn default_wavelength_table(bands: usize) -> Vec<f64> {
    let (lo, hi) = SPECTRAL_RANGE_NM;
    if bands == 1 {
        return vec![lo];
    }
    (0..bands).map(|i| lo + i as f64 * (hi - lo) / (bands as f64 - 1.0)).collect()
}

/// Looks up a 1-based band index in a wavelength table.
pub fn wavelength_of(band: usize, table: &[f64]) -> Result<f64> {
    if band < 1 || band > table.len() {
        return Err(Error::BandIndexOutOfRange { index: band, bands: table.len() });
    }
    Ok(table[band - 1])
}

/// Dark and white reference frames for reflectance calibration.
///
/// Frames share the raw cube's spatial dimensions; the band axis is either 1
/// (one reference frame applied to every band) or the cube's band count.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFrames {
    pub dark: Array3<f64>,
    pub white: Array3<f64>,
}

impl CalibrationFrames {
    pub fn new(dark: Array3<f64>, white: Array3<f64>) -> Result<Self> {
        if dark.dim() != white.dim() {
            return Err(Error::DimensionMismatch {
                context: format!("dark {:?} vs white {:?}", dark.dim(), white.dim()),
            });
        }
        for (idx, (&d, &w)) in dark.iter().zip(white.iter()).enumerate() {
            if !d.is_finite() || !w.is_finite() {
                return Err(Error::NonFinite { context: format!("reference frame element {}", idx) });
            }
            if w <= d {
                let (rows, cols, _) = dark.dim();
                let band = idx % dark.dim().2;
                let pixel = idx / dark.dim().2;
                let (row, col) = (pixel / cols, pixel % cols);
                debug_assert!(row < rows);
                return Err(Error::InvalidConfig {
                    detail: format!(
                        "white must exceed dark everywhere; violated at row {}, col {}, band {}",
                        row, col, band
                    ),
                });
            }
        }
        Ok(CalibrationFrames { dark, white })
    }

    /// Builds frames from single 2-D reference images shared by all bands.
    pub fn from_planes(dark: Array2<f64>, white: Array2<f64>) -> Result<Self> {
        let expand = |plane: Array2<f64>| {
            let (r, c) = plane.dim();
            plane.into_shape_with_order((r, c, 1)).expect("plane reshape")
        };
        CalibrationFrames::new(expand(dark), expand(white))
    }

    fn band_index(&self, band: usize) -> usize {
        if self.dark.dim().2 == 1 {
            0
        } else {
            band
        }
    }
}

/// Reflectance calibration: `(raw - dark) / (white - dark)` per element.
///
/// Arithmetic is 64-bit regardless of storage precision. Fails with the first
/// offending coordinate when `white == dark` somewhere.
pub fn calibrate(raw: &HyperCube, frames: &CalibrationFrames) -> Result<HyperCube> {
    let (rows, cols, bands) = raw.data.dim();
    let (frows, fcols, fbands) = frames.dark.dim();
    if frows != rows || fcols != cols || (fbands != 1 && fbands != bands) {
        return Err(Error::DimensionMismatch {
            context: format!(
                "frames {}x{}x{} incompatible with cube {}x{}x{}",
                frows, fcols, fbands, rows, cols, bands
            ),
        });
    }
    for r in 0..rows {
        for c in 0..cols {
            for b in 0..bands {
                let fb = frames.band_index(b);
                if frames.white[[r, c, fb]] - frames.dark[[r, c, fb]] == 0.0 {
                    return Err(Error::CalibrationDivideByZero { row: r, col: c, band: b });
                }
            }
        }
    }
    let mut out = Array3::<f64>::zeros((rows, cols, bands));
    for r in 0..rows {
        for c in 0..cols {
            for b in 0..bands {
                let fb = frames.band_index(b);
                let dark = frames.dark[[r, c, fb]];
                let white = frames.white[[r, c, fb]];
                out[[r, c, b]] = (raw.data[[r, c, b]] - dark) / (white - dark);
            }
        }
    }
    let meta = CubeMeta { calibrated: true, ..raw.meta.clone() };
    HyperCube::new(out, raw.wavelengths.clone(), meta)
}

/// Uniform-bin grayscale histogram of a single band image.
///
/// Counts sum to the number of pixels inside `[lo, hi]`; the top edge is
/// inclusive in the last bin.
pub fn grayscale_histogram(
    image: ArrayView2<'_, f64>,
    bins: usize,
    range: (f64, f64),
) -> Result<Vec<u64>> {
    let (lo, hi) = range;
    if image.is_empty() {
        return Err(Error::EmptyImage);
    }
    if bins == 0 {
        return Err(Error::InvalidHistogram { detail: "bin count must be >= 1".into() });
    }
    if !(lo < hi) {
        return Err(Error::InvalidHistogram { detail: format!("range [{}, {}] is empty", lo, hi) });
    }
    let mut counts = vec![0u64; bins];
    let width = hi - lo;
    for &v in image.iter() {
        if v < lo || v > hi {
            continue;
        }
        let idx = (((v - lo) / width) * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    Ok(counts)
}

/// On-disk representations understood by [`load_cube`] and [`save_cube`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeFormat {
    Native,
    FlatCsv,
}

#[derive(Serialize, Deserialize)]
struct NativeHeader {
    rows: usize,
    cols: usize,
    bands: usize,
    wavelengths: Vec<f64>,
    meta: CubeMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roi: Option<RoiHeader>,
}

pub fn load_cube(path: &Path, format: CubeFormat) -> Result<HyperCube> {
    match format {
        CubeFormat::Native => load_native(path).map(|(cube, _)| cube),
        CubeFormat::FlatCsv => load_flat_csv(path),
    }
}

pub fn save_cube(cube: &HyperCube, path: &Path, format: CubeFormat) -> Result<()> {
    match format {
        CubeFormat::Native => save_native(cube, None, path),
        CubeFormat::FlatCsv => save_flat_csv(cube, path),
    }
}

/// Loads a native file, returning the optional ROI header section alongside.
pub fn load_native(path: &Path) -> Result<(HyperCube, Option<RoiHeader>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header_line = String::new();
    reader.read_line(&mut header_line).map_err(|e| Error::io(path, e))?;
    let header: NativeHeader = serde_json::from_str(header_line.trim_end())
        .map_err(|e| Error::MalformedHeader { path: path.to_path_buf(), detail: e.to_string() })?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected = header
        .rows
        .checked_mul(header.cols)
        .and_then(|n| n.checked_mul(header.bands))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "dimensions overflow".into(),
        })?;
    if payload.len() != expected {
        return Err(Error::DimensionMismatch {
            context: format!(
                "{}: header declares {} payload bytes, file holds {}",
                path.display(),
                expected,
                payload.len()
            ),
        });
    }

    let mut data = Array3::<f64>::zeros((header.rows, header.cols, header.bands));
    let mut offset = 0;
    for b in 0..header.bands {
        for r in 0..header.rows {
            for c in 0..header.cols {
                let bytes: [u8; 4] = payload[offset..offset + 4].try_into().expect("chunk of 4");
                data[[r, c, b]] = f64::from(f32::from_le_bytes(bytes));
                offset += 4;
            }
        }
    }
    let cube = HyperCube::new(data, header.wavelengths, header.meta).map_err(|e| match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{}: {}", path.display(), context),
        },
        other => other,
    })?;
    Ok((cube, header.roi))
}

/// Writes a native file; `roi` attaches the per-seed section used by ROI files.
pub fn save_native(cube: &HyperCube, roi: Option<&RoiHeader>, path: &Path) -> Result<()> {
    let header = NativeHeader {
        rows: cube.rows(),
        cols: cube.cols(),
        bands: cube.bands(),
        wavelengths: cube.wavelengths.clone(),
        meta: cube.meta.clone(),
        roi: roi.cloned(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let header_json = serde_json::to_string(&header).expect("header serialization");
    writer.write_all(header_json.as_bytes()).map_err(|e| Error::io(path, e))?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for b in 0..cube.bands() {
        for r in 0..cube.rows() {
            for c in 0..cube.cols() {
                let v = cube.data[[r, c, b]] as f32;
                writer.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn wavelength_sidecar(path: &Path) -> PathBuf {
    path.with_extension("wavelengths.csv")
}

fn save_flat_csv(cube: &HyperCube, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    writeln!(
        writer,
        "# rows={} cols={} bands={} cultivar={} acquisition={} calibrated={}",
        cube.rows(),
        cube.cols(),
        cube.bands(),
        sanitize_token(&cube.meta.cultivar),
        sanitize_token(&cube.meta.acquisition),
        cube.meta.calibrated
    )
    .map_err(|e| Error::io(path, e))?;
    for r in 0..cube.rows() {
        for c in 0..cube.cols() {
            let row: Vec<String> =
                (0..cube.bands()).map(|b| format!("{}", cube.data[[r, c, b]])).collect();
            writeln!(writer, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    let sidecar = wavelength_sidecar(path);
    let file = File::create(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "band,wavelength_nm").map_err(|e| Error::io(&sidecar, e))?;
    for (i, w) in cube.wavelengths.iter().enumerate() {
        writeln!(writer, "{},{}", i + 1, w).map_err(|e| Error::io(&sidecar, e))?;
    }
    writer.flush().map_err(|e| Error::io(&sidecar, e))
}

fn sanitize_token(s: &str) -> String {
    if s.is_empty() {
        "-".to_string()
    } else {
        s.replace([' ', ',', '='], "_")
    }
}

fn parse_token(s: &str) -> String {
    if s == "-" {
        String::new()
    } else {
        s.to_string()
    }
}

fn load_flat_csv(path: &Path) -> Result<HyperCube> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header_line = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader { path: path.to_path_buf(), detail: "empty file".into() })?
        .map_err(|e| Error::io(path, e))?;
    if !header_line.starts_with('#') {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "first line must be a '# rows=.. cols=.. bands=..' comment".into(),
        });
    }
    let mut rows = None;
    let mut cols = None;
    let mut bands = None;
    let mut meta = CubeMeta::default();
    for token in header_line.trim_start_matches('#').split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("bad header token {:?}", token),
        })?;
        let bad = |detail: String| Error::MalformedHeader { path: path.to_path_buf(), detail };
        match key {
            "rows" => rows = Some(value.parse().map_err(|_| bad(format!("rows={}", value)))?),
            "cols" => cols = Some(value.parse().map_err(|_| bad(format!("cols={}", value)))?),
            "bands" => bands = Some(value.parse().map_err(|_| bad(format!("bands={}", value)))?),
            "cultivar" => meta.cultivar = parse_token(value),
            "acquisition" => meta.acquisition = parse_token(value),
            "calibrated" => {
                meta.calibrated = value.parse().map_err(|_| bad(format!("calibrated={}", value)))?
            }
            _ => {}
        }
    }
    let (rows, cols, bands) = match (rows, cols, bands) {
        (Some(r), Some(c), Some(b)) => (r, c, b),
        _ => {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                detail: "header must declare rows, cols and bands".into(),
            })
        }
    };

    let mut data = Array3::<f64>::zeros((rows, cols, bands));
    let mut pixel = 0usize;
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        if pixel >= rows * cols {
            return Err(Error::DimensionMismatch {
                context: format!("{}: more pixel rows than rows*cols={}", path.display(), rows * cols),
            });
        }
        let (r, c) = (pixel / cols, pixel % cols);
        let mut b = 0usize;
        for field in line.split(',') {
            if b >= bands {
                return Err(Error::DimensionMismatch {
                    context: format!("{}: pixel {} has more than {} columns", path.display(), pixel, bands),
                });
            }
            let v: f64 = field.trim().parse().map_err(|_| Error::MalformedHeader {
                path: path.to_path_buf(),
                detail: format!("bad value {:?} at pixel {}", field, pixel),
            })?;
            data[[r, c, b]] = v;
            b += 1;
        }
        if b != bands {
            return Err(Error::DimensionMismatch {
                context: format!("{}: pixel {} has {} columns, expected {}", path.display(), pixel, b, bands),
            });
        }
        pixel += 1;
    }
    if pixel != rows * cols {
        return Err(Error::DimensionMismatch {
            context: format!("{}: {} pixel rows, expected {}", path.display(), pixel, rows * cols),
        });
    }

    let sidecar = wavelength_sidecar(path);
    let wavelengths = if sidecar.exists() {
        load_wavelength_csv(&sidecar)?
    } else {
        default_wavelength_table(bands)
    };
    HyperCube::new(data, wavelengths, meta)
}

fn load_wavelength_csv(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut wavelengths = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 || line.is_empty() {
            continue; // header
        }
        let value = line.split(',').nth(1).ok_or_else(|| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("expected band,wavelength_nm at line {}", i + 1),
        })?;
        wavelengths.push(value.trim().parse().map_err(|_| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("bad wavelength {:?} at line {}", value, i + 1),
        })?);
    }
    Ok(wavelengths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn small_cube() -> HyperCube {
        let mut data = Array3::<f64>::zeros((2, 2, 3));
        for (i, v) in data.iter_mut().enumerate() {
            *v = i as f64 * 0.125;
        }
        HyperCube::new(data, vec![900.0, 1000.0, 1100.0], CubeMeta::default()).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        let data = Array3::<f64>::zeros((2, 2, 3));
        assert!(matches!(
            HyperCube::new(data.clone(), vec![900.0, 1000.0], CubeMeta::default()),
            Err(Error::InvalidWavelengths { .. })
        ));
        assert!(matches!(
            HyperCube::new(data.clone(), vec![900.0, 1000.0, 1000.0], CubeMeta::default()),
            Err(Error::InvalidWavelengths { .. })
        ));
        let mut bad = data;
        bad[[0, 1, 2]] = f64::NAN;
        assert!(matches!(
            HyperCube::new(bad, vec![900.0, 1000.0, 1100.0], CubeMeta::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn native_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.bin");
        let cube = small_cube();
        save_cube(&cube, &path, CubeFormat::Native).unwrap();
        let loaded = load_cube(&path, CubeFormat::Native).unwrap();
        assert_eq!(cube, loaded);
    }

    // Round-trip oracle over random cubes: values are drawn as f32 so the
    // 32-bit payload preserves them bit-for-bit.
    #[test]
    fn native_round_trip_random_cubes() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::rng::seeded_rng(11);
        for case in 0..20 {
            let (r, c, b) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..6));
            let mut data = Array3::<f64>::zeros((r, c, b));
            for v in data.iter_mut() {
                *v = f64::from(rng.gen::<f32>() * 10.0 - 5.0);
            }
            let meta = CubeMeta { cultivar: "zx-1".into(), acquisition: format!("a{}", case), calibrated: false };
            let cube = HyperCube::new(data, default_wavelength_table(b), meta).unwrap();
            let path = dir.path().join(format!("c{}.bin", case));
            save_cube(&cube, &path, CubeFormat::Native).unwrap();
            let loaded = load_cube(&path, CubeFormat::Native).unwrap();
            assert_eq!(cube, loaded, "case {}", case);
        }
    }

    #[test]
    fn flat_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.csv");
        let cube = small_cube();
        save_cube(&cube, &path, CubeFormat::FlatCsv).unwrap();
        let loaded = load_cube(&path, CubeFormat::FlatCsv).unwrap();
        assert_eq!(cube, loaded);
    }

    #[test]
    fn truncated_payload_is_a_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.bin");
        let cube = small_cube();
        save_cube(&cube, &path, CubeFormat::Native).unwrap();
        // Drop the last band's worth of bytes: header says 3 bands, payload holds ~2.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(matches!(
            load_cube(&path, CubeFormat::Native),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn garbage_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.bin");
        std::fs::write(&path, b"not json\n").unwrap();
        assert!(matches!(load_cube(&path, CubeFormat::Native), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn calibrate_identities() {
        let raw = small_cube();
        let dark = Array3::from_elem((2, 2, 3), 1.0);
        let white = Array3::from_elem((2, 2, 3), 9.0);
        let frames = CalibrationFrames::new(dark.clone(), white.clone()).unwrap();

        let as_white = HyperCube::new(white, raw.wavelengths.clone(), raw.meta.clone()).unwrap();
        let ones = calibrate(&as_white, &frames).unwrap();
        assert!(ones.data.iter().all(|&v| v == 1.0));
        assert!(ones.meta.calibrated);

        let as_dark = HyperCube::new(dark, raw.wavelengths.clone(), raw.meta.clone()).unwrap();
        let zeros = calibrate(&as_dark, &frames).unwrap();
        assert!(zeros.data.iter().all(|&v| v == 0.0));

        // raw=5, dark=1, white=9 -> 0.5, direct evaluation of the formula
        let mid = HyperCube::new(
            Array3::from_elem((2, 2, 3), 5.0),
            raw.wavelengths.clone(),
            raw.meta.clone(),
        )
        .unwrap();
        let half = calibrate(&mid, &frames).unwrap();
        assert!(half.data.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn calibrate_reports_first_zero_cell() {
        let raw = small_cube();
        let dark = Array3::from_elem((2, 2, 3), 1.0);
        let mut white = Array3::from_elem((2, 2, 3), 9.0);
        white[[1, 0, 2]] = 1.0;
        let frames = CalibrationFrames { dark, white };
        match calibrate(&raw, &frames) {
            Err(Error::CalibrationDivideByZero { row, col, band }) => {
                assert_eq!((row, col, band), (1, 0, 2));
            }
            other => panic!("expected divide-by-zero error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn calibrate_broadcasts_2d_frames() {
        let raw = small_cube();
        let dark = Array2::<f64>::zeros((2, 2));
        let white = Array2::from_elem((2, 2), 2.0);
        let frames = CalibrationFrames::from_planes(dark, white).unwrap();
        let out = calibrate(&raw, &frames).unwrap();
        for ((r, c, b), &v) in out.data.indexed_iter() {
            assert!((v - raw.data[[r, c, b]] / 2.0).abs() < 1e-15);
        }
    }

    // Affine invariance: shifting raw, dark and white by the same constant
    // leaves the calibrated cube unchanged.
    #[test]
    fn calibrate_affine_invariance() {
        let mut rng = crate::rng::seeded_rng(5);
        for _ in 0..50 {
            let raw_data: Array3<f64> =
                Array3::from_shape_fn((3, 2, 4), |_| rng.gen_range(0.0..10.0));
            let dark = Array3::from_shape_fn((3, 2, 4), |_| rng.gen_range(0.0..1.0));
            let white = &dark + Array3::from_shape_fn((3, 2, 4), |_| rng.gen_range(0.5..4.0));
            let shift = rng.gen_range(-5.0..5.0);

            let wl = default_wavelength_table(4);
            let cube = HyperCube::new(raw_data.clone(), wl.clone(), CubeMeta::default()).unwrap();
            let frames = CalibrationFrames::new(dark.clone(), white.clone()).unwrap();
            let base = calibrate(&cube, &frames).unwrap();

            let cube_s = HyperCube::new(&raw_data + shift, wl, CubeMeta::default()).unwrap();
            let frames_s = CalibrationFrames::new(&dark + shift, &white + shift).unwrap();
            let shifted = calibrate(&cube_s, &frames_s).unwrap();

            for (a, b) in base.data.iter().zip(shifted.data.iter()) {
                assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn wavelength_default_table_endpoints() {
        let table = default_wavelength_table(256);
        assert!((wavelength_of(1, &table).unwrap() - 862.9).abs() < 1e-12);
        assert!((wavelength_of(256, &table).unwrap() - 1704.2).abs() < 1e-12);
        // Linear map; band 60 sits 59 steps in.
        let expected = 862.9 + 59.0 * (1704.2 - 862.9) / 255.0;
        assert!((wavelength_of(60, &table).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 1057.55).abs() < 0.01);
        assert!(matches!(wavelength_of(0, &table), Err(Error::BandIndexOutOfRange { .. })));
        assert!(matches!(wavelength_of(257, &table), Err(Error::BandIndexOutOfRange { .. })));
    }

    #[test]
    fn wavelengths_strictly_increase() {
        for bands in [1usize, 2, 17, 256] {
            let table = default_wavelength_table(bands);
            assert_eq!(table.len(), bands);
            assert!(table.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn histogram_basics() {
        let constant = Array2::from_elem((3, 3), 0.4);
        let counts = grayscale_histogram(constant.view(), 4, (0.0, 1.0)).unwrap();
        assert_eq!(counts, vec![0, 9, 0, 0]);

        let two = array![[0.1, 0.9]];
        assert_eq!(grayscale_histogram(two.view(), 2, (0.0, 1.0)).unwrap(), vec![1, 1]);

        // Top edge lands in the last bin.
        let edge = array![[1.0]];
        assert_eq!(grayscale_histogram(edge.view(), 4, (0.0, 1.0)).unwrap(), vec![0, 0, 0, 1]);

        let empty = Array2::<f64>::zeros((0, 0));
        assert!(matches!(grayscale_histogram(empty.view(), 4, (0.0, 1.0)), Err(Error::EmptyImage)));
        assert!(grayscale_histogram(two.view(), 0, (0.0, 1.0)).is_err());
        assert!(grayscale_histogram(two.view(), 2, (1.0, 1.0)).is_err());
    }

    // Naive per-pixel binning oracle on random images.
    #[test]
    fn histogram_matches_per_pixel_oracle() {
        let mut rng = crate::rng::seeded_rng(99);
        for _ in 0..50 {
            let image: Array2<f64> = Array2::from_shape_fn((7, 5), |_| rng.gen_range(-0.2..1.2));
            let bins = rng.gen_range(1..8);
            let counts = grayscale_histogram(image.view(), bins, (0.0, 1.0)).unwrap();

            let mut expected = vec![0u64; bins];
            let mut in_range = 0u64;
            for &v in image.iter() {
                if v < 0.0 || v > 1.0 {
                    continue;
                }
                in_range += 1;
                let mut idx = (v * bins as f64) as usize;
                if idx == bins {
                    idx -= 1;
                }
                expected[idx] += 1;
            }
            assert_eq!(counts, expected);
            assert_eq!(counts.iter().sum::<u64>(), in_range);
        }
    }

    // If dark <= raw <= white elementwise, results stay in [0, 1].
    #[test]
    fn calibrate_range_containment() {
        let mut rng = crate::rng::seeded_rng(23);
        for _ in 0..100 {
            let dark = Array3::from_shape_fn((2, 3, 2), |_| rng.gen_range(0.0..2.0));
            let white = &dark + Array3::from_shape_fn((2, 3, 2), |_| rng.gen_range(0.1..3.0));
            let t = Array3::from_shape_fn((2, 3, 2), |_| rng.gen_range(0.0..=1.0));
            let raw = &dark + &t * (&white - &dark);
            let cube =
                HyperCube::new(raw, default_wavelength_table(2), CubeMeta::default()).unwrap();
            let frames = CalibrationFrames::new(dark, white).unwrap();
            let out = calibrate(&cube, &frames).unwrap();
            assert!(out.data.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        }
    }
}
