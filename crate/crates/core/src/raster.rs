//! Single-scene rasters: covariate stacks, validity masks, prediction fields,
//! and the DFGP1 binary container.
//!
//! Container layout (bit-exact): magic `DFGP` + version byte `0x01`, then
//! little-endian u32 height, width, channels, then `height*width*channels`
//! little-endian float32 values, row-major with the channel index fastest.
//! Mask files reuse the header with channels = 1 and a u8 payload
//! (0 = invalid, 1 = observed, 2 = missing). The nodata sentinel inside
//! float payloads is -9999.0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DFGP";
pub const VERSION: u8 = 0x01;
pub const NODATA: f32 = -9999.0;

/// Hard cap on total payload elements so corrupted headers cannot trigger
/// huge allocations.
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelLabel {
    Invalid,
    Observed,
    Missing,
}

impl PixelLabel {
    fn to_byte(self) -> u8 {
        match self {
            PixelLabel::Invalid => 0,
            PixelLabel::Observed => 1,
            PixelLabel::Missing => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(PixelLabel::Invalid),
            1 => Ok(PixelLabel::Observed),
            2 => Ok(PixelLabel::Missing),
            other => Err(Error::FormatError(format!("mask byte {other} is not 0/1/2"))),
        }
    }
}

/// H x W x C grid of float covariates. Values are stored as read; pixels with
/// the nodata sentinel in any channel are flagged invalid at construction.
#[derive(Debug, Clone)]
pub struct RasterStack {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub resolution_km: f64,
    /// Row-major, channel-fastest.
    values: Vec<f32>,
    /// Per-pixel flag: true when some channel holds the nodata sentinel or a
    /// non-finite value.
    invalid: Vec<bool>,
}

impl RasterStack {
    pub fn new(height: usize, width: usize, channels: usize, resolution_km: f64, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeError("raster dimensions must be at least 1".into()));
        }
        if !(resolution_km > 0.0) {
            return Err(Error::ConfigError("resolution_km must be positive".into()));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeError(format!(
                "raster payload has {} values, expected {}",
                values.len(),
                height * width * channels
            )));
        }
        let mut invalid = vec![false; height * width];
        for p in 0..height * width {
            for c in 0..channels {
                let v = values[p * channels + c];
                if v == NODATA || !v.is_finite() {
                    invalid[p] = true;
                    break;
                }
            }
        }
        Ok(RasterStack { height, width, channels, resolution_km, values, invalid })
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    /// Channel vector at a pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let p = (row * self.width + col) * self.channels;
        &self.values[p..p + self.channels]
    }

    pub fn pixel_invalid(&self, row: usize, col: usize) -> bool {
        self.invalid[row * self.width + col]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Per-pixel validity labels for one scene.
#[derive(Debug, Clone)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    labels: Vec<PixelLabel>,
}

impl Mask {
    pub fn new(height: usize, width: usize, labels: Vec<PixelLabel>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeError(format!(
                "mask payload has {} labels, expected {}",
                labels.len(),
                height * width
            )));
        }
        Ok(Mask { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: PixelLabel) -> Self {
        Mask { height, width, labels: vec![label; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> PixelLabel {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: PixelLabel) {
        self.labels[row * self.width + col] = label;
    }

    pub fn labels(&self) -> &[PixelLabel] {
        &self.labels
    }

    pub fn count(&self, label: PixelLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Pixel ids (row-major linear index) carrying a given label.
    pub fn pixels_with(&self, label: PixelLabel) -> Vec<usize> {
        (0..self.labels.len()).filter(|&p| self.labels[p] == label).collect()
    }
}

fn write_header(w: &mut impl Write, height: u32, width: u32, channels: u32) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&height.to_le_bytes())?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&channels.to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<(usize, usize, usize)> {
    let mut head = [0u8; 17];
    r.read_exact(&mut head)
        .map_err(|_| Error::FormatError(format!("{}: truncated header", path.display())))?;
    if head[..4] != MAGIC {
        return Err(Error::FormatError(format!("{}: bad magic bytes", path.display())));
    }
    if head[4] != VERSION {
        return Err(Error::FormatError(format!("{}: unsupported version {}", path.display(), head[4])));
    }
    let height = u32::from_le_bytes(head[5..9].try_into().unwrap()) as u64;
    let width = u32::from_le_bytes(head[9..13].try_into().unwrap()) as u64;
    let channels = u32::from_le_bytes(head[13..17].try_into().unwrap()) as u64;
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::FormatError(format!("{}: zero dimension in header", path.display())));
    }
    let total = height
        .checked_mul(width)
        .and_then(|hw| hw.checked_mul(channels))
        .ok_or_else(|| Error::FormatError(format!("{}: dimension overflow", path.display())))?;
    if total > MAX_ELEMENTS {
        return Err(Error::FormatError(format!("{}: dimension overflow ({total} elements)", path.display())));
    }
    Ok((height as usize, width as usize, channels as usize))
}

/// Write a raster stack as a DFGP1 container. Round-trips bit-exactly.
pub fn write_stack(path: &Path, stack: &RasterStack) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, stack.height as u32, stack.width as u32, stack.channels as u32)?;
    for v in &stack.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a DFGP1 float container. `resolution_km` is not stored in the file;
/// callers pass it (default 1.0).
pub fn read_stack(path: &Path, resolution_km: f64) -> Result<RasterStack> {
    let mut r = BufReader::new(File::open(path)?);
    let (height, width, channels) = read_header(&mut r, path)?;
    let n = height * width * channels;
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::FormatError(format!("{}: truncated payload", path.display())))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::FormatError(format!("{}: trailing bytes after payload", path.display())));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    RasterStack::new(height, width, channels, resolution_km, values)
}

/// Write a mask as a DFGP1 container (channels = 1, u8 payload).
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, mask.height as u32, mask.width as u32, 1)?;
    for l in &mask.labels {
        w.write_all(&[l.to_byte()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let mut r = BufReader::new(File::open(path)?);
    let (height, width, channels) = read_header(&mut r, path)?;
    if channels != 1 {
        return Err(Error::FormatError(format!(
            "{}: mask container must have 1 channel, found {channels}",
            path.display()
        )));
    }
    let mut payload = vec![0u8; height * width];
    r.read_exact(&mut payload)
        .map_err(|_| Error::FormatError(format!("{}: truncated payload", path.display())))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::FormatError(format!("{}: trailing bytes after payload", path.display())));
    }
    let labels = payload
        .into_iter()
        .map(PixelLabel::from_byte)
        .collect::<Result<Vec<_>>>()?;
    Mask::new(height, width, labels)
}

/// One scene parsed from CSV: covariate stack, target raster, and mask.
#[derive(Debug)]
pub struct CsvScene {
    pub stack: RasterStack,
    pub target: RasterStack,
    pub mask: Mask,
    pub feature_names: Vec<String>,
}

/// Import `row,col,<features...>,target` CSV. A missing target cell marks the
/// pixel Missing; an empty feature cell marks it Invalid; pixels absent from
/// the file are Invalid.
pub fn read_csv_scene(path: &Path, resolution_km: f64) -> Result<CsvScene> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::FormatError(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[0] != "row" || cols[1] != "col" || cols[cols.len() - 1] != "target" {
        return Err(Error::FormatError(format!(
            "{}: header must be row,col,<features...>,target",
            path.display()
        )));
    }
    let feature_names: Vec<String> = cols[2..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let n_feat = feature_names.len();

    struct Row {
        row: usize,
        col: usize,
        features: Vec<Option<f32>>,
        target: Option<f32>,
    }
    let mut rows = Vec::new();
    let mut max_r = 0usize;
    let mut max_c = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(Error::FormatError(format!(
                "{}: line {} has {} cells, expected {}",
                path.display(),
                lineno + 2,
                cells.len(),
                cols.len()
            )));
        }
        let parse_idx = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| {
                Error::FormatError(format!("{}: line {}: bad {what} '{s}'", path.display(), lineno + 2))
            })
        };
        let r = parse_idx(cells[0], "row")?;
        let c = parse_idx(cells[1], "col")?;
        let mut features = Vec::with_capacity(n_feat);
        for (k, cell) in cells[2..2 + n_feat].iter().enumerate() {
            if cell.is_empty() {
                features.push(None);
            } else {
                let v = cell.parse::<f32>().map_err(|_| {
                    Error::FormatError(format!(
                        "{}: line {}: bad value '{cell}' for {}",
                        path.display(),
                        lineno + 2,
                        feature_names[k]
                    ))
                })?;
                features.push(Some(v));
            }
        }
        let tcell = cells[cols.len() - 1];
        let target = if tcell.is_empty() {
            None
        } else {
            Some(tcell.parse::<f32>().map_err(|_| {
                Error::FormatError(format!("{}: line {}: bad target '{tcell}'", path.display(), lineno + 2))
            })?)
        };
        max_r = max_r.max(r);
        max_c = max_c.max(c);
        rows.push(Row { row: r, col: c, features, target });
    }
    if rows.is_empty() {
        return Err(Error::FormatError(format!("{}: no data rows", path.display())));
    }
    let height = max_r + 1;
    let width = max_c + 1;
    if (height * width) as u64 > MAX_ELEMENTS {
        return Err(Error::FormatError(format!("{}: dimension overflow", path.display())));
    }

    let mut stack_vals = vec![NODATA; height * width * n_feat];
    let mut target_vals = vec![NODATA; height * width];
    let mut labels = vec![PixelLabel::Invalid; height * width];
    let mut seen = vec![false; height * width];
    for row in &rows {
        let p = row.row * width + row.col;
        if seen[p] {
            return Err(Error::FormatError(format!(
                "{}: duplicate pixel ({}, {})",
                path.display(),
                row.row,
                row.col
            )));
        }
        seen[p] = true;
        let complete = row.features.iter().all(Option::is_some);
        for (k, f) in row.features.iter().enumerate() {
            stack_vals[p * n_feat + k] = f.unwrap_or(NODATA);
        }
        match (complete, row.target) {
            (false, _) => labels[p] = PixelLabel::Invalid,
            (true, Some(t)) => {
                target_vals[p] = t;
                labels[p] = PixelLabel::Observed;
            }
            (true, None) => labels[p] = PixelLabel::Missing,
        }
    }
    Ok(CsvScene {
        stack: RasterStack::new(height, width, n_feat, resolution_km, stack_vals)?,
        target: RasterStack::new(height, width, 1, resolution_km, target_vals)?,
        mask: Mask::new(height, width, labels)?,
        feature_names,
    })
}

/// Gap-filled raster with per-pixel posterior standard deviation, in original
/// target units. Observed pixels carry the observed value with zero spread;
/// invalid pixels carry the nodata sentinel.
#[derive(Debug, Clone)]
pub struct PredictionField {
    pub height: usize,
    pub width: usize,
    pub mean: Array2<f64>,
    pub stddev: Array2<f64>,
    pub provenance: Mask,
}

impl PredictionField {
    /// Export as two DFGP1 float containers plus a JSON sidecar.
    pub fn export(&self, mean_path: &Path, stddev_path: &Path, sidecar_path: &Path, sidecar: &serde_json::Value) -> Result<()> {
        let to_stack = |a: &Array2<f64>| -> Result<RasterStack> {
            let vals: Vec<f32> = a.iter().map(|&v| if v.is_finite() { v as f32 } else { NODATA }).collect();
            RasterStack::new(self.height, self.width, 1, 1.0, vals)
        };
        write_stack(mean_path, &to_stack(&self.mean)?)?;
        write_stack(stddev_path, &to_stack(&self.stddev)?)?;
        let mut f = BufWriter::new(File::create(sidecar_path)?);
        serde_json::to_writer_pretty(&mut f, sidecar)
            .map_err(|e| Error::FormatError(format!("sidecar: {e}")))?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn stack_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.dfgp1");
        let stack = RasterStack::new(2, 2, 1, 1.0, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        write_stack(&path, &stack).unwrap();
        let back = read_stack(&path, 1.0).unwrap();
        assert_eq!(back.height, 2);
        assert_eq!(back.width, 2);
        assert_eq!(back.values(), stack.values());
        // write again and compare bytes
        let path2 = dir.path().join("s2.dfgp1");
        write_stack(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.dfgp1");
        std::fs::write(&path, b"XXXX\x01aaaaaaaaaaaaaaaaaaaaaaaa").unwrap();
        match read_stack(&path, 1.0) {
            Err(Error::FormatError(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected FormatError, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.dfgp1");
        let stack = RasterStack::new(2, 2, 1, 1.0, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        write_stack(&path, &stack).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_stack(&path, 1.0), Err(Error::FormatError(_))));
    }

    #[test]
    fn nodata_sentinel_marks_pixel_invalid() {
        let stack = RasterStack::new(2, 2, 1, 1.0, vec![NODATA, 1.0, 2.0, 3.0]).unwrap();
        assert!(stack.pixel_invalid(0, 0));
        assert!(!stack.pixel_invalid(0, 1));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.dfgp1");
        let mask = Mask::new(
            1,
            3,
            vec![PixelLabel::Invalid, PixelLabel::Observed, PixelLabel::Missing],
        )
        .unwrap();
        write_mask(&path, &mask).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(back.labels(), mask.labels());
    }

    #[test]
    fn csv_scene_parses_labels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.csv");
        std::fs::write(
            &path,
            "row,col,ndvi,elev,target\n\
             0,0,0.5,100,1.25\n\
             0,1,0.6,120,\n\
             1,0,,90,2.0\n",
        )
        .unwrap();
        let scene = read_csv_scene(&path, 1.0).unwrap();
        assert_eq!(scene.stack.height, 2);
        assert_eq!(scene.stack.width, 2);
        assert_eq!(scene.feature_names, vec!["ndvi", "elev"]);
        assert_eq!(scene.mask.get(0, 0), PixelLabel::Observed);
        assert_eq!(scene.mask.get(0, 1), PixelLabel::Missing);
        assert_eq!(scene.mask.get(1, 0), PixelLabel::Invalid); // empty feature cell
        assert_eq!(scene.mask.get(1, 1), PixelLabel::Invalid); // absent from file
        assert_eq!(scene.target.get(0, 0, 0), 1.25);
    }

    #[test]
    fn csv_duplicate_pixel_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dup.csv");
        std::fs::write(&path, "row,col,f,target\n0,0,1,2\n0,0,1,3\n").unwrap();
        assert!(matches!(read_csv_scene(&path, 1.0), Err(Error::FormatError(_))));
    }
}
