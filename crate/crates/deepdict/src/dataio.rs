//! Dataset loading.
//!
//! Two input formats are supported:
//!
//! - the classic big-endian binary image/label container used by digit
//!   benchmarks (magic `0x00000803` for images, `0x00000801` for labels,
//!   unsigned byte payload),
//! - a plain text matrix format with one sample per line, pixel values in
//!   `[0, 1]` separated by whitespace, and the class label as the last
//!   field.
//!
//! Samples are stored as columns of a column-major `f64` matrix. Byte
//! pixels are scaled by 1/255 so both formats land in the unit interval.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::{Array2, ShapeBuilder};

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Samples paired with their class labels; one label per column.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(samples: Array2<f64>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != samples.ncols() {
            return Err(Error::Dimension(format!(
                "{} samples but {} labels",
                samples.ncols(),
                labels.len()
            )));
        }
        Ok(Self { samples, labels })
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.ncols()
    }
}

/// Read a binary image file into a `(rows*cols) x count` matrix with one
/// image per column, pixels scaled to `[0, 1]`.
pub fn read_idx_images<P: AsRef<Path>>(path: P) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    let mut cur = bytes.as_slice();
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format("file too short for an image header".into()))?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
        )));
    }
    let hdr = |e: &str| Error::Format(format!("image header truncated at {e}"));
    let count = cur.read_u32::<BigEndian>().map_err(|_| hdr("count"))? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(|_| hdr("rows"))? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(|_| hdr("cols"))? as usize;
    if count == 0 {
        return Err(Error::Format("image file declares zero samples".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!(
            "image file declares empty {rows}x{cols} images"
        )));
    }
    let dim = rows * cols;
    let expected = count * dim;
    if cur.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {expected} for {count} images of {rows}x{cols}",
            cur.len()
        )));
    }
    let data: Vec<f64> = cur.iter().map(|&b| f64::from(b) / 255.0).collect();
    // one image per column, so the sample-major payload is column-major data
    Ok(Array2::from_shape_vec((dim, count).f(), data).expect("shape matches payload"))
}

/// Read a binary label file into a vector of class ids.
pub fn read_idx_labels<P: AsRef<Path>>(path: P) -> Result<Vec<u32>> {
    let bytes = fs::read(path)?;
    let mut cur = bytes.as_slice();
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format("file too short for a label header".into()))?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
        )));
    }
    let count = cur
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format("label header truncated at count".into()))?
        as usize;
    if count == 0 {
        return Err(Error::Format("label file declares zero entries".into()));
    }
    if cur.len() != count {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {count}",
            cur.len()
        )));
    }
    Ok(cur.iter().map(|&b| u32::from(b)).collect())
}

/// Read images and labels together, checking that the counts agree.
pub fn read_idx_dataset<P: AsRef<Path>, Q: AsRef<Path>>(images: P, labels: Q) -> Result<Dataset> {
    let samples = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    Dataset::new(samples, labels)
}

fn clamp_unit(v: f64, lineno: usize) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else if v > 1.0 && v - 1.0 <= 1e-9 {
        Ok(1.0)
    } else if v < 0.0 && -v <= 1e-9 {
        Ok(0.0)
    } else {
        Err(Error::Format(format!(
            "line {lineno}: pixel value {v} outside [0, 1]"
        )))
    }
}

/// Read a text matrix file: one sample per line, whitespace-separated pixel
/// values in `[0, 1]` (values within 1e-9 of the interval are clamped), and
/// the class label as the last field.
pub fn read_amat<P: AsRef<Path>>(path: P) -> Result<(Array2<f64>, Vec<u32>)> {
    let text = fs::read_to_string(path)?;
    let mut dim: Option<usize> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields: Vec<f64> = Vec::with_capacity(dim.map_or(16, |d| d + 1));
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::Format(format!("line {lineno}: unparseable field {tok:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "line {lineno}: non-finite value {tok:?}"
                )));
            }
            fields.push(v);
        }
        if fields.len() < 2 {
            return Err(Error::Format(format!(
                "line {lineno}: need at least one pixel and a label"
            )));
        }
        let d = fields.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(d0) if d0 != d => {
                return Err(Error::Format(format!(
                    "line {lineno}: {d} pixel fields, expected {d0}"
                )));
            }
            _ => {}
        }
        let lab = fields[d].round();
        if lab < 0.0 || lab > f64::from(u32::MAX) {
            return Err(Error::Format(format!(
                "line {lineno}: label {} out of range",
                fields[d]
            )));
        }
        labels.push(lab as u32);
        for &p in &fields[..d] {
            values.push(clamp_unit(p, lineno)?);
        }
    }
    if labels.is_empty() {
        return Err(Error::Format("no samples in file".into()));
    }
    let d = dim.expect("dim set once a sample was read");
    let n = labels.len();
    Ok((
        Array2::from_shape_vec((d, n).f(), values).expect("shape matches collected values"),
        labels,
    ))
}

pub fn read_amat_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let (samples, labels) = read_amat(path)?;
    Dataset::new(samples, labels)
}

/// Write samples and labels in the text matrix format. Values are printed
/// with the shortest decimal representation that parses back to the same
/// double, so a write/read round trip is exact.
pub fn write_amat<P: AsRef<Path>>(path: P, samples: &Array2<f64>, labels: &[u32]) -> Result<()> {
    if labels.len() != samples.ncols() {
        return Err(Error::Dimension(format!(
            "{} samples but {} labels",
            samples.ncols(),
            labels.len()
        )));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (j, col) in samples.axis_iter(ndarray::Axis(1)).enumerate() {
        for (i, v) in col.iter().enumerate() {
            if i > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{v}")?;
        }
        writeln!(out, " {}", labels[j])?;
    }
    out.flush()?;
    Ok(())
}
