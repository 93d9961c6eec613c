//! On-disk container for models and feature matrices.
//!
//! Layout: 4-byte magic `DDL1`, a little-endian u32 header length, a JSON
//! header, then the binary payload. Model payloads hold each layer's
//! dictionary as row-major f64 little-endian in layer order; feature payloads
//! hold one row-major f64 matrix, optionally followed by one u32 label per
//! column. The JSON header is serialized with a fixed field order, so saving
//! the same value twice yields byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::deep::{DeepDictModel, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::linalg::to_f;

pub const MAGIC: [u8; 4] = *b"DDL1";
pub const FORMAT_VERSION: u32 = 1;

/// JSON header of a container file, readable without touching the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Header {
    Model {
        format_version: u32,
        input_dim: usize,
        layer_sizes: Vec<usize>,
        layer_kinds: Vec<String>,
        lambda: f64,
        ista_iters: usize,
        step_safety: f64,
    },
    Features {
        format_version: u32,
        rows: usize,
        cols: usize,
        has_labels: bool,
    },
}

fn write_container(path: &Path, header: &Header, payload: impl FnOnce(&mut Vec<u8>)) -> Result<()> {
    let header_bytes =
        serde_json::to_vec(header).map_err(|e| Error::Format(format!("header encoding: {e}")))?;
    let mut body = Vec::new();
    payload(&mut body);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(header_bytes.len() as u32)?;
    w.write_all(&header_bytes)?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

fn push_matrix_row_major(buf: &mut Vec<u8>, m: &Array2<f64>) {
    buf.reserve(m.len() * 8);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let mut b = [0u8; 8];
            LittleEndian::write_f64(&mut b, m[[i, j]]);
            buf.extend_from_slice(&b);
        }
    }
}

fn take_matrix_row_major(bytes: &[u8], rows: usize, cols: usize) -> Array2<f64> {
    let mut flat = vec![0.0; rows * cols];
    LittleEndian::read_f64_into(&bytes[..rows * cols * 8], &mut flat);
    let c_order = Array2::from_shape_vec((rows, cols), flat)
        .expect("length checked by caller");
    to_f(c_order.view())
}

/// Split a container file into its parsed header and raw payload bytes.
fn read_container(path: &Path) -> Result<(Header, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Format(format!(
            "file is {} bytes, too short for a container header",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "unsupported magic {:?}, this build reads \"DDL1\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let header_len = LittleEndian::read_u32(&bytes[4..8]) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Format(format!(
            "declared header length {} exceeds file size {}",
            header_len,
            bytes.len()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::Format(format!("header decoding: {e}")))?;
    let version = match &header {
        Header::Model { format_version, .. } => *format_version,
        Header::Features { format_version, .. } => *format_version,
    };
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "format version {version} unsupported, this build reads version {FORMAT_VERSION}"
        )));
    }
    Ok((header, bytes[8 + header_len..].to_vec()))
}

/// Read only the header of a container file.
pub fn read_header(path: &Path) -> Result<Header> {
    read_container(path).map(|(h, _)| h)
}

/// Write a model. Saving the same model twice produces identical bytes.
pub fn save_model(model: &DeepDictModel, path: &Path) -> Result<()> {
    let header = Header::Model {
        format_version: FORMAT_VERSION,
        input_dim: model.input_dim(),
        layer_sizes: model.layer_sizes(),
        layer_kinds: model
            .layers()
            .iter()
            .map(|l| l.kind.as_str().to_string())
            .collect(),
        lambda: model.lambda(),
        ista_iters: model.ista_iters(),
        step_safety: model.step_safety(),
    };
    write_container(path, &header, |buf| {
        for layer in model.layers() {
            push_matrix_row_major(buf, &layer.dictionary);
        }
    })
}

/// Read a model back; the result encodes bit-identically to the saved one.
pub fn load_model(path: &Path) -> Result<DeepDictModel> {
    let (header, payload) = read_container(path)?;
    let (input_dim, layer_sizes, layer_kinds, lambda, ista_iters, step_safety) = match header {
        Header::Model {
            input_dim,
            layer_sizes,
            layer_kinds,
            lambda,
            ista_iters,
            step_safety,
            ..
        } => (input_dim, layer_sizes, layer_kinds, lambda, ista_iters, step_safety),
        Header::Features { .. } => {
            return Err(Error::Format(
                "file holds features, not a model".into(),
            ))
        }
    };
    if layer_sizes.is_empty() {
        return Err(Error::Format("model header declares zero layers".into()));
    }
    if layer_kinds.len() != layer_sizes.len() {
        return Err(Error::Format(format!(
            "{} layer kinds for {} layers",
            layer_kinds.len(),
            layer_sizes.len()
        )));
    }
    let mut kinds = Vec::with_capacity(layer_kinds.len());
    for k in &layer_kinds {
        kinds.push(match k.as_str() {
            "dense" => LayerKind::Dense,
            "sparse" => LayerKind::Sparse,
            other => {
                return Err(Error::Format(format!(
                    "unknown layer kind {other:?}, expected \"dense\" or \"sparse\""
                )))
            }
        });
    }
    let mut expected = 0usize;
    let mut rows = input_dim;
    for &cols in &layer_sizes {
        expected += rows * cols * 8;
        rows = cols;
    }
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {} for the declared layer sizes",
            payload.len(),
            expected
        )));
    }
    let mut layers = Vec::with_capacity(layer_sizes.len());
    let mut offset = 0usize;
    let mut rows = input_dim;
    for (&cols, kind) in layer_sizes.iter().zip(kinds) {
        let n = rows * cols * 8;
        let dictionary = take_matrix_row_major(&payload[offset..offset + n], rows, cols);
        layers.push(Layer { dictionary, kind });
        offset += n;
        rows = cols;
    }
    DeepDictModel::new(layers, lambda, ista_iters, step_safety)
}

/// Write a feature matrix, optionally with one u32 label per column.
pub fn save_features(
    features: &Array2<f64>,
    labels: Option<&[u32]>,
    path: &Path,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != features.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} feature columns",
                l.len(),
                features.ncols()
            )));
        }
    }
    let header = Header::Features {
        format_version: FORMAT_VERSION,
        rows: features.nrows(),
        cols: features.ncols(),
        has_labels: labels.is_some(),
    };
    write_container(path, &header, |buf| {
        push_matrix_row_major(buf, features);
        if let Some(l) = labels {
            for &v in l {
                let mut b = [0u8; 4];
                LittleEndian::write_u32(&mut b, v);
                buf.extend_from_slice(&b);
            }
        }
    })
}

/// Read a feature matrix and its labels if the file embeds them.
pub fn load_features(path: &Path) -> Result<(Array2<f64>, Option<Vec<u32>>)> {
    let (header, payload) = read_container(path)?;
    let (rows, cols, has_labels) = match header {
        Header::Features {
            rows,
            cols,
            has_labels,
            ..
        } => (rows, cols, has_labels),
        Header::Model { .. } => {
            return Err(Error::Format(
                "file holds a model, not features".into(),
            ))
        }
    };
    let matrix_bytes = rows * cols * 8;
    if payload.len() < matrix_bytes {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {} for a {}x{} matrix",
            payload.len(),
            matrix_bytes,
            rows,
            cols
        )));
    }
    let features = take_matrix_row_major(&payload[..matrix_bytes], rows, cols);
    let rest = &payload[matrix_bytes..];
    let labels = if has_labels {
        if rest.len() != cols * 4 {
            return Err(Error::Format(format!(
                "label block is {} bytes, expected {} for {} columns",
                rest.len(),
                cols * 4,
                cols
            )));
        }
        let mut l = vec![0u32; cols];
        LittleEndian::read_u32_into(rest, &mut l);
        Some(l)
    } else {
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the feature matrix",
                rest.len()
            )));
        }
        None
    };
    Ok((features, labels))
}
