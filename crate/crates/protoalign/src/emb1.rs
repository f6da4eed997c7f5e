//! EMB1 embedding files, label sidecars, class-head metadata and CSV import.
//!
//! Layout: `"EMB1"`, `u32` LE version 1, `u64` LE `n`, `u64` LE `d`, then
//! `n·d` `f32` LE values, row-major. Values are widened to `f64` on load and
//! rounded to the nearest `f32` on save.

use std::fs;
use std::path::{Path, PathBuf};

use protoalign_core::{ClassHead, EmbeddingMatrix, Matrix};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?} at byte offset 0, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found} at byte offset 4")]
    BadVersion { found: u32 },
    #[error("truncated at byte offset {offset}: expected {expected} bytes, file has {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("{extra} unexpected trailing bytes at byte offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("non-finite value at byte offset {offset} (row {row}, column {col})")]
    NonFinite { offset: usize, row: usize, col: usize },
    #[error("shape {n}x{d} does not fit in memory")]
    TooLarge { n: u64, d: u64 },
    #[error("value at row {row}, column {col} is not representable as a finite f32")]
    Unrepresentable { row: usize, col: usize },
    #[error("{path}, line {line}: {msg}")]
    Text { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] protoalign_core::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses EMB1 bytes into a row-major `f64` matrix.
pub fn decode(bytes: &[u8]) -> Result<Matrix, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            offset: 0,
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::BadVersion { found: version });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let too_large = FormatError::TooLarge { n, d };
    let count = usize::try_from(n)
        .ok()
        .zip(usize::try_from(d).ok())
        .and_then(|(a, b)| a.checked_mul(b))
        .ok_or(too_large)?;
    let expected = count
        .checked_mul(4)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or(FormatError::TooLarge { n, d })?;
    if bytes.len() < expected {
        // offset of the first float that is not fully present
        let whole = (bytes.len() - HEADER_LEN) / 4;
        return Err(FormatError::Truncated {
            offset: HEADER_LEN + 4 * whole,
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            offset: expected,
            extra: bytes.len() - expected,
        });
    }
    let (n, d) = (n as usize, d as usize);
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                offset: HEADER_LEN + 4 * i,
                row: i / d.max(1),
                col: i % d.max(1),
            });
        }
        data.push(f64::from(v));
    }
    Ok(Matrix::from_vec(n, d, data)?)
}

pub fn encode(m: &Matrix) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for (i, &v) in m.as_slice().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            let cols = m.cols().max(1);
            return Err(FormatError::Unrepresentable {
                row: i / cols,
                col: i % cols,
            });
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

/// Loads an EMB1 file, or a CSV file when the extension is `.csv`.
pub fn load_matrix(path: &Path) -> Result<Matrix, FormatError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return load_csv(path);
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, FormatError> {
    Ok(EmbeddingMatrix::new(load_matrix(path)?)?)
}

/// Embeddings plus an optional label sidecar. When `class_names` is given,
/// labels are resolved against it; otherwise names are taken in order of
/// first appearance.
pub fn load_labelled(
    path: &Path,
    labels: Option<&Path>,
    class_names: Option<&[String]>,
) -> Result<EmbeddingMatrix, FormatError> {
    let m = load_matrix(path)?;
    match labels {
        None => Ok(EmbeddingMatrix::new(m)?),
        Some(lp) => {
            let (idx, names) = load_labels(lp, class_names)?;
            Ok(EmbeddingMatrix::with_labels(m, Some(idx), Some(names))?)
        }
    }
}

pub fn load_labels(
    path: &Path,
    class_names: Option<&[String]>,
) -> Result<(Vec<usize>, Vec<String>), FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut names: Vec<String> = class_names.map(<[String]>::to_vec).unwrap_or_default();
    let mut idx = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let label = line.trim_end_matches('\r');
        if label.is_empty() {
            continue;
        }
        let i = match names.iter().position(|n| n == label) {
            Some(i) => i,
            None if class_names.is_none() => {
                names.push(label.to_string());
                names.len() - 1
            }
            None => {
                return Err(FormatError::Text {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    msg: format!("label {label:?} is not a known class name"),
                })
            }
        };
        idx.push(i);
    }
    Ok((idx, names))
}

pub fn encode_labels(e: &EmbeddingMatrix) -> Option<String> {
    let (labels, names) = (e.labels()?, e.names()?);
    let mut s = String::new();
    for &l in labels {
        s.push_str(&names[l]);
        s.push('\n');
    }
    Some(s)
}

/// Numbers separated by commas, one row per line. A first line that does not
/// parse as numbers is treated as a header.
pub fn load_csv(path: &Path) -> Result<Matrix, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => {
                if let Some(first) = rows.first() {
                    if first.len() != r.len() {
                        return Err(FormatError::Text {
                            path: path.to_path_buf(),
                            line: line_no + 1,
                            msg: format!("expected {} columns, found {}", first.len(), r.len()),
                        });
                    }
                }
                if let Some(c) = r.iter().position(|v| !v.is_finite()) {
                    return Err(FormatError::Text {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        msg: format!("non-finite value in column {}", c + 1),
                    });
                }
                rows.push(r);
            }
            Err(_) if rows.is_empty() && line_no == 0 => {}
            Err(e) => {
                return Err(FormatError::Text {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(Matrix::from_rows(&rows, cols)?)
}

/// Contents of a class-head metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

pub fn load_head_meta(path: &Path) -> Result<HeadMeta, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_class_head(weights: &Path, meta: &Path) -> Result<ClassHead, FormatError> {
    let w = load_matrix(weights)?;
    let meta = load_head_meta(meta)?;
    Ok(ClassHead::new(w, meta.bias, meta.names)?)
}

pub fn head_meta(head: &ClassHead) -> HeadMeta {
    HeadMeta {
        names: head.class_names().to_vec(),
        bias: Some(head.bias().to_vec()),
    }
}
