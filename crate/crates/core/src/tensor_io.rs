//! Checkpoint loading: safetensors containers and plain CSV matrices.
//!
//! Every rank-2 tensor whose dimensions are both at least two becomes a
//! [`WeightMatrix`], oriented so that `n_rows >= n_cols`. Everything else is
//! recorded in [`CheckpointSummary::skipped`] with a reason.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use regex::Regex;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, finite, real matrix with `n_rows >= n_cols >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    name: String,
    data: DMatrix<f64>,
    source_shape: Vec<usize>,
    transposed: bool,
}

impl WeightMatrix {
    /// Builds a matrix from its as-stored layout, transposing when it has
    /// fewer rows than columns.
    pub fn from_source(name: impl Into<String>, source: DMatrix<f64>) -> Result<Self> {
        let name = name.into();
        let source_shape = vec![source.nrows(), source.ncols()];
        if source.nrows().min(source.ncols()) < 2 {
            return Err(Error::InvalidArgument(format!(
                "matrix {name} has shape {}x{}; both dimensions must be >= 2",
                source.nrows(),
                source.ncols()
            )));
        }
        if source.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix {name} has non-finite entries")));
        }
        let transposed = source.nrows() < source.ncols();
        let data = if transposed { source.transpose() } else { source };
        Ok(WeightMatrix {
            name,
            data,
            source_shape,
            transposed,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    /// Shape of the tensor before orientation (and before any QKV split).
    pub fn source_shape(&self) -> &[usize] {
        &self.source_shape
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    /// The matrix in its as-stored layout.
    pub fn source(&self) -> DMatrix<f64> {
        if self.transposed {
            self.data.transpose()
        } else {
            self.data.clone()
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn with_source_shape(mut self, shape: Vec<usize>) -> Self {
        self.source_shape = shape;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTensor {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CheckpointSummary {
    pub path: PathBuf,
    pub matrices: Vec<WeightMatrix>,
    pub skipped: Vec<SkippedTensor>,
}

impl CheckpointSummary {
    pub fn get(&self, name: &str) -> Option<&WeightMatrix> {
        self.matrices.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Safetensors,
    Csv,
}

impl Format {
    pub fn detect(path: &Path) -> Option<Format> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(e) if e == "csv" => Some(Format::Csv),
            Some(e) if e == "safetensors" => Some(Format::Safetensors),
            _ => None,
        }
    }
}

/// How a fused attention projection is laid out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QkvLayout {
    /// Source dimension (0 = rows as stored, 1 = columns) holding the fused blocks.
    pub axis: usize,
    pub suffixes: Vec<String>,
}

impl Default for QkvLayout {
    fn default() -> Self {
        QkvLayout {
            axis: 0,
            suffixes: vec!["q".into(), "k".into(), "v".into()],
        }
    }
}

impl QkvLayout {
    pub fn blocks(&self) -> usize {
        self.suffixes.len()
    }
}

#[derive(Debug, Clone)]
pub struct SplitRule {
    pub pattern: Regex,
    pub layout: QkvLayout,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub format: Option<Format>,
    pub filter: Option<Regex>,
    pub split: Vec<SplitRule>,
}

/// Splits a fused projection into one matrix per block, each re-oriented.
pub fn split_attention(matrix: &WeightMatrix, layout: &QkvLayout) -> Result<Vec<WeightMatrix>> {
    let source = matrix.source();
    let blocks = layout.blocks();
    let dim = match layout.axis {
        0 => source.nrows(),
        1 => source.ncols(),
        a => return Err(Error::InvalidArgument(format!("split axis must be 0 or 1, got {a}"))),
    };
    if blocks == 0 || dim % blocks != 0 {
        return Err(Error::IndivisibleSplit {
            name: matrix.name.clone(),
            dim,
            blocks,
        });
    }
    let width = dim / blocks;
    layout
        .suffixes
        .iter()
        .enumerate()
        .map(|(i, suffix)| {
            let block = if layout.axis == 0 {
                source.rows(i * width, width).into_owned()
            } else {
                source.columns(i * width, width).into_owned()
            };
            let shape = vec![block.nrows(), block.ncols()];
            WeightMatrix::from_source(format!("{}.{}", matrix.name, suffix), block)
                .map(|m| m.with_source_shape(shape))
        })
        .collect()
}

pub fn load_checkpoint(path: impl AsRef<Path>, filter: Option<&Regex>) -> Result<CheckpointSummary> {
    load_checkpoint_with(
        path,
        &LoadOptions {
            filter: filter.cloned(),
            ..LoadOptions::default()
        },
    )
}

pub fn load_checkpoint_with(path: impl AsRef<Path>, options: &LoadOptions) -> Result<CheckpointSummary> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = match options.format.or_else(|| Format::detect(path)) {
        Some(f) => f,
        None if looks_like_safetensors(&bytes) => Format::Safetensors,
        None => Format::Csv,
    };
    let raw = match format {
        Format::Safetensors => read_safetensors(path, &bytes)?,
        Format::Csv => {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("matrix")
                .to_string();
            vec![(name, parse_csv_matrix(path, &bytes)?)]
        }
    };

    let mut matrices = Vec::new();
    let mut skipped = Vec::new();
    for (name, tensor) in raw {
        if let Some(filter) = &options.filter {
            if !filter.is_match(&name) {
                skipped.push(SkippedTensor {
                    name,
                    reason: "filtered".into(),
                });
                continue;
            }
        }
        let tensor = match tensor {
            Ok(t) => t,
            Err(reason) => {
                skipped.push(SkippedTensor { name, reason });
                continue;
            }
        };
        if let Some(reason) = tensor.exclusion_reason() {
            skipped.push(SkippedTensor { name, reason });
            continue;
        }
        let source = DMatrix::from_row_slice(tensor.shape[0], tensor.shape[1], &tensor.values);
        let matrix = WeightMatrix::from_source(name.clone(), source)?;
        match options.split.iter().find(|r| r.pattern.is_match(&name)) {
            Some(rule) => matrices.extend(split_attention(&matrix, &rule.layout)?),
            None => matrices.push(matrix),
        }
    }
    if matrices.is_empty() {
        return Err(Error::NoAnalyzableMatrices(path.to_path_buf()));
    }
    matrices.sort_by(|a, b| a.name.cmp(&b.name));
    skipped.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(CheckpointSummary {
        path: path.to_path_buf(),
        matrices,
        skipped,
    })
}

/// A decoded tensor in row-major order.
#[derive(Debug, Clone)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl RawTensor {
    fn exclusion_reason(&self) -> Option<String> {
        match self.shape.len() {
            0 | 1 => Some("rank<2".into()),
            2 if self.shape.iter().any(|&d| d < 2) => Some("dimension<2".into()),
            2 if self.values.iter().any(|v| !v.is_finite()) => Some("non-finite entries".into()),
            2 => None,
            _ => Some("unsupported rank".into()),
        }
    }
}

fn looks_like_safetensors(bytes: &[u8]) -> bool {
    bytes.len() > 9 && {
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        n as usize <= bytes.len() - 8 && bytes[8] == b'{'
    }
}

type DecodedTensors = Vec<(String, std::result::Result<RawTensor, String>)>;

/// Decodes every tensor in a safetensors container. Tensors with an
/// unsupported dtype are returned as per-tensor errors rather than failing the file.
pub fn read_safetensors(path: &Path, bytes: &[u8]) -> Result<DecodedTensors> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Unparseable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out: DecodedTensors = st
        .tensors()
        .into_iter()
        .map(|(name, view)| {
            let shape = view.shape().to_vec();
            let data = view.data();
            let values: std::result::Result<Vec<f64>, String> = match view.dtype() {
                Dtype::F64 => Ok(data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect()),
                Dtype::F32 => Ok(data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()),
                Dtype::F16 => Ok(data
                    .chunks_exact(2)
                    .map(|c| half::f16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f64())
                    .collect()),
                other => Err(format!("unsupported dtype {other:?}")),
            };
            (name, values.map(|values| RawTensor { shape, values }))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn parse_csv_matrix(path: &Path, bytes: &[u8]) -> Result<std::result::Result<RawTensor, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(bytes);
    let mut values = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Unparseable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| Error::Unparseable {
            path: path.to_path_buf(),
            reason: format!("row {}: {e}", n_rows + 1),
        })?;
        match n_cols {
            None => n_cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Unparseable {
                    path: path.to_path_buf(),
                    reason: format!("row {} has {} fields, expected {c}", n_rows + 1, row.len()),
                })
            }
            _ => {}
        }
        values.extend(row);
        n_rows += 1;
    }
    let n_cols = n_cols.ok_or_else(|| Error::Unparseable {
        path: path.to_path_buf(),
        reason: "empty CSV".into(),
    })?;
    Ok(Ok(RawTensor {
        shape: vec![n_rows, n_cols],
        values,
    }))
}

/// Element precision used when writing safetensors files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreDtype {
    F16,
    F32,
    F64,
}

/// Writes row-major tensors into a safetensors container.
pub fn write_safetensors(
    path: impl AsRef<Path>,
    tensors: &[(String, Vec<usize>, Vec<f64>)],
    dtype: StoreDtype,
    metadata: Option<HashMap<String, String>>,
) -> Result<()> {
    let path = path.as_ref();
    let encoded: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(name, shape, values)| {
            let bytes = match dtype {
                StoreDtype::F64 => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
                StoreDtype::F32 => values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect(),
                StoreDtype::F16 => values
                    .iter()
                    .flat_map(|v| half::f16::from_f64(*v).to_bits().to_le_bytes())
                    .collect(),
            };
            (name.clone(), shape.clone(), bytes)
        })
        .collect();
    let st_dtype = match dtype {
        StoreDtype::F16 => Dtype::F16,
        StoreDtype::F32 => Dtype::F32,
        StoreDtype::F64 => Dtype::F64,
    };
    let views = encoded
        .iter()
        .map(|(name, shape, bytes)| {
            safetensors::tensor::TensorView::new(st_dtype, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::InvalidArgument(format!("tensor {name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, &metadata).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a matrix as comma-separated rows with round-trip precision.
pub fn write_csv_matrix(path: impl AsRef<Path>, matrix: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols()).map(|c| format!("{:?}", matrix[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Matches `matrices` to `init` by name; both sets must coincide.
pub fn match_by_name<'a>(
    matrices: &'a [WeightMatrix],
    init: &'a [WeightMatrix],
) -> Result<Vec<(&'a WeightMatrix, &'a WeightMatrix)>> {
    let lookup: HashMap<&str, &WeightMatrix> = init.iter().map(|m| (m.name(), m)).collect();
    if lookup.len() != matrices.len() {
        return Err(Error::NameMismatch(format!(
            "{} matrices vs {} initial matrices",
            matrices.len(),
            lookup.len()
        )));
    }
    matrices
        .iter()
        .map(|m| {
            let i = lookup
                .get(m.name())
                .ok_or_else(|| Error::NameMismatch(format!("no initial matrix named {}", m.name())))?;
            if i.data().shape() != m.data().shape() {
                return Err(Error::DimensionMismatch(format!(
                    "{}: {:?} vs initial {:?}",
                    m.name(),
                    m.data().shape(),
                    i.data().shape()
                )));
            }
            Ok((m, *i))
        })
        .collect()
}
