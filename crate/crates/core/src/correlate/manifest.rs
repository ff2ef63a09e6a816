//! Model manifests: one record per checkpoint with hyperparameters, quality
//! scores and precomputed metric values.
//!
//! CSV and JSON-lines share a flat column layout: `id`, `checkpoint_path`,
//! `quality`, optional `train_quality`, metric columns prefixed `metric.`,
//! and every other column is a hyperparameter axis.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::metrics::MetricValue;

pub const METRIC_PREFIX: &str = "metric.";
const RESERVED: [&str; 4] = ["id", "checkpoint_path", "quality", "train_quality"];

/// A hyperparameter coordinate; numeric when it parses as a number.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Num(f64),
    Text(String),
}

impl AxisValue {
    pub fn parse(s: &str) -> AxisValue {
        match s.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => AxisValue::Num(v),
            _ => AxisValue::Text(s.trim().to_string()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AxisValue::Num(v) => Some(*v),
            AxisValue::Text(_) => None,
        }
    }
}

impl PartialEq for AxisValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for AxisValue {}

impl PartialOrd for AxisValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AxisValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (AxisValue::Num(a), AxisValue::Num(b)) => a.total_cmp(b),
            (AxisValue::Num(_), AxisValue::Text(_)) => Ordering::Less,
            (AxisValue::Text(_), AxisValue::Num(_)) => Ordering::Greater,
            (AxisValue::Text(a), AxisValue::Text(b)) => a.cmp(b),
        }
    }
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Num(v) => write!(f, "{v}"),
            AxisValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for AxisValue {
    fn from(v: f64) -> Self {
        AxisValue::Num(v)
    }
}

impl From<&str> for AxisValue {
    fn from(s: &str) -> Self {
        AxisValue::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub checkpoint_path: String,
    pub hyperparams: BTreeMap<String, AxisValue>,
    /// Higher is better.
    pub quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_quality: Option<f64>,
    #[serde(default)]
    pub metrics: BTreeMap<String, MetricValue>,
}

impl ModelRecord {
    pub fn new(id: impl Into<String>, quality: f64) -> Self {
        let id = id.into();
        ModelRecord {
            checkpoint_path: format!("{id}.safetensors"),
            id,
            hyperparams: BTreeMap::new(),
            quality,
            train_quality: None,
            metrics: BTreeMap::new(),
        }
    }

    pub fn with_axis(mut self, name: &str, value: impl Into<AxisValue>) -> Self {
        self.hyperparams.insert(name.to_string(), value.into());
        self
    }

    pub fn with_metric(mut self, name: &str, value: impl Into<MetricValue>) -> Self {
        self.metrics.insert(name.to_string(), value.into());
        self
    }

    /// `train_quality - quality`.
    pub fn generalization_gap(&self) -> Option<f64> {
        self.train_quality.map(|t| t - self.quality)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).and_then(MetricValue::value)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelManifest {
    pub records: Vec<ModelRecord>,
    pub grid_axes: Vec<String>,
}

impl ModelManifest {
    /// Validates and derives the axis list from the first record.
    pub fn new(records: Vec<ModelRecord>) -> Result<Self> {
        let grid_axes: Vec<String> = records.first().map(|r| r.hyperparams.keys().cloned().collect()).unwrap_or_default();
        let m = ModelManifest { records, grid_axes };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let axes: BTreeSet<&String> = self.grid_axes.iter().collect();
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", r.id)));
            }
            if !r.quality.is_finite() {
                return Err(Error::Manifest(format!("record {}: quality is not finite", r.id)));
            }
            if r.hyperparams.keys().collect::<BTreeSet<_>>() != axes {
                return Err(Error::Manifest(format!(
                    "record {}: hyperparameters {:?} differ from axes {:?}",
                    r.id,
                    r.hyperparams.keys().collect::<Vec<_>>(),
                    self.grid_axes
                )));
            }
        }
        Ok(())
    }

    pub fn require_axis(&self, axis: &str) -> Result<()> {
        if self.grid_axes.iter().any(|a| a == axis) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("unknown axis {axis:?}; manifest axes are {:?}", self.grid_axes)))
        }
    }

    /// Metric names present in any record.
    pub fn metric_names(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.iter().flat_map(|r| r.metrics.keys()).collect();
        set.into_iter().cloned().collect()
    }

    /// Distinct values of `axis`, sorted.
    pub fn axis_values(&self, axis: &str) -> Vec<AxisValue> {
        let set: BTreeSet<&AxisValue> = self.records.iter().filter_map(|r| r.hyperparams.get(axis)).collect();
        set.into_iter().cloned().collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        match ext.as_str() {
            "csv" => Self::read_csv(path),
            "jsonl" | "ndjson" | "json" => Self::read_jsonl(path),
            _ => Err(Error::InvalidArgument(format!("{}: manifest must be .csv or .jsonl", path.display()))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.write_csv(path),
            _ => self.write_jsonl(path),
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let cells: Vec<(&str, Cell)> = headers.iter().map(String::as_str).zip(row.iter().map(Cell::Raw)).collect();
            records.push(record_from_cells(cells).map_err(|e| Error::Manifest(format!("{} row {}: {e}", path.display(), line + 2)))?);
        }
        Self::new(records)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let obj: Map<String, Value> = serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("{} line {}: {e}", path.display(), i + 1)))?;
            let cells: Vec<(&str, Cell)> = obj.iter().map(|(k, v)| (k.as_str(), Cell::Json(v))).collect();
            records.push(record_from_cells(cells).map_err(|e| Error::Manifest(format!("{} line {}: {e}", path.display(), i + 1)))?);
        }
        Self::new(records)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let metrics = self.metric_names();
        let mut header: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        header.extend(self.grid_axes.iter().cloned());
        header.extend(metrics.iter().map(|m| format!("{METRIC_PREFIX}{m}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.id.clone(),
                r.checkpoint_path.clone(),
                format_f64(r.quality),
                r.train_quality.map(format_f64).unwrap_or_default(),
            ];
            row.extend(self.grid_axes.iter().map(|a| r.hyperparams[a].to_string()));
            row.extend(metrics.iter().map(|m| match r.metrics.get(m) {
                Some(MetricValue::Defined(v)) => format_f64(*v),
                Some(_) => "undefined".to_string(),
                None => String::new(),
            }));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        for r in &self.records {
            let mut obj = Map::new();
            obj.insert("id".into(), r.id.clone().into());
            obj.insert("checkpoint_path".into(), r.checkpoint_path.clone().into());
            obj.insert("quality".into(), r.quality.into());
            if let Some(t) = r.train_quality {
                obj.insert("train_quality".into(), t.into());
            }
            for a in &self.grid_axes {
                obj.insert(a.clone(), serde_json::to_value(&r.hyperparams[a])?);
            }
            for (m, v) in &r.metrics {
                obj.insert(format!("{METRIC_PREFIX}{m}"), serde_json::to_value(v)?);
            }
            serde_json::to_writer(&mut out, &obj)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Shortest representation that parses back to the same value.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v}")
}

enum Cell<'a> {
    Raw(&'a str),
    Json(&'a Value),
}

impl Cell<'_> {
    fn text(&self) -> Option<String> {
        match self {
            Cell::Raw(s) if s.is_empty() => None,
            Cell::Raw(s) => Some(s.to_string()),
            Cell::Json(Value::Null) => None,
            Cell::Json(Value::String(s)) => Some(s.clone()),
            Cell::Json(v) => Some(v.to_string()),
        }
    }

    fn number(&self, column: &str) -> std::result::Result<Option<f64>, String> {
        match self {
            Cell::Json(Value::Number(n)) => Ok(n.as_f64()),
            other => match other.text() {
                None => Ok(None),
                Some(s) => s.parse::<f64>().map(Some).map_err(|_| format!("column {column}: {s:?} is not a number")),
            },
        }
    }

    fn axis(&self, column: &str) -> std::result::Result<AxisValue, String> {
        match self {
            Cell::Json(Value::Number(n)) => Ok(AxisValue::Num(n.as_f64().unwrap_or(f64::NAN))),
            other => other.text().map(|s| AxisValue::parse(&s)).ok_or_else(|| format!("axis {column} is empty")),
        }
    }

    fn metric(&self) -> std::result::Result<Option<MetricValue>, String> {
        match self {
            Cell::Json(v @ Value::Object(_)) => serde_json::from_value((*v).clone()).map(Some).map_err(|e| e.to_string()),
            Cell::Json(Value::Number(n)) => Ok(n.as_f64().map(MetricValue::from)),
            other => match other.text() {
                None => Ok(None),
                Some(s) if s.eq_ignore_ascii_case("undefined") || s.eq_ignore_ascii_case("nan") => {
                    Ok(Some(MetricValue::undefined("undefined in manifest")))
                }
                Some(s) => s.parse::<f64>().map(|v| Some(MetricValue::from(v))).map_err(|_| format!("metric value {s:?} is not a number")),
            },
        }
    }
}

fn record_from_cells(cells: Vec<(&str, Cell)>) -> std::result::Result<ModelRecord, String> {
    let mut id = None;
    let mut path = None;
    let mut quality = None;
    let mut train = None;
    let mut hyper = BTreeMap::new();
    let mut metrics = BTreeMap::new();
    for (col, cell) in cells {
        match col {
            "id" => id = cell.text(),
            "checkpoint_path" => path = cell.text(),
            "quality" => quality = cell.number(col)?,
            "train_quality" => train = cell.number(col)?,
            c if c.starts_with(METRIC_PREFIX) => {
                if let Some(v) = cell.metric()? {
                    metrics.insert(c[METRIC_PREFIX.len()..].to_string(), v);
                }
            }
            c => {
                hyper.insert(c.to_string(), cell.axis(c)?);
            }
        }
    }
    Ok(ModelRecord {
        id: id.ok_or("missing id")?,
        checkpoint_path: path.ok_or("missing checkpoint_path")?,
        quality: quality.ok_or("missing quality")?,
        train_quality: train,
        hyperparams: hyper,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelManifest {
        ModelManifest::new(vec![
            ModelRecord::new("a", 0.5).with_axis("lr", 0.1).with_axis("opt", "sgd").with_metric("PL_alpha", 3.0),
            ModelRecord {
                train_quality: Some(0.9),
                ..ModelRecord::new("b", 0.25)
                    .with_axis("lr", 0.01)
                    .with_axis("opt", "adam")
                    .with_metric("PL_alpha", MetricValue::undefined("too few eigenvalues"))
            },
        ])
        .unwrap()
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        let csv = dir.path().join("m.csv");
        m.save(&csv).unwrap();
        let back = ModelManifest::load(&csv).unwrap();
        assert_eq!(back.grid_axes, m.grid_axes);
        assert_eq!(back.records[0], m.records[0]);
        assert!(!back.records[1].metrics["PL_alpha"].is_defined());

        let jl = dir.path().join("m.jsonl");
        m.save(&jl).unwrap();
        assert_eq!(ModelManifest::load(&jl).unwrap(), m);
    }

    #[test]
    fn inconsistent_axes_rejected() {
        let r = ModelManifest::new(vec![ModelRecord::new("a", 1.0).with_axis("lr", 0.1), ModelRecord::new("b", 1.0)]);
        assert!(matches!(r, Err(Error::Manifest(_))));
        let r = ModelManifest::new(vec![ModelRecord::new("a", f64::NAN)]);
        assert!(r.is_err());
    }

    #[test]
    fn missing_required_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "id,quality\na,1\n").unwrap();
        let err = ModelManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("checkpoint_path"), "{err}");
    }

    #[test]
    fn gap_is_train_minus_test() {
        assert!((sample().records[1].generalization_gap().unwrap() - 0.65).abs() < 1e-15);
    }
}
