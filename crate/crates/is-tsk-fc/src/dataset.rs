//! Tabular dataset loading, validation and standardization.
//!
//! Datasets are dense `N x d` feature matrices with an optional ground-truth
//! label vector. Labels are only ever read by the evaluation layer; the
//! clustering engine receives the feature matrix alone.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the label column of a CSV file is identified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Per-column feature scaling applied before clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Standardization {
    /// Zero mean, unit sample standard deviation per column.
    #[default]
    Zscore,
    /// Rescale each column to [0, 1].
    Minmax,
    /// Leave features untouched.
    None,
}

impl std::str::FromStr for Standardization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "zscore" => Ok(Standardization::Zscore),
            "minmax" => Ok(Standardization::Minmax),
            "none" => Ok(Standardization::None),
            other => Err(format!(
                "unknown standardization {other:?} (expected zscore, minmax or none)"
            )),
        }
    }
}

impl std::fmt::Display for Standardization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Standardization::Zscore => "zscore",
            Standardization::Minmax => "minmax",
            Standardization::None => "none",
        })
    }
}

/// An immutable tabular dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    features: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    label_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from parts, enforcing the shape and finiteness invariants.
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let name = name.into();
        if features.nrows() < 2 {
            return Err(Error::Dataset(format!(
                "{name}: need at least 2 samples, got {}",
                features.nrows()
            )));
        }
        if features.ncols() < 1 {
            return Err(Error::Dataset(format!("{name}: need at least 1 feature")));
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            let (r, c) = (bad % features.nrows(), bad / features.nrows());
            return Err(Error::Dataset(format!(
                "{name}: non-finite feature value at row {r}, column {c}"
            )));
        }
        let label_names = match &labels {
            Some(l) => {
                if l.len() != features.nrows() {
                    return Err(Error::Dataset(format!(
                        "{name}: {} labels for {} samples",
                        l.len(),
                        features.nrows()
                    )));
                }
                let k = l.iter().max().map_or(0, |m| m + 1);
                let mut seen = vec![false; k];
                for &id in l {
                    seen[id] = true;
                }
                if let Some(missing) = seen.iter().position(|s| !s) {
                    return Err(Error::Dataset(format!(
                        "{name}: class id {missing} never occurs"
                    )));
                }
                (0..k).map(|i| i.to_string()).collect()
            }
            None => Vec::new(),
        };
        Ok(Dataset {
            name,
            features,
            labels,
            label_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Original label tokens, indexed by encoded class id.
    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Number of distinct ground-truth classes, if labels are present.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Returns a copy with `mode` applied to every feature column.
    pub fn standardize(&self, mode: Standardization) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: standardize_features(&self.features, mode),
            labels: self.labels.clone(),
            label_names: self.label_names.clone(),
        }
    }
}

/// Loads a comma-separated file with an optional auto-detected header row.
///
/// The first row is treated as a header when any of its non-label cells fails
/// to parse as a number, or when the label column is referenced by name.
/// Label tokens are encoded as dense 0-based ids in first-appearance order.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&LabelColumn>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.into(),
            source: std::io::Error::other(e.to_string()),
        })?;

    let mut records: Vec<(u64, csv::StringRecord)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::Csv {
            path: path.into(),
            line: 0,
            message: "empty file".into(),
        });
    }

    let width = records[0].1.len();
    let is_numeric = |cell: &str| cell.parse::<f64>().is_ok();

    // Resolve the label column and decide whether row 1 is a header.
    let (label_idx, has_header) = match label_column {
        Some(LabelColumn::Name(n)) => {
            let idx = records[0]
                .1
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Csv {
                    path: path.into(),
                    line: records[0].0,
                    message: format!("label column {n:?} not found in header row"),
                })?;
            (Some(idx), true)
        }
        Some(LabelColumn::Index(i)) => {
            if *i >= width {
                return Err(Error::Csv {
                    path: path.into(),
                    line: records[0].0,
                    message: format!("label column index {i} out of range for {width} columns"),
                });
            }
            let header = records[0]
                .1
                .iter()
                .enumerate()
                .any(|(j, c)| j != *i && !is_numeric(c));
            (Some(*i), header)
        }
        None => {
            let header = records[0].1.iter().any(|c| !is_numeric(c));
            (None, header)
        }
    };

    let data = &records[if has_header { 1 } else { 0 }..];
    if data.is_empty() {
        return Err(Error::Csv {
            path: path.into(),
            line: records[0].0,
            message: "no data rows after header".into(),
        });
    }

    let n = data.len();
    let d = width - usize::from(label_idx.is_some());
    if d == 0 {
        return Err(Error::Dataset(format!("{name}: no feature columns")));
    }

    let mut features = DMatrix::<f64>::zeros(n, d);
    let mut labels: Vec<usize> = Vec::new();
    let mut token_ids: HashMap<String, usize> = HashMap::new();

    for (row, (line, rec)) in data.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Csv {
                path: path.into(),
                line: *line,
                message: format!("ragged row: expected {width} fields, got {}", rec.len()),
            });
        }
        let mut col = 0usize;
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                let next = token_ids.len();
                let id = *token_ids.entry(cell.to_string()).or_insert(next);
                labels.push(id);
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::Cell {
                path: path.into(),
                line: *line,
                column: j + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Cell {
                    path: path.into(),
                    line: *line,
                    column: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            features[(row, col)] = value;
            col += 1;
        }
    }

    let mut label_names = vec![String::new(); token_ids.len()];
    for (tok, id) in &token_ids {
        label_names[*id] = tok.clone();
    }

    let mut ds = Dataset::new(name, features, label_idx.map(|_| labels))?;
    ds.label_names = label_names;
    Ok(ds)
}

/// Column-wise feature scaling. Constant columns map to all-zero instead of
/// blowing up on a vanishing denominator.
pub fn standardize_features(features: &DMatrix<f64>, mode: Standardization) -> DMatrix<f64> {
    let mut out = features.clone();
    let n = features.nrows();
    match mode {
        Standardization::None => {}
        Standardization::Zscore => {
            for j in 0..features.ncols() {
                let col = features.column(j);
                let mean = col.sum() / n as f64;
                let var = if n > 1 {
                    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
                } else {
                    0.0
                };
                let sd = var.sqrt();
                if sd <= 1e-12 * (1.0 + mean.abs()) {
                    out.column_mut(j).fill(0.0);
                } else {
                    for i in 0..n {
                        out[(i, j)] = (features[(i, j)] - mean) / sd;
                    }
                }
            }
        }
        Standardization::Minmax => {
            for j in 0..features.ncols() {
                let col = features.column(j);
                let min = col.min();
                let max = col.max();
                let range = max - min;
                if range <= 1e-12 * (1.0 + max.abs()) {
                    out.column_mut(j).fill(0.0);
                } else {
                    for i in 0..n {
                        out[(i, j)] = (features[(i, j)] - min) / range;
                    }
                }
            }
        }
    }
    out
}
