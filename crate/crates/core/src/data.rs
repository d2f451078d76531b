//! Tabular record batches and their numeric projections.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row} has {found} values but the header has {expected} columns")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` row {row} is not numeric: `{value}`")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
}

/// One cell. CSV cells are typed by what they parse as: integer, then real,
/// otherwise string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
}

impl Value {
    pub fn parse(cell: &str) -> Value {
        let t = cell.trim();
        if let Ok(i) = t.parse::<i64>() {
            Value::Int(i)
        } else if let Ok(x) = t.parse::<f64>() {
            Value::Real(x)
        } else {
            Value::Str(cell.to_string())
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(x) => Some(*x),
            Value::Str(_) => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, Value::Str(_))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(x) => write!(f, "{x}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordBatch {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl RecordBatch {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>) -> Result<Self, DataError> {
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(DataError::DuplicateColumn(c.clone()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(DataError::RaggedRow {
                    row: i,
                    expected: columns.len(),
                    found: row.len(),
                });
            }
        }
        Ok(RecordBatch { columns, rows })
    }

    pub fn from_numeric(m: &NumericMatrix) -> Self {
        RecordBatch {
            columns: m.features.clone(),
            rows: m
                .rows
                .iter()
                .map(|r| r.iter().map(|&x| Value::Real(x)).collect())
                .collect(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<impl Iterator<Item = &Value> + '_> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(move |r| &r[idx]))
    }

    /// Rows `start..end`, clamped to the batch.
    pub fn slice(&self, start: usize, end: usize) -> RecordBatch {
        let end = end.min(self.rows.len());
        let start = start.min(end);
        RecordBatch {
            columns: self.columns.clone(),
            rows: self.rows[start..end].to_vec(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Value>) -> Result<(), DataError> {
        if row.len() != self.columns.len() {
            return Err(DataError::RaggedRow {
                row: self.rows.len(),
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn drop_column(&mut self, name: &str) -> Result<(), DataError> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))?;
        self.columns.remove(idx);
        for row in &mut self.rows {
            row.remove(idx);
        }
        Ok(())
    }

    pub fn rows_mut(&mut self) -> &mut [Vec<Value>] {
        &mut self.rows
    }

    /// Numeric matrix over `features`, in that order.
    pub fn project(&self, features: &[String]) -> Result<NumericMatrix, DataError> {
        let idx: Vec<usize> = features
            .iter()
            .map(|f| {
                self.column_index(f)
                    .ok_or_else(|| DataError::UnknownColumn(f.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut rows = Vec::with_capacity(self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            let mut out = Vec::with_capacity(idx.len());
            for (&i, name) in idx.iter().zip(features) {
                match row[i].as_f64() {
                    Some(x) => out.push(x),
                    None => {
                        return Err(DataError::NonNumeric {
                            column: name.clone(),
                            row: r,
                            value: row[i].to_string(),
                        })
                    }
                }
            }
            rows.push(out);
        }
        Ok(NumericMatrix {
            features: features.to_vec(),
            rows,
        })
    }

    /// Numeric matrix over every column, in batch order.
    pub fn to_numeric(&self) -> Result<NumericMatrix, DataError> {
        self.project(&self.columns)
    }

    pub fn read_csv(reader: impl Read) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let columns: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            rows.push(record.iter().map(Value::parse).collect());
        }
        RecordBatch::new(columns, rows)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RecordBatch::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Dense row-major numeric data with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericMatrix {
    pub features: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericMatrix {
    pub fn new(features: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == features.len()));
        NumericMatrix { features, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    pub fn select_rows(&self, idx: &[usize]) -> NumericMatrix {
        NumericMatrix {
            features: self.features.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Per-column sample mean and unbiased variance (population variance when
    /// there is a single row).
    pub fn column_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.rows.len() as f64;
        let d = self.features.len();
        let mut mean = vec![0.0; d];
        for row in &self.rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in &self.rows {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let denom = if self.rows.len() > 1 { n - 1.0 } else { 1.0 };
        var.iter_mut().for_each(|v| *v /= denom);
        (mean, var)
    }
}

/// Default feature names `f_00`, `f_01`, ...
pub fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("f_{i:02}")).collect()
}
