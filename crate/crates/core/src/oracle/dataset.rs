use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Row-major matrix of datapoints. A dataset may be empty but always knows
/// its row width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    cols: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn empty(cols: usize) -> Self {
        Self { cols, values: Vec::new() }
    }

    pub fn from_flat(cols: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 && !values.is_empty() {
            return Err(Error::contract("zero-width dataset with values"));
        }
        if cols > 0 && !values.len().is_multiple_of(cols) {
            return Err(Error::contract(format!(
                "{} values do not fill rows of width {cols}",
                values.len()
            )));
        }
        Ok(Self { cols, values })
    }

    /// Builds from rows; `width_hint` fixes the width of an empty dataset.
    pub fn from_rows(rows: &[Vec<f64>], width_hint: Option<usize>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).or(width_hint).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::contract(format!(
                    "row {i} has width {} but expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(Self { cols, values })
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.cols).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero width
        self.values.chunks_exact(self.cols.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    /// Keeps the listed rows, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset { cols: self.cols, values }
    }

    /// Reads a comma-separated matrix. Every row must have the same width
    /// and every entry must be a finite float.
    pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Self> {
        let path = path.as_ref();
        let pool_err = |message: String| Error::InputPool {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| pool_err(e.to_string()))?;
        let mut cols = None;
        let mut values = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| pool_err(e.to_string()))?;
            let width = record.len();
            match cols {
                None => cols = Some(width),
                Some(c) if c != width => {
                    return Err(pool_err(format!("ragged row {line}: width {width}, expected {c}")));
                }
                _ => {}
            }
            for field in record.iter() {
                let x: f64 = field
                    .parse()
                    .map_err(|_| pool_err(format!("row {line}: cannot parse {field:?} as a number")))?;
                if !x.is_finite() {
                    return Err(pool_err(format!("row {line}: non-finite value {field}")));
                }
                values.push(x);
            }
        }
        let cols = cols.ok_or_else(|| pool_err("pool has no rows".into()))?;
        Ok(Self { cols, values })
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    cols: usize,
    rows: Vec<Vec<f64>>,
}

impl Serialize for Dataset {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DatasetRepr {
            cols: self.cols,
            rows: self.to_rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dataset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = DatasetRepr::deserialize(d)?;
        Dataset::from_rows(&repr.rows, Some(repr.cols)).map_err(serde::de::Error::custom)
    }
}
