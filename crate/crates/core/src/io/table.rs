//! Numeric feature tables from CSV files with a header row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub features: Vec<Vector>,
    /// Empty when no target column was requested.
    pub targets: Vec<f64>,
}

/// Reads the named columns, in the order given, from every row.
pub fn load_csv_features(
    path: impl AsRef<Path>,
    feature_cols: &[&str],
    target_col: Option<&str>,
) -> Result<FeatureTable> {
    let file = std::fs::File::open(path)?;
    read_csv_features(file, feature_cols, target_col)
}

pub fn read_csv_features(
    reader: impl std::io::Read,
    feature_cols: &[&str],
    target_col: Option<&str>,
) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format(format!("CSV header: {e}")))?
        .clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(format!("CSV has no column `{name}`")))
    };
    let feature_idx = feature_cols.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;
    let target_idx = target_col.map(column).transpose()?;

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // Data rows are numbered from 1, the header being row 0.
        let row = r + 1;
        let record = record.map_err(|e| Error::format(format!("CSV row {row}: {e}")))?;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::format(format!(
                        "CSV row {row}, column `{}`: `{raw}` is not a finite number",
                        &header[c]
                    ))
                })
        };
        features.push(Vector::from(
            feature_idx.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?,
        ));
        if let Some(t) = target_idx {
            targets.push(cell(t)?);
        }
    }
    Ok(FeatureTable {
        feature_names: feature_cols.iter().map(|s| s.to_string()).collect(),
        features,
        targets,
    })
}

/// Per-feature affine map onto `[0, 1]`, kept so that points can be mapped
/// back to raw units. Constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(rows: &[Vector]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::contract("cannot fit ranges on no rows"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for r in rows {
            if r.dim() != min.len() {
                return Err(Error::shape("rows of different length"));
            }
            for (k, &v) in r.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(MinMax { min, max })
    }

    pub fn apply(&self, x: &[f64]) -> Vector {
        Vector::from(
            x.iter()
                .zip(self.min.iter().zip(&self.max))
                .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
                .collect::<Vec<_>>(),
        )
    }

    pub fn invert(&self, y: &[f64]) -> Vector {
        Vector::from(
            y.iter()
                .zip(self.min.iter().zip(&self.max))
                .map(|(&v, (&lo, &hi))| lo + v * (hi - lo))
                .collect::<Vec<_>>(),
        )
    }
}
