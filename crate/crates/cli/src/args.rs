//! Flag values that clap cannot parse on its own: vectors, output metrics,
//! grid boxes and start-point sources.

use std::fmt;
use std::path::PathBuf;

use anyhow::{Context, Result};
use simec_core::io::{load_csv_features, load_idx_images, MinMax};
use simec_core::metric::OutputMetric;
use simec_core::Vector;

/// A malformed flag value. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn parse_vector(s: &str) -> Result<Vector> {
    let values = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("`{}` is not a number in vector `{s}`", t.trim())))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(usage(format!("vector `{s}` has non-finite entries")));
    }
    Ok(Vector::from(values))
}

/// `identity` or `diag:w1,w2,...`.
pub fn parse_metric(s: &str) -> Result<OutputMetric> {
    if s == "identity" {
        return Ok(OutputMetric::Identity);
    }
    let Some(weights) = s.strip_prefix("diag:") else {
        return Err(usage(format!("metric `{s}` is neither `identity` nor `diag:<w,...>`")));
    };
    OutputMetric::diagonal(parse_vector(weights)?).map_err(|e| usage(e.to_string()))
}

/// `lo:hi,lo:hi,...`, one interval per input coordinate.
pub fn parse_box(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|iv| {
            let bad = || usage(format!("interval `{iv}` in box `{s}` is not `lo:hi`"));
            let (lo, hi) = iv.split_once(':').ok_or_else(bad)?;
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            Ok((lo, hi))
        })
        .collect()
}

/// How CSV rows become input vectors.
#[derive(Debug, Clone, Default)]
pub struct TableOptions {
    /// Column names in input order; `None` takes every header column.
    pub columns: Option<Vec<String>>,
    /// Rescale each column to `[0, 1]` by the table's own range.
    pub minmax: bool,
}

/// Where an input point came from; datasets are hashed into the manifest.
#[derive(Debug, Clone)]
pub struct ResolvedPoint {
    pub point: Vector,
    pub dataset: Option<PathBuf>,
}

/// Resolves `x0,x1,...`, `csv:<path>:<row>` or `idx:<path>:<index>`.
/// Rows and indices count from zero; the CSV header is not a row.
pub fn resolve_point(spec: &str, table: &TableOptions) -> Result<ResolvedPoint> {
    if let Some(rest) = spec.strip_prefix("csv:") {
        let (path, row) = split_index(rest, spec)?;
        let names = match &table.columns {
            Some(c) => c.clone(),
            None => header_names(&path)?,
        };
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let t = load_csv_features(&path, &refs, None)
            .with_context(|| format!("reading {}", path.display()))?;
        let Some(x) = t.features.get(row) else {
            return Err(usage(format!("row {row} out of range: {} has {} rows", path.display(), t.features.len())));
        };
        let point = if table.minmax { MinMax::fit(&t.features)?.apply(x) } else { x.clone() };
        return Ok(ResolvedPoint { point, dataset: Some(path) });
    }
    if let Some(rest) = spec.strip_prefix("idx:") {
        let (path, index) = split_index(rest, spec)?;
        let images = load_idx_images(&path).with_context(|| format!("reading {}", path.display()))?;
        let Some(x) = images.get(index) else {
            return Err(usage(format!("index {index} out of range: {} has {} images", path.display(), images.len())));
        };
        return Ok(ResolvedPoint { point: x.clone(), dataset: Some(path) });
    }
    Ok(ResolvedPoint {
        point: parse_vector(spec)?,
        dataset: None,
    })
}

fn split_index(rest: &str, spec: &str) -> Result<(PathBuf, usize)> {
    let bad = || usage(format!("start `{spec}` must end in `:<index>`"));
    let (path, idx) = rest.rsplit_once(':').ok_or_else(bad)?;
    Ok((PathBuf::from(path), idx.parse().map_err(|_| bad())?))
}

fn header_names(path: &PathBuf) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or_default();
    Ok(first.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_accept_signs_and_exponents() {
        assert_eq!(parse_vector("-0.98, -2.45,1e-3").unwrap().as_slice(), &[-0.98, -2.45, 1e-3]);
        assert!(parse_vector("1,,2").is_err());
        assert!(parse_vector("1,nan").is_err());
    }

    #[test]
    fn metrics_and_boxes() {
        assert_eq!(parse_metric("identity").unwrap(), OutputMetric::Identity);
        assert!(matches!(parse_metric("diag:1,2").unwrap(), OutputMetric::Diagonal(_)));
        assert!(parse_metric("diag:1,-2").is_err());
        assert!(parse_metric("euclid").is_err());
        assert_eq!(parse_box("-3:3,0:1").unwrap(), vec![(-3.0, 3.0), (0.0, 1.0)]);
        assert!(parse_box("-3,3").is_err());
    }

    #[test]
    fn index_is_split_from_the_right() {
        let (p, i) = split_index("C:/data/x.csv:12", "csv:C:/data/x.csv:12").unwrap();
        assert_eq!((p, i), (PathBuf::from("C:/data/x.csv"), 12));
    }
}
