use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{FeatureMask, LabeledDataset};
use crate::error::{Error, Result};

/// Which CSV columns carry the family label and the timestamp. Every other
/// column is a numeric feature, kept in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub family_column: usize,
    pub timestamp_column: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            family_column: 0,
            timestamp_column: 1,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    load_dataset_with_schema(path, &CsvSchema::default())
}

pub fn load_dataset_with_schema(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyDataset(format!("{} has no header", path.display())));
    }
    let width = header.len();
    if schema.family_column >= width
        || schema.timestamp_column >= width
        || schema.family_column == schema.timestamp_column
    {
        return Err(parse_err(1, format!("schema {schema:?} does not fit {width} columns")));
    }
    let feature_columns: Vec<usize> = (0..width)
        .filter(|&j| j != schema.family_column && j != schema.timestamp_column)
        .collect();
    if feature_columns.is_empty() {
        return Err(parse_err(1, "no feature columns".into()));
    }
    let feature_names = feature_columns.iter().map(|&j| header[j].to_string()).collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut timestamps = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} columns, found {}", record.len()),
            ));
        }
        let family = record[schema.family_column].trim();
        if family.is_empty() {
            return Err(parse_err(line, "missing family label".into()));
        }
        let ts = record[schema.timestamp_column].trim();
        let ts: i64 = ts
            .parse()
            .map_err(|_| parse_err(line, format!("timestamp {ts:?} is not an integer")))?;
        for &j in &feature_columns {
            let cell = record[j].trim();
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(line, format!("feature {:?} value {cell:?} is not numeric", &header[j]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("feature {:?} value {cell:?} is not finite", &header[j]),
                ));
            }
            values.push(v);
        }
        labels.push(family.to_string());
        timestamps.push(ts);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    let features = Array2::from_shape_vec((labels.len(), feature_columns.len()), values)
        .expect("row widths checked");
    LabeledDataset::new(features, labels, timestamps, feature_names)
}

/// Writes the dataset in the loader's default layout. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_dataset(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["family".to_string(), "timestamp".to_string()];
    header.extend(ds.feature_names().iter().cloned());
    writer.write_record(&header)?;
    let mut row = Vec::with_capacity(ds.width() + 2);
    for i in 0..ds.len() {
        row.clear();
        row.push(ds.labels()[i].clone());
        row.push(ds.timestamps()[i].to_string());
        row.extend(ds.features().row(i).iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Sidecar format: a `min_variance=<value>` line, then one kept column
/// index per line.
pub fn write_mask(path: impl AsRef<Path>, mask: &FeatureMask) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "min_variance={}", mask.min_variance())?;
    for j in mask.kept_indices() {
        writeln!(out, "{j}")?;
    }
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<FeatureMask> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty mask file".into()))?;
    let min_variance: f64 = first
        .trim()
        .strip_prefix("min_variance=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(1, format!("expected min_variance=<value>, got {first:?}")))?;
    let kept = lines
        .map(|(n, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(n + 1, format!("bad column index {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMask::new(kept, min_variance)
}
