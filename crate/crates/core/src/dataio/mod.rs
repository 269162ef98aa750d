//! Labeled feature-vector datasets: loading, variance filtering, temporal
//! splitting and leave-one-family-out drift scenarios.

mod io;
mod synthetic;

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub use io::{
    load_dataset, load_dataset_with_schema, read_mask, write_dataset, write_mask, CsvSchema,
};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

/// Feature matrix with one family label and one timestamp per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<String>,
    timestamps: Vec<i64>,
    feature_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<String>,
        timestamps: Vec<i64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::shape("dataset labels", n, labels.len()));
        }
        if timestamps.len() != n {
            return Err(Error::shape("dataset timestamps", n, timestamps.len()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::shape(
                "dataset feature names",
                features.ncols(),
                feature_names.len(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        if labels.iter().any(|l| l.is_empty()) {
            return Err(Error::invalid("family identifiers must be non-empty"));
        }
        Ok(LabeledDataset {
            features,
            labels,
            timestamps,
            feature_names,
        })
    }

    /// Builds a dataset with generated feature names `f0, f1, ...`.
    pub fn from_parts(
        features: Array2<f64>,
        labels: Vec<String>,
        timestamps: Vec<i64>,
    ) -> Result<Self> {
        let names = (0..features.ncols()).map(|j| format!("f{j}")).collect();
        Self::new(features, labels, timestamps, names)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Distinct family names in ascending order.
    pub fn families(&self) -> Vec<String> {
        self.family_counts().into_keys().collect()
    }

    pub fn family_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for label in &self.labels {
            *counts.entry(label.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Row indices grouped by family, families in ascending order.
    pub fn family_indices(&self) -> BTreeMap<String, Vec<usize>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, label) in self.labels.iter().enumerate() {
            groups.entry(label.clone()).or_default().push(i);
        }
        groups
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
            timestamps: rows.iter().map(|&i| self.timestamps[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.width() != other.width() {
            return Err(Error::shape("dataset concat", self.width(), other.width()));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .expect("widths checked");
        Ok(LabeledDataset {
            features,
            labels: self.labels.iter().chain(&other.labels).cloned().collect(),
            timestamps: self.timestamps.iter().chain(&other.timestamps).copied().collect(),
            feature_names: self.feature_names.clone(),
        })
    }
}

/// Columns retained by the low-variance filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMask {
    kept_indices: Vec<usize>,
    min_variance: f64,
}

impl FeatureMask {
    pub fn new(kept_indices: Vec<usize>, min_variance: f64) -> Result<Self> {
        if kept_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("mask indices must be strictly increasing"));
        }
        if !(min_variance >= 0.0) || !min_variance.is_finite() {
            return Err(Error::invalid(format!(
                "min_variance must be finite and >= 0, got {min_variance}"
            )));
        }
        Ok(FeatureMask {
            kept_indices,
            min_variance,
        })
    }

    /// Mask keeping every one of `width` columns.
    pub fn identity(width: usize) -> Self {
        FeatureMask {
            kept_indices: (0..width).collect(),
            min_variance: 0.0,
        }
    }

    pub fn kept_indices(&self) -> &[usize] {
        &self.kept_indices
    }

    pub fn min_variance(&self) -> f64 {
        self.min_variance
    }

    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }
}

/// Population variance (divide by n) of each column.
pub fn column_variances(features: &Array2<f64>) -> Vec<f64> {
    let n = features.nrows() as f64;
    features
        .axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / n;
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        })
        .collect()
}

/// Keeps exactly the columns whose population variance is `>= min_variance`.
pub fn fit_variance_mask(ds: &LabeledDataset, min_variance: f64) -> Result<FeatureMask> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot fit a variance mask".into()));
    }
    if !(min_variance >= 0.0) || !min_variance.is_finite() {
        return Err(Error::invalid(format!(
            "min_variance must be finite and >= 0, got {min_variance}"
        )));
    }
    let kept: Vec<usize> = column_variances(ds.features())
        .into_iter()
        .enumerate()
        .filter(|(_, var)| *var >= min_variance)
        .map(|(j, _)| j)
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateMask(min_variance));
    }
    FeatureMask::new(kept, min_variance)
}

pub fn apply_mask(ds: &LabeledDataset, mask: &FeatureMask) -> Result<LabeledDataset> {
    if let Some(&bad) = mask.kept_indices.iter().find(|&&j| j >= ds.width()) {
        return Err(Error::invalid(format!(
            "mask index {bad} out of range for width {}",
            ds.width()
        )));
    }
    Ok(LabeledDataset {
        features: ds.features.select(Axis(1), &mask.kept_indices),
        labels: ds.labels.clone(),
        timestamps: ds.timestamps.clone(),
        feature_names: mask
            .kept_indices
            .iter()
            .map(|&j| ds.feature_names[j].clone())
            .collect(),
    })
}

/// How the temporal train/test boundary is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// One boundary over the whole dataset: the oldest `ceil(f * n)` rows train.
    #[default]
    Global,
    /// Each family is split on its own timeline: the newest
    /// `ceil((1 - f) * n_family)` rows of every family go to test.
    PerFamily,
}

fn check_fraction(train_fraction: f64) -> Result<()> {
    if train_fraction > 0.0 && train_fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )))
    }
}

/// `ceil(x)` that ignores representation error just above an integer,
/// so that `0.8 * 5` counts as 4 rather than 5.
fn ceil_count(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Row order sorted ascending by timestamp, ties kept in file order.
fn chronological(ds: &LabeledDataset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| ds.timestamps[i]);
    order
}

/// Oldest `ceil(train_fraction * n)` samples train, the rest test. Both
/// halves come back in chronological order.
pub fn temporal_split(
    ds: &LabeledDataset,
    train_fraction: f64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    check_fraction(train_fraction)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot split".into()));
    }
    let order = chronological(ds);
    let n_train = ceil_count(train_fraction * ds.len() as f64).min(ds.len());
    Ok((
        ds.select_rows(&order[..n_train]),
        ds.select_rows(&order[n_train..]),
    ))
}

/// Temporal split applied to each family separately, so every family keeps
/// roughly the same train/test ratio.
pub fn temporal_split_per_family(
    ds: &LabeledDataset,
    train_fraction: f64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    check_fraction(train_fraction)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot split".into()));
    }
    let order = chronological(ds);
    let counts = ds.family_counts();
    let mut train_quota: BTreeMap<&str, usize> = counts
        .iter()
        .map(|(family, &n)| {
            let n_test = ceil_count((1.0 - train_fraction) * n as f64).min(n);
            (family.as_str(), n - n_test)
        })
        .collect();
    let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
    for i in order {
        let quota = train_quota.get_mut(ds.labels[i].as_str()).expect("family counted");
        if *quota > 0 {
            *quota -= 1;
            train_rows.push(i);
        } else {
            test_rows.push(i);
        }
    }
    Ok((ds.select_rows(&train_rows), ds.select_rows(&test_rows)))
}

pub fn split(
    ds: &LabeledDataset,
    train_fraction: f64,
    mode: SplitMode,
) -> Result<(LabeledDataset, LabeledDataset)> {
    match mode {
        SplitMode::Global => temporal_split(ds, train_fraction),
        SplitMode::PerFamily => temporal_split_per_family(ds, train_fraction),
    }
}

/// One leave-one-family-out evaluation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftScenario {
    pub train: LabeledDataset,
    pub test_known: LabeledDataset,
    pub test_unknown: LabeledDataset,
    pub holdout_family: String,
}

/// Removes `holdout_family` from training and pools all of its rows, from
/// both splits, into `test_unknown`.
pub fn build_drift_scenario(
    train: &LabeledDataset,
    test: &LabeledDataset,
    holdout_family: &str,
) -> Result<DriftScenario> {
    let mut available = train.families();
    available.extend(test.families());
    available.sort();
    available.dedup();
    if !available.iter().any(|f| f == holdout_family) {
        return Err(Error::UnknownFamily {
            name: holdout_family.to_string(),
            available,
        });
    }

    let partition = |ds: &LabeledDataset| -> (Vec<usize>, Vec<usize>) {
        (0..ds.len()).partition(|&i| ds.labels[i] != holdout_family)
    };
    let (train_keep, train_out) = partition(train);
    let (test_keep, test_out) = partition(test);

    let scenario_train = train.select_rows(&train_keep);
    if scenario_train.families().len() < 2 {
        log::warn!(
            "holding out {holdout_family} leaves {} training famil{}",
            scenario_train.families().len(),
            if scenario_train.families().len() == 1 { "y" } else { "ies" }
        );
    }
    let test_unknown = train
        .select_rows(&train_out)
        .concat(&test.select_rows(&test_out))?;

    Ok(DriftScenario {
        train: scenario_train,
        test_known: test.select_rows(&test_keep),
        test_unknown,
        holdout_family: holdout_family.to_string(),
    })
}
