//! Gaussian-blob datasets with known geometry for desk-scale checks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LabeledDataset;
use crate::error::{Error, Result};

const PLACEMENT_ATTEMPTS: usize = 10_000;
const TIMESTAMP_BASE: i64 = 1_500_000_000;
const TIMESTAMP_SPAN: i64 = 100_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_families: usize,
    pub dim: usize,
    pub samples_per_family: usize,
    /// Minimum pairwise distance between any two blob centroids, in units of
    /// the (unit) within-blob standard deviation.
    pub centroid_separation: f64,
    pub clusters_per_family: usize,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_families == 0
            || self.dim == 0
            || self.samples_per_family == 0
            || self.clusters_per_family == 0
        {
            return Err(Error::invalid("synthetic spec counts must all be >= 1"));
        }
        if !(self.centroid_separation > 0.0) || !self.centroid_separation.is_finite() {
            return Err(Error::invalid("centroid_separation must be finite and > 0"));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<SyntheticData> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_blobs = self.n_families * self.clusters_per_family;
        let centroids = self.place_centroids(n_blobs, self.default_spread(n_blobs), &mut rng)?;

        struct Row {
            family: usize,
            blob: usize,
            ts: i64,
            values: Vec<f64>,
        }
        let mut rows = Vec::with_capacity(self.n_families * self.samples_per_family);
        for family in 0..self.n_families {
            for s in 0..self.samples_per_family {
                let blob = family * self.clusters_per_family + s % self.clusters_per_family;
                let values = centroids[blob]
                    .iter()
                    .map(|c| c + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let ts = TIMESTAMP_BASE + rng.random_range(0..TIMESTAMP_SPAN);
                rows.push(Row {
                    family,
                    blob,
                    ts,
                    values,
                });
            }
        }
        rows.sort_by_key(|r| r.ts);

        let n = rows.len();
        let mut features = Array2::zeros((n, self.dim));
        for (i, row) in rows.iter().enumerate() {
            features.row_mut(i).assign(&ndarray::ArrayView1::from(&row.values));
        }
        let dataset = LabeledDataset::from_parts(
            features,
            rows.iter().map(|r| family_name(r.family)).collect(),
            rows.iter().map(|r| r.ts).collect(),
        )?;
        Ok(SyntheticData {
            dataset,
            centroids,
            blob_of_row: rows.iter().map(|r| r.blob).collect(),
            clusters_per_family: self.clusters_per_family,
        })
    }

    /// Standard deviation of the centroid distribution: puts the typical
    /// pairwise distance at 1.5x the requested separation, widened when many
    /// blobs share a low-dimensional space.
    fn default_spread(&self, n_blobs: usize) -> f64 {
        let dim = self.dim as f64;
        let crowding = (n_blobs as f64).powf(1.0 / dim).max(1.0);
        1.5 * self.centroid_separation * crowding / (2.0 * dim).sqrt()
    }

    /// Rejection sampling from an isotropic Gaussian.
    fn place_centroids(
        &self,
        n_blobs: usize,
        spread: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let mut placed: Vec<Vec<f64>> = Vec::with_capacity(n_blobs);
        for _ in 0..n_blobs {
            let mut accepted = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let candidate: Vec<f64> = (0..self.dim)
                    .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if placed
                    .iter()
                    .all(|c| euclidean(c, &candidate) >= self.centroid_separation)
                {
                    accepted = Some(candidate);
                    break;
                }
            }
            placed.push(accepted.ok_or(Error::CentroidPlacement {
                clusters: n_blobs,
                dim: self.dim,
                separation: self.centroid_separation,
            })?);
        }
        Ok(placed)
    }
}

/// Generated dataset plus the ground truth used to build it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: LabeledDataset,
    /// Blob centroids; blob `b` belongs to family `b / clusters_per_family`.
    pub centroids: Vec<Vec<f64>>,
    /// Generating blob of each dataset row.
    pub blob_of_row: Vec<usize>,
    pub clusters_per_family: usize,
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    spec.generate(seed).map(|d| d.dataset)
}

pub fn family_name(index: usize) -> String {
    format!("family_{index:02}")
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
