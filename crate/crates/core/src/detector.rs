//! Nearest-centroid drift detection with per-cluster rejection radii, and the
//! median-absolute-deviation threshold baseline.

use std::fmt;

use ndarray::ArrayView1;

use crate::clusterer::FamilyModel;
use crate::error::{Error, Result};
use crate::stats::{euclidean, median, median_absolute_deviation};

pub const DEFAULT_MAD_COEFFICIENT: f64 = 3.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Known(String),
    Drift,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Known(_) => f.write_str("KNOWN"),
            Verdict::Drift => f.write_str("DRIFT"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionVerdict {
    pub verdict: Verdict,
    pub nearest_family: String,
    pub nearest_cluster_id: usize,
    pub distance: f64,
    pub threshold_used: f64,
}

impl DetectionVerdict {
    pub fn is_drift(&self) -> bool {
        self.verdict == Verdict::Drift
    }
}

/// Closest cluster to `embedding`: returns `(index into fm.clusters, distance)`.
/// Equal distances resolve to the smaller `(family, cluster_id)`.
pub fn nearest_cluster(fm: &FamilyModel, embedding: ArrayView1<f64>) -> Result<(usize, f64)> {
    if fm.clusters.is_empty() {
        return Err(Error::invalid("family model has no clusters"));
    }
    if embedding.len() != fm.latent_dim {
        return Err(Error::shape("embedding width", fm.latent_dim, embedding.len()));
    }
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding"));
    }
    let query = embedding.to_vec();
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in fm.clusters.iter().enumerate() {
        let d = euclidean(&query, c.centroid.as_slice().expect("contiguous centroid"));
        let better = match best {
            None => true,
            Some((j, bd)) => {
                let other = &fm.clusters[j];
                d < bd
                    || (d == bd
                        && (c.family.as_str(), c.cluster_id) < (other.family.as_str(), other.cluster_id))
            }
        };
        if better {
            best = Some((i, d));
        }
    }
    Ok(best.expect("non-empty model"))
}

pub fn nearest_centroid(fm: &FamilyModel, embedding: ArrayView1<f64>) -> Result<(String, usize, f64)> {
    let (i, d) = nearest_cluster(fm, embedding)?;
    let c = &fm.clusters[i];
    Ok((c.family.clone(), c.cluster_id, d))
}

fn decide(fm: &FamilyModel, index: usize, distance: f64, threshold: f64) -> DetectionVerdict {
    let c = &fm.clusters[index];
    DetectionVerdict {
        verdict: if distance <= threshold {
            Verdict::Known(c.family.clone())
        } else {
            Verdict::Drift
        },
        nearest_family: c.family.clone(),
        nearest_cluster_id: c.cluster_id,
        distance,
        threshold_used: threshold,
    }
}

/// KNOWN when the embedding lies in the closed ball of its nearest cluster.
pub fn classify(fm: &FamilyModel, embedding: ArrayView1<f64>) -> Result<DetectionVerdict> {
    let (i, d) = nearest_cluster(fm, embedding)?;
    Ok(decide(fm, i, d, fm.clusters[i].threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MadCluster {
    pub family: String,
    pub cluster_id: usize,
    pub median: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MadModel {
    pub coefficient: f64,
    pub clusters: Vec<MadCluster>,
}

impl MadModel {
    pub fn threshold(&self, index: usize) -> f64 {
        let c = &self.clusters[index];
        c.median + self.coefficient * c.mad
    }

    fn check_aligned(&self, fm: &FamilyModel) -> Result<()> {
        let aligned = self.clusters.len() == fm.clusters.len()
            && self
                .clusters
                .iter()
                .zip(&fm.clusters)
                .all(|(m, c)| m.family == c.family && m.cluster_id == c.cluster_id);
        if aligned {
            Ok(())
        } else {
            Err(Error::invalid("MAD model clusters do not match the family model"))
        }
    }
}

/// Fits `median + coefficient * MAD` per cluster. Each entry of `distances`
/// is `(family, cluster_id, member distances)`.
pub fn mad_fit<'a, I>(distances: I, coefficient: f64) -> Result<MadModel>
where
    I: IntoIterator<Item = (&'a str, usize, &'a [f64])>,
{
    if !(coefficient >= 0.0) || !coefficient.is_finite() {
        return Err(Error::invalid(format!(
            "MAD coefficient must be finite and >= 0, got {coefficient}"
        )));
    }
    let clusters = distances
        .into_iter()
        .map(|(family, cluster_id, d)| {
            let empty = || Error::invalid(format!("no distances for cluster {family}/{cluster_id}"));
            Ok(MadCluster {
                family: family.to_string(),
                cluster_id,
                median: median(d).ok_or_else(empty)?,
                mad: median_absolute_deviation(d).ok_or_else(empty)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if clusters.is_empty() {
        return Err(Error::invalid("MAD fit needs at least one cluster"));
    }
    Ok(MadModel {
        coefficient,
        clusters,
    })
}

/// [`mad_fit`] over the member distances stored in a family model.
pub fn mad_fit_model(fm: &FamilyModel, coefficient: f64) -> Result<MadModel> {
    mad_fit(
        fm.clusters
            .iter()
            .map(|c| (c.family.as_str(), c.cluster_id, c.member_distances.as_slice())),
        coefficient,
    )
}

/// Same nearest-centroid search as [`classify`], judged against the MAD radius.
pub fn classify_mad(fm: &FamilyModel, mad: &MadModel, embedding: ArrayView1<f64>) -> Result<DetectionVerdict> {
    mad.check_aligned(fm)?;
    let (i, d) = nearest_cluster(fm, embedding)?;
    Ok(decide(fm, i, d, mad.threshold(i)))
}
