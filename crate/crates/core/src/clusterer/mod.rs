//! Per-family DBSCAN in the latent space and the frozen [`FamilyModel`]
//! of centroids and rejection radii built from it.

mod dbscan;
mod params;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::stats::euclidean;

pub use dbscan::{dbscan, ClusterAssignment, NOISE};
pub use params::{elbow_index, estimate_eps, estimate_min_pts, k_distances, MIN_PTS_FLOOR};

/// Coordinate-wise mean of the member rows.
pub fn compute_centroid(members: ArrayView2<f64>) -> Result<Array1<f64>> {
    if members.nrows() == 0 {
        return Err(Error::invalid("centroid of an empty cluster"));
    }
    Ok(members.sum_axis(Axis(0)) / members.nrows() as f64)
}

/// Distance from `centroid` to every member row, in row order.
pub fn member_distances(members: ArrayView2<f64>, centroid: ArrayView1<f64>) -> Result<Vec<f64>> {
    if members.ncols() != centroid.len() {
        return Err(Error::shape("cluster members", centroid.len(), members.ncols()));
    }
    let c = centroid.to_vec();
    Ok(members
        .rows()
        .into_iter()
        .map(|r| euclidean(&r.to_vec(), &c))
        .collect())
}

/// Radius of the smallest centroid-centred closed ball holding every member.
pub fn compute_threshold(members: ArrayView2<f64>, centroid: ArrayView1<f64>) -> Result<f64> {
    if members.nrows() == 0 {
        return Err(Error::invalid("threshold of an empty cluster"));
    }
    Ok(member_distances(members, centroid)?
        .into_iter()
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub family: String,
    pub cluster_id: usize,
    pub centroid: Array1<f64>,
    pub threshold: f64,
    pub member_count: usize,
    pub noise_excluded: usize,
    /// Radius DBSCAN ran with; 0 when the family was too small to estimate one.
    pub eps: f64,
    pub min_pts: usize,
    /// True when DBSCAN found no cluster and the whole family became one.
    pub fallback: bool,
    /// Member-to-centroid distances, in member order. The MAD baseline is
    /// fitted on these.
    pub member_distances: Vec<f64>,
}

impl ClusterSummary {
    fn from_members(
        family: &str,
        cluster_id: usize,
        members: ArrayView2<f64>,
        noise_excluded: usize,
        eps: f64,
        min_pts: usize,
        fallback: bool,
    ) -> Result<Self> {
        let centroid = compute_centroid(members)?;
        let member_distances = member_distances(members, centroid.view())?;
        let threshold = member_distances.iter().copied().fold(0.0, f64::max);
        assert!(
            member_distances.iter().all(|&d| d <= threshold),
            "cluster member outside its own radius"
        );
        Ok(Self {
            family: family.to_string(),
            cluster_id,
            centroid,
            threshold,
            member_count: members.nrows(),
            noise_excluded,
            eps,
            min_pts,
            fallback,
            member_distances,
        })
    }
}

/// Where a family model came from: the SHA-256 of the serialized network it
/// was built on, and a free-form echo of the run configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub network_hash: String,
    pub config: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyModel {
    pub latent_dim: usize,
    /// Sorted by family name, then cluster id.
    pub clusters: Vec<ClusterSummary>,
    pub provenance: Provenance,
}

impl FamilyModel {
    pub fn new(latent_dim: usize, clusters: Vec<ClusterSummary>, provenance: Provenance) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::invalid("family model needs at least one cluster"));
        }
        if let Some(c) = clusters.iter().find(|c| c.centroid.len() != latent_dim) {
            return Err(Error::shape(
                "cluster centroid width",
                latent_dim,
                c.centroid.len(),
            ));
        }
        Ok(Self {
            latent_dim,
            clusters,
            provenance,
        })
    }

    pub fn families(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.clusters.iter().map(|c| c.family.as_str()).collect();
        names.dedup();
        names
    }

    pub fn clusters_of<'a>(&'a self, family: &'a str) -> impl Iterator<Item = &'a ClusterSummary> + 'a {
        self.clusters.iter().filter(move |c| c.family == family)
    }

    /// One line per cluster.
    pub fn report(&self) -> String {
        let mut out = format!(
            "latent_dim={} clusters={} network={}\n",
            self.latent_dim,
            self.clusters.len(),
            if self.provenance.network_hash.is_empty() { "-" } else { &self.provenance.network_hash }
        );
        for c in &self.clusters {
            out.push_str(&format!(
                "{} cluster={} members={} noise={} threshold={:.6} eps={:.6} min_pts={}{}\n",
                c.family,
                c.cluster_id,
                c.member_count,
                c.noise_excluded,
                c.threshold,
                c.eps,
                c.min_pts,
                if c.fallback { " fallback" } else { "" }
            ));
        }
        out
    }
}

/// Summaries for every DBSCAN cluster of one family's points, noise dropped.
pub fn summarize_clusters(
    family: &str,
    points: ArrayView2<f64>,
    assignment: &ClusterAssignment,
) -> Result<Vec<ClusterSummary>> {
    if assignment.labels.len() != points.nrows() {
        return Err(Error::shape("cluster labels", points.nrows(), assignment.labels.len()));
    }
    let noise = assignment.noise_count();
    (0..assignment.n_clusters())
        .map(|id| {
            let members = points.select(Axis(0), &assignment.members(id));
            ClusterSummary::from_members(
                family,
                id,
                members.view(),
                noise,
                assignment.eps,
                assignment.min_pts,
                false,
            )
        })
        .collect()
}

/// A single cluster holding every point of the family.
pub fn single_cluster(family: &str, points: ArrayView2<f64>) -> Result<ClusterSummary> {
    ClusterSummary::from_members(family, 0, points, 0, 0.0, 0, false)
}

/// Clusters one family with estimated `min_pts` and `eps`; a family with
/// no dense region, or too few points to estimate a radius, becomes one
/// cluster.
pub fn cluster_family(family: &str, points: ArrayView2<f64>, latent_dim: usize) -> Result<Vec<ClusterSummary>> {
    let n = points.nrows();
    let min_pts = estimate_min_pts(latent_dim, n);
    let k = min_pts - 1;
    let fallback = |eps: f64| -> Result<Vec<ClusterSummary>> {
        log::warn!("family {family}: no DBSCAN cluster among {n} points, using a single cluster");
        Ok(vec![ClusterSummary::from_members(family, 0, points, 0, eps, min_pts, true)?])
    };
    if n <= k {
        return fallback(0.0);
    }
    let eps = estimate_eps(points, k)?;
    let assignment = dbscan(points, eps, min_pts)?;
    if assignment.n_clusters() == 0 {
        return fallback(eps);
    }
    log::debug!(
        "family {family}: {} clusters, {} noise (eps {eps:.6}, min_pts {min_pts})",
        assignment.n_clusters(),
        assignment.noise_count()
    );
    summarize_clusters(family, points, &assignment)
}

/// Clusters each family's embeddings independently, families ascending.
pub fn build_family_model(
    embeddings: ArrayView2<f64>,
    labels: &[String],
    latent_dim: usize,
) -> Result<FamilyModel> {
    if embeddings.nrows() == 0 {
        return Err(Error::EmptyDataset("embeddings".into()));
    }
    if labels.len() != embeddings.nrows() {
        return Err(Error::shape("family labels", embeddings.nrows(), labels.len()));
    }
    if embeddings.ncols() != latent_dim {
        return Err(Error::shape("embedding width", latent_dim, embeddings.ncols()));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings"));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let mut clusters = Vec::new();
    for (family, rows) in groups {
        let points: Array2<f64> = embeddings.select(Axis(0), &rows);
        clusters.extend(cluster_family(family, points.view(), latent_dim)?);
    }
    FamilyModel::new(latent_dim, clusters, Provenance::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blob(rng: &mut ChaCha8Rng, n: usize, center: &[f64], sigma: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, center.len()), |(_, j)| {
            center[j] + sigma * rng.sample::<f64, _>(StandardNormal)
        })
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(compute_centroid(array![[3.0, -1.0]].view()).unwrap(), array![3.0, -1.0]);
        assert_eq!(compute_centroid(array![[0.0, 0.0], [2.0, 0.0]].view()).unwrap(), array![1.0, 0.0]);
        assert!(compute_centroid(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn threshold_examples() {
        let one = array![[4.0, 4.0]];
        assert_eq!(compute_threshold(one.view(), array![4.0, 4.0].view()).unwrap(), 0.0);
        let pair = array![[0.0, 0.0], [2.0, 0.0]];
        assert_eq!(compute_threshold(pair.view(), array![1.0, 0.0].view()).unwrap(), 1.0);
        assert!(compute_threshold(Array2::<f64>::zeros((0, 2)).view(), array![0.0, 0.0].view()).is_err());
        assert!(compute_threshold(pair.view(), array![0.0].view()).is_err());
    }

    fn two_blob_family(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = blob(&mut rng, 60, &[0.0, 0.0, 0.0], 1.0);
        let b = blob(&mut rng, 60, &[20.0, 0.0, 0.0], 1.0);
        ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap()
    }

    #[test]
    fn sub_blobs_become_two_clusters() {
        let pts = two_blob_family(1);
        let labels = vec!["fam".to_string(); pts.nrows()];
        let fm = build_family_model(pts.view(), &labels, 3).unwrap();
        assert_eq!(fm.clusters.len(), 2);
        let sub: f64 = fm.clusters.iter().flat_map(|c| c.member_distances.iter()).sum::<f64>()
            / fm.clusters.iter().map(|c| c.member_count).sum::<usize>() as f64;
        let whole = single_cluster("fam", pts.view()).unwrap();
        let single = whole.member_distances.iter().sum::<f64>() / whole.member_count as f64;
        assert!(sub < single, "{sub} vs {single}");
    }

    #[test]
    fn tiny_distant_family_falls_back() {
        let pts = array![[0.0, 0.0], [100.0, 1.0], [-50.0, 500.0]];
        let labels = vec!["t".to_string(); 3];
        let fm = build_family_model(pts.view(), &labels, 2).unwrap();
        assert_eq!(fm.clusters.len(), 1);
        assert!(fm.clusters[0].fallback);
        assert_eq!(fm.clusters[0].member_count, 3);
    }

    #[test]
    fn families_processed_in_name_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = blob(&mut rng, 30, &[0.0, 0.0], 0.5);
        let b = blob(&mut rng, 30, &[50.0, 0.0], 0.5);
        let pts = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
        let labels: Vec<String> = (0..60).map(|i| if i < 30 { "zeta" } else { "alpha" }.to_string()).collect();
        let fm = build_family_model(pts.view(), &labels, 2).unwrap();
        assert_eq!(fm.families(), vec!["alpha", "zeta"]);
        assert!(fm.clusters_of("alpha").all(|c| c.centroid[0] > 40.0));
        for c in &fm.clusters {
            assert!(c.threshold >= 0.0 && c.member_count >= 1);
        }
    }

    #[test]
    fn far_noise_leaves_summaries_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = blob(&mut rng, 40, &[0.0, 0.0], 1.0);
        let (eps, min_pts) = (1.0, 4);
        let clean = summarize_clusters("f", pts.view(), &dbscan(pts.view(), eps, min_pts).unwrap()).unwrap();
        let far = array![[1e3, 0.0], [0.0, -1e3], [-1e3, 1e3]];
        let noisy = ndarray::concatenate(Axis(0), &[pts.view(), far.view()]).unwrap();
        let assignment = dbscan(noisy.view(), eps, min_pts).unwrap();
        assert!(assignment.labels[40..].iter().all(|&l| l == NOISE));
        let dirty = summarize_clusters("f", noisy.view(), &assignment).unwrap();
        assert_eq!(clean.len(), dirty.len());
        for (c, d) in clean.iter().zip(&dirty) {
            assert_eq!(c.centroid, d.centroid);
            assert_eq!(c.threshold, d.threshold);
            assert_eq!(c.member_count, d.member_count);
            assert_eq!(d.noise_excluded, c.noise_excluded + 3);
        }
    }

    #[test]
    fn build_rejects_bad_input() {
        let pts = Array2::<f64>::zeros((0, 2));
        assert!(matches!(build_family_model(pts.view(), &[], 2), Err(Error::EmptyDataset(_))));
        let pts = array![[0.0, 1.0]];
        assert!(build_family_model(pts.view(), &["a".into(), "b".into()], 2).is_err());
        assert!(build_family_model(pts.view(), &["a".into()], 3).is_err());
        let mut bad = pts.clone();
        bad[[0, 0]] = f64::INFINITY;
        assert!(build_family_model(bad.view(), &["a".into()], 2).is_err());
    }

    #[test]
    fn report_has_line_per_cluster() {
        let pts = two_blob_family(4);
        let labels = vec!["fam".to_string(); pts.nrows()];
        let fm = build_family_model(pts.view(), &labels, 3).unwrap();
        assert_eq!(fm.report().lines().count(), 1 + fm.clusters.len());
    }
}
