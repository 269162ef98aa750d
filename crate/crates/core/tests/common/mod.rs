//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library code it checks.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct OracleResult {
    /// Cluster id per point, numbered by each component's smallest core
    /// index, or -1 for noise.
    pub labels: Vec<i64>,
    /// Non-core points within eps of cores from two or more clusters.
    pub ambiguous_points: Vec<usize>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Brute-force DBSCAN: full distance matrix, core flags, union-find over
/// core-core edges, then border attachment.
pub fn oracle_dbscan(points: &Array2<f64>, eps: f64, min_pts: usize) -> OracleResult {
    let n = points.nrows();
    let mut within = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = (0..points.ncols())
                .map(|k| (points[[i, k]] - points[[j, k]]).powi(2))
                .sum();
            within[i][j] = d2.sqrt() <= eps;
        }
    }
    let core: Vec<bool> = (0..n)
        .map(|i| within[i].iter().filter(|&&w| w).count() >= min_pts)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] && within[i][j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    // Component id in order of first (smallest) core index.
    let mut id_of_root = std::collections::HashMap::new();
    let mut labels = vec![-1i64; n];
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let next = id_of_root.len() as i64;
            labels[i] = *id_of_root.entry(r).or_insert(next);
        }
    }
    let mut ambiguous_points = Vec::new();
    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut candidates: Vec<i64> = (0..n)
            .filter(|&j| core[j] && within[i][j])
            .map(|j| labels[j])
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        if candidates.len() > 1 {
            ambiguous_points.push(i);
        }
        if let Some(&first) = candidates.first() {
            labels[i] = first;
        }
    }
    OracleResult {
        labels,
        ambiguous_points,
    }
}

/// Canonical form of a labeling: ids renumbered by first appearance.
pub fn canonical(labels: &[i64]) -> Vec<i64> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

pub struct RandomCase {
    pub points: Array2<f64>,
    pub eps: f64,
    pub min_pts: usize,
}

/// A few Gaussian blobs plus uniform background, eps drawn from the lower
/// quantiles of the pairwise distances.
pub fn random_case(seed: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..=200);
    let dim = rng.random_range(2..=8);
    let blobs = rng.random_range(1..=4);
    let centers: Vec<Vec<f64>> = (0..blobs)
        .map(|_| (0..dim).map(|_| rng.random_range(-20.0..20.0)).collect())
        .collect();
    let background = rng.random_range(0.0..0.3);
    let mut points = Array2::zeros((n, dim));
    for i in 0..n {
        if rng.random::<f64>() < background {
            for k in 0..dim {
                points[[i, k]] = rng.random_range(-30.0..30.0);
            }
        } else {
            let c = &centers[rng.random_range(0..blobs)];
            let spread = rng.random_range(0.5..2.0);
            for k in 0..dim {
                points[[i, k]] = c[k] + spread * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = (0..dim).map(|k| (points[[i, k]] - points[[j, k]]).powi(2)).sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let q = rng.random_range(0.01..0.15);
    let eps = dists[((dists.len() - 1) as f64 * q) as usize].max(1e-9);
    let min_pts = rng.random_range(1..=10);
    RandomCase { points, eps, min_pts }
}

/// Mean of the rows by plain summation.
pub fn naive_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows[0].len();
    let mut sum = vec![0.0; dim];
    for r in rows {
        for k in 0..dim {
            sum[k] += r[k];
        }
    }
    sum.iter().map(|s| s / rows.len() as f64).collect()
}

pub fn naive_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}
