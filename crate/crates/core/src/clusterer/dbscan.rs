//! Density-based clustering with noise.
//!
//! A point is *core* when at least `min_pts` points, itself included, lie
//! within Euclidean distance `eps`. Clusters are maximal sets of
//! density-connected points. Points are scanned in ascending index order and
//! each cluster is expanded completely before the next one starts, so a
//! border point reachable from several clusters joins the one created first.

use std::collections::VecDeque;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::stats::euclidean;

pub const NOISE: i64 = -1;
const UNVISITED: i64 = -2;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id per point (contiguous from 0), or [`NOISE`].
    pub labels: Vec<i64>,
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    /// Point indices of cluster `id`, ascending.
    pub fn members(&self, id: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == id as i64)
            .map(|(i, _)| i)
            .collect()
    }
}

fn region(points: &ArrayView2<f64>, rows: &[&[f64]], i: usize, eps: f64) -> Vec<usize> {
    (0..points.nrows())
        .filter(|&j| euclidean(rows[i], rows[j]) <= eps)
        .collect()
}

pub fn dbscan(points: ArrayView2<f64>, eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("eps must be finite and > 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be >= 1"));
    }
    if points.nrows() == 0 {
        return Err(Error::invalid("dbscan needs at least one point"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dbscan coordinates"));
    }
    let owned = points.as_standard_layout();
    let rows: Vec<&[f64]> = owned
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();

    let n = points.nrows();
    let mut labels = vec![UNVISITED; n];
    let mut next_id = 0i64;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let neighbors = region(&points, &rows, i, eps);
        if neighbors.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = next_id;
        let mut queue: VecDeque<usize> = neighbors.into();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = next_id;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = next_id;
            let reach = region(&points, &rows, j, eps);
            if reach.len() >= min_pts {
                queue.extend(reach);
            }
        }
        next_id += 1;
    }
    Ok(ClusterAssignment {
        labels,
        eps,
        min_pts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn coincident_points_form_one_cluster() {
        let pts = Array2::from_elem((10, 3), 1.5);
        let a = dbscan(pts.view(), 0.1, 5).unwrap();
        assert_eq!(a.n_clusters(), 1);
        assert_eq!(a.noise_count(), 0);
    }

    #[test]
    fn isolated_points_are_noise() {
        let pts = array![[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]];
        let a = dbscan(pts.view(), 1.0, 2).unwrap();
        assert_eq!(a.labels, vec![NOISE; 3]);
        assert_eq!(a.n_clusters(), 0);
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // Two dense groups of 4 with a non-core point 2 units from each.
        let pts = array![
            [0.0], [0.5], [1.0], [1.5],
            [3.5],
            [5.5], [6.0], [6.5], [7.0]
        ];
        let a = dbscan(pts.view(), 2.0, 4).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(a.members(1), vec![5, 6, 7, 8]);
    }

    #[test]
    fn noise_promoted_to_border() {
        // Point 0 is scanned first as noise, then reached from the core at 1.
        let pts = array![[0.0], [1.0], [1.1], [1.2]];
        let a = dbscan(pts.view(), 1.0, 3).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0]);
    }

    #[test]
    fn min_pts_one_makes_every_point_core() {
        let pts = array![[0.0], [10.0], [20.0]];
        let a = dbscan(pts.view(), 1.0, 1).unwrap();
        assert_eq!(a.labels, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_input() {
        let pts = array![[0.0], [f64::NAN]];
        assert!(matches!(dbscan(pts.view(), 1.0, 1), Err(Error::NonFinite(_))));
        let pts = array![[0.0]];
        assert!(dbscan(pts.view(), 0.0, 1).is_err());
        assert!(dbscan(pts.view(), 1.0, 0).is_err());
        assert!(dbscan(Array2::<f64>::zeros((0, 2)).view(), 1.0, 1).is_err());
    }
}
