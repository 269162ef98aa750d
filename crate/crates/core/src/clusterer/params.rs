//! Heuristics for choosing DBSCAN's `min_pts` and `eps`.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::stats::euclidean;

pub const MIN_PTS_FLOOR: usize = 4;

/// Twice the latent dimension, clamped to `[4, class_size / 2]`; classes
/// smaller than 8 always get 4.
pub fn estimate_min_pts(latent_dim: usize, class_size: usize) -> usize {
    if class_size < 2 * MIN_PTS_FLOOR {
        return MIN_PTS_FLOOR;
    }
    (2 * latent_dim).clamp(MIN_PTS_FLOOR, class_size / 2)
}

/// Distance from every point to its `k`-th nearest other point.
pub fn k_distances(points: ArrayView2<f64>, k: usize) -> Result<Vec<f64>> {
    let n = points.nrows();
    if k == 0 || n <= k {
        return Err(Error::invalid(format!(
            "k-distance needs n > k >= 1, got n={n}, k={k}"
        )));
    }
    let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut scratch = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            scratch.clear();
            scratch.extend(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| euclidean(&rows[i], &rows[j])),
            );
            let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

/// Index of the point on a descending curve farthest from the chord joining
/// its endpoints, with both axes scaled to `[0, 1]`. A curve with no bend
/// (straight or flat) yields index 1.
pub fn elbow_index(descending: &[f64]) -> usize {
    let n = descending.len();
    if n < 3 {
        return n.saturating_sub(1);
    }
    let (top, bottom) = (descending[0], descending[n - 1]);
    let span = top - bottom;
    if !(span > 0.0) {
        return 1;
    }
    // Normalized chord runs from (0, 1) to (1, 0): x + y = 1.
    let mut best = (1, 0.0);
    for (i, &y) in descending.iter().enumerate().take(n - 1).skip(1) {
        let x = i as f64 / (n - 1) as f64;
        let y = (y - bottom) / span;
        let dist = (x + y - 1.0).abs() / std::f64::consts::SQRT_2;
        if dist > best.1 + 1e-12 {
            best = (i, dist);
        }
    }
    best.0
}

/// Neighborhood radius at the knee of the sorted k-distance curve.
///
/// Falls back to the smallest positive k-distance when the knee sits on a
/// zero, and to a machine-epsilon radius when every k-distance is zero.
pub fn estimate_eps(points: ArrayView2<f64>, k: usize) -> Result<f64> {
    let mut curve = k_distances(points, k)?;
    curve.sort_by(|a, b| b.total_cmp(a));
    let eps = curve[elbow_index(&curve)];
    if eps > 0.0 {
        return Ok(eps);
    }
    if let Some(&smallest) = curve.iter().rev().find(|&&d| d > 0.0) {
        return Ok(smallest);
    }
    let scale = points.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    log::warn!("all {k}-distances are zero; using a machine-epsilon radius");
    Ok(f64::EPSILON * scale)
}
