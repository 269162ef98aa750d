//! Finite-difference verification of the analytic backward pass.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, NetworkParams, Objective};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared on an absolute scale.
const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-6)`; zero when both are zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Central differences `(f(x + h) - f(x - h)) / 2h` for every coordinate.
pub fn central_difference<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = point.to_vec();
    (0..point.len())
        .map(|i| {
            probe[i] = point[i] + step;
            let plus = f(&probe);
            probe[i] = point[i] - step;
            let minus = f(&probe);
            probe[i] = point[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Worst relative error between the analytic gradient and central
/// differences over every parameter.
pub fn grad_check(
    net: &NetworkParams,
    batch: ArrayView2<f64>,
    objective: &dyn Objective,
) -> Result<f64> {
    let all: Vec<usize> = (0..net.num_params()).collect();
    check_indices(net, batch, objective, &all)
}

/// Like [`grad_check`] but on a seeded random subset of `count` parameters.
pub fn grad_check_subset(
    net: &NetworkParams,
    batch: ArrayView2<f64>,
    objective: &dyn Objective,
    count: usize,
    seed: u64,
) -> Result<f64> {
    let total = net.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, total, count.min(total)).into_vec();
    picked.sort_unstable();
    check_indices(net, batch, objective, &picked)
}

fn check_indices(
    net: &NetworkParams,
    batch: ArrayView2<f64>,
    objective: &dyn Objective,
    indices: &[usize],
) -> Result<f64> {
    let trace = forward(net, batch)?;
    let (_, out_grads) = objective.evaluate(&trace)?;
    let analytic = backward(net, &trace, &out_grads)?.flatten();

    let loss_at = |probe: &NetworkParams| -> Result<f64> {
        let trace = forward(probe, batch)?;
        Ok(objective.evaluate(&trace)?.0)
    };

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for &i in indices {
        let original = *probe.param_mut(i);
        *probe.param_mut(i) = original + FD_STEP;
        let plus = loss_at(&probe)?;
        *probe.param_mut(i) = original - FD_STEP;
        let minus = loss_at(&probe)?;
        *probe.param_mut(i) = original;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{init_network, Reconstruction};
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn quadratic_central_difference() {
        let g = central_difference(|p| p[0] * p[0] + 3.0 * p[0] * p[1], &[1.0, 2.0], 1e-5);
        assert!((g[0] - 8.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_edges() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn mse_objective_passes_on_every_parameter() {
        let net = init_network(&[5, 4, 3], 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = Array2::from_shape_simple_fn((6, 5), || rng.random_range(-1.0..1.0));
        let err = grad_check(&net, batch.view(), &Reconstruction).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn subset_check_on_larger_net() {
        let net = init_network(&[40, 30, 8], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = Array2::from_shape_simple_fn((4, 40), || rng.random_range(-1.0..1.0));
        let err = grad_check_subset(&net, batch.view(), &Reconstruction, 200, 9).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }
}
