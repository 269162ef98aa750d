use ndarray::Zip;

use super::{NetworkParams, ParamGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: ParamGrads,
    pub second_moment: ParamGrads,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(net: &NetworkParams, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: ParamGrads::zeros_like(net),
            second_moment: ParamGrads::zeros_like(net),
            step_count: 0,
        }
    }

    /// Bias-corrected Adam update applied in place.
    pub fn step(&mut self, net: &mut NetworkParams, grads: &ParamGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        if grads.layers.len() != net.layers.len()
            || grads
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.weights.dim() != l.weights.dim() || g.bias.dim() != l.bias.dim())
        {
            return Err(Error::shape(
                "adam gradients",
                "gradients shaped like the network",
                "misaligned gradients",
            ));
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first_moment.layers)
            .zip(&mut self.second_moment.layers)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    net: &NetworkParams,
    grads: &ParamGrads,
    state: &AdamState,
) -> Result<(NetworkParams, AdamState)> {
    let mut net = net.clone();
    let mut state = state.clone();
    state.step(&mut net, grads)?;
    Ok((net, state))
}
