//! Dense symmetric autoencoder with hand-written forward and backward passes.
//!
//! The encoder maps `dims[0] -> dims[1] -> ... -> dims[k]`; the decoder
//! mirrors it back to `dims[0]`. Hidden layers use ReLU, while the bottleneck
//! and the reconstruction layer are linear. Batches are row-major: one sample
//! per row, so a layer computes `Z = X W^T + b`.

mod adam;
mod gradcheck;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{central_difference, grad_check, grad_check_subset, relative_error};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
        }
    }
}

/// One fully connected layer. `weights` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layer_dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Activation kinds for a symmetric autoencoder over `layer_dims`.
pub fn activation_plan(layer_dims: &[usize]) -> Vec<Activation> {
    let depth = layer_dims.len() - 1;
    (0..2 * depth)
        .map(|l| {
            if l == depth - 1 || l == 2 * depth - 1 {
                Activation::Identity
            } else {
                Activation::Relu
            }
        })
        .collect()
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid(format!(
            "autoencoder needs at least an input and a latent width, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::invalid(format!("layer widths must be positive: {layer_dims:?}")));
    }
    Ok(())
}

/// `(in, out)` shape of every layer, encoder first, decoder mirrored.
fn layer_shapes(layer_dims: &[usize]) -> Vec<(usize, usize)> {
    let encoder = layer_dims.windows(2).map(|w| (w[0], w[1]));
    let decoder = layer_dims.windows(2).rev().map(|w| (w[1], w[0]));
    encoder.chain(decoder).collect()
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero, deterministic per seed.
pub fn init_network(layer_dims: &[usize], seed: u64) -> Result<NetworkParams> {
    check_dims(layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_shapes(layer_dims)
        .into_iter()
        .zip(activation_plan(layer_dims))
        .map(|((fan_in, fan_out), activation)| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Dense {
                weights: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    rng.random_range(-bound..bound)
                }),
                bias: Array1::zeros(fan_out),
                activation,
            }
        })
        .collect();
    Ok(NetworkParams {
        layer_dims: layer_dims.to_vec(),
        layers,
    })
}

impl NetworkParams {
    /// Assembles a network from explicit layers, checking that they form the
    /// symmetric autoencoder described by `layer_dims`.
    pub fn from_layers(layer_dims: Vec<usize>, layers: Vec<Dense>) -> Result<Self> {
        check_dims(&layer_dims)?;
        let shapes = layer_shapes(&layer_dims);
        if layers.len() != shapes.len() {
            return Err(Error::shape("layer count", shapes.len(), layers.len()));
        }
        for (layer, (fan_in, fan_out)) in layers.iter().zip(shapes) {
            if layer.weights.dim() != (fan_out, fan_in) || layer.bias.len() != fan_out {
                return Err(Error::shape(
                    "layer shape",
                    format!("{fan_out}x{fan_in}"),
                    format!("{:?} bias {}", layer.weights.dim(), layer.bias.len()),
                ));
            }
        }
        let net = NetworkParams { layer_dims, layers };
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(net)
    }

    /// All-zero network of the given shape.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_shapes(layer_dims)
            .into_iter()
            .zip(activation_plan(layer_dims))
            .map(|((i, o), activation)| Dense {
                weights: Array2::zeros((o, i)),
                bias: Array1::zeros(o),
                activation,
            })
            .collect();
        Ok(NetworkParams {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    pub fn encoder_depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Parameters in layer order; within a layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            flat.extend(layer.weights.iter());
            flat.extend(layer.bias.iter());
        }
        flat
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("flat parameter vector", self.num_params(), flat.len()));
        }
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for (dst, src) in layer.weights.iter_mut().chain(layer.bias.iter_mut()).zip(&mut it) {
                *dst = *src;
            }
        }
        Ok(())
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if index < nw {
                return layer.weights.iter_mut().nth(index).expect("in range");
            }
            index -= nw;
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub input: Array2<f64>,
    /// Pre-activation `Z` of every layer.
    pub pre_activations: Vec<Array2<f64>>,
    /// Post-activation output of every layer.
    pub activations: Vec<Array2<f64>>,
    encoder_depth: usize,
}

impl ActivationTrace {
    pub fn bottleneck(&self) -> &Array2<f64> {
        &self.activations[self.encoder_depth - 1]
    }

    pub fn reconstruction(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty network")
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

fn check_batch(net: &NetworkParams, batch: &ArrayView2<f64>) -> Result<()> {
    if batch.ncols() != net.input_dim() {
        return Err(Error::shape("network input", net.input_dim(), batch.ncols()));
    }
    Ok(())
}

fn affine(layer: &Dense, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weights.t());
    z += &layer.bias;
    z
}

pub fn forward(net: &NetworkParams, batch: ArrayView2<f64>) -> Result<ActivationTrace> {
    check_batch(net, &batch)?;
    let mut pre_activations = Vec::with_capacity(net.layers.len());
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let z = match activations.last() {
            Some(prev) => affine(layer, &prev.view()),
            None => affine(layer, &batch),
        };
        activations.push(layer.activation.apply(&z));
        pre_activations.push(z);
    }
    Ok(ActivationTrace {
        input: batch.to_owned(),
        pre_activations,
        activations,
        encoder_depth: net.encoder_depth(),
    })
}

/// Encoder half only: the bottleneck activations for `batch`.
pub fn encode(net: &NetworkParams, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_batch(net, &batch)?;
    let mut x = batch.to_owned();
    for layer in &net.layers[..net.encoder_depth()] {
        x = layer.activation.apply(&affine(layer, &x.view()));
    }
    Ok(x)
}

/// Gradients of a scalar loss with respect to the two network outputs.
/// Either side may be absent, meaning zero.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub bottleneck: Option<Array2<f64>>,
    pub reconstruction: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradient of the loss with respect to every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl ParamGrads {
    pub fn zeros_like(net: &NetworkParams) -> Self {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// Same order as [`NetworkParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            flat.extend(layer.weights.iter());
            flat.extend(layer.bias.iter());
        }
        flat
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|&v| v == 0.0))
    }
}

/// Reverse-mode gradients for all weights and biases. Bottleneck and
/// reconstruction gradients are summed where their paths meet in the encoder.
pub fn backward(
    net: &NetworkParams,
    trace: &ActivationTrace,
    grads: &OutputGrads,
) -> Result<ParamGrads> {
    let n = trace.batch_size();
    let depth = net.encoder_depth();
    if trace.activations.len() != net.layers.len() || trace.input.ncols() != net.input_dim() {
        return Err(Error::shape(
            "activation trace",
            format!("{} layers over width {}", net.layers.len(), net.input_dim()),
            format!("{} layers over width {}", trace.activations.len(), trace.input.ncols()),
        ));
    }
    if let Some(g) = &grads.bottleneck {
        if g.dim() != (n, net.latent_dim()) {
            return Err(Error::shape(
                "bottleneck gradient",
                format!("{n}x{}", net.latent_dim()),
                format!("{:?}", g.dim()),
            ));
        }
    }
    if let Some(g) = &grads.reconstruction {
        if g.dim() != (n, net.input_dim()) {
            return Err(Error::shape(
                "reconstruction gradient",
                format!("{n}x{}", net.input_dim()),
                format!("{:?}", g.dim()),
            ));
        }
    }

    let mut out = ParamGrads::zeros_like(net);
    // Without a reconstruction gradient the decoder contributes nothing.
    let (top, mut upstream) = match &grads.reconstruction {
        Some(g) => (net.layers.len(), Some(g.clone())),
        None => (depth, None),
    };
    for l in (0..top).rev() {
        if l == depth - 1 {
            if let Some(g) = &grads.bottleneck {
                upstream = Some(match upstream {
                    Some(u) => u + g,
                    None => g.clone(),
                });
            }
        }
        let Some(mut delta) = upstream.take() else {
            continue;
        };
        if net.layers[l].activation == Activation::Relu {
            Zip::from(&mut delta)
                .and(&trace.pre_activations[l])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
        }
        let below = if l == 0 {
            trace.input.view()
        } else {
            trace.activations[l - 1].view()
        };
        out.layers[l].weights = delta.t().dot(&below);
        out.layers[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            upstream = Some(delta.dot(&net.layers[l].weights));
        }
    }
    Ok(out)
}

/// Mean squared error over every entry, with its gradient.
pub fn mse_loss(
    reconstruction: &Array2<f64>,
    target: &ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if reconstruction.dim() != target.dim() {
        return Err(Error::shape(
            "mse operands",
            format!("{:?}", target.dim()),
            format!("{:?}", reconstruction.dim()),
        ));
    }
    let count = reconstruction.len() as f64;
    let diff = reconstruction - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let grad = diff * (2.0 / count);
    Ok((loss, grad))
}

/// A scalar training objective evaluated on a forward trace.
pub trait Objective {
    fn evaluate(&self, trace: &ActivationTrace) -> Result<(f64, OutputGrads)>;
}

/// Reconstruction MSE against the trace's own input.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reconstruction;

impl Objective for Reconstruction {
    fn evaluate(&self, trace: &ActivationTrace) -> Result<(f64, OutputGrads)> {
        let (loss, grad) = mse_loss(trace.reconstruction(), &trace.input.view())?;
        Ok((
            loss,
            OutputGrads {
                bottleneck: None,
                reconstruction: Some(grad),
            },
        ))
    }
}
