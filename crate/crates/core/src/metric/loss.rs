use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Gradients of one triplet's hinge loss with respect to its three embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrads {
    pub anchor: Array1<f64>,
    pub positive: Array1<f64>,
    pub negative: Array1<f64>,
}

impl TripletGrads {
    fn zeros(width: usize) -> Self {
        TripletGrads {
            anchor: Array1::zeros(width),
            positive: Array1::zeros(width),
            negative: Array1::zeros(width),
        }
    }
}

pub fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_margin(margin: f64) -> Result<()> {
    if margin > 0.0 && margin.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("margin must be finite and > 0, got {margin}")))
    }
}

/// `max(0, |a-p|^2 - |a-n|^2 + margin)` and its subgradient. On the hinge
/// boundary (argument exactly zero) the zero branch is taken.
pub fn triplet_loss(
    anchor: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negative: ArrayView1<f64>,
    margin: f64,
) -> Result<(f64, TripletGrads)> {
    check_margin(margin)?;
    let width = anchor.len();
    if positive.len() != width || negative.len() != width {
        return Err(Error::shape(
            "triplet embeddings",
            width,
            format!("{}/{}", positive.len(), negative.len()),
        ));
    }
    let hinge = squared_distance(anchor, positive) - squared_distance(anchor, negative) + margin;
    if hinge <= 0.0 {
        return Ok((0.0, TripletGrads::zeros(width)));
    }
    Ok((
        hinge,
        TripletGrads {
            anchor: (&negative - &positive) * 2.0,
            positive: (&positive - &anchor) * 2.0,
            negative: (&anchor - &negative) * 2.0,
        },
    ))
}

/// Mean triplet loss over a batch; each triplet's gradients are scaled by
/// `1/N`. Rows of `anchors`, `positives` and `negatives` form the triplets.
pub fn batch_triplet_loss(
    anchors: &Array2<f64>,
    positives: &Array2<f64>,
    negatives: &Array2<f64>,
    margin: f64,
) -> Result<(f64, Vec<TripletGrads>)> {
    let n = anchors.nrows();
    if n == 0 {
        return Err(Error::invalid("empty triplet batch"));
    }
    if positives.dim() != anchors.dim() || negatives.dim() != anchors.dim() {
        return Err(Error::shape(
            "triplet batch",
            format!("{:?}", anchors.dim()),
            format!("{:?} / {:?}", positives.dim(), negatives.dim()),
        ));
    }
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let (loss, mut g) = triplet_loss(anchors.row(i), positives.row(i), negatives.row(i), margin)?;
        total += loss;
        g.anchor *= scale;
        g.positive *= scale;
        g.negative *= scale;
        grads.push(g);
    }
    Ok((total / n as f64, grads))
}
