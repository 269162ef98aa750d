use std::fmt;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{batch_triplet_loss, check_margin};
use super::{sample_triplets, Triplet};
use crate::dataio::{FeatureMask, LabeledDataset};
use crate::error::{Error, Result};
use crate::neuralnet::{
    backward, encode, forward, init_network, mse_loss, ActivationTrace, AdamConfig, AdamState,
    NetworkParams, Objective, OutputGrads,
};

/// Hidden and latent widths used after the input layer.
pub const DEFAULT_HIDDEN_DIMS: [usize; 3] = [1024, 256, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Vanilla,
    Triplet,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Vanilla => "vanilla",
            TrainMode::Triplet => "triplet",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(TrainMode::Vanilla),
            "triplet" => Ok(TrainMode::Triplet),
            other => Err(Error::invalid(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Encoder widths, input first; the decoder mirrors them.
    pub layer_dims: Vec<usize>,
    pub margin: f64,
    /// Weight of the triplet term in `mse + weight * triplet`.
    pub triplet_weight: f64,
    pub epochs: usize,
    /// Triplets per optimization step.
    pub batch_size: usize,
    /// `None` draws one triplet per training sample each epoch.
    pub triplets_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults with `input_dim -> 1024 -> 256 -> 32`.
    pub fn for_input(input_dim: usize) -> Self {
        let mut layer_dims = vec![input_dim];
        layer_dims.extend(DEFAULT_HIDDEN_DIMS);
        TrainConfig {
            layer_dims,
            margin: 1.0,
            triplet_weight: 1.0,
            epochs: 100,
            batch_size: 64,
            triplets_per_epoch: None,
            learning_rate: AdamConfig::default().learning_rate,
            seed: 42,
        }
    }

    fn validate(&self, width: usize) -> Result<()> {
        check_margin(self.margin)?;
        if !(self.triplet_weight >= 0.0) || !self.triplet_weight.is_finite() {
            return Err(Error::invalid("triplet weight must be finite and >= 0"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.triplets_per_epoch == Some(0) {
            return Err(Error::invalid("epochs, batch size and triplets per epoch must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        match self.layer_dims.first() {
            Some(&d) if d == width => Ok(()),
            _ => Err(Error::shape(
                "training data width",
                format!("input dim of {:?}", self.layer_dims),
                width,
            )),
        }
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        write!(
            f,
            "dims={} margin={} lambda={} epochs={} batch={} triplets_per_epoch={} lr={} seed={}",
            dims.join(","),
            self.margin,
            self.triplet_weight,
            self.epochs,
            self.batch_size,
            self.triplets_per_epoch.map_or("auto".to_string(), |t| t.to_string()),
            self.learning_rate,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub reconstruction: f64,
    pub triplet: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: NetworkParams,
    pub feature_mask: FeatureMask,
    pub mode: TrainMode,
    pub config: TrainConfig,
    pub loss_curve: Vec<EpochLoss>,
}

impl TrainedModel {
    /// Attaches the variance mask the training data was projected with.
    pub fn with_mask(mut self, mask: FeatureMask) -> Result<Self> {
        if mask.len() != self.network.input_dim() {
            return Err(Error::shape("feature mask", self.network.input_dim(), mask.len()));
        }
        self.feature_mask = mask;
        Ok(self)
    }

    pub fn latent_dim(&self) -> usize {
        self.network.latent_dim()
    }
}

/// Reconstruction MSE plus a weighted triplet term over rows of one batch.
///
/// Triplet indices refer to rows of the traced batch. The MSE term averages
/// over every row; the triplet term enters at the bottleneck.
#[derive(Debug, Clone)]
pub struct TripletObjective {
    pub triplets: Vec<Triplet>,
    pub margin: f64,
    pub triplet_weight: f64,
    pub reconstruction: bool,
}

impl TripletObjective {
    /// `(reconstruction loss, triplet loss, output gradients)`. A zero
    /// triplet weight leaves the bottleneck gradient out entirely.
    pub fn evaluate_parts(&self, trace: &ActivationTrace) -> Result<(f64, f64, OutputGrads)> {
        let mut grads = OutputGrads::default();
        let mut recon_loss = 0.0;
        if self.reconstruction {
            let (loss, g) = mse_loss(trace.reconstruction(), &trace.input.view())?;
            recon_loss = loss;
            grads.reconstruction = Some(g);
        }
        let mut triplet_loss = 0.0;
        if !self.triplets.is_empty() {
            let z = trace.bottleneck();
            let pick = |f: fn(&Triplet) -> usize| {
                let idx: Vec<usize> = self.triplets.iter().map(f).collect();
                z.select(Axis(0), &idx)
            };
            let (loss, per) = batch_triplet_loss(
                &pick(|t| t.anchor),
                &pick(|t| t.positive),
                &pick(|t| t.negative),
                self.margin,
            )?;
            triplet_loss = loss;
            if self.triplet_weight != 0.0 {
                let mut g = Array2::zeros(z.raw_dim());
                for (t, tg) in self.triplets.iter().zip(&per) {
                    g.row_mut(t.anchor).scaled_add(self.triplet_weight, &tg.anchor);
                    g.row_mut(t.positive).scaled_add(self.triplet_weight, &tg.positive);
                    g.row_mut(t.negative).scaled_add(self.triplet_weight, &tg.negative);
                }
                grads.bottleneck = Some(g);
            }
        }
        Ok((recon_loss, triplet_loss, grads))
    }
}

impl Objective for TripletObjective {
    fn evaluate(&self, trace: &ActivationTrace) -> Result<(f64, OutputGrads)> {
        let (recon, triplet, grads) = self.evaluate_parts(trace)?;
        Ok((recon + self.triplet_weight * triplet, grads))
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn has_triplet_schedule(ds: &LabeledDataset) -> bool {
    let counts = ds.family_counts();
    counts.len() >= 2 && counts.values().any(|&c| c >= 2)
}

/// One optimization step's worth of rows and the triplets among them.
struct StepBatch {
    rows: Vec<usize>,
    triplets: Vec<Triplet>,
}

fn epoch_batches(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    epoch: usize,
    with_triplets: bool,
) -> Result<Vec<StepBatch>> {
    let count = cfg.triplets_per_epoch.unwrap_or(ds.len());
    let seed = epoch_seed(cfg.seed, epoch);
    if with_triplets {
        let triplets = sample_triplets(ds, count, seed)?;
        return Ok(triplets
            .chunks(cfg.batch_size)
            .map(|chunk| StepBatch {
                rows: chunk
                    .iter()
                    .flat_map(|t| [t.anchor, t.positive, t.negative])
                    .collect(),
                triplets: (0..chunk.len())
                    .map(|i| Triplet {
                        anchor: 3 * i,
                        positive: 3 * i + 1,
                        negative: 3 * i + 2,
                    })
                    .collect(),
            })
            .collect());
    }
    // Single-family data: same number of rows per step, drawn uniformly.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..3 * count).map(|_| rng.random_range(0..ds.len())).collect();
    Ok(rows
        .chunks(3 * cfg.batch_size)
        .map(|chunk| StepBatch {
            rows: chunk.to_vec(),
            triplets: Vec::new(),
        })
        .collect())
}

/// Shared loop behind both training modes. Each step reconstructs the
/// member rows of a batch of triplets; in triplet mode the triplet hinge is
/// added with weight `cfg.triplet_weight`, in vanilla mode it is only logged.
pub fn train(ds: &LabeledDataset, cfg: &TrainConfig, mode: TrainMode) -> Result<TrainedModel> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("nothing to train on".into()));
    }
    cfg.validate(ds.width())?;
    let with_triplets = has_triplet_schedule(ds);
    if mode == TrainMode::Triplet {
        let families = ds.family_counts().len();
        if families < 2 {
            return Err(Error::TooFewFamilies(families));
        }
    }
    let triplet_weight = match mode {
        TrainMode::Vanilla => 0.0,
        TrainMode::Triplet => cfg.triplet_weight,
    };

    let mut net = init_network(&cfg.layer_dims, cfg.seed)?;
    let mut adam = AdamState::new(
        &net,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let diverged = |reason: String| Error::Diverged {
            epoch: epoch + 1,
            reason,
        };
        let (mut recon_sum, mut triplet_sum, mut weight_sum) = (0.0, 0.0, 0.0);
        for step in epoch_batches(ds, cfg, epoch, with_triplets)? {
            let batch = ds.features().select(Axis(0), &step.rows);
            let trace = forward(&net, batch.view())?;
            let objective = TripletObjective {
                triplets: step.triplets,
                margin: cfg.margin,
                triplet_weight,
                reconstruction: true,
            };
            let (recon, triplet, out_grads) = objective.evaluate_parts(&trace)?;
            if !recon.is_finite() || !triplet.is_finite() {
                return Err(diverged(format!("loss {recon} / {triplet}")));
            }
            let grads = backward(&net, &trace, &out_grads)?;
            adam.step(&mut net, &grads).map_err(|e| diverged(e.to_string()))?;

            let w = step.rows.len() as f64;
            recon_sum += recon * w;
            triplet_sum += triplet * w;
            weight_sum += w;
        }
        let entry = EpochLoss {
            epoch: epoch + 1,
            reconstruction: recon_sum / weight_sum,
            triplet: triplet_sum / weight_sum,
        };
        if !entry.reconstruction.is_finite() || !entry.triplet.is_finite() {
            return Err(diverged("non-finite epoch loss".into()));
        }
        log::debug!(
            "epoch {} recon {:.6} triplet {:.6}",
            entry.epoch,
            entry.reconstruction,
            entry.triplet
        );
        curve.push(entry);
    }
    if !net.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            reason: "non-finite parameters".into(),
        });
    }

    Ok(TrainedModel {
        feature_mask: FeatureMask::identity(ds.width()),
        network: net,
        mode,
        config: cfg.clone(),
        loss_curve: curve,
    })
}

/// Reconstruction-only training.
pub fn train_vanilla(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    train(ds, cfg, TrainMode::Vanilla)
}

/// Reconstruction plus weighted triplet loss.
pub fn train_triplet(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    train(ds, cfg, TrainMode::Triplet)
}

/// Bottleneck activations of every row. `ds` must already be masked to the
/// network's input width.
pub fn embed(model: &TrainedModel, ds: &LabeledDataset) -> Result<Array2<f64>> {
    if ds.width() != model.network.input_dim() {
        return Err(Error::shape("embedding input", model.network.input_dim(), ds.width()));
    }
    encode(&model.network, ds.features().view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::SyntheticSpec;
    use crate::neuralnet::{grad_check, init_network, NetworkParams};
    use ndarray::Array2;

    fn blobs(families: usize, dim: usize, per: usize, seed: u64) -> LabeledDataset {
        SyntheticSpec {
            n_families: families,
            dim,
            samples_per_family: per,
            centroid_separation: 10.0,
            clusters_per_family: 1,
        }
        .generate(seed)
        .unwrap()
        .dataset
    }

    fn small_cfg(dims: Vec<usize>) -> TrainConfig {
        TrainConfig {
            layer_dims: dims,
            margin: 1.0,
            triplet_weight: 1.0,
            epochs: 5,
            batch_size: 16,
            triplets_per_epoch: None,
            learning_rate: 1e-3,
            seed: 7,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let ds = blobs(2, 6, 20, 1);
        let mut cfg = small_cfg(vec![6, 4, 2]);
        cfg.epochs = 1;
        cfg.learning_rate = 0.0;
        let model = train_vanilla(&ds, &cfg).unwrap();
        assert_eq!(model.network, init_network(&[6, 4, 2], cfg.seed).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = blobs(3, 6, 20, 2);
        let cfg = small_cfg(vec![6, 5, 2]);
        assert_eq!(train_triplet(&ds, &cfg).unwrap(), train_triplet(&ds, &cfg).unwrap());
        assert_eq!(train_vanilla(&ds, &cfg).unwrap(), train_vanilla(&ds, &cfg).unwrap());
    }

    #[test]
    fn zero_weight_matches_vanilla_bitwise() {
        let ds = blobs(3, 6, 20, 3);
        let mut cfg = small_cfg(vec![6, 5, 2]);
        cfg.triplet_weight = 0.0;
        let t = train_triplet(&ds, &cfg).unwrap();
        let v = train_vanilla(&ds, &cfg).unwrap();
        let bits = |m: &TrainedModel| m.network.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t), bits(&v));
        assert_eq!(t.loss_curve, v.loss_curve);
    }

    #[test]
    fn reconstruction_loss_decreases() {
        let ds = blobs(3, 8, 40, 4);
        let mut cfg = small_cfg(vec![8, 6, 3]);
        cfg.epochs = 50;
        let model = train_vanilla(&ds, &cfg).unwrap();
        let first = model.loss_curve.first().unwrap().reconstruction;
        let last = model.loss_curve.last().unwrap().reconstruction;
        assert!(last < first, "{first} -> {last}");
        assert_eq!(model.loss_curve.len(), 50);
        assert!(model
            .loss_curve
            .iter()
            .all(|e| e.reconstruction.is_finite() && e.triplet.is_finite()));
    }

    #[test]
    fn vanilla_accepts_single_family() {
        let ds = blobs(1, 4, 10, 5);
        let model = train_vanilla(&ds, &small_cfg(vec![4, 2])).unwrap();
        assert!(model.loss_curve.iter().all(|e| e.triplet == 0.0));
        assert!(matches!(
            train_triplet(&ds, &small_cfg(vec![4, 2])),
            Err(Error::TooFewFamilies(1))
        ));
    }

    #[test]
    fn width_and_config_errors() {
        let ds = blobs(2, 4, 10, 6);
        assert!(train_triplet(&ds, &small_cfg(vec![5, 2])).is_err());
        let mut cfg = small_cfg(vec![4, 2]);
        cfg.margin = 0.0;
        assert!(train_triplet(&ds, &cfg).is_err());
        let mut cfg = small_cfg(vec![4, 2]);
        cfg.batch_size = 0;
        assert!(train_triplet(&ds, &cfg).is_err());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let mut ds = blobs(2, 4, 10, 6);
        // Huge inputs make the first MSE overflow.
        let huge = ds.features().mapv(|v| v * 1e300);
        ds = LabeledDataset::from_parts(huge, ds.labels().to_vec(), ds.timestamps().to_vec())
            .unwrap();
        match train_vanilla(&ds, &small_cfg(vec![4, 2])) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn embeddings() {
        let ds = blobs(2, 4, 10, 8);
        let model = train_triplet(&ds, &small_cfg(vec![4, 3, 2])).unwrap();
        let e = embed(&model, &ds).unwrap();
        assert_eq!(e.dim(), (20, 2));
        assert_eq!(e, embed(&model, &ds).unwrap());

        let mut zero = model.clone();
        zero.network = NetworkParams::zeros(&[4, 3, 2]).unwrap();
        assert!(embed(&zero, &ds).unwrap().iter().all(|&v| v == 0.0));

        let narrow = crate::dataio::apply_mask(&ds, &FeatureMask::new(vec![0, 1], 0.0).unwrap()).unwrap();
        assert!(embed(&model, &narrow).is_err());
        assert!(model.clone().with_mask(FeatureMask::identity(3)).is_err());
        assert!(model.with_mask(FeatureMask::identity(4)).is_ok());
    }

    #[test]
    fn inactive_triplet_objective_has_zero_gradient() {
        // Anchor and positive coincide, negative is far: hinge inactive.
        let mut net = NetworkParams::zeros(&[2, 2]).unwrap();
        for layer in net.layers_mut() {
            layer.weights = Array2::eye(2);
        }
        let batch = ndarray::array![[0.0, 0.0], [0.0, 0.0], [5.0, 5.0]];
        let objective = TripletObjective {
            triplets: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
            }],
            margin: 1.0,
            triplet_weight: 1.0,
            reconstruction: false,
        };
        let trace = forward(&net, batch.view()).unwrap();
        let (loss, grads) = objective.evaluate(&trace).unwrap();
        assert_eq!(loss, 0.0);
        assert!(backward(&net, &trace, &grads).unwrap().is_zero());
        assert_eq!(grad_check(&net, batch.view(), &objective).unwrap(), 0.0);
    }
}
