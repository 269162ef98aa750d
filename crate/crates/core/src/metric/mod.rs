//! Metric learning: triplet sampling, the triplet hinge loss, and the
//! autoencoder training loops.

mod loss;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};

pub use loss::{batch_triplet_loss, squared_distance, triplet_loss, TripletGrads};
pub use train::{
    embed, train, train_triplet, train_vanilla, EpochLoss, TrainConfig, TrainMode, TrainedModel,
    TripletObjective, DEFAULT_HIDDEN_DIMS,
};

/// Indices of an (anchor, positive, negative) triple into a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

const ANCHOR_RETRIES: usize = 64;

/// Draws `count` independent triplets. The anchor family is uniform over
/// families, the anchor and positive are distinct members of it, and the
/// negative is uniform over every sample of the other families.
pub fn sample_triplets(ds: &LabeledDataset, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let groups: Vec<Vec<usize>> = ds.family_indices().into_values().collect();
    if groups.len() < 2 {
        return Err(Error::TooFewFamilies(groups.len()));
    }
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(count);
    for _ in 0..count {
        let family = (0..ANCHOR_RETRIES)
            .map(|_| rng.random_range(0..groups.len()))
            .find(|&f| groups[f].len() >= 2)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no family with two or more samples found after {ANCHOR_RETRIES} draws"
                ))
            })?;
        let members = &groups[family];
        let a = rng.random_range(0..members.len());
        let mut p = rng.random_range(0..members.len() - 1);
        if p >= a {
            p += 1;
        }
        let mut r = rng.random_range(0..n - members.len());
        let negative = groups
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != family)
            .find_map(|(_, other)| {
                if r < other.len() {
                    Some(other[r])
                } else {
                    r -= other.len();
                    None
                }
            })
            .expect("r below total size of other families");
        triplets.push(Triplet {
            anchor: members[a],
            positive: members[p],
            negative,
        });
    }
    Ok(triplets)
}
