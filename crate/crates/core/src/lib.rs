//! Detection of previously unseen malware families.
//!
//! Feature vectors are embedded by an autoencoder trained with a combined
//! reconstruction and triplet objective. Each known family is clustered in
//! the latent space with DBSCAN; a sample whose distance to the nearest
//! cluster centroid exceeds that cluster's radius is flagged as drift.

pub mod clusterer;
pub mod dataio;
pub mod detector;
pub mod error;
pub mod harness;
pub mod metric;
pub mod neuralnet;
pub mod stats;

pub use error::{Error, Result};
