//! Binary model files.
//!
//! Both file kinds share one container, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   b"FDNETWRK" (network) or b"FDFAMILY" (family model)
//! version    u32       FORMAT_VERSION
//! length     u64       body length in bytes
//! body       length bytes
//! checksum   32 bytes  SHA-256 of body
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Reals are IEEE-754 f64
//! bit patterns, so values round-trip exactly. See the README for the body
//! layouts.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use sha2::{Digest, Sha256};

use crate::clusterer::{ClusterSummary, FamilyModel, Provenance};
use crate::dataio::FeatureMask;
use crate::error::{Error, Result};
use crate::metric::{EpochLoss, TrainConfig, TrainMode, TrainedModel};
use crate::neuralnet::{Activation, Dense, NetworkParams};

pub const FORMAT_VERSION: u32 = 1;
pub const NETWORK_MAGIC: &[u8; 8] = b"FDNETWRK";
pub const FAMILY_MAGIC: &[u8; 8] = b"FDFAMILY";
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupted(format!("body ends early at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupted("count overflows usize".into()))
    }
    /// A count of items that each occupy at least `item_bytes`, checked
    /// against the remaining input before anything is allocated.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(item_bytes.max(1)) > self.buf.len() - self.pos {
            return Err(Error::Corrupted(format!("count {n} exceeds remaining body")));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupted("string is not UTF-8".into()))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Corrupted(format!("bad flag byte {b}"))),
        }
    }
    fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Corrupted(format!("{} trailing body bytes", self.buf.len() - self.pos)))
        }
    }
}

fn seal(magic: &[u8; 8], body: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + CHECKSUM_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&Sha256::digest(&body));
    out
}

fn unseal<'a>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<&'a [u8]> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(Error::Corrupted(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Corrupted(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if len != (bytes.len() - HEADER_LEN - CHECKSUM_LEN) as u64 {
        return Err(Error::Corrupted(format!(
            "header declares {len} body bytes, file holds {}",
            bytes.len() - HEADER_LEN - CHECKSUM_LEN
        )));
    }
    let (body, checksum) = bytes[HEADER_LEN..].split_at(len as usize);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::Corrupted("checksum mismatch".into()));
    }
    Ok(body)
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// half-written model.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn mode_tag(mode: TrainMode) -> u8 {
    match mode {
        TrainMode::Vanilla => 0,
        TrainMode::Triplet => 1,
    }
}

pub fn network_to_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut w = Writer::default();
    let net = &model.network;
    w.u8(mode_tag(model.mode));
    w.usize(net.layer_dims().len());
    for &d in net.layer_dims() {
        w.usize(d);
    }
    for layer in net.layers() {
        w.u8(layer.activation.tag());
    }
    let mask = &model.feature_mask;
    w.f64(mask.min_variance());
    w.usize(mask.len());
    for &i in mask.kept_indices() {
        w.usize(i);
    }
    let c = &model.config;
    w.f64(c.margin);
    w.f64(c.triplet_weight);
    w.usize(c.epochs);
    w.usize(c.batch_size);
    w.usize(c.triplets_per_epoch.unwrap_or(0));
    w.f64(c.learning_rate);
    w.u64(c.seed);
    w.usize(model.loss_curve.len());
    for e in &model.loss_curve {
        w.usize(e.epoch);
        w.f64(e.reconstruction);
        w.f64(e.triplet);
    }
    let flat = net.flatten();
    w.usize(flat.len());
    w.f64s(flat.iter().copied());
    seal(NETWORK_MAGIC, w.0)
}

pub fn network_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader {
        buf: unseal(NETWORK_MAGIC, bytes)?,
        pos: 0,
    };
    let mode = match r.u8()? {
        0 => TrainMode::Vanilla,
        1 => TrainMode::Triplet,
        t => return Err(Error::Corrupted(format!("unknown training mode tag {t}"))),
    };
    let n_dims = r.count(8)?;
    let dims = (0..n_dims).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let n_layers = 2 * n_dims.saturating_sub(1);
    let activations = (0..n_layers)
        .map(|_| {
            let t = r.u8()?;
            Activation::from_tag(t).ok_or_else(|| Error::Corrupted(format!("unknown activation tag {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let min_variance = r.f64()?;
    let n_kept = r.count(8)?;
    let kept = (0..n_kept).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let mask = FeatureMask::new(kept, min_variance).map_err(|e| Error::Corrupted(e.to_string()))?;
    let margin = r.f64()?;
    let triplet_weight = r.f64()?;
    let epochs = r.usize()?;
    let batch_size = r.usize()?;
    let triplets_per_epoch = Some(r.usize()?).filter(|&t| t > 0);
    let learning_rate = r.f64()?;
    let seed = r.u64()?;
    let n_curve = r.count(24)?;
    let loss_curve = (0..n_curve)
        .map(|_| {
            Ok(EpochLoss {
                epoch: r.usize()?,
                reconstruction: r.f64()?,
                triplet: r.f64()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_params = r.count(8)?;
    let flat = r.f64s(n_params)?;
    r.finish()?;

    let mut net = NetworkParams::zeros(&dims).map_err(|e| Error::Corrupted(e.to_string()))?;
    if net.num_params() != n_params {
        return Err(Error::Corrupted(format!(
            "{n_params} parameters stored, layer dims need {}",
            net.num_params()
        )));
    }
    net.assign_flat(&flat)?;
    let layers: Vec<Dense> = net
        .layers()
        .iter()
        .zip(activations)
        .map(|(l, activation)| Dense {
            weights: l.weights.clone(),
            bias: l.bias.clone(),
            activation,
        })
        .collect();
    let network = NetworkParams::from_layers(dims.clone(), layers).map_err(|e| Error::Corrupted(e.to_string()))?;
    if mask.len() != network.input_dim() {
        return Err(Error::Corrupted(format!(
            "feature mask keeps {} columns, network expects {}",
            mask.len(),
            network.input_dim()
        )));
    }
    Ok(TrainedModel {
        network,
        feature_mask: mask,
        mode,
        config: TrainConfig {
            layer_dims: dims,
            margin,
            triplet_weight,
            epochs,
            batch_size,
            triplets_per_epoch,
            learning_rate,
            seed,
        },
        loss_curve,
    })
}

/// Hex SHA-256 of a serialized file.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the network's serialized form; family models record it.
pub fn network_hash(model: &TrainedModel) -> String {
    bytes_hash(&network_to_bytes(model))
}

/// Saves the network and returns its hash.
pub fn save_network(path: impl AsRef<Path>, model: &TrainedModel) -> Result<String> {
    let bytes = network_to_bytes(model);
    write_atomic(path.as_ref(), &bytes)?;
    Ok(bytes_hash(&bytes))
}

/// Loads a network and the hash of the file it came from.
pub fn load_network(path: impl AsRef<Path>) -> Result<(TrainedModel, String)> {
    let bytes = fs::read(path)?;
    let model = network_from_bytes(&bytes)?;
    Ok((model, bytes_hash(&bytes)))
}

pub fn family_model_to_bytes(fm: &FamilyModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.usize(fm.latent_dim);
    w.str(&fm.provenance.network_hash);
    w.str(&fm.provenance.config);
    w.usize(fm.clusters.len());
    for c in &fm.clusters {
        w.str(&c.family);
        w.usize(c.cluster_id);
        w.f64s(c.centroid.iter().copied());
        w.f64(c.threshold);
        w.usize(c.member_count);
        w.usize(c.noise_excluded);
        w.f64(c.eps);
        w.usize(c.min_pts);
        w.u8(c.fallback as u8);
        w.usize(c.member_distances.len());
        w.f64s(c.member_distances.iter().copied());
    }
    seal(FAMILY_MAGIC, w.0)
}

pub fn family_model_from_bytes(bytes: &[u8]) -> Result<FamilyModel> {
    let mut r = Reader {
        buf: unseal(FAMILY_MAGIC, bytes)?,
        pos: 0,
    };
    let latent_dim = r.usize()?;
    let provenance = Provenance {
        network_hash: r.str()?,
        config: r.str()?,
    };
    let n = r.count(8 * latent_dim + 4)?;
    let mut clusters = Vec::with_capacity(n);
    for _ in 0..n {
        let family = r.str()?;
        let cluster_id = r.usize()?;
        let centroid = Array1::from(r.f64s(latent_dim)?);
        let threshold = r.f64()?;
        let member_count = r.usize()?;
        let noise_excluded = r.usize()?;
        let eps = r.f64()?;
        let min_pts = r.usize()?;
        let fallback = r.bool()?;
        let n_dist = r.count(8)?;
        let member_distances = r.f64s(n_dist)?;
        clusters.push(ClusterSummary {
            family,
            cluster_id,
            centroid,
            threshold,
            member_count,
            noise_excluded,
            eps,
            min_pts,
            fallback,
            member_distances,
        });
    }
    r.finish()?;
    FamilyModel::new(latent_dim, clusters, provenance).map_err(|e| Error::Corrupted(e.to_string()))
}

pub fn save_family_model(path: impl AsRef<Path>, fm: &FamilyModel) -> Result<()> {
    write_atomic(path.as_ref(), &family_model_to_bytes(fm))
}

/// Loads a family model, refusing it when `network_hash` is given and does
/// not match the network it was built from.
pub fn load_family_model(path: impl AsRef<Path>, network_hash: Option<&str>) -> Result<FamilyModel> {
    let fm = family_model_from_bytes(&fs::read(path)?)?;
    if let Some(expected) = network_hash {
        if fm.provenance.network_hash != expected {
            return Err(Error::HashMismatch {
                expected: expected.to_string(),
                actual: fm.provenance.network_hash.clone(),
            });
        }
    }
    Ok(fm)
}
