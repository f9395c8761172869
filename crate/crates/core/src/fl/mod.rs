//! Federated averaging on small models: local SGD, weighted aggregation and
//! model/update arithmetic over flat parameter vectors.

mod data;
mod model;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub use data::{parse_idx, read_delimited, read_idx_pair, Blobs, ClientDataset, Dataset};
pub use model::{Activation, Architecture};

use crate::codec::{self, DecodeError};
use crate::ledger::ClientId;
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("aggregation weights must be positive and finite")]
    BadWeight,
    #[error("training diverged for {client} in round {round}: non-finite parameters")]
    Divergence { client: ClientId, round: u64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] DecodeError),
}

/// Global model `M^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel<T: Scalar = f64> {
    pub weights: Vec<T>,
    pub arch: Architecture,
    pub round: u64,
}

/// Parameter delta `U_k^t = w_k(t) - w(t-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate<T: Scalar = f64> {
    pub delta: Vec<T>,
    pub client_id: ClientId,
    pub round: u64,
}

impl<T: Scalar> ModelUpdate<T> {
    pub fn zeros(dim: usize, client_id: ClientId, round: u64) -> Self {
        Self { delta: vec![T::zero(); dim], client_id, round }
    }

    pub fn scaled(mut self, factor: T) -> Self {
        self.delta.iter_mut().for_each(|v| *v = *v * factor);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Local epochs per round. Zero is allowed and yields a zero update.
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub clients: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, local_epochs: 5, batch_size: 16, rounds: 20, clients: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(FlError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(FlError::Config("batch size must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(FlError::Config("at least one round is required".into()));
        }
        if self.clients < 2 {
            return Err(FlError::Config("at least two clients are required".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> GlobalModel<T> {
    pub fn new(arch: Architecture, weights: Vec<T>) -> Result<Self, FlError> {
        check_dim(arch.param_count(), weights.len())?;
        Ok(Self { weights, arch, round: 0 })
    }

    pub fn init(arch: Architecture, seed: u64) -> Self {
        let weights = arch.init(&mut ChaCha20Rng::seed_from_u64(seed));
        Self { weights, arch, round: 0 }
    }

    pub fn distance(&self, other: &GlobalModel<T>) -> T {
        self.weights.iter().zip(&other.weights).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt()
    }

    /// Length-prefixed binary checkpoint: magic, architecture descriptor,
    /// round, then the canonical `f64` weight vector.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = b"FLMC".to_vec();
        let dims: [u64; 5] = match self.arch {
            Architecture::Logistic { features, classes } => [0, features as u64, 0, classes as u64, 0],
            Architecture::Mlp { features, hidden, classes, activation } => [
                1,
                features as u64,
                hidden as u64,
                classes as u64,
                match activation {
                    Activation::Tanh => 0,
                    Activation::Relu => 1,
                },
            ],
        };
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&codec::encode_vector(&self.weights));
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, FlError> {
        if bytes.get(..4) != Some(b"FLMC".as_slice()) {
            return Err(DecodeError::Malformed("bad checkpoint magic").into());
        }
        let field = |i: usize| codec::read_u64(bytes, 4 + 8 * i);
        let (kind, features, hidden, classes, act) =
            (field(0)?, field(1)? as usize, field(2)? as usize, field(3)? as usize, field(4)?);
        let arch = match (kind, act) {
            (0, 0) => Architecture::Logistic { features, classes },
            (1, 0 | 1) => Architecture::Mlp {
                features,
                hidden,
                classes,
                activation: if act == 0 { Activation::Tanh } else { Activation::Relu },
            },
            _ => return Err(DecodeError::Malformed("unknown architecture").into()),
        };
        let round = field(5)?;
        let weights = codec::decode_vector(&bytes[4 + 8 * 6..])?;
        let mut model = Self::new(arch, weights)?;
        model.round = round;
        Ok(model)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), FlError> {
    if expected == got {
        Ok(())
    } else {
        Err(FlError::DimensionMismatch { expected, got })
    }
}

/// Seed for one client's shuffling stream in one round.
pub fn client_seed(seed: u64, client: ClientId, round: u64) -> u64 {
    seed ^ (u64::from(client.0).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        ^ round.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Runs `cfg.local_epochs` epochs of shuffled mini-batch SGD from the global
/// weights and returns the difference.
pub fn local_train<T: Scalar>(
    model: &GlobalModel<T>,
    data: &ClientDataset<T>,
    cfg: &TrainConfig,
) -> Result<ModelUpdate<T>, FlError> {
    check_dim(model.arch.features(), data.data.features())?;
    let client = data.client_id;
    let mut rng = ChaCha20Rng::seed_from_u64(client_seed(cfg.seed, client, model.round));
    let mut w = model.weights.clone();
    let mut grad = vec![T::zero(); w.len()];
    let lr = T::lit(cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.data.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let rows = batch.iter().map(|&i| data.data.row(i));
            model.arch.loss_and_grad(&w, rows, &mut grad);
            for (p, g) in w.iter_mut().zip(&grad) {
                *p = *p - lr * *g;
            }
        }
        if !all_finite(&w) {
            return Err(FlError::Divergence { client, round: model.round });
        }
    }
    let delta = w.iter().zip(&model.weights).map(|(&a, &b)| a - b).collect();
    Ok(ModelUpdate { delta, client_id: client, round: model.round })
}

/// Weighted mean `sum(w_k U_k) / sum(w_k)`.
pub fn fedavg_aggregate<T: Scalar>(
    updates: &[ModelUpdate<T>],
    weights: &[T],
) -> Result<ModelUpdate<T>, FlError> {
    let first = updates.first().ok_or(FlError::EmptyInput)?;
    check_dim(updates.len(), weights.len())?;
    if weights.iter().any(|w| !(w.is_finite() && *w > T::zero())) {
        return Err(FlError::BadWeight);
    }
    let dim = first.delta.len();
    let mut acc = vec![T::zero(); dim];
    for (u, &w) in updates.iter().zip(weights) {
        check_dim(dim, u.delta.len())?;
        for (a, &v) in acc.iter_mut().zip(&u.delta) {
            *a = *a + w * v;
        }
    }
    let total: T = weights.iter().copied().sum();
    acc.iter_mut().for_each(|a| *a = *a / total);
    Ok(ModelUpdate { delta: acc, client_id: ClientId::SERVER, round: first.round })
}

/// `M + U`, advancing the round.
pub fn apply_update<T: Scalar>(
    model: &GlobalModel<T>,
    agg: &ModelUpdate<T>,
) -> Result<GlobalModel<T>, FlError> {
    check_dim(model.weights.len(), agg.delta.len())?;
    Ok(GlobalModel {
        weights: model.weights.iter().zip(&agg.delta).map(|(&w, &u)| w + u).collect(),
        arch: model.arch,
        round: model.round + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy and mean cross-entropy. An empty dataset scores zero on both.
pub fn evaluate<T: Scalar>(model: &GlobalModel<T>, data: &Dataset<T>) -> Evaluation {
    if data.is_empty() {
        return Evaluation { accuracy: 0.0, loss: 0.0 };
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    let classes = model.arch.classes();
    for (x, y) in data.rows() {
        if y < classes {
            if model.arch.predict(&model.weights, x) == y {
                correct += 1;
            }
            loss += model.arch.example_loss(&model.weights, x, y).to_f64_lossless();
        } else {
            loss += f64::INFINITY;
        }
    }
    let n = data.len() as f64;
    Evaluation { accuracy: correct as f64 / n, loss: loss / n }
}

/// Per-example cross-entropy, for membership inference.
pub fn example_losses<T: Scalar>(model: &GlobalModel<T>, data: &Dataset<T>) -> Vec<f64> {
    data.rows().map(|(x, y)| model.arch.example_loss(&model.weights, x, y).to_f64_lossless()).collect()
}

#[cfg(test)]
mod tests;
