//! Joint objective, Adam, pretraining and fine-tuning loops, checkpoints.

mod adam;
mod checkpoint;
mod loops;
mod loss;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::TensorError;
use crate::data::DataError;
use crate::embed::EmbedError;
use crate::model::ModelError;

pub use adam::{adam_step, AdamState, ParamSlot, RowMask};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
pub use loops::{
    finetune, finetune_sim_free, predict, prepare_example, pretrain, FinetuneOutput, PreparedExample, TraceEntry,
    MAX_ANSWER_TOKENS,
};
pub use loss::{loss_prime, sim_term, sim_value};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The weighting coefficient of the similarity term. Signed: negative
/// values reward entity/relation similarity, positive values penalize it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub lambda: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { lambda: -0.1 }
    }
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub kg_embeddings_trainable: bool,
    pub eval_every: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 16,
            max_steps: 500,
            grad_clip_norm: Some(1.0),
            seed: 0,
            kg_embeddings_trainable: true,
            eval_every: 50,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a nonnegative number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be a nonnegative number");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive");
        }
        if matches!(self.grad_clip_norm, Some(c) if !(c > 0.0)) {
            return bad("grad_clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
