//! Tiny T5-style encoder-decoder with KG-augmented encoder input.

mod augment;
mod span;
mod transformer;
pub mod vocab;

#[cfg(test)]
mod tests;

use thiserror::Error;

use crate::autodiff::TensorError;

pub use augment::{augmented_input_matrix, build_encoder_input, AugmentedInput, AttentionMask, EncoderInput, KgBinding, Variant};
pub use span::{apply_spans, reconstruct, sample_spans, span_corrupt, Span};
pub use transformer::{greedy_decode, ModelConfig, ModelParams, ParamLayout, BoundParams, REL_MAX_DISTANCE};
pub use vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{0} spans need more than the 32 available sentinels")]
    TooManySpans(usize),
    #[error("sequence of length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("decoder input must begin with BOS")]
    MissingBos,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("KG id out of range for the embedding table")]
    UnknownKgId,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
