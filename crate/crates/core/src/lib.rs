//! Knowledge-graph fused fine-tuning for a small text-to-text
//! encoder-decoder.
//!
//! The crate is organized bottom-up:
//!
//! * [`kg`] — interned knowledge graphs, mention linking, subgraph sampling
//! * [`embed`] — translational KG embeddings and cosine similarity
//! * [`autodiff`] — a tape-based reverse-mode autodiff over `f64` tensors
//! * [`model`] — vocabulary, span corruption and the encoder-decoder with
//!   KG-augmented encoder input
//! * [`trainer`] — the joint objective `L + λ·Sim`, Adam, pretraining,
//!   fine-tuning and checkpoints
//! * [`data`] — synthetic KG/QA generation and SQuAD v1.1 ingestion
//! * [`harness`] — ablation and KG-scale experiments, metrics and reports

pub mod autodiff;
pub mod data;
pub mod embed;
pub mod harness;
pub mod kg;
pub mod model;
pub mod trainer;

pub use autodiff::{Tape, Tensor, Var};
pub use embed::{EmbeddingTable, TransEConfig};
pub use kg::{EntityId, KnowledgeGraph, RelationId, Triple};
pub use model::{AugmentedInput, ModelConfig, ModelParams, Variant, Vocabulary};

/// FNV-1a over the bit patterns of a float sequence.
pub fn checksum_f64(values: impl IntoIterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
