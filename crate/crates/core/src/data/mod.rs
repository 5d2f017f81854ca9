//! Synthetic KG/QA worlds, dataset splits and SQuAD v1.1 ingestion.

mod split;
mod squad;
mod synthetic;

use thiserror::Error;

pub use split::split;
pub use squad::{ingest_squad, parse_squad, squad_to_json, SquadAnswer, SquadExample};
pub use synthetic::{
    gen_qa, gen_synthetic_kg, read_jsonl, walk_gold, write_jsonl, Category, QAExample, QaCounts, SyntheticKGSpec,
    BORN_IN, CAPITAL_OF, LOCATED_IN, WORKS_AS,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("cannot draw {requested} {category} questions, only {available} subjects available")]
    InfeasibleCount { category: Category, requested: usize, available: usize },
    #[error("schema error at {0}")]
    SchemaError(String),
    #[error("answer offset does not match context for question {0}")]
    OffsetError(String),
    #[error("split ratios must be positive and sum to 1")]
    BadRatios,
    #[error("JSON-lines parse error on line {line}: {msg}")]
    Jsonl { line: usize, msg: String },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
