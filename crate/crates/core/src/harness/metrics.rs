use serde::{Deserialize, Serialize};

use crate::data::{Category, QAExample};
use crate::embed::EmbeddingTable;
use crate::kg::KnowledgeGraph;
use crate::model::{ModelParams, Variant, Vocabulary};
use crate::trainer::{predict, TrainError};

/// Lowercased, trimmed, internal whitespace collapsed to single spaces.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(prediction) == normalize_answer(gold))
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub kg_fraction: f64,
    pub seed: u64,
    pub em_hop1: f64,
    pub em_context: f64,
    pub em_hop2: f64,
    pub n_hop1: usize,
    pub n_context: usize,
    pub n_hop2: usize,
    #[serde(rename = "final_L")]
    pub final_l: f64,
    #[serde(rename = "final_Sim")]
    pub final_sim: f64,
}

/// Exact-match counts per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CategoryScores {
    pub matches: [usize; 3],
    pub totals: [usize; 3],
}

impl CategoryScores {
    fn slot(c: Category) -> usize {
        match c {
            Category::Hop1 => 0,
            Category::Context => 1,
            Category::Hop2 => 2,
        }
    }

    pub fn record(&mut self, c: Category, hit: u8) {
        let i = Self::slot(c);
        self.totals[i] += 1;
        self.matches[i] += usize::from(hit);
    }

    pub fn total(&self, c: Category) -> usize {
        self.totals[Self::slot(c)]
    }

    /// Matches over examples; an empty category scores 0.
    pub fn em(&self, c: Category) -> f64 {
        let i = Self::slot(c);
        if self.totals[i] == 0 {
            0.0
        } else {
            self.matches[i] as f64 / self.totals[i] as f64
        }
    }
}

/// Greedy-decodes every example and scores it by exact match.
pub fn evaluate(
    params: &ModelParams,
    kg: Option<(&KnowledgeGraph, &EmbeddingTable)>,
    vocab: &Vocabulary,
    examples: &[QAExample],
    variant: Variant,
) -> Result<CategoryScores, TrainError> {
    let mut scores = CategoryScores::default();
    for ex in examples {
        let pred = predict(params, kg, vocab, ex, variant)?;
        scores.record(ex.category, exact_match(&pred, &ex.answer));
    }
    Ok(scores)
}
