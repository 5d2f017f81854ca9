//! Encoder input `x = [q, v_i, e_j]`: question token embeddings, a SEP
//! boundary, then one projected row per linked entity and per linked
//! relation, each tagged with a learned type embedding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::transformer::{BoundParams, ModelParams};
use super::vocab::SEP;
use super::ModelError;
use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::embed::EmbeddingTable;
use crate::kg::{EntityId, RelationId};

/// Which KG information enters the encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    None,
    Entity,
    Relation,
    Both,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::None, Variant::Entity, Variant::Relation, Variant::Both];

    pub fn uses_entities(self) -> bool {
        matches!(self, Variant::Entity | Variant::Both)
    }

    pub fn uses_relations(self) -> bool {
        matches!(self, Variant::Relation | Variant::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Entity => "entity",
            Variant::Relation => "relation",
            Variant::Both => "both",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected none, entity, relation or both)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedInput {
    pub question_ids: Vec<usize>,
    pub entity_ids: Vec<EntityId>,
    pub relation_ids: Vec<RelationId>,
    pub variant: Variant,
}

impl AugmentedInput {
    pub fn plain(question_ids: Vec<usize>) -> Self {
        Self { question_ids, entity_ids: Vec::new(), relation_ids: Vec::new(), variant: Variant::None }
    }

    /// Entity ids that actually enter the input under this variant.
    pub fn effective_entities(&self) -> &[EntityId] {
        if self.variant.uses_entities() {
            &self.entity_ids
        } else {
            &[]
        }
    }

    pub fn effective_relations(&self) -> &[RelationId] {
        if self.variant.uses_relations() {
            &self.relation_ids
        } else {
            &[]
        }
    }

    /// Encoder length: `n + [variant≠none]·(1 + |E| + |R|)` over effective ids.
    pub fn encoder_len(&self) -> usize {
        let n = self.question_ids.len();
        if self.variant == Variant::None {
            n
        } else {
            n + 1 + self.effective_entities().len() + self.effective_relations().len()
        }
    }
}

/// Which encoder positions may attend to which. Always full here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
}

impl AttentionMask {
    pub fn full(len: usize) -> Self {
        Self { len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        i < self.len && j < self.len
    }
}

/// Encoder input recorded on a tape.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    pub x: Var,
    pub len: usize,
    /// Rows `0..n_text` are tokens (question plus SEP), the rest KG rows.
    pub n_text: usize,
    pub mask: AttentionMask,
}

/// Entity and relation tables recorded on a tape.
#[derive(Debug, Clone, Copy, Default)]
pub struct KgBinding {
    pub entities: Option<Var>,
    pub relations: Option<Var>,
    pub dim: usize,
}

impl KgBinding {
    pub fn bind(tape: &mut Tape, emb: Option<&EmbeddingTable>, trainable: bool) -> Self {
        let Some(emb) = emb else { return Self::default() };
        let mut record = |data: &[f64], rows: usize| -> Option<Var> {
            if rows == 0 {
                return None;
            }
            let t = Tensor::new(vec![rows, emb.dim()], data.to_vec()).expect("table shape");
            Some(if trainable { tape.param(t) } else { tape.constant(t) })
        };
        let entities = record(emb.entity_data(), emb.num_entities());
        let relations = record(emb.relation_data(), emb.num_relations());
        Self { entities, relations, dim: emb.dim() }
    }
}

fn kg_rows(tape: &mut Tape, table: Option<Var>, ids: &[usize], proj: Var, type_emb: Var, type_row: usize) -> Result<Var, ModelError> {
    let table = table.ok_or(ModelError::UnknownKgId)?;
    let v = tape.gather_rows(table, ids).map_err(|e| match e {
        TensorError::IndexOutOfRange { .. } => ModelError::UnknownKgId,
        other => other.into(),
    })?;
    let projected = tape.matmul(v, proj)?;
    let types = tape.gather_rows(type_emb, &vec![type_row; ids.len()])?;
    Ok(tape.add(projected, types)?)
}

/// Builds the encoder input matrix on `tape`.
pub fn build_encoder_input(
    tape: &mut Tape,
    params: &ModelParams,
    b: &BoundParams,
    a: &AugmentedInput,
    kg: &KgBinding,
) -> Result<EncoderInput, ModelError> {
    let cfg = params.config();
    if a.question_ids.is_empty() {
        return Err(ModelError::InvalidInput("empty question".into()));
    }
    let len = a.encoder_len();
    if len > cfg.max_len {
        return Err(ModelError::TooLong { len, max: cfg.max_len });
    }
    if let Some(&bad) = a.question_ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(ModelError::InvalidInput(format!("token id {bad} outside vocabulary")));
    }
    let embed = params.embed_var(b);
    if a.variant == Variant::None {
        let x = tape.gather_rows(embed, &a.question_ids)?;
        return Ok(EncoderInput { x, len, n_text: len, mask: AttentionMask::full(len) });
    }

    let ents: Vec<usize> = a.effective_entities().iter().map(|e| e.index()).collect();
    let rels: Vec<usize> = a.effective_relations().iter().map(|r| r.index()).collect();
    if (!ents.is_empty() || !rels.is_empty()) && kg.dim != cfg.d_kg {
        return Err(ModelError::InvalidConfig(format!("embedding dim {} != d_kg {}", kg.dim, cfg.d_kg)));
    }
    let mut ids = a.question_ids.clone();
    ids.push(SEP);
    let n_text = ids.len();
    let mut parts = vec![tape.gather_rows(embed, &ids)?];
    let (proj, type_emb) = params.kg_vars(b);
    if !ents.is_empty() {
        parts.push(kg_rows(tape, kg.entities, &ents, proj, type_emb, 0)?);
    }
    if !rels.is_empty() {
        parts.push(kg_rows(tape, kg.relations, &rels, proj, type_emb, 1)?);
    }
    let x = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };
    Ok(EncoderInput { x, len, n_text, mask: AttentionMask::full(len) })
}

/// Value-level encoder input for inspection: `[L×d_model]` plus its mask.
pub fn augmented_input_matrix(a: &AugmentedInput, emb: Option<&EmbeddingTable>, params: &ModelParams) -> Result<(Tensor, AttentionMask), ModelError> {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, false);
    let kg = KgBinding::bind(&mut tape, emb, false);
    let input = build_encoder_input(&mut tape, params, &b, a, &kg)?;
    Ok((tape.value(input.x).clone(), input.mask))
}
