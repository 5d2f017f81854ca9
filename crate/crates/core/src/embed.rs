//! Translational knowledge-graph embeddings.
//!
//! Entities and relations live in the same `d`-dimensional space and a
//! triple `(h, r, t)` is scored by `‖v_h + e_r − v_t‖₂`, lower meaning more
//! plausible. Training minimizes the margin-ranking loss against uniformly
//! corrupted triples with plain SGD, renormalizing entity rows to unit
//! length after every epoch.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::norm;
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("graph has no entities or triples")]
    EmptyGraph,
    #[error("id out of range for the embedding table")]
    UnknownId,
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("embedding file line {line}: {msg}")]
    FormatError { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-entity and per-relation vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, entities: Vec<f64>, relations: Vec<f64>) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::DimMismatch(0, 1));
        }
        if entities.len() % dim != 0 {
            return Err(EmbedError::DimMismatch(entities.len(), dim));
        }
        if relations.len() % dim != 0 {
            return Err(EmbedError::DimMismatch(relations.len(), dim));
        }
        Ok(Self { dim, entities, relations })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len() / self.dim
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len() / self.dim
    }

    pub fn entity(&self, e: EntityId) -> Option<&[f64]> {
        self.entities.get(e.0 * self.dim..(e.0 + 1) * self.dim)
    }

    pub fn relation(&self, r: RelationId) -> Option<&[f64]> {
        self.relations.get(r.0 * self.dim..(r.0 + 1) * self.dim)
    }

    pub fn entity_data(&self) -> &[f64] {
        &self.entities
    }

    pub fn relation_data(&self) -> &[f64] {
        &self.relations
    }

    pub fn entity_data_mut(&mut self) -> &mut [f64] {
        &mut self.entities
    }

    pub fn relation_data_mut(&mut self) -> &mut [f64] {
        &mut self.relations
    }

    pub fn tables_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.entities, &mut self.relations)
    }

    pub fn all_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }

    /// FNV-1a over the bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        crate::checksum_f64(self.entities.iter().chain(&self.relations).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransEConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: 0.01,
            negatives_per_positive: 1,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            init_scale: 6.0,
        }
    }
}

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_INIT_SCALE: f64 = 6.0;

/// Uniform init in `±init_scale/√d` with the default scale.
pub fn init_embeddings(g: &KnowledgeGraph, d: usize, seed: u64) -> Result<EmbeddingTable, EmbedError> {
    init_embeddings_scaled(g, d, seed, DEFAULT_INIT_SCALE)
}

pub fn init_embeddings_scaled(g: &KnowledgeGraph, d: usize, seed: u64, init_scale: f64) -> Result<EmbeddingTable, EmbedError> {
    if g.num_entities() == 0 {
        return Err(EmbedError::EmptyGraph);
    }
    if d == 0 {
        return Err(EmbedError::DimMismatch(0, 1));
    }
    let bound = init_scale / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
    let entities = draw(g.num_entities() * d);
    let relations = draw(g.num_relations() * d);
    EmbeddingTable::new(d, entities, relations)
}

fn rows<'a>(emb: &'a EmbeddingTable, t: &Triple) -> Result<(&'a [f64], &'a [f64], &'a [f64]), EmbedError> {
    Ok((
        emb.entity(t.head).ok_or(EmbedError::UnknownId)?,
        emb.relation(t.relation).ok_or(EmbedError::UnknownId)?,
        emb.entity(t.tail).ok_or(EmbedError::UnknownId)?,
    ))
}

/// `‖v_head + e_rel − v_tail‖₂`.
pub fn transe_score(emb: &EmbeddingTable, t: &Triple) -> Result<f64, EmbedError> {
    let (h, r, tl) = rows(emb, t)?;
    Ok(h.iter().zip(r).zip(tl).map(|((a, b), c)| (a + b - c).powi(2)).sum::<f64>().sqrt())
}

/// Gradient of one score with respect to its head, relation and tail rows.
/// At the non-differentiable point (zero residual) the zero subgradient is used.
fn score_grad(emb: &EmbeddingTable, t: &Triple) -> (f64, Vec<f64>) {
    let (h, r, tl) = rows(emb, t).expect("validated triple");
    let diff: Vec<f64> = h.iter().zip(r).zip(tl).map(|((a, b), c)| a + b - c).collect();
    let n = norm(&diff);
    let unit = if n > 0.0 { diff.iter().map(|v| v / n).collect() } else { vec![0.0; diff.len()] };
    (n, unit)
}

/// Sparse gradient of a margin-ranking pair, keyed by row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairGradient {
    pub entities: Vec<(EntityId, Vec<f64>)>,
    pub relations: Vec<(RelationId, Vec<f64>)>,
}

impl PairGradient {
    fn push_entity(&mut self, e: EntityId, g: Vec<f64>, sign: f64) {
        let g: Vec<f64> = g.into_iter().map(|v| v * sign).collect();
        match self.entities.iter_mut().find(|(id, _)| *id == e) {
            Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.entities.push((e, g)),
        }
    }

    fn push_relation(&mut self, r: RelationId, g: Vec<f64>, sign: f64) {
        let g: Vec<f64> = g.into_iter().map(|v| v * sign).collect();
        match self.relations.iter_mut().find(|(id, _)| *id == r) {
            Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.relations.push((r, g)),
        }
    }
}

/// `max(0, margin + score(pos) − score(neg))` and its gradient.
pub fn margin_pair_loss(emb: &EmbeddingTable, pos: &Triple, neg: &Triple, margin: f64) -> Result<(f64, PairGradient), EmbedError> {
    rows(emb, pos)?;
    rows(emb, neg)?;
    let (sp, up) = score_grad(emb, pos);
    let (sn, un) = score_grad(emb, neg);
    let loss = margin + sp - sn;
    let mut grad = PairGradient::default();
    if loss <= 0.0 {
        return Ok((0.0, grad));
    }
    // d score / d head = u, d/d rel = u, d/d tail = -u
    for (t, u, sign) in [(pos, up, 1.0), (neg, un, -1.0)] {
        grad.push_entity(t.head, u.clone(), sign);
        grad.push_relation(t.relation, u.clone(), sign);
        grad.push_entity(t.tail, u, -sign);
    }
    Ok((loss, grad))
}

/// Corrupts head or tail (fair coin) with a uniformly drawn entity.
fn corrupt<R: Rng>(t: &Triple, n_entities: usize, rng: &mut R) -> Triple {
    let replacement = EntityId(rng.gen_range(0..n_entities));
    if rng.gen_bool(0.5) {
        Triple { head: replacement, ..*t }
    } else {
        Triple { tail: replacement, ..*t }
    }
}

fn normalize_rows(data: &mut [f64], dim: usize) {
    for row in data.chunks_mut(dim) {
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Trains translational embeddings; returns the table and one mean loss per epoch.
pub fn train_kg_embeddings(g: &KnowledgeGraph, cfg: &TransEConfig, d: usize) -> Result<(EmbeddingTable, Vec<f64>), EmbedError> {
    if g.triples().is_empty() {
        return Err(EmbedError::EmptyGraph);
    }
    let mut emb = init_embeddings_scaled(g, d, cfg.seed, cfg.init_scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let n_ent = g.num_entities();
    let mut order: Vec<usize> = (0..g.triples().len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut ent_grad = vec![0.0; emb.entities.len()];
    let mut rel_grad = vec![0.0; emb.relations.len()];

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut pairs = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            ent_grad.iter_mut().for_each(|v| *v = 0.0);
            rel_grad.iter_mut().for_each(|v| *v = 0.0);
            for &i in batch {
                let pos = g.triples()[i];
                for _ in 0..cfg.negatives_per_positive {
                    let neg = corrupt(&pos, n_ent, &mut rng);
                    let (loss, grad) = margin_pair_loss(&emb, &pos, &neg, cfg.margin)?;
                    epoch_loss += loss;
                    pairs += 1;
                    for (e, gv) in grad.entities {
                        add_row(&mut ent_grad, e.0, d, &gv);
                    }
                    for (r, gv) in grad.relations {
                        add_row(&mut rel_grad, r.0, d, &gv);
                    }
                }
            }
            for (w, gv) in emb.entities.iter_mut().zip(&ent_grad) {
                *w -= cfg.learning_rate * gv;
            }
            for (w, gv) in emb.relations.iter_mut().zip(&rel_grad) {
                *w -= cfg.learning_rate * gv;
            }
        }
        normalize_rows(&mut emb.entities, d);
        trace.push(epoch_loss / pairs.max(1) as f64);
    }
    Ok((emb, trace))
}

fn add_row(buf: &mut [f64], row: usize, dim: usize, g: &[f64]) {
    for (b, v) in buf[row * dim..(row + 1) * dim].iter_mut().zip(g) {
        *b += v;
    }
}

/// `(v·e) / (‖v‖‖e‖)`; a zero-norm argument is an error.
pub fn cosine_sim(v: &[f64], e: &[f64]) -> Result<f64, EmbedError> {
    if v.len() != e.len() {
        return Err(EmbedError::DimMismatch(v.len(), e.len()));
    }
    let (nv, ne) = (norm(v), norm(e));
    if nv == 0.0 || ne == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
    Ok(dot / (nv * ne))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPrediction {
    pub hits_at_k: f64,
    pub mean_rank: f64,
}

/// Raw tail ranks over all entities, ties broken by entity id ascending.
pub fn tail_ranks(emb: &EmbeddingTable, g: &KnowledgeGraph) -> Result<Vec<usize>, EmbedError> {
    if g.triples().is_empty() {
        return Err(EmbedError::EmptyGraph);
    }
    let n = emb.num_entities();
    let mut ranks = Vec::with_capacity(g.triples().len());
    for t in g.triples() {
        let truth = transe_score(emb, t)?;
        let mut rank = 1;
        for c in 0..n {
            if c == t.tail.0 {
                continue;
            }
            let s = transe_score(emb, &Triple { tail: EntityId(c), ..*t })?;
            if s < truth || (s == truth && c < t.tail.0) {
                rank += 1;
            }
        }
        ranks.push(rank);
    }
    Ok(ranks)
}

pub fn link_prediction_eval(emb: &EmbeddingTable, g: &KnowledgeGraph, k: usize) -> Result<LinkPrediction, EmbedError> {
    let ranks = tail_ranks(emb, g)?;
    let n = ranks.len() as f64;
    Ok(LinkPrediction {
        hits_at_k: ranks.iter().filter(|&&r| r <= k).count() as f64 / n,
        mean_rank: ranks.iter().sum::<usize>() as f64 / n,
    })
}

/// Entity and relation names stored alongside an embedding file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingNames {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

impl EmbeddingNames {
    pub fn from_graph(g: &KnowledgeGraph) -> Self {
        Self { entities: g.entity_names().to_vec(), relations: g.relation_names().to_vec() }
    }
}

const EMB_MAGIC: &str = "kge-v1";

pub fn format_embeddings(emb: &EmbeddingTable, names: &EmbeddingNames) -> Result<String, EmbedError> {
    if names.entities.len() != emb.num_entities() {
        return Err(EmbedError::DimMismatch(names.entities.len(), emb.num_entities()));
    }
    if names.relations.len() != emb.num_relations() {
        return Err(EmbedError::DimMismatch(names.relations.len(), emb.num_relations()));
    }
    let d = emb.dim;
    let mut out = format!("{EMB_MAGIC} {d} {} {}\n", emb.num_entities(), emb.num_relations());
    let sections = [("E", &names.entities, &emb.entities), ("R", &names.relations, &emb.relations)];
    for (tag, ns, data) in sections {
        for (name, row) in ns.iter().zip(data.chunks(d)) {
            let values: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{tag}\t{name}\t{}", values.join(" ")).expect("string write");
        }
    }
    Ok(out)
}

pub fn save_embeddings(emb: &EmbeddingTable, names: &EmbeddingNames, path: impl AsRef<Path>) -> Result<(), EmbedError> {
    fs::write(path, format_embeddings(emb, names)?)?;
    Ok(())
}

pub fn parse_embeddings(text: &str) -> Result<(EmbeddingTable, EmbeddingNames), EmbedError> {
    let bad = |line: usize, msg: &str| EmbedError::FormatError { line, msg: msg.to_owned() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != EMB_MAGIC {
        return Err(bad(1, "expected `kge-v1 <d> <entities> <relations>`"));
    }
    let parse_count = |s: &str| s.parse::<usize>().map_err(|_| bad(1, "bad count"));
    let (d, n_e, n_r) = (parse_count(fields[1])?, parse_count(fields[2])?, parse_count(fields[3])?);
    if d == 0 {
        return Err(bad(1, "dimension must be positive"));
    }

    let mut names = EmbeddingNames::default();
    let (mut ents, mut rels) = (Vec::with_capacity(n_e * d), Vec::with_capacity(n_r * d));
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(bad(no, "expected 3 tab-separated fields"));
        }
        let values = parts[2]
            .split(' ')
            .map(|v| v.parse::<f64>().map_err(|_| bad(no, "bad float")))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != d {
            return Err(bad(no, "value count does not match header dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(no, "non-finite value"));
        }
        match parts[0] {
            "E" if rels.is_empty() => {
                names.entities.push(parts[1].to_owned());
                ents.extend(values);
            }
            "R" => {
                names.relations.push(parts[1].to_owned());
                rels.extend(values);
            }
            _ => return Err(bad(no, "expected E lines then R lines")),
        }
    }
    if names.entities.len() != n_e || names.relations.len() != n_r {
        return Err(bad(1, "row counts do not match header"));
    }
    Ok((EmbeddingTable::new(d, ents, rels)?, names))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(EmbeddingTable, EmbeddingNames), EmbedError> {
    parse_embeddings(&fs::read_to_string(path)?)
}
