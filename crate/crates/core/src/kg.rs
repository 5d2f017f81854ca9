//! Immutable knowledge-graph data model.
//!
//! A [`KnowledgeGraph`] interns entity and relation names into dense ids,
//! stores a duplicate-free ordered triple list and an outgoing adjacency
//! index. Graphs are built once (from TSV or through [`GraphBuilder`]) and
//! never mutated afterwards.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("malformed triple on line {0}")]
    MalformedLine(usize),
    #[error("unknown entity id {0}")]
    UnknownEntity(usize),
    #[error("unknown relation id {0}")]
    UnknownRelation(usize),
    #[error("fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("empty name")]
    EmptyName,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub usize);

impl EntityId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// NFC normalization followed by lowercasing.
pub fn normalize_name(s: &str) -> String {
    s.nfc().collect::<String>().to_lowercase()
}

/// Whitespace tokenization of a normalized string.
pub fn tokenize_normalized(s: &str) -> Vec<String> {
    normalize_name(s).split_whitespace().map(str::to_owned).collect()
}

/// Bidirectional name table with dense ids in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, raw: &str) -> Result<usize, KgError> {
        let name = normalize_name(raw.trim());
        if name.is_empty() {
            return Err(KgError::EmptyName);
        }
        if let Some(&id) = self.ids.get(&name) {
            return Ok(id);
        }
        let id = self.names.len();
        self.ids.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    fn get(&self, raw: &str) -> Option<usize> {
        self.ids.get(&normalize_name(raw.trim())).copied()
    }
}

/// Incremental constructor for a [`KnowledgeGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
    duplicates: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns an entity name, possibly leaving it isolated.
    pub fn entity(&mut self, name: &str) -> Result<EntityId, KgError> {
        self.entities.intern(name).map(EntityId)
    }

    pub fn relation(&mut self, name: &str) -> Result<RelationId, KgError> {
        self.relations.intern(name).map(RelationId)
    }

    /// Adds a triple by name. Returns `false` when it was a duplicate.
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> Result<bool, KgError> {
        let h = self.entity(head)?;
        let r = self.relation(relation)?;
        let t = self.entity(tail)?;
        Ok(self.add_ids(h, r, t))
    }

    pub fn add_ids(&mut self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        let t = Triple { head, relation, tail };
        if self.seen.insert(t) {
            self.triples.push(t);
            true
        } else {
            self.duplicates += 1;
            false
        }
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn build(self) -> KnowledgeGraph {
        let mut adjacency = vec![Vec::new(); self.entities.names.len()];
        for t in &self.triples {
            adjacency[t.head.0].push((t.relation, t.tail));
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            triples: self.triples,
            adjacency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
}

/// Outcome of [`load_triples_tsv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadSummary {
    pub lines: usize,
    pub triples: usize,
    pub duplicates: usize,
}

impl KnowledgeGraph {
    pub fn num_entities(&self) -> usize {
        self.entities.names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.names.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_name(&self, e: EntityId) -> Option<&str> {
        self.entities.names.get(e.0).map(String::as_str)
    }

    pub fn relation_name(&self, r: RelationId) -> Option<&str> {
        self.relations.names.get(r.0).map(String::as_str)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities.names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations.names
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    /// Outgoing `(relation, tail)` pairs of `e` in triple insertion order.
    pub fn neighbors(&self, e: EntityId) -> Result<&[(RelationId, EntityId)], KgError> {
        self.adjacency
            .get(e.0)
            .map(Vec::as_slice)
            .ok_or(KgError::UnknownEntity(e.0))
    }

    pub fn check_triple(&self, t: &Triple) -> Result<(), KgError> {
        for e in [t.head, t.tail] {
            if e.0 >= self.num_entities() {
                return Err(KgError::UnknownEntity(e.0));
            }
        }
        if t.relation.0 >= self.num_relations() {
            return Err(KgError::UnknownRelation(t.relation.0));
        }
        Ok(())
    }

    /// Links surface mentions in `tokens` to entities, longest match first.
    ///
    /// Every contiguous token span that spells an entity name is a
    /// candidate. Candidates are accepted longest-first (earlier start wins
    /// ties) as long as they do not overlap an accepted one. Entities come
    /// back ordered by mention start, each at most once; relations are the
    /// outgoing relations of the linked entities in discovery order.
    pub fn link_mentions<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<EntityId>, Vec<RelationId>) {
        let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        let mut candidates: Vec<(usize, usize, EntityId)> = Vec::new();
        for (id, name) in self.entities.names.iter().enumerate() {
            let parts: Vec<&str> = name.split_whitespace().collect();
            if parts.is_empty() || parts.len() > tokens.len() {
                continue;
            }
            for start in 0..=tokens.len() - parts.len() {
                if tokens[start..start + parts.len()] == parts[..] {
                    candidates.push((start, parts.len(), EntityId(id)));
                }
            }
        }
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)).then(a.2.cmp(&b.2)));

        let mut taken = vec![false; tokens.len()];
        let mut accepted: Vec<(usize, EntityId)> = Vec::new();
        for (start, len, id) in candidates {
            if taken[start..start + len].iter().any(|&t| t) {
                continue;
            }
            taken[start..start + len].iter_mut().for_each(|t| *t = true);
            accepted.push((start, id));
        }
        accepted.sort_by_key(|&(start, _)| start);

        let mut entities = Vec::new();
        let mut seen_e = HashSet::new();
        for (_, id) in accepted {
            if seen_e.insert(id) {
                entities.push(id);
            }
        }
        let mut relations = Vec::new();
        let mut seen_r = HashSet::new();
        for &e in &entities {
            for &(r, _) in &self.adjacency[e.0] {
                if seen_r.insert(r) {
                    relations.push(r);
                }
            }
        }
        (entities, relations)
    }

    /// Samples `ceil(fraction * |triples|)` triples uniformly without
    /// replacement and re-interns the incident entities and relations.
    pub fn subgraph_fraction(&self, fraction: f64, seed: u64) -> Result<KnowledgeGraph, KgError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(KgError::InvalidFraction(fraction));
        }
        let n = self.triples.len();
        let keep = fraction_count(fraction, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, n, keep).into_vec();
        picked.sort_unstable();

        let mut b = GraphBuilder::new();
        for i in picked {
            let t = self.triples[i];
            let h = b.entity(&self.entities.names[t.head.0]).expect("names are non-empty");
            let r = b.relation(&self.relations.names[t.relation.0]).expect("names are non-empty");
            let tl = b.entity(&self.entities.names[t.tail.0]).expect("names are non-empty");
            b.add_ids(h, r, tl);
        }
        Ok(b.build())
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities.names[t.head.0], self.relations.names[t.relation.0], self.entities.names[t.tail.0]
            )?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf)?;
        fs::write(path, buf)
    }
}

impl fmt::Display for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "KnowledgeGraph(|V|={}, |R|={}, triples={})",
            self.num_entities(),
            self.num_relations(),
            self.triples.len()
        )
    }
}

/// `ceil(fraction * n)`, treating products within 1e-9 of an integer as exact.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k as usize).min(n)
}

pub fn parse_triples_tsv(text: &str) -> Result<(KnowledgeGraph, LoadSummary), KgError> {
    let mut b = GraphBuilder::new();
    let mut lines = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(KgError::MalformedLine(i + 1));
        }
        b.add(fields[0], fields[1], fields[2])?;
    }
    let duplicates = b.duplicates();
    let g = b.build();
    let summary = LoadSummary { lines, triples: g.triples.len(), duplicates };
    Ok((g, summary))
}

pub fn load_triples_tsv(path: impl AsRef<Path>) -> Result<(KnowledgeGraph, LoadSummary), KgError> {
    let text = fs::read_to_string(path)?;
    parse_triples_tsv(&text)
}
