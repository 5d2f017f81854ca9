//! Seeded synthetic people/places world with aligned text and QA.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::kg::{EntityId, GraphBuilder, KnowledgeGraph, RelationId};

pub const BORN_IN: &str = "born_in";
pub const LOCATED_IN: &str = "located_in";
pub const WORKS_AS: &str = "works_as";
pub const CAPITAL_OF: &str = "capital_of";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticKGSpec {
    pub n_people: usize,
    pub n_cities: usize,
    pub n_countries: usize,
    pub occupations: Vec<String>,
    pub seed: u64,
}

impl SyntheticKGSpec {
    pub fn new(n_people: usize, n_cities: usize, n_countries: usize, n_occupations: usize, seed: u64) -> Self {
        const NAMES: [&str; 12] = [
            "doctor", "teacher", "farmer", "lawyer", "engineer", "painter", "baker", "pilot", "nurse", "writer",
            "chemist", "sailor",
        ];
        let occupations = (0..n_occupations)
            .map(|i| NAMES.get(i).map_or_else(|| format!("occupation_{i}"), |s| s.to_string()))
            .collect();
        Self { n_people, n_cities, n_countries, occupations, seed }
    }
}

impl Default for SyntheticKGSpec {
    fn default() -> Self {
        Self::new(200, 12, 4, 5, 0)
    }
}

/// Builds the graph plus one templated sentence per triple.
///
/// Every person gets one `born_in` city and one `works_as` occupation,
/// every city one `located_in` country, and each country that received at
/// least one city gets one of them as capital.
pub fn gen_synthetic_kg(spec: &SyntheticKGSpec) -> Result<(KnowledgeGraph, Vec<String>), DataError> {
    if spec.n_people == 0 || spec.n_cities == 0 || spec.n_countries == 0 || spec.occupations.is_empty() {
        return Err(DataError::InvalidSpec("all counts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = GraphBuilder::new();
    let people: Vec<String> = (0..spec.n_people).map(|i| format!("person_{i}")).collect();
    let cities: Vec<String> = (0..spec.n_cities).map(|i| format!("city_{i}")).collect();
    let countries: Vec<String> = (0..spec.n_countries).map(|i| format!("country_{i}")).collect();
    for name in people.iter().chain(&cities).chain(&countries).chain(&spec.occupations) {
        b.entity(name).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
    }
    for r in [BORN_IN, LOCATED_IN, WORKS_AS, CAPITAL_OF] {
        b.relation(r).expect("fixed relation names");
    }

    let mut corpus = Vec::new();
    let mut add = |b: &mut GraphBuilder, h: &str, r: &str, t: &str, sentence: String| {
        if b.add(h, r, t).expect("interned names") {
            corpus.push(sentence);
        }
    };
    for p in &people {
        let c = &cities[rng.gen_range(0..cities.len())];
        add(&mut b, p, BORN_IN, c, format!("{p} was born in {c}"));
    }
    for p in &people {
        let o = &spec.occupations[rng.gen_range(0..spec.occupations.len())];
        add(&mut b, p, WORKS_AS, o, format!("{p} works as a {o}"));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); countries.len()];
    for (ci, c) in cities.iter().enumerate() {
        let k = rng.gen_range(0..countries.len());
        members[k].push(ci);
        add(&mut b, c, LOCATED_IN, &countries[k], format!("{c} is located in {}", countries[k]));
    }
    for (k, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        let c = &cities[m[rng.gen_range(0..m.len())]];
        add(&mut b, c, CAPITAL_OF, &countries[k], format!("{c} is the capital of {}", countries[k]));
    }
    Ok((b.build(), corpus))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Hop1,
    Context,
    Hop2,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Hop1, Category::Context, Category::Hop2];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Hop1 => "hop1",
            Category::Context => "context",
            Category::Hop2 => "hop2",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub question: String,
    pub answer: String,
    pub category: Category,
    pub gold_entities: Vec<EntityId>,
    pub gold_relations: Vec<RelationId>,
}

/// Requested number of questions per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaCounts {
    pub hop1: usize,
    pub context: usize,
    pub hop2: usize,
}

impl QaCounts {
    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::Hop1 => self.hop1,
            Category::Context => self.context,
            Category::Hop2 => self.hop2,
        }
    }

    pub fn total(&self) -> usize {
        self.hop1 + self.context + self.hop2
    }
}

fn single_tail(kg: &KnowledgeGraph, e: EntityId, r: RelationId) -> Option<EntityId> {
    kg.neighbors(e).ok()?.iter().find(|(rel, _)| *rel == r).map(|&(_, t)| t)
}

fn sample<R: Rng>(pool: &[EntityId], count: usize, category: Category, rng: &mut R) -> Result<Vec<EntityId>, DataError> {
    if count > pool.len() {
        return Err(DataError::InfeasibleCount { category, requested: count, available: pool.len() });
    }
    Ok(index::sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect())
}

/// Generates hop1, context and hop2 questions over a synthetic world graph.
///
/// Subjects are sampled without replacement within each category.
pub fn gen_qa(kg: &KnowledgeGraph, counts: &QaCounts, seed: u64) -> Result<Vec<QAExample>, DataError> {
    let rel = |name: &str| kg.relation_id(name).ok_or_else(|| DataError::InvalidSpec(format!("graph lacks relation {name}")));
    let (born, located, works) = (rel(BORN_IN)?, rel(LOCATED_IN)?, rel(WORKS_AS)?);
    let name = |e: EntityId| kg.entity_name(e).expect("valid id").to_owned();
    let entities = (0..kg.num_entities()).map(EntityId);

    let with_birth: Vec<EntityId> = entities.clone().filter(|&e| single_tail(kg, e, born).is_some()).collect();
    let with_job: Vec<EntityId> = entities.clone().filter(|&e| single_tail(kg, e, works).is_some()).collect();
    let two_hop: Vec<EntityId> = with_birth
        .iter()
        .copied()
        .filter(|&p| single_tail(kg, p, born).and_then(|c| single_tail(kg, c, located)).is_some())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(counts.total());

    for p in sample(&with_birth, counts.hop1, Category::Hop1, &mut rng)? {
        let city = single_tail(kg, p, born).expect("filtered");
        out.push(QAExample {
            question: format!("where was {} born", name(p)),
            answer: name(city),
            category: Category::Hop1,
            gold_entities: vec![p],
            gold_relations: vec![born],
        });
    }

    if counts.context > 0 && with_job.len() < 2 {
        return Err(DataError::InfeasibleCount { category: Category::Context, requested: counts.context, available: 0 });
    }
    for p in sample(&with_job, counts.context, Category::Context, &mut rng)? {
        let job = single_tail(kg, p, works).expect("filtered");
        let distractor = loop {
            let d = with_job[rng.gen_range(0..with_job.len())];
            if d != p {
                break d;
            }
        };
        out.push(QAExample {
            question: format!("{} is a colleague . what does {} work as", name(distractor), name(p)),
            answer: name(job),
            category: Category::Context,
            gold_entities: vec![p],
            gold_relations: vec![works],
        });
    }

    for p in sample(&two_hop, counts.hop2, Category::Hop2, &mut rng)? {
        let city = single_tail(kg, p, born).expect("filtered");
        let country = single_tail(kg, city, located).expect("filtered");
        out.push(QAExample {
            question: format!("which country was {} born in", name(p)),
            answer: name(country),
            category: Category::Hop2,
            gold_entities: vec![p],
            gold_relations: vec![born, located],
        });
    }
    Ok(out)
}

/// Follows `gold_relations` from each gold entity in turn and returns every
/// reachable end point.
pub fn walk_gold(kg: &KnowledgeGraph, ex: &QAExample) -> Vec<EntityId> {
    let mut frontier = ex.gold_entities.clone();
    for &r in &ex.gold_relations {
        let mut next = Vec::new();
        for e in frontier {
            if let Ok(ns) = kg.neighbors(e) {
                next.extend(ns.iter().filter(|(rel, _)| *rel == r).map(|&(_, t)| t));
            }
        }
        frontier = next;
    }
    frontier
}

pub fn write_jsonl(examples: &[QAExample]) -> String {
    examples.iter().map(|e| serde_json::to_string(e).expect("serializable") + "\n").collect()
}

pub fn read_jsonl(text: &str) -> Result<Vec<QAExample>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DataError::Jsonl { line: i + 1, msg: e.to_string() }))
        .collect()
}
