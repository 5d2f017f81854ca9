//! End-to-end pipelines: world generation, split, KG embeddings,
//! pretraining, fine-tuning per variant or KG fraction, evaluation.

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, CategoryScores, MetricsReport};
use super::HarnessError;
use crate::data::{gen_qa, gen_synthetic_kg, split, Category, QAExample, QaCounts, SyntheticKGSpec};
use crate::embed::{train_kg_embeddings, EmbeddingTable, TransEConfig};
use crate::kg::KnowledgeGraph;
use crate::model::{ModelConfig, ModelParams, Variant, Vocabulary};
use crate::trainer::{finetune, finetune_sim_free, pretrain, FinetuneOutput, LossSpec, TrainConfig};

/// Everything needed to reproduce an experiment. `model.vocab_size` is
/// overwritten with the size of the vocabulary built from the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kg: SyntheticKGSpec,
    pub qa: QaCounts,
    pub qa_seed: u64,
    pub train_ratio: f64,
    pub model: ModelConfig,
    pub transe: TransEConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub loss: LossSpec,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub fractions: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut model = ModelConfig::with_vocab(0);
        model.d_kg = 32;
        Self {
            kg: SyntheticKGSpec::new(240, 12, 4, 5, 0),
            qa: QaCounts { hop1: 240, context: 240, hop2: 240 },
            qa_seed: 0,
            train_ratio: 2.0 / 3.0,
            model,
            transe: TransEConfig { epochs: 400, learning_rate: 0.01, ..TransEConfig::default() },
            pretrain: TrainConfig { max_steps: 300, batch_size: 16, learning_rate: 2e-3, eval_every: 50, ..TrainConfig::default() },
            finetune: TrainConfig { max_steps: 1500, batch_size: 16, learning_rate: 2e-3, eval_every: 50, ..TrainConfig::default() },
            loss: LossSpec { lambda: -0.1 },
            seeds: vec![1, 2, 3, 4, 5],
            variants: Variant::ALL.to_vec(),
            fractions: vec![0.25, 0.5, 1.0],
        }
    }
}

/// The synthetic world shared by every seed of an experiment.
#[derive(Debug, Clone)]
pub struct World {
    pub kg: KnowledgeGraph,
    pub corpus: Vec<String>,
    pub qa: Vec<QAExample>,
    pub vocab: Vocabulary,
}

impl World {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let (kg, corpus) = gen_synthetic_kg(&cfg.kg)?;
        let qa = gen_qa(&kg, &cfg.qa, cfg.qa_seed)?;
        let vocab = build_world_vocab(&corpus, &qa)?;
        Ok(Self { kg, corpus, qa, vocab })
    }
}

/// Vocabulary over the corpus plus every question and answer.
pub fn build_world_vocab(corpus: &[String], qa: &[QAExample]) -> Result<Vocabulary, HarnessError> {
    let mut texts: Vec<&str> = corpus.iter().map(String::as_str).collect();
    for q in qa {
        texts.push(&q.question);
        texts.push(&q.answer);
    }
    Ok(Vocabulary::build(&texts, 1)?)
}

const TAG_SPLIT: u64 = 1;
const TAG_TRANSE: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_PRETRAIN: u64 = 4;
const TAG_FINETUNE: u64 = 5;
const TAG_SUBGRAPH: u64 = 6;

/// Decorrelated per-stage seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Artifacts every variant of one seed starts from.
#[derive(Debug, Clone)]
pub struct SeedStage {
    pub seed: u64,
    pub train: Vec<QAExample>,
    pub test: Vec<QAExample>,
    pub embeddings: EmbeddingTable,
    pub pretrained: ModelParams,
    pub pretrain_trace: Vec<f64>,
}

impl SeedStage {
    /// Checksums of the shared split, embeddings and pretrained weights.
    pub fn fingerprint(&self) -> (u64, u64, u64) {
        let split = serde_json::to_vec(&(&self.train, &self.test)).expect("serializable");
        let split_hash = crate::checksum_f64(split.iter().map(|&b| f64::from(b)));
        (split_hash, self.embeddings.checksum(), self.pretrained.checksum())
    }
}

fn model_config(cfg: &ExperimentConfig, world: &World) -> ModelConfig {
    ModelConfig { vocab_size: world.vocab.len(), ..cfg.model.clone() }
}

fn embed_graph(kg: &KnowledgeGraph, cfg: &ExperimentConfig, seed: u64) -> Result<EmbeddingTable, HarnessError> {
    let transe = TransEConfig { seed: derive_seed(seed, TAG_TRANSE), ..cfg.transe.clone() };
    Ok(train_kg_embeddings(kg, &transe, cfg.model.d_kg)?.0)
}

pub fn prepare_seed(cfg: &ExperimentConfig, world: &World, seed: u64) -> Result<SeedStage, HarnessError> {
    let (train, test) = split(&world.qa, (cfg.train_ratio, 1.0 - cfg.train_ratio), derive_seed(seed, TAG_SPLIT))?;
    let embeddings = embed_graph(&world.kg, cfg, seed)?;
    let init = ModelParams::init(&model_config(cfg, world), derive_seed(seed, TAG_INIT))?;
    let corpus: Vec<Vec<usize>> = world.corpus.iter().map(|s| world.vocab.encode(s)).collect();
    let pcfg = TrainConfig { seed: derive_seed(seed, TAG_PRETRAIN), ..cfg.pretrain.clone() };
    let (pretrained, pretrain_trace) = pretrain(&init, &corpus, &pcfg)?;
    Ok(SeedStage { seed, train, test, embeddings, pretrained, pretrain_trace })
}

fn report(variant: Variant, kg_fraction: f64, seed: u64, scores: &CategoryScores, out: &FinetuneOutput) -> MetricsReport {
    let (final_l, final_sim) = out.trace.last().map_or((f64::NAN, f64::NAN), |t| (t.l, t.sim));
    MetricsReport {
        variant,
        kg_fraction,
        seed,
        em_hop1: scores.em(Category::Hop1),
        em_context: scores.em(Category::Context),
        em_hop2: scores.em(Category::Hop2),
        n_hop1: scores.total(Category::Hop1),
        n_context: scores.total(Category::Context),
        n_hop2: scores.total(Category::Hop2),
        final_l,
        final_sim,
    }
}

/// One fine-tune and held-out evaluation from a seed's shared stage.
pub fn run_cell(
    cfg: &ExperimentConfig,
    world: &World,
    stage: &SeedStage,
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable,
    variant: Variant,
    kg_fraction: f64,
) -> Result<MetricsReport, HarnessError> {
    let fcfg = TrainConfig { seed: derive_seed(stage.seed, TAG_FINETUNE), ..cfg.finetune.clone() };
    let out = finetune(&stage.pretrained, &stage.train, kg, emb, &world.vocab, &cfg.loss, variant, &fcfg)?;
    let tuned = out.emb.as_ref().expect("KG fine-tune returns embeddings");
    let scores = evaluate(&out.params, Some((kg, tuned)), &world.vocab, &stage.test, variant)?;
    Ok(report(variant, kg_fraction, stage.seed, &scores, &out))
}

fn check_seeds(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    if cfg.seeds.is_empty() {
        return Err(HarnessError::Config("at least one seed is required".into()));
    }
    Ok(())
}

/// Every variant per seed; variants of one seed share split, embeddings
/// and pretrained weights. Rows are ordered by (seed, variant).
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<MetricsReport>, HarnessError> {
    check_seeds(cfg)?;
    let world = World::generate(cfg)?;
    let mut variants = cfg.variants.clone();
    variants.sort();
    variants.dedup();
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let mut out = Vec::new();
    for seed in seeds {
        let stage = prepare_seed(cfg, &world, seed)?;
        for &v in &variants {
            out.push(run_cell(cfg, &world, &stage, &world.kg, &stage.embeddings, v, 1.0)?);
        }
    }
    Ok(out)
}

/// Variant `both` per (seed, fraction) on a uniformly sampled subgraph with
/// freshly trained embeddings; the test set stays the same across
/// fractions. Rows are ordered by (seed, fraction).
pub fn run_scale_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsReport>, HarnessError> {
    check_seeds(cfg)?;
    if cfg.fractions.is_empty() || cfg.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(HarnessError::InvalidFraction(cfg.fractions.iter().copied().find(|f| !(*f > 0.0 && *f <= 1.0)).unwrap_or(0.0)));
    }
    if cfg.fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config("fractions must be strictly ascending".into()));
    }
    let world = World::generate(cfg)?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let mut out = Vec::new();
    for seed in seeds {
        let stage = prepare_seed(cfg, &world, seed)?;
        for &f in &cfg.fractions {
            let report = if f == 1.0 {
                run_cell(cfg, &world, &stage, &world.kg, &stage.embeddings, Variant::Both, f)?
            } else {
                let sub = world.kg.subgraph_fraction(f, derive_seed(seed, TAG_SUBGRAPH))?;
                let emb = embed_graph(&sub, cfg, seed)?;
                run_cell(cfg, &world, &stage, &sub, &emb, Variant::Both, f)?
            };
            out.push(report);
        }
    }
    Ok(out)
}

/// Text-only fine-tune with no KG machinery, for identity comparisons
/// against variant `none`.
pub fn run_kg_free_baseline(cfg: &ExperimentConfig) -> Result<Vec<MetricsReport>, HarnessError> {
    check_seeds(cfg)?;
    let world = World::generate(cfg)?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let mut out = Vec::new();
    for seed in seeds {
        let stage = prepare_seed(cfg, &world, seed)?;
        let fcfg = TrainConfig { seed: derive_seed(seed, TAG_FINETUNE), ..cfg.finetune.clone() };
        let ft = finetune_sim_free(&stage.pretrained, &stage.train, None, &world.vocab, Variant::None, &fcfg)?;
        let scores = evaluate(&ft.params, None, &world.vocab, &stage.test, Variant::None)?;
        out.push(report(Variant::None, 1.0, seed, &scores, &ft));
    }
    Ok(out)
}
