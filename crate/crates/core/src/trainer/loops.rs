use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, ParamSlot, RowMask};
use super::loss::{loss_prime, sim_term};
use super::{LossSpec, TrainConfig, TrainError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::QAExample;
use crate::embed::EmbeddingTable;
use crate::kg::{tokenize_normalized, KnowledgeGraph};
use crate::model::vocab::{BOS, EOS, PAD};
use crate::model::{build_encoder_input, greedy_decode, span_corrupt, AugmentedInput, KgBinding, ModelParams, Variant, Vocabulary};

pub const MAX_ANSWER_TOKENS: usize = 8;
const CORRUPTION_RATE: f64 = 0.15;
const MEAN_SPAN: f64 = 3.0;

/// One fine-tuning step: base loss, similarity term and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub l: f64,
    pub sim: f64,
    pub l_prime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub input: AugmentedInput,
    pub decoder_ids: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Links the question against `kg` and lays out teacher-forcing sequences.
/// The augmented input carries every linked id; `variant` decides which
/// of them reach the encoder.
pub fn prepare_example(ex: &QAExample, kg: Option<&KnowledgeGraph>, vocab: &Vocabulary, variant: Variant) -> PreparedExample {
    let question_ids = vocab.encode(&ex.question);
    let input = match kg {
        Some(kg) => {
            let (entity_ids, relation_ids) = kg.link_mentions(&tokenize_normalized(&ex.question));
            AugmentedInput { question_ids, entity_ids, relation_ids, variant }
        }
        None => AugmentedInput::plain(question_ids),
    };
    let answer = vocab.encode(&ex.answer);
    let decoder_ids = std::iter::once(BOS).chain(answer.iter().copied()).collect();
    let targets = answer.into_iter().chain(std::iter::once(EOS)).collect();
    PreparedExample { input, decoder_ids, targets }
}

/// Greedy answer for one question.
pub fn predict(
    params: &ModelParams,
    kg: Option<(&KnowledgeGraph, &EmbeddingTable)>,
    vocab: &Vocabulary,
    ex: &QAExample,
    variant: Variant,
) -> Result<String, TrainError> {
    let p = prepare_example(ex, kg.map(|k| k.0), vocab, variant);
    let ids = greedy_decode(params, kg.map(|k| k.1), &p.input, MAX_ANSWER_TOKENS)?;
    Ok(vocab.decode(&ids))
}

/// Epoch-wise shuffled index batches; the final partial batch of each
/// epoch is kept.
struct Batches {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Self { order: (0..n).collect(), pos: n, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

fn example_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn mean_of(tape: &mut Tape, xs: &[Var]) -> Result<Var, TrainError> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(tape.scale(acc, 1.0 / xs.len() as f64))
}

fn model_grads(tape: &Tape, vars: &[Var], root: Var) -> Result<(Vec<Tensor>, crate::autodiff::Gradients), TrainError> {
    let g = tape.backward(root)?;
    Ok((vars.iter().map(|v| g.get(*v)).collect(), g))
}

/// Span-corruption pretraining with cross entropy only.
///
/// The trace holds the mean batch loss of every `eval_every` steps (a
/// trailing partial window included).
pub fn pretrain(params: &ModelParams, corpus: &[Vec<usize>], cfg: &TrainConfig) -> Result<(ModelParams, Vec<f64>), TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut params = params.clone();
    let mut trace = Vec::new();
    if cfg.max_steps == 0 {
        return Ok((params, trace));
    }
    let mut batches = Batches::new(corpus.len(), cfg.seed);
    let mut rng = example_rng(cfg.seed);
    let sizes: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
    let mut adam = AdamState::new(&sizes, cfg);
    let (mut window, mut count) = (0.0, 0usize);

    for _ in 0..cfg.max_steps {
        let idx = batches.next(cfg.batch_size);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, true);
        let mut losses = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (input, target) = span_corrupt(&corpus[i], CORRUPTION_RATE, MEAN_SPAN, rng.gen())?;
            let mut dec = vec![BOS];
            dec.extend_from_slice(&target[..target.len() - 1]);
            let enc_in = build_encoder_input(&mut tape, &params, &b, &AugmentedInput::plain(input), &KgBinding::default())?;
            let mut drop = ChaCha8Rng::seed_from_u64(rng.gen());
            let logits = params.forward(&mut tape, &b, &enc_in, &dec, true, &mut drop)?;
            losses.push(tape.cross_entropy_mean(logits, &target, PAD)?);
        }
        let loss = mean_of(&mut tape, &losses)?;
        window += tape.value(loss).item();
        count += 1;
        let (grads, _) = model_grads(&tape, &b.vars, loss)?;
        let mut slots: Vec<ParamSlot> = params
            .tensors_mut()
            .iter_mut()
            .zip(&grads)
            .map(|(t, g)| ParamSlot { values: t.data_mut(), grad: g.data(), rows: None })
            .collect();
        adam_step(&mut slots, &mut adam, cfg)?;
        if count == cfg.eval_every {
            trace.push(window / count as f64);
            (window, count) = (0.0, 0);
        }
    }
    if count > 0 {
        trace.push(window / count as f64);
    }
    Ok((params, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutput {
    pub params: ModelParams,
    pub emb: Option<EmbeddingTable>,
    pub trace: Vec<TraceEntry>,
}

/// Fine-tunes on `L′ = L + λ·Sim`, with the KG embedding rows touched by
/// a batch updated alongside the model when `kg_embeddings_trainable`.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    params: &ModelParams,
    dataset: &[QAExample],
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
    loss: &LossSpec,
    variant: Variant,
    cfg: &TrainConfig,
) -> Result<FinetuneOutput, TrainError> {
    run_finetune(params, dataset, Some((kg, emb)), vocab, Some(loss), variant, cfg)
}

/// Fine-tuning with the similarity pathway removed entirely (no Sim ops
/// on the tape), or with no KG at all when `kg` is `None`.
pub fn finetune_sim_free(
    params: &ModelParams,
    dataset: &[QAExample],
    kg: Option<(&KnowledgeGraph, &EmbeddingTable)>,
    vocab: &Vocabulary,
    variant: Variant,
    cfg: &TrainConfig,
) -> Result<FinetuneOutput, TrainError> {
    run_finetune(params, dataset, kg, vocab, None, variant, cfg)
}

fn run_finetune(
    params: &ModelParams,
    dataset: &[QAExample],
    kg: Option<(&KnowledgeGraph, &EmbeddingTable)>,
    vocab: &Vocabulary,
    loss: Option<&LossSpec>,
    variant: Variant,
    cfg: &TrainConfig,
) -> Result<FinetuneOutput, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some((g, e)) = kg {
        if g.num_entities() != e.num_entities() || g.num_relations() != e.num_relations() {
            return Err(TrainError::InvalidConfig("embedding table does not match the graph".into()));
        }
    }
    let prepared: Vec<PreparedExample> = dataset.iter().map(|ex| prepare_example(ex, kg.map(|k| k.0), vocab, variant)).collect();

    let mut params = params.clone();
    let mut emb = kg.map(|k| k.1.clone());
    let train_kg = cfg.kg_embeddings_trainable && emb.is_some();
    let mut sizes: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
    if let (true, Some(e)) = (train_kg, &emb) {
        sizes.push(e.entity_data().len());
        sizes.push(e.relation_data().len());
    }
    let mut adam = AdamState::new(&sizes, cfg);
    let mut batches = Batches::new(prepared.len(), cfg.seed);
    let mut rng = example_rng(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.max_steps);

    for step in 0..cfg.max_steps {
        let idx = batches.next(cfg.batch_size);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, true);
        let kgb = KgBinding::bind(&mut tape, emb.as_ref(), train_kg);
        let (mut ls, mut ss) = (Vec::new(), Vec::new());
        for &i in &idx {
            let p = &prepared[i];
            let enc_in = build_encoder_input(&mut tape, &params, &b, &p.input, &kgb)?;
            let mut drop = ChaCha8Rng::seed_from_u64(rng.gen());
            let logits = params.forward(&mut tape, &b, &enc_in, &p.decoder_ids, true, &mut drop)?;
            ls.push(tape.cross_entropy_mean(logits, &p.targets, PAD)?);
            if loss.is_some() {
                ss.push(sim_term(&mut tape, &kgb, &p.input.entity_ids, &p.input.relation_ids)?);
            }
        }
        let l = mean_of(&mut tape, &ls)?;
        let (root, sim) = match loss {
            Some(spec) => {
                let s = mean_of(&mut tape, &ss)?;
                (loss_prime(&mut tape, l, s, spec.lambda)?, Some(s))
            }
            None => (l, None),
        };
        trace.push(TraceEntry {
            step,
            l: tape.value(l).item(),
            sim: sim.map_or(0.0, |s| tape.value(s).item()),
            l_prime: tape.value(root).item(),
        });

        let (grads, g) = model_grads(&tape, &b.vars, root)?;
        let mut slots: Vec<ParamSlot> = params
            .tensors_mut()
            .iter_mut()
            .zip(&grads)
            .map(|(t, g)| ParamSlot { values: t.data_mut(), grad: g.data(), rows: None })
            .collect();

        let (mut used_e, mut used_r, ge, gr);
        if let (true, Some(e)) = (train_kg, emb.as_mut()) {
            used_e = vec![false; e.num_entities()];
            used_r = vec![false; e.num_relations()];
            for &i in &idx {
                for id in &prepared[i].input.entity_ids {
                    used_e[id.index()] = true;
                }
                for id in &prepared[i].input.relation_ids {
                    used_r[id.index()] = true;
                }
            }
            ge = kgb.entities.map_or_else(Vec::new, |v| g.get(v).into_data());
            gr = kgb.relations.map_or_else(Vec::new, |v| g.get(v).into_data());
            let width = e.dim();
            let (et, rt) = e.tables_mut();
            slots.push(ParamSlot { values: et, grad: &ge, rows: Some(RowMask { width, used: &used_e }) });
            slots.push(ParamSlot { values: rt, grad: &gr, rows: Some(RowMask { width, used: &used_r }) });
        }
        adam_step(&mut slots, &mut adam, cfg)?;
    }
    Ok(FinetuneOutput { params, emb, trace })
}
