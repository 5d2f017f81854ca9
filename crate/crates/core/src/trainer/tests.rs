use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::data::{gen_qa, gen_synthetic_kg, Category, QAExample, QaCounts, SyntheticKGSpec};
use crate::embed::{init_embeddings, EmbeddingNames, EmbeddingTable};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::model::{greedy_decode, ModelConfig, ModelParams, Variant, Vocabulary, KgBinding};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn loss_prime_substitution() {
    for (base, sim, lambda, want) in [(0.7, 0.3, 0.0, 0.7), (0.5, 0.8, 0.1, 0.58), (1.0, 0.5, -0.2, 0.9)] {
        let mut tape = Tape::new();
        let b = tape.param(Tensor::scalar(base));
        let s = tape.param(Tensor::scalar(sim));
        let lp = loss_prime(&mut tape, b, s, lambda).unwrap();
        assert!(close(tape.value(lp).item(), want, 1e-15), "{base} {sim} {lambda}");
        let g = tape.backward(lp).unwrap();
        assert_eq!(g.get(b).item(), 1.0);
        // the sign law: dL'/dSim is exactly lambda
        assert_eq!(g.get(s).item(), lambda);
    }
}

fn table(entities: &[&[f64]], relations: &[&[f64]]) -> EmbeddingTable {
    let d = entities[0].len();
    EmbeddingTable::new(d, entities.concat(), relations.concat()).unwrap()
}

fn tape_sim(emb: &EmbeddingTable, es: &[EntityId], rs: &[RelationId]) -> (f64, Tensor, Tensor) {
    let mut tape = Tape::new();
    let kg = KgBinding::bind(&mut tape, Some(emb), true);
    let s = sim_term(&mut tape, &kg, es, rs).unwrap();
    let v = tape.value(s).item();
    let g = tape.backward(s).unwrap();
    (v, g.get(kg.entities.unwrap()), g.get(kg.relations.unwrap()))
}

#[test]
fn sim_self_similarity_and_empty_policy() {
    let emb = table(&[&[1.0, 2.0, -1.0]], &[&[1.0, 2.0, -1.0]]);
    let (v, _, _) = tape_sim(&emb, &[EntityId(0)], &[RelationId(0)]);
    assert!(close(v, 1.0, 1e-12));
    let (v, ge, gr) = tape_sim(&emb, &[EntityId(0)], &[]);
    assert_eq!(v, 0.0);
    assert!(ge.data().iter().chain(gr.data()).all(|&x| x == 0.0));
    assert_eq!(sim_value(&emb, &[], &[RelationId(0)]).unwrap(), 0.0);
}

#[test]
fn sim_two_by_two_brute_force() {
    let e: [&[f64]; 2] = [&[1.0, 0.0, 2.0], &[-1.0, 3.0, 0.5]];
    let r: [&[f64]; 2] = [&[0.0, 1.0, 1.0], &[2.0, -2.0, 1.0]];
    let emb = table(&e, &r);
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut want = 0.0;
    for a in e {
        for b in r {
            want += cos(a, b);
        }
    }
    want /= 4.0;
    let ids_e = [EntityId(0), EntityId(1)];
    let ids_r = [RelationId(0), RelationId(1)];
    let (v, ge, _) = tape_sim(&emb, &ids_e, &ids_r);
    assert!(close(v, want, 1e-12));
    assert!(close(sim_value(&emb, &ids_e, &ids_r).unwrap(), want, 1e-12));
    assert!(ge.data().iter().any(|&x| x != 0.0));
}

#[test]
fn sim_zero_vector_propagates() {
    let emb = table(&[&[0.0, 0.0]], &[&[1.0, 0.0]]);
    let mut tape = Tape::new();
    let kg = KgBinding::bind(&mut tape, Some(&emb), true);
    assert!(sim_term(&mut tape, &kg, &[EntityId(0)], &[RelationId(0)]).is_err());
}

fn scalar_cfg(lr: f64, wd: f64) -> TrainConfig {
    TrainConfig { learning_rate: lr, weight_decay: wd, grad_clip_norm: None, ..TrainConfig::default() }
}

fn one_step(theta: f64, g: f64, state: &mut AdamState, cfg: &TrainConfig) -> f64 {
    let mut values = [theta];
    let grad = [g];
    let mut slots = [ParamSlot { values: &mut values, grad: &grad, rows: None }];
    adam_step(&mut slots, state, cfg).unwrap();
    values[0]
}

#[test]
fn adam_first_step_closed_form() {
    let cfg = scalar_cfg(1e-3, 0.0);
    let mut st = AdamState::new(&[1], &cfg);
    let theta = one_step(0.0, 1.0, &mut st, &cfg);
    // m̂ = g and v̂ = g² at t = 1
    assert!(close(-theta, 1e-3 / (1.0 + 1e-8), 1e-18));
    assert_eq!(st.step(), 1);
}

#[test]
fn adam_zero_gradient_fixed_point_and_decay() {
    let cfg = scalar_cfg(1e-3, 0.0);
    let mut st = AdamState::new(&[1], &cfg);
    assert_eq!(one_step(0.37, 0.0, &mut st, &cfg), 0.37);
    assert_eq!(st.step(), 1);
    let cfg = scalar_cfg(1e-3, 0.1);
    let mut st = AdamState::new(&[1], &cfg);
    assert!(close(one_step(1.0, 0.0, &mut st, &cfg), 0.9999, 1e-15));
}

#[test]
fn adam_matches_scalar_reference() {
    let cfg = TrainConfig { learning_rate: 3e-3, weight_decay: 0.01, grad_clip_norm: None, ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 5;
    let mut theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut state = AdamState::new(&[n], &cfg);
    let (mut rt, mut rm, mut rv) = (theta.clone(), vec![0.0; n], vec![0.0; n]);
    for step in 1..=100 {
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        {
            let mut slots = [ParamSlot { values: &mut theta, grad: &g, rows: None }];
            adam_step(&mut slots, &mut state, &cfg).unwrap();
        }
        for i in 0..n {
            rm[i] = 0.9 * rm[i] + 0.1 * g[i];
            rv[i] = 0.999 * rv[i] + 0.001 * g[i] * g[i];
            let mh = rm[i] / (1.0 - 0.9f64.powi(step));
            let vh = rv[i] / (1.0 - 0.999f64.powi(step));
            rt[i] -= 3e-3 * mh / (vh.sqrt() + 1e-8);
            rt[i] -= 3e-3 * 0.01 * rt[i];
        }
        for i in 0..n {
            assert!(close(theta[i], rt[i], 1e-12), "step {step}");
        }
    }
}

#[test]
fn adam_clipping_and_row_masks() {
    let cfg = TrainConfig { learning_rate: 1.0, grad_clip_norm: Some(1.0), ..TrainConfig::default() };
    let mut a = vec![0.0; 4];
    let mut b = vec![5.0; 4];
    let ga = vec![3.0, 0.0, 0.0, 0.0];
    let gb = vec![0.0, 0.0, 4.0, 4.0];
    let used = [false, true];
    let mut st = AdamState::new(&[4, 4], &cfg);
    {
        let mut slots = [
            ParamSlot { values: &mut a, grad: &ga, rows: None },
            ParamSlot { values: &mut b, grad: &gb, rows: Some(RowMask { width: 2, used: &used }) },
        ];
        adam_step(&mut slots, &mut st, &cfg).unwrap();
    }
    // global norm sqrt(9 + 32) > 1, clipped; first moments scale by the same factor
    let norm = 41f64.sqrt();
    assert!(close(st.moments(0).0[0], 0.1 * 3.0 / norm, 1e-15));
    assert!(close(st.moments(1).0[2], 0.1 * 4.0 / norm, 1e-15));
    assert_eq!(&b[..2], &[5.0, 5.0]);
    assert!(b[2] < 5.0);
    let mut c = vec![0.0; 3];
    let mut slots = [ParamSlot { values: &mut c, grad: &ga[..3], rows: None }];
    assert!(matches!(adam_step(&mut slots, &mut st, &cfg), Err(TrainError::ShapeMismatch { .. })));
}

pub(crate) struct World {
    pub kg: KnowledgeGraph,
    pub corpus: Vec<String>,
    pub qa: Vec<QAExample>,
    pub vocab: Vocabulary,
}

pub(crate) fn world(people: usize, counts: QaCounts, seed: u64) -> World {
    let (kg, corpus) = gen_synthetic_kg(&SyntheticKGSpec::new(people, 6, 3, 4, seed)).unwrap();
    let qa = gen_qa(&kg, &counts, seed).unwrap();
    let mut texts = corpus.clone();
    texts.extend(qa.iter().flat_map(|q| [q.question.clone(), q.answer.clone()]));
    let vocab = Vocabulary::build(&texts, 1).unwrap();
    World { kg, corpus, qa, vocab }
}

fn small_model(vocab: usize, d_model: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig { d_model, n_layers: 1, n_heads: 2, d_ff: 2 * d_model, dropout_p: 0.1, max_len: 32, d_kg: 8, vocab_size: vocab };
    ModelParams::init(&cfg, seed).unwrap()
}

#[test]
fn pretrain_noop_determinism_and_trend() {
    let w = world(25, QaCounts { hop1: 0, context: 0, hop2: 0 }, 1);
    let corpus: Vec<Vec<usize>> = w.corpus.iter().take(50).map(|s| w.vocab.encode(s)).collect();
    assert_eq!(corpus.len(), 50);
    let params = small_model(w.vocab.len(), 32, 0);
    let noop = TrainConfig { max_steps: 0, ..TrainConfig::default() };
    let (p0, t0) = pretrain(&params, &corpus, &noop).unwrap();
    assert_eq!(p0, params);
    assert!(t0.is_empty());
    assert!(matches!(pretrain(&params, &[], &noop), Err(TrainError::EmptyCorpus)));

    let cfg = TrainConfig { max_steps: 200, batch_size: 8, learning_rate: 3e-3, eval_every: 20, ..TrainConfig::default() };
    let (p1, t1) = pretrain(&params, &corpus, &cfg).unwrap();
    assert_eq!(t1.len(), 10);
    assert!(t1.last().unwrap() < t1.first().unwrap(), "{t1:?}");
    let (p2, t2) = pretrain(&params, &corpus, &cfg).unwrap();
    assert_eq!(p1.checksum(), p2.checksum());
    assert_eq!(t1, t2);
}

fn ft_setup() -> (World, EmbeddingTable, ModelParams) {
    let w = world(12, QaCounts { hop1: 4, context: 4, hop2: 4 }, 2);
    let emb = init_embeddings(&w.kg, 8, 3).unwrap();
    let params = small_model(w.vocab.len(), 16, 4);
    (w, emb, params)
}

#[test]
fn trace_satisfies_loss_identity() {
    let (w, emb, params) = ft_setup();
    let cfg = TrainConfig { max_steps: 6, batch_size: 5, ..TrainConfig::default() };
    for lambda in [-0.1, 0.3] {
        let out = finetune(&params, &w.qa, &w.kg, &emb, &w.vocab, &LossSpec { lambda }, Variant::Both, &cfg).unwrap();
        assert_eq!(out.trace.len(), 6);
        for t in &out.trace {
            assert!(close(t.l_prime, t.l + lambda * t.sim, 1e-12));
            assert!(t.sim != 0.0);
        }
    }
}

#[test]
fn lambda_zero_matches_sim_free_and_kg_free() {
    let (w, emb, params) = ft_setup();
    let cfg = TrainConfig { max_steps: 5, batch_size: 4, ..TrainConfig::default() };
    let zero = LossSpec { lambda: 0.0 };
    for v in [Variant::None, Variant::Both] {
        let a = finetune(&params, &w.qa, &w.kg, &emb, &w.vocab, &zero, v, &cfg).unwrap();
        let b = finetune_sim_free(&params, &w.qa, Some((&w.kg, &emb)), &w.vocab, v, &cfg).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum(), "{v}");
        assert_eq!(a.emb.as_ref().unwrap().checksum(), b.emb.as_ref().unwrap().checksum());
        let l: Vec<f64> = a.trace.iter().map(|t| t.l).collect();
        let lb: Vec<f64> = b.trace.iter().map(|t| t.l).collect();
        assert_eq!(l, lb);
    }
    let a = finetune(&params, &w.qa, &w.kg, &emb, &w.vocab, &zero, Variant::None, &cfg).unwrap();
    let plain = finetune_sim_free(&params, &w.qa, None, &w.vocab, Variant::None, &cfg).unwrap();
    assert_eq!(a.params.checksum(), plain.params.checksum());
}

#[test]
fn sim_gradient_reaches_used_rows() {
    let (w, emb, params) = ft_setup();
    let cfg = TrainConfig { max_steps: 1, batch_size: 12, ..TrainConfig::default() };
    let out = finetune(&params, &w.qa, &w.kg, &emb, &w.vocab, &LossSpec { lambda: -0.5 }, Variant::None, &cfg).unwrap();
    let after = out.emb.unwrap();
    let subject = w.qa[0].gold_entities[0];
    assert_ne!(after.entity(subject), emb.entity(subject));
    let frozen = TrainConfig { kg_embeddings_trainable: false, ..cfg };
    let out = finetune(&params, &w.qa, &w.kg, &emb, &w.vocab, &LossSpec { lambda: -0.5 }, Variant::Both, &frozen).unwrap();
    assert_eq!(out.emb.unwrap(), emb);
}

#[test]
fn finetune_rejects_empty_and_mismatched_inputs() {
    let (w, emb, params) = ft_setup();
    let cfg = TrainConfig::default();
    assert!(matches!(
        finetune(&params, &[], &w.kg, &emb, &w.vocab, &LossSpec::default(), Variant::Both, &cfg),
        Err(TrainError::EmptyDataset)
    ));
    let other = init_embeddings(&world(5, QaCounts { hop1: 0, context: 0, hop2: 0 }, 0).kg, 8, 0).unwrap();
    assert!(finetune(&params, &w.qa, &w.kg, &other, &w.vocab, &LossSpec::default(), Variant::Both, &cfg).is_err());
}

#[test]
fn memorizes_single_pair() {
    let vocab = Vocabulary::build(&["what is the capital of france", "paris"], 1).unwrap();
    let ex = QAExample {
        question: "what is the capital of france".into(),
        answer: "paris".into(),
        category: Category::Hop1,
        gold_entities: vec![],
        gold_relations: vec![],
    };
    let params = small_model(vocab.len(), 16, 9);
    let cfg = TrainConfig { max_steps: 60, batch_size: 1, learning_rate: 1e-2, ..TrainConfig::default() };
    let out = finetune_sim_free(&params, std::slice::from_ref(&ex), None, &vocab, Variant::None, &cfg).unwrap();
    let p = prepare_example(&ex, None, &vocab, Variant::None);
    let ids = greedy_decode(&out.params, None, &p.input, MAX_ANSWER_TOKENS).unwrap();
    assert_eq!(vocab.decode(&ids), "paris");
    assert_eq!(predict(&out.params, None, &vocab, &ex, Variant::None).unwrap(), "paris");
}

fn checkpoint_fixture() -> Checkpoint {
    let (w, emb, params) = ft_setup();
    Checkpoint {
        params,
        vocab: Some(w.vocab.clone()),
        train: Some(TrainConfig { learning_rate: 0.1 + 0.2, ..TrainConfig::default() }),
        loss: Some(LossSpec { lambda: -0.1 }),
        embeddings: Some((emb, EmbeddingNames::from_graph(&w.kg))),
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let ck = checkpoint_fixture();
    let bytes = encode_checkpoint(&ck);
    assert_eq!(&bytes[..8], b"KGT5CKPT");
    let back = decode_checkpoint(&bytes, None).unwrap();
    assert_eq!(back, ck);
    assert_eq!(encode_checkpoint(&back), bytes);
}

#[test]
fn checkpoint_errors() {
    let ck = checkpoint_fixture();
    let bytes = encode_checkpoint(&ck);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad, None), Err(TrainError::BadMagic)));
    let mut v2 = bytes.clone();
    v2[8] = 2;
    assert!(matches!(decode_checkpoint(&v2, None), Err(TrainError::VersionUnsupported(2))));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3], None), Err(TrainError::TruncatedFile)));
    assert!(matches!(decode_checkpoint(&bytes[..30], None), Err(TrainError::TruncatedFile)));
    let mut other = ck.params.config().clone();
    other.d_ff += 2;
    assert!(matches!(decode_checkpoint(&bytes, Some(&other)), Err(TrainError::ShapeMismatch { .. })));
    assert!(decode_checkpoint(&bytes, Some(ck.params.config())).is_ok());
}
