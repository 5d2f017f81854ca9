use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{BOS, EOS, FIRST_REGULAR};
use super::*;
use crate::autodiff::grad_check_many;
use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::embed::EmbeddingTable;
use crate::kg::{EntityId, RelationId};

fn toy_config(d_model: usize, n_layers: usize) -> ModelConfig {
    ModelConfig {
        d_model,
        n_layers,
        n_heads: 2,
        d_ff: 2 * d_model,
        dropout_p: 0.1,
        max_len: 24,
        d_kg: 4,
        vocab_size: FIRST_REGULAR + 11,
    }
}

fn toy_emb(n_e: usize, n_r: usize, d: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let e = draw(n_e);
    let r = draw(n_r);
    EmbeddingTable::new(d, e, r).unwrap()
}

/// Random values everywhere, including the zero-initialised bias tables,
/// so that gradient checks exercise every pathway.
fn jitter(params: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

fn question(n: usize) -> Vec<usize> {
    (0..n).map(|i| FIRST_REGULAR + (i * 3) % 11).collect()
}

fn sample_input(variant: Variant) -> AugmentedInput {
    AugmentedInput {
        question_ids: question(7),
        entity_ids: vec![EntityId(2), EntityId(0)],
        relation_ids: vec![RelationId(1)],
        variant,
    }
}

#[test]
fn variant_none_is_plain_lookup() {
    let params = ModelParams::init(&toy_config(16, 1), 3).unwrap();
    let emb = toy_emb(4, 2, 4, 1);
    let (m, mask) = augmented_input_matrix(&sample_input(Variant::None), Some(&emb), &params).unwrap();
    assert_eq!(m.shape(), &[7, 16]);
    assert_eq!(mask.len(), 7);
    let table = &params.tensors()[0];
    for (i, &id) in question(7).iter().enumerate() {
        assert_eq!(m.row(i), table.row(id));
    }
    let (bare, _) = augmented_input_matrix(&AugmentedInput::plain(question(7)), None, &params).unwrap();
    assert_eq!(bare, m);
}

#[test]
fn both_variant_length() {
    let params = ModelParams::init(&toy_config(16, 1), 3).unwrap();
    let emb = toy_emb(4, 2, 4, 1);
    let (m, mask) = augmented_input_matrix(&sample_input(Variant::Both), Some(&emb), &params).unwrap();
    assert_eq!(m.shape(), &[11, 16]);
    assert!(mask.allows(0, 10) && mask.allows(10, 0));
}

#[test]
fn entity_rows_match_matrix_vector_oracle() {
    let cfg = toy_config(16, 1);
    let params = ModelParams::init(&cfg, 5).unwrap();
    let emb = toy_emb(4, 2, 4, 2);
    let a = sample_input(Variant::Entity);
    let (m, _) = augmented_input_matrix(&a, Some(&emb), &params).unwrap();
    assert_eq!(m.shape(), &[10, 16]);
    let named: Vec<(&str, &Tensor)> = params.named().collect();
    let proj = named.iter().find(|(n, _)| *n == "kg.projection").unwrap().1;
    let types = named.iter().find(|(n, _)| *n == "kg.type_embeddings").unwrap().1;
    let sep = named.iter().find(|(n, _)| *n == "shared.embed").unwrap().1.row(vocab::SEP);
    assert_eq!(m.row(7), sep);
    for (slot, e) in a.entity_ids.iter().enumerate() {
        let v = emb.entity(*e).unwrap();
        for c in 0..16 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += v[k] * proj.data()[k * 16 + c];
            }
            let want = acc + types.row(0)[c];
            let got = m.row(8 + slot)[c];
            assert!((got - want).abs() < 1e-12, "row {} col {c}: {got} vs {want}", 8 + slot);
        }
    }
}

#[test]
fn length_law_over_variants() {
    let params = ModelParams::init(&toy_config(16, 1), 3).unwrap();
    let emb = toy_emb(5, 3, 4, 1);
    for n in 1..6 {
        for ne in 0..3 {
            for nr in 0..3 {
                for v in Variant::ALL {
                    let a = AugmentedInput {
                        question_ids: question(n),
                        entity_ids: (0..ne).map(EntityId).collect(),
                        relation_ids: (0..nr).map(RelationId).collect(),
                        variant: v,
                    };
                    let want = n + usize::from(v != Variant::None)
                        * (1 + ne * usize::from(v.uses_entities()) + nr * usize::from(v.uses_relations()));
                    assert_eq!(a.encoder_len(), want);
                    let (m, _) = augmented_input_matrix(&a, Some(&emb), &params).unwrap();
                    assert_eq!(m.shape()[0], want);
                }
            }
        }
    }
}

#[test]
fn too_long_and_bad_ids() {
    let params = ModelParams::init(&toy_config(16, 1), 3).unwrap();
    let emb = toy_emb(4, 2, 4, 1);
    let long = AugmentedInput { question_ids: question(22), ..sample_input(Variant::Both) };
    assert!(matches!(augmented_input_matrix(&long, Some(&emb), &params), Err(ModelError::TooLong { len: 26, max: 24 })));
    let bad = AugmentedInput { entity_ids: vec![EntityId(9)], ..sample_input(Variant::Entity) };
    assert!(matches!(augmented_input_matrix(&bad, Some(&emb), &params), Err(ModelError::UnknownKgId)));
    let q = AugmentedInput::plain(question(3));
    assert!(matches!(params.logits(None, &q, &[FIRST_REGULAR], false, 0), Err(ModelError::MissingBos)));
}

#[test]
fn decoder_causality_by_perturbation() {
    let mut params = ModelParams::init(&toy_config(16, 2), 7).unwrap();
    jitter(&mut params, 8);
    let emb = toy_emb(4, 2, 4, 1);
    let a = sample_input(Variant::Both);
    for t in 2..=8 {
        let base: Vec<usize> = std::iter::once(BOS).chain((1..t).map(|i| FIRST_REGULAR + i % 11)).collect();
        let ref_logits = params.logits(Some(&emb), &a, &base, false, 0).unwrap();
        for j in 1..t {
            let mut ids = base.clone();
            ids[j] = if ids[j] == FIRST_REGULAR + 10 { FIRST_REGULAR } else { ids[j] + 1 };
            let out = params.logits(Some(&emb), &a, &ids, false, 0).unwrap();
            for i in 0..j {
                assert_eq!(out.row(i), ref_logits.row(i), "t={t} j={j} row {i}");
            }
            assert_ne!(out.row(j), ref_logits.row(j));
        }
    }
}

#[test]
fn eval_is_deterministic_and_train_uses_seed() {
    let params = ModelParams::init(&toy_config(16, 1), 7).unwrap();
    let emb = toy_emb(4, 2, 4, 1);
    let a = sample_input(Variant::Both);
    let dec = [BOS, FIRST_REGULAR, FIRST_REGULAR + 1];
    let x = params.logits(Some(&emb), &a, &dec, false, 1).unwrap();
    let y = params.logits(Some(&emb), &a, &dec, false, 2).unwrap();
    assert_eq!(x, y);
    assert!(x.all_finite());
    let t1 = params.logits(Some(&emb), &a, &dec, true, 1).unwrap();
    assert_eq!(t1, params.logits(Some(&emb), &a, &dec, true, 1).unwrap());
    assert_ne!(t1, x);
}

fn to_tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => panic!("unexpected model error {other}"),
    }
}

/// Cross entropy of the whole model as a function of every parameter
/// tensor plus both KG tables.
fn full_model_check(cfg: &ModelConfig, seed: u64) -> f64 {
    let mut params = ModelParams::init(cfg, seed).unwrap();
    jitter(&mut params, seed + 1);
    let emb = toy_emb(4, 2, cfg.d_kg, seed + 2);
    let a = sample_input(Variant::Both);
    let dec = [BOS, FIRST_REGULAR + 2, FIRST_REGULAR + 5, FIRST_REGULAR + 1];
    let targets = [FIRST_REGULAR + 2, FIRST_REGULAR + 5, FIRST_REGULAR + 1, EOS];

    let mut inputs: Vec<Tensor> = params.tensors().to_vec();
    inputs.push(Tensor::new(vec![4, cfg.d_kg], emb.entity_data().to_vec()).unwrap());
    inputs.push(Tensor::new(vec![2, cfg.d_kg], emb.relation_data().to_vec()).unwrap());
    let n = params.tensors().len();

    let logits_ok = params.logits(Some(&emb), &a, &dec, false, 0).unwrap();
    assert!(logits_ok.all_finite());

    grad_check_many(
        |tape: &mut Tape, vars: &[Var]| {
            let b = BoundParams { vars: vars[..n].to_vec() };
            let kg = KgBinding { entities: Some(vars[n]), relations: Some(vars[n + 1]), dim: cfg.d_kg };
            let input = build_encoder_input(tape, &params, &b, &a, &kg).map_err(to_tensor_err)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let logits = params.forward(tape, &b, &input, &dec, false, &mut rng).map_err(to_tensor_err)?;
            tape.cross_entropy_mean(logits, &targets, vocab::PAD)
        },
        &inputs,
        1e-5,
    )
    .unwrap()
}

#[test]
fn full_model_gradient_tiny() {
    let err = full_model_check(&toy_config(16, 1), 0);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn full_model_gradient_two_layers() {
    let err = full_model_check(&toy_config(32, 2), 0);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn greedy_stops_when_eos_wins() {
    let cfg = toy_config(16, 1);
    let mut params = ModelParams::init(&cfg, 1).unwrap();
    let a = AugmentedInput::plain(question(4));
    let head = params.layout().names().iter().position(|n| n == "lm_head").unwrap();
    // read the final hidden state at step one through an identity head
    {
        let w = params.tensors_mut()[head].data_mut();
        w.fill(0.0);
        for k in 0..cfg.d_model {
            w[k * cfg.vocab_size + k] = 1.0;
        }
    }
    let probe = params.logits(None, &a, &[BOS], false, 0).unwrap();
    let hidden: Vec<f64> = probe.row(0)[..cfg.d_model].to_vec();
    {
        let w = params.tensors_mut()[head].data_mut();
        w.fill(0.0);
        for (k, h) in hidden.iter().enumerate() {
            w[k * cfg.vocab_size + EOS] = *h;
        }
    }
    assert_eq!(greedy_decode(&params, None, &a, 1).unwrap(), Vec::<usize>::new());
    assert_eq!(greedy_decode(&params, None, &a, 5).unwrap(), Vec::<usize>::new());
}

#[test]
fn greedy_ties_go_to_lowest_id_and_respect_max_steps() {
    let cfg = toy_config(16, 1);
    let mut params = ModelParams::init(&cfg, 1).unwrap();
    let head = params.layout().names().iter().position(|n| n == "lm_head").unwrap();
    params.tensors_mut()[head].data_mut().fill(0.0);
    let a = AugmentedInput::plain(question(4));
    // every logit is zero, so PAD (id 0) wins every step
    assert_eq!(greedy_decode(&params, None, &a, 3).unwrap(), vec![0, 0, 0]);
    let p2 = ModelParams::init(&cfg, 4).unwrap();
    let first = greedy_decode(&p2, None, &a, 6).unwrap();
    assert!(first.len() <= 6);
    assert_eq!(first, greedy_decode(&p2, None, &a, 6).unwrap());
}

#[test]
fn layout_and_init() {
    let cfg = ModelConfig::with_vocab(100);
    let p = ModelParams::init(&cfg, 0).unwrap();
    assert!(p.all_finite());
    assert_eq!(p.layout().names()[0], "shared.embed");
    assert_eq!(p.layout().names().last().unwrap(), "lm_head");
    let named: Vec<(String, Tensor)> = p.named().map(|(n, t)| (n.to_owned(), t.clone())).collect();
    assert_eq!(ModelParams::from_named(&cfg, named.clone()).unwrap(), p);
    let mut other = cfg.clone();
    other.d_ff = 64;
    assert!(ModelParams::from_named(&other, named).is_err());
    let mut bad = cfg;
    bad.n_heads = 3;
    assert!(ModelParams::init(&bad, 0).is_err());
}
