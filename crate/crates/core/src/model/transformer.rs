use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{build_encoder_input, AugmentedInput, EncoderInput, KgBinding};
use super::vocab::{BOS, EOS};
use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::embed::EmbeddingTable;

/// Relative distances are clipped to `±REL_MAX_DISTANCE` before bucketing.
pub const REL_MAX_DISTANCE: usize = 8;
const REL_BUCKETS: usize = 2 * REL_MAX_DISTANCE + 1;
const MASKED: f64 = -1e30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_p: f64,
    pub max_len: usize,
    pub d_kg: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Default sizes for a given vocabulary.
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 128, dropout_p: 0.1, max_len: 64, d_kg: 32, vocab_size }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        if [self.d_model, self.n_layers, self.n_heads, self.d_ff, self.max_len, self.d_kg, self.vocab_size].contains(&0) {
            return bad("all sizes must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Attn {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct EncLayer {
    attn_norm: usize,
    attn: Attn,
    ff_norm: usize,
    wi: usize,
    wo: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct DecLayer {
    self_norm: usize,
    self_attn: Attn,
    cross_norm: usize,
    cross: Attn,
    ff_norm: usize,
    wi: usize,
    wo: usize,
}

/// Names, shapes and positions of every parameter tensor for a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    embed: usize,
    kg_proj: usize,
    kg_type: usize,
    enc_bias: usize,
    dec_bias: usize,
    enc: Vec<EncLayer>,
    enc_norm: usize,
    dec: Vec<DecLayer>,
    dec_norm: usize,
    lm_head: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut add = |name: String, shape: Vec<usize>| {
            names.push(name);
            shapes.push(shape);
            names.len() - 1
        };
        let d = cfg.d_model;
        let embed = add("shared.embed".into(), vec![cfg.vocab_size, d]);
        let kg_proj = add("kg.projection".into(), vec![cfg.d_kg, d]);
        let kg_type = add("kg.type_embeddings".into(), vec![2, d]);
        let enc_bias = add("encoder.rel_bias".into(), vec![REL_BUCKETS, cfg.n_heads]);
        let dec_bias = add("decoder.rel_bias".into(), vec![REL_BUCKETS, cfg.n_heads]);
        let attn = |add: &mut dyn FnMut(String, Vec<usize>) -> usize, p: &str| Attn {
            q: add(format!("{p}.q"), vec![d, d]),
            k: add(format!("{p}.k"), vec![d, d]),
            v: add(format!("{p}.v"), vec![d, d]),
            o: add(format!("{p}.o"), vec![d, d]),
        };
        let mut enc = Vec::new();
        for l in 0..cfg.n_layers {
            let attn_norm = add(format!("encoder.{l}.attn_norm"), vec![d]);
            let a = attn(&mut add, &format!("encoder.{l}.self_attn"));
            let ff_norm = add(format!("encoder.{l}.ff_norm"), vec![d]);
            let wi = add(format!("encoder.{l}.ff.wi"), vec![d, cfg.d_ff]);
            let wo = add(format!("encoder.{l}.ff.wo"), vec![cfg.d_ff, d]);
            enc.push(EncLayer { attn_norm, attn: a, ff_norm, wi, wo });
        }
        let enc_norm = add("encoder.final_norm".into(), vec![d]);
        let mut dec = Vec::new();
        for l in 0..cfg.n_layers {
            let self_norm = add(format!("decoder.{l}.self_norm"), vec![d]);
            let self_attn = attn(&mut add, &format!("decoder.{l}.self_attn"));
            let cross_norm = add(format!("decoder.{l}.cross_norm"), vec![d]);
            let cross = attn(&mut add, &format!("decoder.{l}.cross_attn"));
            let ff_norm = add(format!("decoder.{l}.ff_norm"), vec![d]);
            let wi = add(format!("decoder.{l}.ff.wi"), vec![d, cfg.d_ff]);
            let wo = add(format!("decoder.{l}.ff.wo"), vec![cfg.d_ff, d]);
            dec.push(DecLayer { self_norm, self_attn, cross_norm, cross, ff_norm, wi, wo });
        }
        let dec_norm = add("decoder.final_norm".into(), vec![d]);
        let lm_head = add("lm_head".into(), vec![d, cfg.vocab_size]);
        Self { names, shapes, embed, kg_proj, kg_type, enc_bias, dec_bias, enc, enc_norm, dec, dec_norm, lm_head }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }
}

/// All trainable model tensors plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: ParamLayout,
    tensors: Vec<Tensor>,
}

/// Parameter tensors recorded on a tape, in layout order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(layout.names.len());
        for (name, shape) in layout.names.iter().zip(&layout.shapes) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("norm") {
                vec![1.0; n]
            } else if name.ends_with("rel_bias") {
                vec![0.0; n]
            } else {
                let std = if name == "shared.embed" || name == "kg.projection" {
                    1.0
                } else if name == "kg.type_embeddings" {
                    0.5
                } else {
                    1.0 / (shape[0] as f64).sqrt()
                };
                let a = std * 3f64.sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            };
            tensors.push(Tensor::new(shape.clone(), data)?);
        }
        Ok(Self { config: config.clone(), layout, tensors })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if named.len() != layout.names.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} tensors, found {}",
                layout.names.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want_name, want_shape)) in named.into_iter().zip(layout.names.iter().zip(&layout.shapes)) {
            if &name != want_name || t.shape() != want_shape.as_slice() {
                return Err(ModelError::InvalidConfig(format!(
                    "tensor {name} {:?} does not match {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
            tensors.push(t);
        }
        Ok(Self { config: config.clone(), layout, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layout.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn checksum(&self) -> u64 {
        crate::checksum_f64(self.tensors.iter().flat_map(|t| t.data().iter().copied()))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Records every tensor on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        BoundParams { vars }
    }

    pub(crate) fn embed_var(&self, b: &BoundParams) -> Var {
        b.vars[self.layout.embed]
    }

    pub(crate) fn kg_vars(&self, b: &BoundParams) -> (Var, Var) {
        (b.vars[self.layout.kg_proj], b.vars[self.layout.kg_type])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention<R: Rng>(
        &self,
        tape: &mut Tape,
        b: &BoundParams,
        w: &Attn,
        xq: Var,
        xkv: Var,
        bias: Option<(Var, &[Option<usize>])>,
        causal: bool,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let lq = tape.shape(xq)[0];
        let lk = tape.shape(xkv)[0];
        let q = tape.matmul(xq, b.vars[w.q])?;
        let k = tape.matmul(xkv, b.vars[w.k])?;
        let v = tape.matmul(xkv, b.vars[w.v])?;
        let mask = if causal {
            let mut m = Tensor::zeros(&[lq, lk]);
            for i in 0..lq {
                for j in (i + 1)..lk {
                    m.data_mut()[i * lk + j] = MASKED;
                }
            }
            Some(tape.constant(m))
        } else {
            None
        };
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out: Option<Var> = None;
        for h in 0..cfg.n_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let s = tape.matmul_t(qh, kh)?;
            let mut s = tape.scale(s, scale);
            if let Some((table, idx)) = bias {
                let bv = tape.gather_bias(table, h, idx, lq, lk)?;
                s = tape.add(s, bv)?;
            }
            if let Some(m) = mask {
                s = tape.add(s, m)?;
            }
            let p = tape.softmax_lastdim(s);
            let p = tape.dropout(p, cfg.dropout_p, train, rng);
            let ctx = tape.matmul(p, vh)?;
            let rows: Vec<usize> = (h * dh..(h + 1) * dh).collect();
            let wo_h = tape.gather_rows(b.vars[w.o], &rows)?;
            let part = tape.matmul(ctx, wo_h)?;
            out = Some(match out {
                Some(acc) => tape.add(acc, part)?,
                None => part,
            });
        }
        Ok(out.expect("n_heads > 0"))
    }

    fn feed_forward<R: Rng>(&self, tape: &mut Tape, b: &BoundParams, wi: usize, wo: usize, x: Var, train: bool, rng: &mut R) -> Result<Var, ModelError> {
        let h = tape.matmul(x, b.vars[wi])?;
        let h = tape.gelu(h);
        let h = tape.dropout(h, self.config.dropout_p, train, rng);
        Ok(tape.matmul(h, b.vars[wo])?)
    }

    fn norm(&self, tape: &mut Tape, b: &BoundParams, gain: usize, x: Var) -> Result<Var, ModelError> {
        let n = tape.rms_norm(x);
        Ok(tape.mul_row(n, b.vars[gain])?)
    }

    /// Bidirectional pre-norm encoder. Relative-position bias applies only
    /// between token rows; KG rows get none.
    pub fn encode<R: Rng>(&self, tape: &mut Tape, b: &BoundParams, input: &EncoderInput, train: bool, rng: &mut R) -> Result<Var, ModelError> {
        let l = input.len;
        if l > self.config.max_len {
            return Err(ModelError::TooLong { len: l, max: self.config.max_len });
        }
        let mut idx = Vec::with_capacity(l * l);
        for i in 0..l {
            for j in 0..l {
                idx.push(if i < input.n_text && j < input.n_text {
                    let rel = (j as isize - i as isize).clamp(-(REL_MAX_DISTANCE as isize), REL_MAX_DISTANCE as isize);
                    Some((rel + REL_MAX_DISTANCE as isize) as usize)
                } else {
                    None
                });
            }
        }
        let table = b.vars[self.layout.enc_bias];
        let mut x = tape.dropout(input.x, self.config.dropout_p, train, rng);
        for layer in &self.layout.enc {
            let h = self.norm(tape, b, layer.attn_norm, x)?;
            let a = self.attention(tape, b, &layer.attn, h, h, Some((table, &idx)), false, train, rng)?;
            let a = tape.dropout(a, self.config.dropout_p, train, rng);
            x = tape.add(x, a)?;
            let h = self.norm(tape, b, layer.ff_norm, x)?;
            let f = self.feed_forward(tape, b, layer.wi, layer.wo, h, train, rng)?;
            let f = tape.dropout(f, self.config.dropout_p, train, rng);
            x = tape.add(x, f)?;
        }
        let x = self.norm(tape, b, self.layout.enc_norm, x)?;
        Ok(tape.dropout(x, self.config.dropout_p, train, rng))
    }

    /// Causal decoder with cross-attention over `enc`; returns `[t×vocab]` logits.
    pub fn decode<R: Rng>(&self, tape: &mut Tape, b: &BoundParams, enc: Var, decoder_ids: &[usize], train: bool, rng: &mut R) -> Result<Var, ModelError> {
        if decoder_ids.first() != Some(&BOS) {
            return Err(ModelError::MissingBos);
        }
        let t = decoder_ids.len();
        if t > self.config.max_len {
            return Err(ModelError::TooLong { len: t, max: self.config.max_len });
        }
        if let Some(&bad) = decoder_ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(ModelError::InvalidInput(format!("token id {bad} outside vocabulary")));
        }
        let mut idx = Vec::with_capacity(t * t);
        for i in 0..t {
            for j in 0..t {
                idx.push(if j <= i { Some((i - j).min(REL_MAX_DISTANCE)) } else { None });
            }
        }
        let table = b.vars[self.layout.dec_bias];
        let x = tape.gather_rows(b.vars[self.layout.embed], decoder_ids)?;
        let mut x = tape.dropout(x, self.config.dropout_p, train, rng);
        for layer in &self.layout.dec {
            let h = self.norm(tape, b, layer.self_norm, x)?;
            let a = self.attention(tape, b, &layer.self_attn, h, h, Some((table, &idx)), true, train, rng)?;
            let a = tape.dropout(a, self.config.dropout_p, train, rng);
            x = tape.add(x, a)?;
            let h = self.norm(tape, b, layer.cross_norm, x)?;
            let c = self.attention(tape, b, &layer.cross, h, enc, None, false, train, rng)?;
            let c = tape.dropout(c, self.config.dropout_p, train, rng);
            x = tape.add(x, c)?;
            let h = self.norm(tape, b, layer.ff_norm, x)?;
            let f = self.feed_forward(tape, b, layer.wi, layer.wo, h, train, rng)?;
            let f = tape.dropout(f, self.config.dropout_p, train, rng);
            x = tape.add(x, f)?;
        }
        let x = self.norm(tape, b, self.layout.dec_norm, x)?;
        let x = tape.dropout(x, self.config.dropout_p, train, rng);
        Ok(tape.matmul(x, b.vars[self.layout.lm_head])?)
    }

    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        b: &BoundParams,
        input: &EncoderInput,
        decoder_ids: &[usize],
        train: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let enc = self.encode(tape, b, input, train, rng)?;
        self.decode(tape, b, enc, decoder_ids, train, rng)
    }

    /// Evaluates logits for one augmented example on a private tape.
    pub fn logits(
        &self,
        emb: Option<&EmbeddingTable>,
        input: &AugmentedInput,
        decoder_ids: &[usize],
        train: bool,
        seed: u64,
    ) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let kg = KgBinding::bind(&mut tape, emb, false);
        let enc_in = build_encoder_input(&mut tape, self, &b, input, &kg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self.forward(&mut tape, &b, &enc_in, decoder_ids, train, &mut rng)?;
        Ok(tape.value(out).clone())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy generation from BOS; stops at EOS or after `max_steps` tokens.
/// Returned ids exclude BOS and EOS.
pub fn greedy_decode(params: &ModelParams, emb: Option<&EmbeddingTable>, input: &AugmentedInput, max_steps: usize) -> Result<Vec<usize>, ModelError> {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, false);
    let kg = KgBinding::bind(&mut tape, emb, false);
    let enc_in = build_encoder_input(&mut tape, params, &b, input, &kg)?;
    // eval mode never draws from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = params.encode(&mut tape, &b, &enc_in, false, &mut rng)?;
    let mut ids = vec![BOS];
    let mut out = Vec::new();
    for _ in 0..max_steps.min(params.config.max_len.saturating_sub(1)) {
        let logits = params.decode(&mut tape, &b, enc, &ids, false, &mut rng)?;
        let value = tape.value(logits);
        let next = argmax(value.row(ids.len() - 1));
        if next == EOS {
            break;
        }
        out.push(next);
        ids.push(next);
    }
    Ok(out)
}
