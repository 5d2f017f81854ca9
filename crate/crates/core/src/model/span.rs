//! Span corruption for fill-in-the-blank pretraining.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{is_reserved, is_sentinel, sentinel, EOS, NUM_SENTINELS};
use super::ModelError;

/// A corrupted span: `len` tokens starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

fn geometric<R: Rng>(mean: f64, rng: &mut R) -> usize {
    let p = (1.0 / mean).min(1.0);
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    1 + (u.ln() / (1.0 - p).ln()).floor() as usize
}

/// Chooses non-overlapping, non-adjacent spans covering
/// `clamp(round(rate·n), 1, n)` tokens.
pub fn sample_spans(n: usize, corruption_rate: f64, mean_span: f64, seed: u64) -> Vec<Span> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = ((corruption_rate * n as f64).round() as usize).clamp(1, n);

    let mut lengths = Vec::new();
    let mut left = budget;
    while left > 0 {
        let l = geometric(mean_span, &mut rng).min(left);
        lengths.push(l);
        left -= l;
    }
    // inner gaps need at least one clean token each
    let clean = n - budget;
    while lengths.len() > 1 && lengths.len() - 1 > clean {
        let last = lengths.pop().expect("len > 1");
        *lengths.last_mut().expect("len > 0") += last;
    }

    let spans = lengths.len();
    let mut gaps = vec![0usize; spans + 1];
    for g in gaps.iter_mut().take(spans).skip(1) {
        *g = 1;
    }
    for _ in 0..clean - (spans - 1) {
        gaps[rng.gen_range(0..=spans)] += 1;
    }

    let mut out = Vec::with_capacity(spans);
    let mut pos = 0;
    for (i, &len) in lengths.iter().enumerate() {
        pos += gaps[i];
        out.push(Span { start: pos, len });
        pos += len;
    }
    out
}

/// Replaces each span by the next sentinel; the target lists every
/// sentinel followed by its span tokens and ends with EOS.
pub fn apply_spans(ids: &[usize], spans: &[Span]) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if spans.len() > NUM_SENTINELS {
        return Err(ModelError::TooManySpans(spans.len()));
    }
    let mut input = Vec::with_capacity(ids.len());
    let mut target = Vec::new();
    let mut pos = 0;
    for (k, s) in spans.iter().enumerate() {
        if s.len == 0 || s.start < pos || s.start + s.len > ids.len() {
            return Err(ModelError::InvalidInput(format!("bad span {s:?}")));
        }
        input.extend_from_slice(&ids[pos..s.start]);
        input.push(sentinel(k));
        target.push(sentinel(k));
        target.extend_from_slice(&ids[s.start..s.start + s.len]);
        pos = s.start + s.len;
    }
    input.extend_from_slice(&ids[pos..]);
    target.push(EOS);
    Ok((input, target))
}

/// Fill-in-the-blank corruption of one sequence, deterministic in `seed`.
pub fn span_corrupt(ids: &[usize], corruption_rate: f64, mean_span: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::InvalidInput("empty sequence".into()));
    }
    if ids.iter().any(|&i| is_reserved(i)) {
        return Err(ModelError::InvalidInput("sequence contains reserved ids".into()));
    }
    if !(corruption_rate > 0.0 && corruption_rate < 1.0) || !(mean_span > 0.0) {
        return Err(ModelError::InvalidInput("corruption rate must be in (0,1), mean span positive".into()));
    }
    apply_spans(ids, &sample_spans(ids.len(), corruption_rate, mean_span, seed))
}

/// Splices target spans back in place of their sentinels.
pub fn reconstruct(input: &[usize], target: &[usize]) -> Vec<usize> {
    let mut spans: Vec<(usize, Vec<usize>)> = Vec::new();
    for &t in target {
        if t == EOS {
            break;
        }
        if is_sentinel(t) {
            spans.push((t, Vec::new()));
        } else if let Some(last) = spans.last_mut() {
            last.1.push(t);
        }
    }
    let mut out = Vec::new();
    for &t in input {
        match spans.iter().find(|(s, _)| *s == t) {
            Some((_, toks)) => out.extend_from_slice(toks),
            None => out.push(t),
        }
    }
    out
}
