use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::embed::{cosine_sim, EmbedError, EmbeddingTable};
use crate::kg::{EntityId, RelationId};
use crate::model::KgBinding;

/// Mean cosine similarity over `entities × relations`, recorded on `tape`.
/// An empty product yields a constant zero with no gradient.
pub fn sim_term(tape: &mut Tape, kg: &KgBinding, entities: &[EntityId], relations: &[RelationId]) -> Result<Var, TensorError> {
    if entities.is_empty() || relations.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let (Some(et), Some(rt)) = (kg.entities, kg.relations) else {
        return Err(TensorError::IndexOutOfRange { index: 0, len: 0 });
    };
    let mut total: Option<Var> = None;
    for e in entities {
        let v = tape.gather_rows(et, &[e.index()])?;
        for r in relations {
            let w = tape.gather_rows(rt, &[r.index()])?;
            let c = tape.cosine_similarity(v, w)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, c)?,
                None => c,
            });
        }
    }
    let n = (entities.len() * relations.len()) as f64;
    Ok(tape.scale(total.expect("nonempty product"), 1.0 / n))
}

/// Value-only counterpart of [`sim_term`].
pub fn sim_value(emb: &EmbeddingTable, entities: &[EntityId], relations: &[RelationId]) -> Result<f64, EmbedError> {
    if entities.is_empty() || relations.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &e in entities {
        let v = emb.entity(e).ok_or(EmbedError::UnknownId)?;
        for &r in relations {
            total += cosine_sim(v, emb.relation(r).ok_or(EmbedError::UnknownId)?)?;
        }
    }
    Ok(total / (entities.len() * relations.len()) as f64)
}

/// `L′ = L + λ·Sim`.
pub fn loss_prime(tape: &mut Tape, base: Var, sim: Var, lambda: f64) -> Result<Var, TensorError> {
    let weighted = tape.scale(sim, lambda);
    tape.add(base, weighted)
}
