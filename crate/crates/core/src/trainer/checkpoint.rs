//! Binary checkpoints: `KGT5CKPT`, u32 LE version, u64 LE header length,
//! a UTF-8 JSON header, then little-endian f64 blobs in directory order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossSpec, TrainConfig, TrainError};
use crate::autodiff::Tensor;
use crate::embed::{EmbeddingNames, EmbeddingTable};
use crate::model::{ModelConfig, ModelParams, ParamLayout, Vocabulary};

const MAGIC: &[u8; 8] = b"KGT5CKPT";
const VERSION: u32 = 1;
const ENTITY_TABLE: &str = "kg.entity";
const RELATION_TABLE: &str = "kg.relation";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Option<Vocabulary>,
    pub train: Option<TrainConfig>,
    pub loss: Option<LossSpec>,
    pub embeddings: Option<(EmbeddingTable, EmbeddingNames)>,
}

#[derive(Serialize, Deserialize)]
struct DirEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: Option<TrainConfig>,
    loss: Option<LossSpec>,
    vocab: Option<Vocabulary>,
    kg_names: Option<EmbeddingNames>,
    tensors: Vec<DirEntry>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut blobs: Vec<(String, Vec<usize>, &[f64])> =
        ck.params.named().map(|(n, t)| (n.to_owned(), t.shape().to_vec(), t.data())).collect();
    if let Some((emb, _)) = &ck.embeddings {
        blobs.push((ENTITY_TABLE.into(), vec![emb.num_entities(), emb.dim()], emb.entity_data()));
        blobs.push((RELATION_TABLE.into(), vec![emb.num_relations(), emb.dim()], emb.relation_data()));
    }
    let mut offset = 0u64;
    let tensors = blobs
        .iter()
        .map(|(name, shape, data)| {
            let e = DirEntry { name: name.clone(), shape: shape.clone(), offset };
            offset += 8 * data.len() as u64;
            e
        })
        .collect();
    let header = Header {
        model_config: ck.params.config().clone(),
        train_config: ck.train.clone(),
        loss: ck.loss,
        vocab: ck.vocab.clone(),
        kg_names: ck.embeddings.as_ref().map(|(_, n)| n.clone()),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &blobs {
        for v in data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], TrainError> {
    let end = pos.checked_add(n).ok_or(TrainError::TruncatedFile)?;
    let s = bytes.get(*pos..end).ok_or(TrainError::TruncatedFile)?;
    *pos = end;
    Ok(s)
}

/// Parses a checkpoint. When `expected` is given, every model tensor must
/// have the shape that config implies.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint, TrainError> {
    let mut pos = 0;
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) { TrainError::TruncatedFile } else { TrainError::BadMagic });
    }
    if take(bytes, &mut pos, 8)? != MAGIC {
        return Err(TrainError::BadMagic);
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(TrainError::VersionUnsupported(version));
    }
    let hlen = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| TrainError::TruncatedFile)?;
    let header: Header = serde_json::from_slice(take(bytes, &mut pos, hlen)?).map_err(|e| TrainError::Header(e.to_string()))?;
    let base = pos;

    let read = |entry: &DirEntry| -> Result<Vec<f64>, TrainError> {
        let n: usize = entry.shape.iter().product();
        let start = base.checked_add(usize::try_from(entry.offset).map_err(|_| TrainError::TruncatedFile)?).ok_or(TrainError::TruncatedFile)?;
        let mut p = start;
        let raw = take(bytes, &mut p, n.checked_mul(8).ok_or(TrainError::TruncatedFile)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };

    let layout_cfg = expected.unwrap_or(&header.model_config);
    let layout = ParamLayout::new(layout_cfg);
    let n_model = layout.names().len();
    if header.tensors.len() < n_model {
        return Err(TrainError::Header(format!("expected at least {n_model} tensors, found {}", header.tensors.len())));
    }
    let mut named = Vec::with_capacity(n_model);
    for (entry, (name, shape)) in header.tensors[..n_model].iter().zip(layout.names().iter().zip(layout.shapes())) {
        if &entry.name != name || &entry.shape != shape {
            return Err(TrainError::ShapeMismatch {
                name: format!("{} (expected {name})", entry.name),
                expected: shape.clone(),
                found: entry.shape.clone(),
            });
        }
        named.push((entry.name.clone(), Tensor::new(entry.shape.clone(), read(entry)?)?));
    }
    if let Some(cfg) = expected {
        if cfg != &header.model_config {
            return Err(TrainError::InvalidConfig("checkpoint was written with a different model config".into()));
        }
    }
    let params = ModelParams::from_named(&header.model_config, named)?;

    let rest = &header.tensors[n_model..];
    let embeddings = match (rest, header.kg_names) {
        ([], None) => None,
        ([e, r], Some(names)) if e.name == ENTITY_TABLE && r.name == RELATION_TABLE => {
            if e.shape.len() != 2 || r.shape.len() != 2 || e.shape[1] != r.shape[1] {
                return Err(TrainError::Header("embedding table shapes disagree".into()));
            }
            if names.entities.len() != e.shape[0] || names.relations.len() != r.shape[0] {
                return Err(TrainError::Header("embedding names do not match table rows".into()));
            }
            let table = EmbeddingTable::new(e.shape[1], read(e)?, read(r)?)?;
            Some((table, names))
        }
        _ => return Err(TrainError::Header("unexpected tensors after the model parameters".into())),
    };
    Ok(Checkpoint { params, vocab: header.vocab, train: header.train_config, loss: header.loss, embeddings })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), TrainError> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    decode_checkpoint(&std::fs::read(path)?, None)
}

/// Loads and validates tensor shapes against `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint, TrainError> {
    decode_checkpoint(&std::fs::read(path)?, Some(expected))
}
