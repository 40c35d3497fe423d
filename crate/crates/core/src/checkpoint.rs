//! Single-file model container.
//!
//! Layout: `GGCK`, `u32` format version, `u64` header length, a JSON header,
//! then a little-endian `f64` body holding the generator, discriminator,
//! compressor and style parameters in store order, the dense `T`, and the
//! label embeddings.

use crate::corpus::LabelVocabulary;
use crate::error::{Error, Result};
use crate::labelspace::CooccurrenceMatrix;
use crate::nets::{Networks, ProgressiveStage};
use crate::nn::ParamStore;
use crate::semantics::EmbeddingTable;
use crate::training::{Model, TrainConfig};
use crate::util::{rng_for, sha256_hex};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"GGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: TrainConfig,
    pub config_hash: String,
    pub iteration: usize,
    pub stage: ProgressiveStage,
    pub vocabulary: LabelVocabulary,
    pub embed_dim: usize,
    /// Parameter layout per group: generator, discriminator, ilsc, style.
    pub layout: [Vec<ParamLayout>; 4],
    pub body_values: usize,
    pub body_sha256: String,
}

fn layout(store: &ParamStore) -> Vec<ParamLayout> {
    store
        .params()
        .iter()
        .map(|p| ParamLayout {
            name: p.name.clone(),
            shape: p.shape.clone(),
        })
        .collect()
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let stores = [
        &model.params.generator,
        &model.params.discriminator,
        &model.params.ilsc,
        &model.params.style,
    ];
    let mut body: Vec<u8> = Vec::new();
    let mut push = |v: &[f64]| {
        for x in v {
            body.extend_from_slice(&x.to_le_bytes());
        }
    };
    for s in stores {
        for p in s.params() {
            push(&p.value);
        }
    }
    push(&model.cooccurrence.to_dense());
    push(&model.embeddings.values);
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        config_hash: model.config_hash.clone(),
        iteration: model.iteration,
        stage: model.stage,
        vocabulary: model.vocabulary.clone(),
        embed_dim: model.embeddings.dim,
        layout: stores.map(layout),
        body_values: body.len() / 8,
        body_sha256: sha256_hex(&body),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    Ok(out)
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    Ok((header, &bytes[16 + len..]))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let (header, body) = read_header(bytes)?;
    if body.len() != header.body_values * 8 {
        return Err(bad(format!(
            "body holds {} bytes, header declares {} values",
            body.len(),
            header.body_values
        )));
    }
    if sha256_hex(body) != header.body_sha256 {
        return Err(bad("body checksum mismatch"));
    }
    if header.config.hash() != header.config_hash {
        return Err(bad("config hash does not match the stored config"));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let (nets, mut params) = Networks::build(&header.config.model, &mut rng_for(0, &[]))?;
    let stores = [
        &mut params.generator,
        &mut params.discriminator,
        &mut params.ilsc,
        &mut params.style,
    ];
    for (store, expected) in stores.into_iter().zip(&header.layout) {
        if layout(store) != *expected {
            return Err(bad("parameter layout differs from the architecture"));
        }
        for p in store.params_mut() {
            for v in p.value.iter_mut() {
                *v = values.next().ok_or_else(|| bad("body too short"))?;
            }
        }
    }
    let k = header.vocabulary.len();
    if k != header.config.model.num_labels {
        return Err(bad("vocabulary size differs from the model"));
    }
    let t: Vec<f64> = values.by_ref().take(k * k).collect();
    let cooccurrence = CooccurrenceMatrix::from_dense(k, t)?;
    let emb: Vec<f64> = values.collect();
    if emb.len() != k * header.embed_dim {
        return Err(bad("embedding block has the wrong size"));
    }
    Ok(Model {
        config_hash: header.config_hash,
        config: header.config,
        nets,
        params,
        stage: header.stage,
        iteration: header.iteration,
        vocabulary: header.vocabulary,
        cooccurrence,
        embeddings: EmbeddingTable {
            k,
            dim: header.embed_dim,
            values: emb,
        },
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
