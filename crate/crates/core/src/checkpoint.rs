//! Checkpoint persistence.
//!
//! Layout: the magic bytes `PXR1`, a little-endian `u64` byte length, a UTF-8
//! JSON metadata document (configuration, vocabulary, ID lists and a tensor
//! manifest of names, shapes and payload offsets), then the raw little-endian
//! `f32` tensor payloads in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{IdIndex, Vocabulary};
use crate::error::{Error, Result};
use crate::lm::{LmConfig, LmParameters};
use crate::model::Model;
use crate::mtl::TaskWeights;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;
use crate::embeddings::EmbeddingTables;

pub const MAGIC: &[u8; 4] = b"PXR1";
pub const FORMAT_VERSION: u32 = 1;
const TASK_WEIGHTS: &str = "task_weights";

/// Everything needed to resume generation or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub users: IdIndex,
    pub items: IdIndex,
    pub model: Model<f32>,
    /// Best validation joint loss, if a validation set was used.
    pub best_val_loss: Option<f64>,
    pub epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    config: TrainConfig,
    lm_config: LmConfig,
    vocab: Vec<String>,
    vocab_hash: String,
    users: Vec<String>,
    items: Vec<String>,
    best_val_loss: Option<f64>,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut named: Vec<(String, &Tensor<f32>)> = Vec::new();
        self.model.visit(&mut |n, t| named.push((n, t)));
        let weights = Tensor::from_vec(&[2], vec![self.model.weights.sequence, self.model.weights.rating]);
        named.push((TASK_WEIGHTS.to_string(), &weights));

        let mut offset = 0;
        let tensors = named
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.len() * 4;
                e
            })
            .collect();
        let meta = Metadata {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            lm_config: self.model.config.clone(),
            vocab: self.vocab.words().to_vec(),
            vocab_hash: self.vocab.content_hash(),
            users: self.users.ids().to_vec(),
            items: self.items.ids().to_vec(),
            best_val_loss: self.best_val_loss,
            epoch: self.epoch,
            tensors,
        };
        let header = serde_json::to_vec(&meta)?;

        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &named {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Integrity("bad magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Integrity("truncated metadata".into()))?;
        let version: serde_json::Value = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::Integrity(format!("metadata: {e}")))?;
        let found = version.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let meta: Metadata =
            serde_json::from_value(version).map_err(|e| Error::Integrity(format!("metadata: {e}")))?;
        let payload = &bytes[header_end..];

        let expected_len: usize = meta.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 4).sum();
        if payload.len() != expected_len {
            return Err(Error::Integrity(format!(
                "payload is {} bytes, manifest describes {expected_len}",
                payload.len()
            )));
        }
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        let mut next = 0;
        for e in &meta.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != next {
                return Err(Error::Integrity(format!("tensor {} at offset {}, expected {next}", e.name, e.offset)));
            }
            next += n * 4;
            let data = payload[e.offset..e.offset + n * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push((e.name.as_str(), Tensor::from_vec(&e.shape, data)));
        }

        let vocab = Vocabulary::from_words(meta.vocab);
        if vocab.content_hash() != meta.vocab_hash {
            return Err(Error::Integrity("vocabulary hash mismatch".into()));
        }
        let lm_cfg = meta.lm_config;
        lm_cfg.validate()?;
        let mut model = Model {
            config: lm_cfg.clone(),
            tables: EmbeddingTables::zeros(meta.users.len(), meta.items.len(), lm_cfg.d_model),
            lm: LmParameters::zeros(&lm_cfg),
            weights: TaskWeights::default(),
        };
        let (weights_entry, rest) = tensors
            .split_last()
            .filter(|(w, _)| w.0 == TASK_WEIGHTS && w.1.shape == [2])
            .ok_or_else(|| Error::Integrity("missing task weights".into()))?;
        let slots = model.tensors_mut();
        if slots.len() != rest.len() {
            return Err(Error::Integrity("tensor count does not match configuration".into()));
        }
        let mut names = Vec::new();
        Model::<f32>::init_names(&mut names, &lm_cfg);
        for ((slot, (name, t)), want) in slots.into_iter().zip(rest).zip(&names) {
            if *name != want || slot.shape != t.shape {
                return Err(Error::Integrity(format!("unexpected tensor {name} {:?}", t.shape)));
            }
            *slot = t.clone();
        }
        model.weights = TaskWeights {
            sequence: weights_entry.1.data[0],
            rating: weights_entry.1.data[1],
        };

        Ok(Self {
            config: meta.config,
            vocab,
            users: IdIndex::from_ids(meta.users),
            items: IdIndex::from_ids(meta.items),
            model,
            best_val_loss: meta.best_val_loss,
            epoch: meta.epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    c.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
