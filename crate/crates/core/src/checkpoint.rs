//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `APGNETCK`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then the
//! payload of little-endian `f32` values in header order (parameters,
//! normalization buffers, then first and second optimizer moments).

use std::collections::BTreeMap;
use std::path::Path;

use apgnet_autograd::{named_buffers, named_params, AdamConfig, Moments};
use serde::{Deserialize, Serialize};

use crate::config::{AblationId, ExperimentConfig};
use crate::error::{Error, Result};
use crate::model::{ApgNet, Architecture};
use crate::train::{Scheme, Trainer};

pub const MAGIC: &[u8; 8] = b"APGNETCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: EntryKind,
    pub len: usize,
    /// Optimizer step count for moment entries.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub ablation_id: AblationId,
    pub architecture: Architecture,
    pub scheme: Scheme,
    pub epoch: usize,
    pub step: usize,
    pub config: ExperimentConfig,
    pub entries: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub trainer: Trainer<f32>,
}

fn adam_config(config: &ExperimentConfig) -> AdamConfig {
    AdamConfig {
        lr: config.train.lr,
        weight_decay: config.train.weight_decay,
        ..AdamConfig::default()
    }
}

/// Fresh trainer for `config`, seeded from `config.seed`.
pub fn build_trainer(config: &ExperimentConfig) -> Result<Trainer<f32>> {
    let id = config.ablation_id;
    let model = ApgNet::new(&config.model, id.architecture(), config.seed)?;
    Ok(Trainer::new(
        model,
        adam_config(config),
        id.scheme(),
        config.train.align_on_m1,
        config.seed,
    ))
}

fn push_f32(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let model = &self.trainer.model;
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        for (name, p) in named_params(model) {
            let v = p.values();
            entries.push(TensorEntry { name, kind: EntryKind::Param, len: v.len(), steps: None });
            push_f32(&mut payload, &v);
        }
        for (name, b) in named_buffers(model) {
            let v = b.values();
            entries.push(TensorEntry { name, kind: EntryKind::Buffer, len: v.len(), steps: None });
            push_f32(&mut payload, &v);
        }
        for (kind, pick) in [
            (EntryKind::AdamM, (|m: &Moments<f32>| &m.m) as fn(&Moments<f32>) -> &Vec<f32>),
            (EntryKind::AdamV, |m: &Moments<f32>| &m.v),
        ] {
            for (name, m) in self.trainer.optimizer.state() {
                let v = pick(m);
                entries.push(TensorEntry {
                    name: name.clone(),
                    kind,
                    len: v.len(),
                    steps: Some(m.steps),
                });
                push_f32(&mut payload, v);
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            ablation_id: self.config.ablation_id,
            architecture: model.architecture(),
            scheme: self.trainer.scheme,
            epoch: self.epoch,
            step: self.trainer.step_count(),
            config: self.config.clone(),
            entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::raster::ensure_parent(path)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(bad("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("bad header: {e}")))?;
        let mut payload = &body[header_len..];
        let total: usize = header.entries.iter().map(|e| e.len).sum();
        if payload.len() != 4 * total {
            return Err(bad(format!("payload has {} bytes, header describes {}", payload.len(), 4 * total)));
        }
        header.config.validate()?;
        if header.config.ablation_id.architecture() != header.architecture {
            return Err(bad("architecture does not match ablation id".into()));
        }

        let mut trainer = build_trainer(&header.config)?;
        trainer.scheme = header.scheme;
        trainer.set_step_count(header.step);
        let params: BTreeMap<String, _> = named_params(&trainer.model).into_iter().collect();
        let buffers: BTreeMap<String, _> = named_buffers(&trainer.model).into_iter().collect();
        let mut moments: BTreeMap<String, Moments<f32>> = BTreeMap::new();
        let (mut n_params, mut n_buffers) = (0, 0);
        for e in &header.entries {
            let (chunk, rest) = payload.split_at(4 * e.len);
            payload = rest;
            let values: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let expect_len = |have: usize| {
                if have == e.len {
                    Ok(())
                } else {
                    Err(bad(format!("{} has {} values, model expects {have}", e.name, e.len)))
                }
            };
            match e.kind {
                EntryKind::Param => {
                    let p = params.get(&e.name).ok_or_else(|| bad(format!("unknown parameter {}", e.name)))?;
                    expect_len(p.len())?;
                    p.set(values);
                    n_params += 1;
                }
                EntryKind::Buffer => {
                    let b = buffers.get(&e.name).ok_or_else(|| bad(format!("unknown buffer {}", e.name)))?;
                    expect_len(b.values().len())?;
                    b.set(values);
                    n_buffers += 1;
                }
                EntryKind::AdamM | EntryKind::AdamV => {
                    let p = params.get(&e.name).ok_or_else(|| bad(format!("moment for unknown parameter {}", e.name)))?;
                    expect_len(p.len())?;
                    let m = moments.entry(e.name.clone()).or_insert_with(|| Moments {
                        steps: e.steps.unwrap_or(0),
                        m: Vec::new(),
                        v: Vec::new(),
                    });
                    if e.kind == EntryKind::AdamM {
                        m.m = values;
                    } else {
                        m.v = values;
                    }
                }
            }
        }
        if n_params != params.len() || n_buffers != buffers.len() {
            return Err(bad(format!(
                "checkpoint holds {n_params}/{} parameters and {n_buffers}/{} buffers",
                params.len(),
                buffers.len()
            )));
        }
        if let Some((name, _)) = moments.iter().find(|(_, m)| m.m.is_empty() || m.v.is_empty()) {
            return Err(bad(format!("incomplete optimizer state for {name}")));
        }
        trainer.optimizer.restore(moments);
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            trainer,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Batch;
    use crate::fixtures::generate_fixture;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.data.size = 64;
        c.model.backbone.channels = [4, 8, 12, 16];
        c.model.erf.channels = 8;
        c
    }

    fn tiny_batch() -> Batch {
        let samples: Vec<_> = (0..2)
            .map(|i| {
                let (im, m, _) = generate_fixture(0, i, 64);
                (im.clone(), im, m)
            })
            .collect();
        Batch::from_samples(&samples).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_stable() {
        let config = small_config();
        let mut trainer = build_trainer(&config).unwrap();
        trainer.step(&tiny_batch()).unwrap();
        let ck = Checkpoint { config, epoch: 3, trainer };
        let a = ck.encode();
        let back = Checkpoint::decode(&a).unwrap();
        assert_eq!(back.epoch, 3);
        assert_eq!(back.trainer.step_count(), 1);
        assert_eq!(back.encode(), a);
    }

    #[test]
    fn restored_model_predicts_identically() {
        let config = small_config();
        let mut trainer = build_trainer(&config).unwrap();
        let batch = tiny_batch();
        trainer.step(&batch).unwrap();
        let images = crate::train::batch_tensors::<f32>(&batch).0;
        let before = trainer.predict(&images).unwrap().to_vec();
        let ck = Checkpoint { config, epoch: 1, trainer };
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back.trainer.predict(&images).unwrap().to_vec(), before);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let config = small_config();
        let ck = Checkpoint { trainer: build_trainer(&config).unwrap(), config, epoch: 0 };
        let bytes = ck.encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 4]).is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(matches!(Checkpoint::decode(&wrong), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::decode(b"not a checkpoint at all").is_err());
        let missing = Checkpoint::load(Path::new("/nonexistent/ck.apg")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
    }
}
