//! Checkpoint file: 8-byte magic, little-endian u64 metadata length, JSON
//! metadata, then a raw little-endian payload of f32 parameters (followed by
//! optimizer moments when present) and f64 epoch losses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Arch, EncoderConfig, Input, Model, Tensor};
use super::optim::AdamState;
use super::real::Real;
use super::train::TrainConfig;
use super::NetError;
use crate::volgrid::{BrainVolume, GridSpec};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"C2BCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub grid: GridSpec,
    pub model: Model<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub train_config: Option<TrainConfig>,
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    grid: GridSpec,
    arch: Arch,
    encoder: EncoderConfig,
    tensors: Vec<TensorMeta>,
    optimizer_step: Option<u64>,
    train_config: Option<TrainConfig>,
    epochs_logged: usize,
}

impl Checkpoint {
    pub fn new(grid: GridSpec, model: Model<f32>) -> Result<Self, NetError> {
        if grid.dims != model.arch.output_dims() {
            return Err(NetError::InvalidArch(format!(
                "grid {:?} does not match model output {:?}",
                grid.dims,
                model.arch.output_dims()
            )));
        }
        Ok(Checkpoint {
            grid,
            model,
            optimizer: None,
            train_config: None,
            epoch_losses: Vec::new(),
        })
    }

    pub fn predict_text(&self, text: &str) -> Result<BrainVolume, NetError> {
        let b = self.model.buckets_for(text);
        self.to_volume(self.model.predict(Input::Buckets(&b))?)
    }

    pub fn predict_latent(&self, latent: &[f32]) -> Result<BrainVolume, NetError> {
        self.to_volume(self.model.predict(Input::Latent(latent))?)
    }

    fn to_volume(&self, data: Vec<f32>) -> Result<BrainVolume, NetError> {
        BrainVolume::from_data(self.grid, data).map_err(|e| NetError::InvalidArch(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            format_version: CHECKPOINT_VERSION,
            grid: self.grid,
            arch: self.model.arch.clone(),
            encoder: self.model.encoder,
            tensors: self
                .model
                .params
                .iter()
                .map(|t| TensorMeta {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            train_config: self.train_config.clone(),
            epochs_logged: self.epoch_losses.len(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(16 + json.len() + self.model.parameter_count() * 12);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |ts: &mut dyn Iterator<Item = &Vec<f32>>| {
            for t in ts {
                for v in t {
                    v.write_le(&mut out);
                }
            }
        };
        put(&mut self.model.params.iter().map(|t| &t.data));
        if let Some(o) = &self.optimizer {
            put(&mut o.m.iter());
            put(&mut o.v.iter());
        }
        for l in &self.epoch_losses {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let fmt = |field: &'static str, detail: String| NetError::Format { field, detail };
        if bytes.len() < 16 {
            return Err(fmt("header", format!("file has only {} bytes", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fmt(
                "magic",
                format!("expected C2BCKPT1, found {:?}", String::from_utf8_lossy(&bytes[..8])),
            ));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta_end = 16usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fmt("metadata", format!("length {meta_len} exceeds file size")))?;
        let meta: Meta = serde_json::from_slice(&bytes[16..meta_end])
            .map_err(|e| fmt("metadata", e.to_string()))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(NetError::Version {
                expected: CHECKPOINT_VERSION,
                found: meta.format_version,
            });
        }
        let template = Model::<f32>::zeros(meta.arch.clone(), meta.encoder)?;
        let shapes_ok = template.params.len() == meta.tensors.len()
            && template
                .params
                .iter()
                .zip(&meta.tensors)
                .all(|(t, m)| t.name == m.name && t.shape == m.shape);
        if !shapes_ok {
            return Err(fmt("tensors", "tensor list does not match the architecture".into()));
        }
        let n_params = template.parameter_count();
        let n_f32 = if meta.optimizer_step.is_some() { 3 * n_params } else { n_params };
        let expected = n_f32 * 4 + meta.epochs_logged * 8;
        let payload = &bytes[meta_end..];
        if payload.len() != expected {
            return Err(fmt(
                "payload",
                format!("expected {expected} bytes, found {}", payload.len()),
            ));
        }
        let mut pos = 0;
        let mut take = |len: usize| -> Vec<f32> {
            let v = payload[pos..pos + 4 * len].chunks_exact(4).map(f32::read_le).collect();
            pos += 4 * len;
            v
        };
        let params: Vec<Tensor<f32>> = template
            .params
            .into_iter()
            .map(|t| Tensor { data: take(t.data.len()), ..t })
            .collect();
        let optimizer = meta.optimizer_step.map(|step| {
            let m = params.iter().map(|t| take(t.data.len())).collect();
            let v = params.iter().map(|t| take(t.data.len())).collect();
            AdamState::from_parts(step, m, v, meta.arch.latent_dim)
        });
        let epoch_losses = payload[n_f32 * 4..]
            .chunks_exact(8)
            .map(f64::read_le)
            .collect();
        let model = Model {
            arch: meta.arch,
            encoder: meta.encoder,
            params,
        };
        let mut ck = Checkpoint::new(meta.grid, model)?;
        ck.optimizer = optimizer;
        ck.train_config = meta.train_config;
        ck.epoch_losses = epoch_losses;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
