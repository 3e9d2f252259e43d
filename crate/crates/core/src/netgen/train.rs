use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::external::ExternalLatents;
use super::model::{EncoderKind, Grads, Input, Model};
use super::optim::{adamw_update, AdamState, AdamWConfig};
use super::NetError;
use crate::augment::{variant_schedule, AugVariantKind, TextSelector};
use crate::corpus::StudyRecord;
use crate::volgrid::{synthesize_target, GridSpec, VolumeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// Follow the variant schedule; otherwise every step uses the title.
    #[serde(default)]
    pub augmented: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            seed: 0,
            optimizer: AdamWConfig::default(),
            augmented: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let o = &self.optimizer;
        if self.batch_size == 0 || !(o.lr_encoder > 0.0) || !(o.lr_generator > 0.0) {
            return Err(NetError::InvalidConfig(
                "batch size and learning rates must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub title: String,
    pub variants: Option<BTreeMap<AugVariantKind, String>>,
    /// Target volume, x-fastest, same length as the model output.
    pub target: Vec<f32>,
}

impl TrainExample {
    /// Synthesizes the target from the record's peaks.
    pub fn from_record(record: &StudyRecord, grid: &GridSpec, fwhm_mm: f64) -> Result<Self, VolumeError> {
        Ok(TrainExample {
            id: record.id.clone(),
            title: record.title.clone(),
            variants: record.augmented_variants.clone(),
            target: synthesize_target(grid, &record.coordinates, fwhm_mm)?.into_data(),
        })
    }

    pub fn text(&self, selector: TextSelector) -> &str {
        match selector {
            TextSelector::Title => &self.title,
            TextSelector::Variant(k) => self
                .variants
                .as_ref()
                .and_then(|v| v.get(&k))
                .map_or(self.title.as_str(), String::as_str),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub optimizer: AdamState<f32>,
    /// Mean batch loss per epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
}

const SLOTS: usize = 6;

fn slot(sel: TextSelector) -> usize {
    match sel {
        TextSelector::Title => 0,
        TextSelector::Variant(k) => 1 + AugVariantKind::ALL.iter().position(|&x| x == k).unwrap(),
    }
}

enum Prepared {
    Buckets([Vec<usize>; SLOTS]),
    Latent(Vec<f32>),
}

/// Mini-batch AdamW on mean batch MSE. Samples are drawn uniformly with
/// replacement; every sample in a batch uses the text chosen by
/// `variant_schedule` for the optimizer step about to be taken.
pub fn train(
    model: Model<f32>,
    cfg: &TrainConfig,
    examples: &[TrainExample],
    latents: Option<&ExternalLatents>,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(NetError::EmptyTrainingSet);
    }
    let out_len = model.arch.output_len();
    let mut prepared = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.target.len() != out_len {
            return Err(NetError::DimMismatch {
                expected: out_len,
                found: ex.target.len(),
            });
        }
        prepared.push(match model.encoder.kind {
            EncoderKind::BaselineHashing => Prepared::Buckets(std::array::from_fn(|i| {
                let sel = if i == 0 {
                    TextSelector::Title
                } else {
                    TextSelector::Variant(AugVariantKind::ALL[i - 1])
                };
                model.buckets_for(ex.text(sel))
            })),
            EncoderKind::ExternalVectors => {
                let z = latents
                    .and_then(|l| l.get(&ex.id))
                    .ok_or_else(|| NetError::MissingLatent(ex.id.clone()))?;
                Prepared::Latent(z.to_vec())
            }
        });
    }

    let mut model = model;
    let mut state = AdamState::new(&model);
    let mut grads = Grads::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let spe = cfg.steps_per_epoch(examples.len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::with_capacity(cfg.epochs * spe);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..spe {
            let sel = if cfg.augmented { slot(variant_schedule(state.step)) } else { 0 };
            let picks: Vec<usize> = (0..cfg.batch_size)
                .map(|_| rng.random_range(0..examples.len()))
                .collect();
            let batch: Vec<(Input<f32>, &[f32])> = picks
                .iter()
                .map(|&i| {
                    let input = match &prepared[i] {
                        Prepared::Buckets(b) => Input::Buckets(&b[sel]),
                        Prepared::Latent(z) => Input::Latent(z),
                    };
                    (input, examples[i].target.as_slice())
                })
                .collect();
            grads.zero();
            let loss = model.accumulate(&batch, &mut grads)?;
            adamw_update(&mut model, &grads, &mut state, &cfg.optimizer)?;
            sum += loss;
            step_losses.push(loss);
        }
        let mean = sum / spe as f64;
        progress(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        model,
        optimizer: state,
        epoch_losses,
        step_losses,
    })
}
