//! Text-to-volume model: a hashing bag-of-words encoder feeding a fully
//! connected layer and a stack of stride-2 transposed 3-D convolutions,
//! trained with mean squared error and AdamW.

mod checkpoint;
mod external;
mod gradcheck;
mod model;
mod optim;
mod real;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use external::ExternalLatents;
pub use gradcheck::{gradient_check, relative_error, GradCheckConfig, GradCheckReport, Precision};
pub use model::{
    text_buckets, token_bucket, Arch, EncoderConfig, EncoderKind, Grads, Input, Model, Tensor, DEFAULT_BUCKETS,
    KERNEL, LATENT_DIM,
};
pub use optim::{adamw_update, AdamState, AdamWConfig};
pub use real::Real;
pub use train::{train, TrainConfig, TrainExample, TrainOutcome};

use thiserror::Error;

use crate::volgrid::BrainVolume;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("latent has {found} values, expected {expected}")]
    LatentLength { expected: usize, found: usize },
    #[error("target has {found} voxels, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("no external latent for study {0:?}")]
    MissingLatent(String),
    #[error("{0}")]
    EncoderKind(String),
    #[error("checkpoint format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean over voxels of the squared difference.
pub fn mse_loss(pred: &BrainVolume, target: &BrainVolume) -> Result<f64, NetError> {
    if pred.dims() != target.dims() {
        return Err(NetError::DimMismatch {
            expected: pred.data().len(),
            found: target.data().len(),
        });
    }
    Ok(model::mse(pred.data(), target.data()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::GridSpec;

    #[test]
    fn mse_examples() {
        let g = GridSpec::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let p = BrainVolume::from_data(g, vec![0.0, 0.0]).unwrap();
        let t = BrainVolume::from_data(g, vec![1.0, 3.0]).unwrap();
        assert_eq!(mse_loss(&p, &t).unwrap(), 5.0);
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        let t1 = BrainVolume::from_data(g, vec![2.0, 4.0]).unwrap();
        assert_eq!(mse_loss(&t1, &t).unwrap(), 1.0);
        let other = BrainVolume::zeros(GridSpec::new([1, 2, 1], [1.0; 3], [0.0; 3]).unwrap());
        assert!(mse_loss(&p, &other).is_err());
    }
}
