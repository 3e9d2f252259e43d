//! Top-k retention metrics (AUC, Dice, IoU), the token-masking query
//! environment and the evaluation harness.

mod harness;
mod metrics;

pub use harness::{
    canonical_fractions, evaluate_model, sample_seed, ChatSetup, Comparison, Condition, ConditionReport,
    EvalConfig, EvalSample, MetricsReport, Predictor, QueryRecord, RetentionRow,
};
pub use metrics::{auc, dice, iou, mask_tokens, retained_count, topk_mask, validate_fraction, BinaryMask};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("retention fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("mask rate {0} is outside [0, 1]")]
    InvalidMaskRate(f64),
    #[error("volume sizes differ: expected {expected} voxels, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("AUC is undefined when the label mask is all positive or all negative")]
    DegenerateMask,
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("prediction failed: {0}")]
    Predict(String),
    #[error("query refinement failed: {0}")]
    Refine(#[from] crate::t2s::T2sError),
}
