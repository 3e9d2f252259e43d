use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{auc_from_ranks, average_ranks, descending_order, mask_from_order, retained_count};
use super::{dice, iou, mask_tokens, validate_fraction, EvalError};
use crate::augment::LlmClient;
use crate::corpus::{tokenize, StudyRecord, TfIdfIndex};
use crate::volgrid::{synthesize_target, GridSpec, VolumeError};
use crate::netgen::Checkpoint;
use crate::t2s::{refine_query, T2sConfig, T2sError};

/// Anything that maps query text to a volume.
pub trait Predictor {
    fn dims(&self) -> [usize; 3];
    fn predict(&self, text: &str) -> Result<Vec<f32>, EvalError>;
}

impl Predictor for Checkpoint {
    fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    fn predict(&self, text: &str) -> Result<Vec<f32>, EvalError> {
        self.predict_text(text)
            .map(|v| v.into_data())
            .map_err(|e| EvalError::Predict(e.to_string()))
    }
}

/// 1.0, 0.9, ..., 0.1.
pub fn canonical_fractions() -> Vec<f64> {
    (1..=10).rev().map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub text: String,
    pub target: Vec<f32>,
}

impl EvalSample {
    pub fn from_record(record: &StudyRecord, grid: &GridSpec, fwhm_mm: f64) -> Result<Self, VolumeError> {
        Ok(EvalSample {
            id: record.id.clone(),
            text: record.title.clone(),
            target: synthesize_target(grid, &record.coordinates, fwhm_mm)?.into_data(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub fractions: Vec<f64>,
    /// Zero evaluates the unmodified text.
    pub mask_rate: f64,
    pub seed: u64,
    /// Whether the evaluated model was trained on augmented text; only
    /// affects labels.
    pub aug: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            fractions: canonical_fractions(),
            mask_rate: 0.3,
            seed: 0,
            aug: false,
        }
    }
}

/// Query refinement used by the chat condition.
pub struct ChatSetup<'a> {
    pub index: &'a TfIdfIndex,
    pub config: T2sConfig,
    pub client: &'a dyn LlmClient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub aug: bool,
    pub chat: bool,
    pub mask_rate: f64,
}

impl Condition {
    pub fn aug_label(&self) -> &'static str {
        if self.aug {
            "aug"
        } else {
            "non-aug"
        }
    }

    pub fn chat_label(&self) -> &'static str {
        if self.chat {
            "chat"
        } else {
            "non-chat"
        }
    }

    pub fn label(&self) -> String {
        let env = if self.mask_rate > 0.0 {
            format!("masked {:.2}", self.mask_rate)
        } else {
            "standard".to_string()
        };
        format!("{} / {} / {env}", self.aug_label(), self.chat_label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionRow {
    /// e.g. `non-aug-90`.
    pub row: String,
    pub fraction: f64,
    pub auc: f64,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub id: String,
    pub query: String,
    /// Refined query when the chat condition produced one.
    pub semantic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub samples: usize,
    /// Chat samples where retrieval found nothing and the raw query was used.
    pub t2s_fallbacks: usize,
    pub rows: Vec<RetentionRow>,
    pub queries: Vec<QueryRecord>,
}

/// Per-sample seed for the masking PRNG.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn row_name(aug: &str, k: f64) -> String {
    format!("{aug}-{}", (k * 100.0).round() as i64)
}

/// Scores every sample at every retention fraction. AUC uses the target's
/// top-k mask as labels; where that mask is degenerate (k = 1) the sample
/// contributes chance level, 0.5.
pub fn evaluate_model(
    predictor: &dyn Predictor,
    samples: &[EvalSample],
    cfg: &EvalConfig,
    chat: Option<&ChatSetup>,
) -> Result<ConditionReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    for &k in &cfg.fractions {
        validate_fraction(k)?;
    }
    if !(0.0..=1.0).contains(&cfg.mask_rate) {
        return Err(EvalError::InvalidMaskRate(cfg.mask_rate));
    }
    let dims = predictor.dims();
    let n: usize = dims.iter().product();
    let nk = cfg.fractions.len();
    let mut sums = vec![[0.0f64; 3]; nk];
    let mut queries = Vec::with_capacity(samples.len());
    let mut fallbacks = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.target.len() != n {
            return Err(EvalError::DimMismatch {
                expected: n,
                found: s.target.len(),
            });
        }
        let query = if cfg.mask_rate > 0.0 {
            mask_tokens(&tokenize(&s.text), cfg.mask_rate, sample_seed(cfg.seed, i))?.join(" ")
        } else {
            s.text.clone()
        };
        let semantic = match chat {
            Some(c) => match refine_query(c.index, &c.config, c.client, &query) {
                Ok(q) => Some(q.best().candidate.clone()),
                Err(T2sError::NoRetrieval) => {
                    fallbacks += 1;
                    None
                }
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        let pred = predictor.predict(semantic.as_deref().unwrap_or(&query))?;
        if pred.len() != n {
            return Err(EvalError::DimMismatch {
                expected: n,
                found: pred.len(),
            });
        }
        let pred_order = descending_order(&pred);
        let ranks = average_ranks(&pred, &pred_order);
        let target_order = descending_order(&s.target);
        for (acc, &k) in sums.iter_mut().zip(&cfg.fractions) {
            let keep = retained_count(k, n);
            let tm = mask_from_order(dims, &target_order, keep);
            let pm = mask_from_order(dims, &pred_order, keep);
            acc[0] += auc_from_ranks(&ranks, tm.bits()).unwrap_or(0.5);
            acc[1] += dice(&pm, &tm)?;
            acc[2] += iou(&pm, &tm)?;
        }
        queries.push(QueryRecord {
            id: s.id.clone(),
            query,
            semantic,
        });
    }
    let condition = Condition {
        aug: cfg.aug,
        chat: chat.is_some(),
        mask_rate: cfg.mask_rate,
    };
    let m = samples.len() as f64;
    let rows = cfg
        .fractions
        .iter()
        .zip(&sums)
        .map(|(&k, acc)| RetentionRow {
            row: row_name(condition.aug_label(), k),
            fraction: k,
            auc: acc[0] / m,
            dice: acc[1] / m,
            iou: acc[2] / m,
        })
        .collect();
    Ok(ConditionReport {
        condition,
        samples: samples.len(),
        t2s_fallbacks: fallbacks,
        rows,
        queries,
    })
}

/// Relative change of one metric between two conditions at one fraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub row: String,
    pub metric: String,
    pub baseline: f64,
    pub treatment: f64,
    /// `(treatment − baseline) / baseline · 100`; absent when the baseline is 0.
    pub over_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub conditions: Vec<ConditionReport>,
    pub comparisons: Vec<Comparison>,
}

fn over(baseline: f64, treatment: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (treatment - baseline) / baseline * 100.0)
}

impl MetricsReport {
    /// Adds non-chat → chat comparisons for every pair of conditions that
    /// differ only in refinement.
    pub fn new(conditions: Vec<ConditionReport>) -> Self {
        let mut comparisons = Vec::new();
        for b in &conditions {
            for t in &conditions {
                let c = (&b.condition, &t.condition);
                if !c.0.chat && c.1.chat && c.0.aug == c.1.aug && c.0.mask_rate == c.1.mask_rate {
                    for (rb, rt) in b.rows.iter().zip(&t.rows) {
                        for (metric, x, y) in [("AUC", rb.auc, rt.auc), ("Dice", rb.dice, rt.dice), ("mIoU", rb.iou, rt.iou)] {
                            comparisons.push(Comparison {
                                row: rb.row.clone(),
                                metric: metric.to_string(),
                                baseline: x,
                                treatment: y,
                                over_percent: over(x, y),
                            });
                        }
                    }
                }
            }
        }
        MetricsReport { conditions, comparisons }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.conditions {
            let _ = writeln!(out, "condition: {} ({} samples)", c.condition.label(), c.samples);
            let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8}", "row", "AUC", "Dice", "mIoU");
            for r in &c.rows {
                let _ = writeln!(out, "{:<12} {:>8.4} {:>8.4} {:>8.4}", r.row, r.auc, r.dice, r.iou);
            }
            out.push('\n');
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(out, "{:<12} {:<6} {:>9} {:>9} {:>10}", "row", "metric", "non-chat", "chat", "over");
            for c in &self.comparisons {
                let o = c.over_percent.map_or("n/a".to_string(), |v| format!("{v:+.3}%"));
                let _ = writeln!(
                    out,
                    "{:<12} {:<6} {:>9.4} {:>9.4} {:>10}",
                    c.row, c.metric, c.baseline, c.treatment, o
                );
            }
        }
        out
    }
}
