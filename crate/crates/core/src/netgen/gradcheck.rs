use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Arch, EncoderConfig, EncoderKind, Input, Model};
use super::real::Real;
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub arch: Arch,
    pub buckets: usize,
    pub samples: usize,
    /// Central-difference step.
    pub step: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            arch: Arch::tiny(),
            buckets: 16,
            samples: 256,
            step: 1e-3,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub precision: Precision,
    pub parameters: usize,
    pub checked: usize,
    /// Samples skipped because a rectifier changed state within ±step.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst_parameter: Option<String>,
}

/// |a − n| / max(|a|, |n|); zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let d = analytic.abs().max(numeric.abs());
    if d == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / d
    }
}

const TEXTS: [&str; 2] = ["pain anticipation insula", "visual motion cortex"];

/// Compares backpropagated gradients of the mean batch MSE with central
/// finite differences taken in f64. In 32-bit mode the analytic gradient is
/// computed in f32 on the same (f32-representable) parameters.
pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport, NetError> {
    let enc = EncoderConfig {
        kind: EncoderKind::BaselineHashing,
        buckets: cfg.buckets,
    };
    let mut model = Model::<f64>::init(cfg.arch.clone(), enc, cfg.seed)?;
    if model.parameter_count() > 10_000 {
        return Err(NetError::InvalidConfig(format!(
            "gradient check needs at most 10000 parameters, model has {}",
            model.parameter_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    for t in &mut model.params {
        if t.name.ends_with(".bias") {
            for v in &mut t.data {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let out_len = model.arch.output_len();
    let targets: Vec<Vec<f64>> = TEXTS
        .iter()
        .map(|_| (0..out_len).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let buckets: Vec<Vec<usize>> = TEXTS.iter().map(|t| model.buckets_for(t)).collect();

    let analytic: Vec<Vec<f64>> = match cfg.precision {
        Precision::F64 => grads_of(&model, &buckets, &targets)?,
        Precision::F32 => {
            let m32 = model.cast::<f32>();
            model = m32.cast::<f64>();
            let t32: Vec<Vec<f32>> = targets.iter().map(|t| t.iter().map(|&v| v as f32).collect()).collect();
            grads_of(&m32, &buckets, &t32)?
                .into_iter()
                .map(|g| g.into_iter().map(|v| v.to_f64()).collect())
                .collect()
        }
    };

    let pattern = |m: &Model<f64>| -> Result<Vec<u64>, NetError> {
        buckets.iter().map(|b| m.activation_pattern(Input::Buckets(b))).collect()
    };
    let base_pattern = pattern(&model)?;
    let loss = |m: &Model<f64>| -> Result<f64, NetError> {
        let batch: Vec<(Input<f64>, &[f64])> = buckets
            .iter()
            .zip(&targets)
            .map(|(b, t)| (Input::Buckets(b.as_slice()), t.as_slice()))
            .collect();
        m.loss(&batch)
    };

    let offsets: Vec<usize> = model
        .params
        .iter()
        .scan(0, |acc, t| {
            let s = *acc;
            *acc += t.data.len();
            Some(s)
        })
        .collect();
    let total = model.parameter_count();
    let order = sample(&mut rng, total, total);
    let mut report = GradCheckReport {
        precision: cfg.precision,
        parameters: total,
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        worst_parameter: None,
    };
    for flat in order.iter() {
        if report.checked >= cfg.samples {
            break;
        }
        let ti = offsets.partition_point(|&o| o <= flat) - 1;
        let j = flat - offsets[ti];
        let orig = model.params[ti].data[j];
        model.params[ti].data[j] = orig + cfg.step;
        let (plus, p_plus) = (loss(&model)?, pattern(&model)?);
        model.params[ti].data[j] = orig - cfg.step;
        let (minus, p_minus) = (loss(&model)?, pattern(&model)?);
        model.params[ti].data[j] = orig;
        if p_plus != base_pattern || p_minus != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let err = relative_error(analytic[ti][j], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_parameter.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_parameter = Some(format!("{}[{j}]", model.params[ti].name));
        }
    }
    Ok(report)
}

fn grads_of<R: Real>(model: &Model<R>, buckets: &[Vec<usize>], targets: &[Vec<R>]) -> Result<Vec<Vec<R>>, NetError> {
    let batch: Vec<(Input<R>, &[R])> = buckets
        .iter()
        .zip(targets)
        .map(|(b, t)| (Input::Buckets(b.as_slice()), t.as_slice()))
        .collect();
    Ok(model.loss_and_grad(&batch)?.1.into_tensors())
}
