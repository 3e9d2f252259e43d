use serde::{Deserialize, Serialize};

use super::model::{Grads, Model, TABLE};
use super::real::Real;
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr_encoder: f64,
    pub lr_generator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr_encoder: 1e-5,
            lr_generator: 3e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments per parameter tensor, plus the update count.
#[derive(Debug, Clone)]
pub struct AdamState<R> {
    pub step: u64,
    pub m: Vec<Vec<R>>,
    pub v: Vec<Vec<R>>,
    /// Embedding-table rows whose moments may be non-zero. Rows outside this
    /// set only decay, which is the exact AdamW update for zero moments.
    active_rows: Vec<bool>,
}

impl<R: Real> PartialEq for AdamState<R> {
    fn eq(&self, other: &Self) -> bool {
        self.step == other.step && self.m == other.m && self.v == other.v
    }
}

impl<R: Real> AdamState<R> {
    pub fn new(model: &Model<R>) -> Self {
        let zeros: Vec<Vec<R>> = model.params.iter().map(|t| vec![R::ZERO; t.data.len()]).collect();
        let rows = model.params[TABLE].shape[0];
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            active_rows: vec![false; rows],
        }
    }

    /// Rebuilds a state from stored moments.
    pub fn from_parts(step: u64, m: Vec<Vec<R>>, v: Vec<Vec<R>>, row_len: usize) -> Self {
        let active_rows = match (m.get(TABLE), v.get(TABLE)) {
            (Some(mt), Some(vt)) if row_len > 0 => mt
                .chunks_exact(row_len)
                .zip(vt.chunks_exact(row_len))
                .map(|(a, b)| a.iter().chain(b).any(|&x| x != R::ZERO))
                .collect(),
            _ => Vec::new(),
        };
        AdamState { step, m, v, active_rows }
    }
}

struct StepConsts<R> {
    b1: R,
    b2: R,
    one_b1: R,
    one_b2: R,
    inv_bc1: R,
    inv_bc2: R,
    eps: R,
    lr: R,
    decay: R,
}

fn update_slice<R: Real>(p: &mut [R], g: &[R], m: &mut [R], v: &mut [R], c: &StepConsts<R>) {
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = c.b1 * *m + c.one_b1 * g;
        *v = c.b2 * *v + c.one_b2 * g * g;
        let m_hat = *m * c.inv_bc1;
        let v_hat = *v * c.inv_bc2;
        *p = *p - c.decay * *p - c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

/// One decoupled-weight-decay Adam step:
/// `p -= lr·wd·p + lr·m̂/(√v̂ + ε)`. The encoder table uses `lr_encoder`,
/// everything else `lr_generator`.
pub fn adamw_update<R: Real>(
    model: &mut Model<R>,
    grads: &Grads<R>,
    state: &mut AdamState<R>,
    cfg: &AdamWConfig,
) -> Result<(), NetError> {
    let n = model.params.len();
    if grads.tensors().len() != n || state.m.len() != n || state.v.len() != n {
        return Err(NetError::ShapeMismatch(format!(
            "{n} parameter tensors, {} gradients, {} moments",
            grads.tensors().len(),
            state.m.len()
        )));
    }
    for i in 0..n {
        let len = model.params[i].data.len();
        if grads.tensors()[i].len() != len || state.m[i].len() != len || state.v[i].len() != len {
            return Err(NetError::ShapeMismatch(format!("tensor {}", model.params[i].name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let mut c = StepConsts {
        b1: R::from_f64(cfg.beta1),
        b2: R::from_f64(cfg.beta2),
        one_b1: R::from_f64(1.0 - cfg.beta1),
        one_b2: R::from_f64(1.0 - cfg.beta2),
        inv_bc1: R::from_f64(1.0 / (1.0 - cfg.beta1.powi(t))),
        inv_bc2: R::from_f64(1.0 / (1.0 - cfg.beta2.powi(t))),
        eps: R::from_f64(cfg.eps),
        lr: R::ZERO,
        decay: R::ZERO,
    };
    for i in 0..n {
        let lr = if Model::<R>::is_encoder_param(i) {
            cfg.lr_encoder
        } else {
            cfg.lr_generator
        };
        c.lr = R::from_f64(lr);
        c.decay = R::from_f64(lr * cfg.weight_decay);
        let p = &mut model.params[i].data;
        let g = &grads.tensors()[i];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let row = grads.row_len();
        if i == TABLE && row > 0 && state.active_rows.len() * row == p.len() {
            for &r in grads.touched_rows() {
                state.active_rows[r] = true;
            }
            for (r, &active) in state.active_rows.iter().enumerate() {
                let span = r * row..(r + 1) * row;
                if active {
                    update_slice(&mut p[span.clone()], &g[span.clone()], &mut m[span.clone()], &mut v[span], &c);
                } else {
                    for x in &mut p[span] {
                        *x = *x - c.decay * *x;
                    }
                }
            }
        } else {
            update_slice(p, g, m, v, &c);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{Arch, EncoderConfig, EncoderKind, Tensor};

    /// A model whose only non-empty parameter is the head bias.
    fn scalar(p: f64) -> Model<f64> {
        let arch = Arch {
            latent_dim: 1,
            base_grid: [1, 1, 1],
            channels: vec![1],
        };
        let mut m = Model::zeros(arch, EncoderConfig { kind: EncoderKind::ExternalVectors, buckets: 0 }).unwrap();
        for t in &mut m.params {
            if t.name != "head.bias" {
                t.data.clear();
            }
        }
        let last = m.params.len() - 1;
        m.params[last] = Tensor { name: "head.bias".into(), shape: vec![1], data: vec![p] };
        m
    }

    fn step(m: &mut Model<f64>, g: f64, s: &mut AdamState<f64>, cfg: &AdamWConfig) {
        let mut t: Vec<Vec<f64>> = m.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        *t.last_mut().unwrap() = vec![g];
        let grads = Grads::from_tensors(t, 1);
        adamw_update(m, &grads, s, cfg).unwrap();
    }

    fn p(m: &Model<f64>) -> f64 {
        m.params.last().unwrap().data[0]
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut m = scalar(1.0);
        let mut s = AdamState::new(&m);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        step(&mut m, 0.0, &mut s, &cfg);
        assert_eq!(p(&m), 1.0);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn decay_only() {
        let mut m = scalar(1.0);
        let mut s = AdamState::new(&m);
        let cfg = AdamWConfig { lr_generator: 0.1, weight_decay: 0.01, ..Default::default() };
        step(&mut m, 0.0, &mut s, &cfg);
        assert!((p(&m) - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut m = scalar(0.0);
        let mut s = AdamState::new(&m);
        let cfg = AdamWConfig { lr_generator: 0.1, weight_decay: 0.0, ..Default::default() };
        step(&mut m, 1.0, &mut s, &cfg);
        assert!((p(&m) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut m = scalar(0.0);
        let mut s = AdamState::new(&m);
        let cfg = AdamWConfig { lr_generator: 0.1, ..Default::default() };
        for _ in 0..200 {
            let g = 2.0 * (p(&m) - 3.0);
            step(&mut m, g, &mut s, &cfg);
        }
        assert!((p(&m) - 3.0).abs() < 0.05, "{}", p(&m));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut m = scalar(0.0);
        let mut s = AdamState::new(&m);
        let g = Grads::from_tensors(vec![vec![0.0]], 1);
        assert!(matches!(adamw_update(&mut m, &g, &mut s, &AdamWConfig::default()), Err(NetError::ShapeMismatch(_))));
    }
}
