//! Cosine learning-rate schedule and decoupled-weight-decay Adam.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::pipeline::config::OptimConfig;
use std::collections::BTreeMap;

/// Learning rate at `step`: linear warmup from zero, then a half
/// cosine from the base rate down to the floor.
pub fn cosine_lr(step: u64, cfg: &OptimConfig) -> f64 {
    if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
        return cfg.lr * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let total = cfg.total_steps.max(cfg.warmup_steps + 1);
    if step >= total {
        return cfg.min_lr;
    }
    let progress = (step - cfg.warmup_steps) as f64 / (total - cfg.warmup_steps) as f64;
    cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second gradient moments, one pair per parameter tensor.
#[derive(Clone, Default)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn for_params(params: &ParamStore) -> Self {
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for (name, value) in params.iter() {
            let zeros = ndarray::Array2::zeros(value.raw_dim());
            m.insert(name, zeros.clone());
            v.insert(name, zeros);
        }
        AdamState { m, v }
    }
}

/// Bias vectors, norm gains and other single-row tensors skip weight
/// decay; matrices decay.
pub fn decays(name: &str, value: &ndarray::Array2<f64>) -> bool {
    let _ = name;
    value.nrows() > 1
}

/// One update over every parameter that received a gradient.
/// Missing gradients leave their parameters untouched (frozen or
/// unused tensors); a non-finite gradient aborts the step.
pub fn adamw_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    grads: &BTreeMap<String, ndarray::Array2<f64>>,
    step: u64,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    let t = (step + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, grad) in grads {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NanGradient { name: name.clone() });
        }
        let param = params
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensors(vec![name.clone()]))?;
        if param.raw_dim() != grad.raw_dim() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: param.shape().to_vec(),
                got: grad.shape().to_vec(),
            });
        }
        let decay = if decays(name, param) { cfg.weight_decay } else { 0.0 };
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensors(vec![format!("adam_m.{name}")]))?;
        let v = state
            .v
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensors(vec![format!("adam_v.{name}")]))?;
        ndarray::Zip::from(param)
            .and(m)
            .and(v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + decay * *p);
            });
    }
    Ok(())
}
