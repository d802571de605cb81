use serde::{Deserialize, Serialize};

use super::params::StudentParams;
use crate::error::{Error, Result};

/// AdamW settings. `lr_hidden` drives `(w1, b1)`, `lr_output` drives `(w2, b2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr_hidden: f64,
    pub lr_output: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly up from 0.
    pub warmup_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_hidden: 3e-3,
            lr_output: 3e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 100,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        let ok = finite_nonneg(self.lr_hidden)
            && finite_nonneg(self.lr_output)
            && finite_nonneg(self.weight_decay)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimiser settings {self:?}")))
        }
    }

    /// Warmup multiplier for the update made at `step` (0-based).
    pub fn warmup_factor(&self, step: u64) -> f64 {
        if step >= self.warmup_steps {
            1.0
        } else {
            step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: StudentParams,
    pub v: StudentParams,
    /// Number of updates applied so far.
    pub step: u64,
    pub config: OptimConfig,
}

impl OptimState {
    pub fn new(params: &StudentParams, config: OptimConfig) -> Self {
        Self {
            m: StudentParams::zeros(params.arch),
            v: StudentParams::zeros(params.arch),
            step: 0,
            config,
        }
    }
}

/// One AdamW update. Returns the advanced state and the new parameters; the
/// inputs are left untouched. A non-finite gradient entry is an error.
pub fn optim_step(state: &OptimState, params: &StudentParams, grads: &StudentParams) -> Result<(OptimState, StudentParams)> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::Shape("optimiser state, parameters and gradients differ in shape".into()));
    }
    for (name, g) in grads.tensors() {
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: name, index });
        }
    }
    let cfg = &state.config;
    let t = state.step + 1;
    let warm = cfg.warmup_factor(state.step);
    let c1 = 1.0 - cfg.beta1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - cfg.beta2.powi(t.min(i32::MAX as u64) as i32);

    let mut next = state.clone();
    next.step = t;
    let mut out = params.clone();
    let lrs = [cfg.lr_hidden, cfg.lr_hidden, cfg.lr_output, cfg.lr_output];
    let grads_t = grads.tensors();
    let (m_t, v_t) = (next.m.tensors_mut(), next.v.tensors_mut());
    for ((((theta, (_, g)), m), v), lr) in out.tensors_mut().into_iter().zip(grads_t).zip(m_t).zip(v_t).zip(lrs) {
        let lr = lr * warm;
        for i in 0..theta.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            theta[i] -= lr * (update + cfg.weight_decay * theta[i]);
        }
    }
    Ok((next, out))
}
