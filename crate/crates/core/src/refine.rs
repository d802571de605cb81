//! The EMA model and mask refinement.
//!
//! The EMA model is a running average of the student's parameters. Where
//! the teacher mask is silent and the EMA model is confident, its argmax
//! becomes extra supervision with a weight that grows linearly over training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudolabel::WeightedMask;
use crate::student::StudentParams;
use crate::tensor::{argmax, ProbabilityMap};

#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub params: StudentParams,
    pub alpha: f64,
    pub step: u64,
}

impl EmaState {
    /// Starts the average at a copy of the student.
    pub fn new(student: &StudentParams, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("EMA momentum {alpha} outside [0, 1)")));
        }
        Ok(Self {
            params: student.clone(),
            alpha,
            step: 0,
        })
    }
}

/// `Θ ← αΘ + (1−α)θ`. Returns a new state.
pub fn ema_update(state: &EmaState, theta: &StudentParams) -> Result<EmaState> {
    if !state.params.same_shape(theta) {
        return Err(Error::Shape("EMA and student parameters differ in shape".into()));
    }
    let mut next = state.clone();
    let a = state.alpha;
    for (dst, (_, src)) in next.params.tensors_mut().into_iter().zip(theta.tensors()) {
        dst.iter_mut().zip(src).for_each(|(d, s)| *d = a * *d + (1.0 - a) * s);
    }
    next.step += 1;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Minimum EMA top-1 probability for a pixel to be refined.
    pub beta: f64,
    pub lambda_max: f64,
    pub total_steps: u64,
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta {} outside (0, 1]", self.beta)));
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::Config(format!("lambda_max {} must be finite and nonnegative", self.lambda_max)));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weight of refined pixels at `step`: `lambda_max · step / total_steps`.
pub fn lambda_at(step: u64, config: &RefineConfig) -> Result<f64> {
    if step > config.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: config.total_steps,
        });
    }
    Ok(config.lambda_max * step as f64 / config.total_steps as f64)
}

/// Adds EMA pseudo-labels to the pixels `mask` leaves unsupervised.
///
/// Teacher pixels are copied with weight 1 whatever the EMA model says. An
/// unsupervised pixel gets `(EMA argmax, λ_t)` when the EMA top-1 probability
/// reaches `beta`. While `λ_t` is 0 nothing is added, so the result equals
/// the teacher mask.
pub fn refine_mask(mask: &WeightedMask, ema_probs: &ProbabilityMap, step: u64, config: &RefineConfig) -> Result<WeightedMask> {
    if mask.height() != ema_probs.height() || mask.width() != ema_probs.width() {
        return Err(Error::Shape(format!(
            "mask is {}×{}, EMA map is {}×{}",
            mask.height(),
            mask.width(),
            ema_probs.height(),
            ema_probs.width()
        )));
    }
    let lambda = lambda_at(step, config)?;
    let mut out = WeightedMask::empty(mask.height(), mask.width());
    for i in 0..mask.len() {
        match mask.get(i) {
            Some((class, _)) => out.set(i, class, 1.0),
            None => {
                let p = ema_probs.pixel(i);
                let top = argmax(p);
                if p[top] >= config.beta && lambda > 0.0 {
                    out.set(i, top, lambda);
                }
            }
        }
    }
    Ok(out)
}
