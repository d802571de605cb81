//! The lightweight target model and everything needed to train it.
//!
//! The model is a per-pixel MLP over a `k×k` feature patch (edge-replicated
//! at the borders): one ReLU hidden layer, then a softmax over classes.
//! Gradients are derived by hand; `tests/gradient_check.rs` holds the
//! finite-difference oracle.

mod augment;
mod loss;
mod model;
mod optim;
mod params;

pub use augment::{augment, AugmentSpec};
pub use loss::{kd_kl_loss, masked_ce_loss, LOG_CLAMP};
pub use model::{backward, backward_kl, forward, loss_and_grad, loss_and_grad_kl};
pub use optim::{optim_step, OptimConfig, OptimState};
pub use params::{Architecture, StudentParams};
