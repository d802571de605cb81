use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the student: feature channels `d`, patch side `k` (odd), hidden
/// width `h` and class count `C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub feature_dim: usize,
    pub patch: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        if self.patch.is_multiple_of(2) {
            return Err(Error::Config(format!("patch side must be odd, got {}", self.patch)));
        }
        Ok(())
    }

    /// Length of a flattened patch, `d·k²`.
    pub fn patch_len(&self) -> usize {
        self.feature_dim * self.patch * self.patch
    }
}

/// Student weights. `w1` is `h×(d·k²)` row-major, `w2` is `C×h` row-major.
/// The same type carries gradients and optimiser moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentParams {
    pub arch: Architecture,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl StudentParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            w1: vec![0.0; arch.hidden * arch.patch_len()],
            b1: vec![0.0; arch.hidden],
            w2: vec![0.0; arch.classes * arch.hidden],
            b2: vec![0.0; arch.classes],
        }
    }

    /// He-normal hidden weights, Glorot-scaled output weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(arch);
        let hidden = Normal::new(0.0, (2.0 / arch.patch_len() as f64).sqrt()).expect("positive std");
        let output = Normal::new(0.0, (1.0 / arch.hidden as f64).sqrt()).expect("positive std");
        p.w1.iter_mut().for_each(|w| *w = hidden.sample(&mut rng));
        p.w2.iter_mut().for_each(|w| *w = output.sample(&mut rng));
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// The four tensors in checkpoint order, with their names.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.w1.len() == other.w1.len()
            && self.b1.len() == other.b1.len()
            && self.w2.len() == other.w2.len()
            && self.b2.len() == other.b2.len()
    }

    pub fn check_shape(&self) -> Result<()> {
        if !self.same_shape(&Self::zeros(self.arch)) {
            return Err(Error::Shape(format!("parameter buffers do not match {:?}", self.arch)));
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for (_, t) in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self += factor · other`, elementwise.
    pub fn add_scaled(&mut self, other: &Self, factor: f64) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += factor * s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}
