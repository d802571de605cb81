#![allow(dead_code)]

pub mod gradient;

use bbseg::pipeline::{ExperimentConfig, Variant};
use bbseg::teacher::Teacher;
use bbseg::{FeatureMap, ProbabilityMap, TeacherError};

/// A scaled-down benchmark that trains in well under a second.
pub fn small_config(variant: Variant, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::benchmark(variant, seed);
    c.domain.train_samples = 12;
    c.domain.test_samples = 6;
    c.domain.height = 16;
    c.domain.width = 16;
    c.hyper.total_steps = 40;
    c.hyper.batch_size = 4;
    c.hyper.eval_every = 10;
    c.hyper.optim.warmup_steps = 5;
    c
}

/// Forwards to `inner` until `budget` predictions have been served, then fails.
pub struct FlakyTeacher<T> {
    pub inner: T,
    pub budget: usize,
}

impl<T: Teacher> Teacher for FlakyTeacher<T> {
    fn predict(&mut self, features: &FeatureMap) -> Result<ProbabilityMap, TeacherError> {
        if self.budget == 0 {
            return Err(TeacherError::Timeout(1));
        }
        self.budget -= 1;
        self.inner.predict(features)
    }
}
