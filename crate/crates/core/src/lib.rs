//! Train a small per-pixel segmentation model on an unlabelled target domain
//! using nothing but the class-probability outputs of an opaque source model.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`domain`] generates seeded synthetic source/target datasets with a
//!   controllable shift between them.
//! - [`teacher`] is the black-box source model: an exact Bayes posterior
//!   behind a predict-only interface, reachable in-process or over TCP.
//! - [`pseudolabel`] turns teacher outputs into filtered hard labels
//!   (relative-confidence filtering with per-class thresholds, plus the
//!   absolute-confidence and unfiltered baselines).
//! - [`refine`] keeps an exponential-moving-average copy of the student and
//!   uses its confident predictions to fill in pixels the teacher left out.
//! - [`student`] is the lightweight model itself: a patch MLP with analytic
//!   gradients, augmentation, losses and an AdamW optimiser.
//! - [`eval`] computes confusion matrices, IoU and mIoU.
//! - [`pipeline`] wires everything into reproducible experiments and ablations.

pub mod domain;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod pseudolabel;
pub mod refine;
pub mod seed;
pub mod student;
pub mod teacher;
pub mod tensor;

pub use error::{Error, Result, TeacherError};
pub use tensor::{FeatureMap, LabelGrid, ProbabilityMap};

// The guide's code listings are compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/domain.md")]
    mod domain {}
    #[doc = include_str!("../../../book/src/teacher.md")]
    mod teacher {}
    #[doc = include_str!("../../../book/src/pseudo_labels.md")]
    mod pseudo_labels {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/student.md")]
    mod student {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
