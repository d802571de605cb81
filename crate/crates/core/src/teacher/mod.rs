//! The black-box source model.
//!
//! Training code only ever sees a [`Teacher`]: features in, per-pixel class
//! probabilities out. Behind it sits either the in-process Bayes posterior of
//! the source domain or a TCP client talking to [`server::TeacherServer`].
//! The source [`DomainSpec`] is held privately and never handed back.

mod bayes;
pub mod client;
pub mod protocol;
pub mod server;

pub use bayes::bayes_posterior;
pub use client::RemoteTeacher;
pub use server::{serve_teacher, TeacherServer};

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result, TeacherError};
use crate::tensor::{FeatureMap, ProbabilityMap};

/// Predict-only access to the source model.
pub trait Teacher: Send {
    fn predict(&mut self, features: &FeatureMap) -> Result<ProbabilityMap, TeacherError>;
}

/// Where the teacher lives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TeacherEndpoint {
    InProcess,
    Remote { host: String, port: u16, timeout_ms: u64 },
}

impl TeacherEndpoint {
    /// Opens the endpoint. `source` is only consulted by the in-process kind.
    pub fn open(&self, source: &DomainSpec) -> Result<Box<dyn Teacher>> {
        Ok(match self {
            TeacherEndpoint::InProcess => Box::new(InProcessTeacher::new(source.clone())?),
            TeacherEndpoint::Remote {
                host,
                port,
                timeout_ms,
            } => Box::new(RemoteTeacher::new(host.clone(), *port, *timeout_ms)),
        })
    }
}

/// Runs the Bayes posterior in the caller's thread.
pub struct InProcessTeacher {
    spec: DomainSpec,
}

impl InProcessTeacher {
    pub fn new(spec: DomainSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl Teacher for InProcessTeacher {
    fn predict(&mut self, features: &FeatureMap) -> Result<ProbabilityMap, TeacherError> {
        bayes_posterior(features, &self.spec).map_err(|e| match e {
            Error::Teacher(t) => t,
            other => TeacherError::Input(other.to_string()),
        })
    }
}

impl<T: Teacher + ?Sized> Teacher for Box<T> {
    fn predict(&mut self, features: &FeatureMap) -> Result<ProbabilityMap, TeacherError> {
        (**self).predict(features)
    }
}
