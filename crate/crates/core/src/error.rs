use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {}", format_violations(.0))]
    InvalidParams(Vec<Violation>),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("simulation diverged at step {step} (|X| = {value:e})")]
    SimulationDiverged { step: usize, value: f64 },

    #[error("degenerate diffusion: sigma(X) = 0 at node {node}")]
    DegenerateDiffusion { node: usize },

    #[error("degenerate sufficient statistics: V = {v:e} with U = {u:e}")]
    DegenerateStats { u: f64, v: f64 },

    #[error("component count mismatch: {left} vs {right}")]
    ComponentMismatch { left: usize, right: usize },

    #[error("subject {subject}: {source}")]
    Subject {
        subject: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linear algebra: {0}")]
    LinAlg(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { pointer: pointer.into(), message: message.into() }
    }

    pub(crate) fn for_subject(self, subject: usize) -> Self {
        Error::Subject { subject, source: Box::new(self) }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
