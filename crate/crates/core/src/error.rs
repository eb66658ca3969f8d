use thiserror::Error;

use crate::graph::Edge;

/// Errors raised anywhere in the explanation-verification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("node {target} has an empty computation subgraph; nothing to explain")]
    SingleNodeExplanation { target: usize },

    #[error("no rank up to {max_rank} reached the starting error threshold")]
    CreGenerationFailed { max_rank: usize },

    #[error("counterfactual explanation set is empty")]
    EmptyCreSet,

    #[error("relation {0} is not part of the factor graph")]
    UnknownRelation(Edge),

    #[error("unknown variable {0}")]
    UnknownVariable(usize),

    #[error("unknown factor {0}")]
    UnknownFactor(usize),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dimension(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input or configuration, as opposed to
    /// failures of a computation stage.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Dimension { .. }
            | Error::Json(_)
            | Error::UnknownRelation(_)
            | Error::UnknownVariable(_)
            | Error::UnknownFactor(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
