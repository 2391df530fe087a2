use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("arc `{arc}` references unknown node `{node}`")]
    DanglingEndpoint { arc: String, node: String },

    #[error("arc `{arc}` connects `{node}`, which is not a {expected} node")]
    WrongEndpointKind {
        arc: String,
        node: String,
        expected: &'static str,
    },

    #[error("power network has no slack (Vphi) node")]
    NoSlackNode,

    #[error("conversion arc `{arc}`: conversion endpoint must be Vphi, `{node}` is not")]
    ConversionEndpoint { arc: String, node: String },

    #[error("invalid parameter for `{id}`: {what}")]
    InvalidParameter { id: String, what: String },

    #[error("arc `{arc}` is not incident to node `{node}`")]
    NotIncident { node: String, arc: String },

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("value outside the model domain: {0}")]
    Domain(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("simulation did not converge: {0}")]
    NotConverged(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}", format_list(.0))]
    Invalid(Vec<String>),
}

fn format_list(items: &[String]) -> String {
    match items {
        [one] => one.clone(),
        _ => {
            let mut s = format!("{} problems found:", items.len());
            for item in items {
                s.push_str("\n  - ");
                s.push_str(item);
            }
            s
        }
    }
}

impl Error {
    pub fn invalid(id: impl Into<String>, what: impl Into<String>) -> Self {
        Error::InvalidParameter {
            id: id.into(),
            what: what.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
