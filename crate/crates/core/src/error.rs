use std::path::PathBuf;

use thiserror::Error;

use crate::dedup::DedupAudit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("utterance is empty after tokenization")]
    EmptyUtterance,

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("duplicate unit id `{0}`")]
    DuplicateId(String),

    #[error("cannot build a token bag from zero tokens")]
    EmptyBag,

    #[error("comparison set is empty")]
    EmptySet,

    #[error("bin width {0} does not divide 1.0 into a whole number of bins")]
    BadBinWidth(f64),

    #[error("deduplication did not converge within {max_passes} passes ({} removals so far)", audit.removals.len())]
    ConvergenceCapped {
        max_passes: usize,
        audit: Box<DedupAudit>,
    },

    #[error("split sizes valid={valid} test={test} exceed the available {available} {basis}")]
    SplitTooLarge {
        valid: usize,
        test: usize,
        available: usize,
        basis: &'static str,
    },

    #[error("no hypotheses to evaluate")]
    EmptyEval,

    #[error("{} evaluation pair(s) have no overlap record, e.g. {}", unmatched.len(), unmatched.first().map(String::as_str).unwrap_or(""))]
    Join { unmatched: Vec<String> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("post-condition violated: {0}")]
    Invariant(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
