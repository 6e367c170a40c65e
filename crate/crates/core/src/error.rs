// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every analysis.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the toolkit.
///
/// Variants are grouped by how the CLI reports them: argument problems,
/// data-format problems, and numeric degeneracies each map to their own
/// exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is out of range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An input vector has zero norm or is otherwise unusable.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A statistic is undefined on the supplied data (e.g. zero variance).
    #[error("degenerate statistic ({statistic}): {detail}")]
    DegenerateStatistic {
        statistic: &'static str,
        detail: String,
    },

    /// Cholesky factorisation failed even after regularisation.
    #[error("ill-conditioned estimate: {0}")]
    IllConditioned(String),

    /// Two shapes that must agree do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown head kind `{0}`")]
    UnknownHeadKind(String),

    /// A tensor blob or shard is truncated, has a bad magic, or has
    /// inconsistent sizes.
    #[error("corrupt tensor blob: {0}")]
    CorruptBlob(String),

    /// A config, pair file or probe file does not parse.
    #[error("format error: {0}")]
    Format(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("corpus too small: {got} samples, need at least {need}")]
    CorpusTooSmall { got: usize, need: usize },

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn degenerate_stat(statistic: &'static str, detail: impl Into<String>) -> Self {
        Error::DegenerateStatistic {
            statistic,
            detail: detail.into(),
        }
    }

    /// Process exit code used by the CLI: 2 for argument errors, 3 for
    /// data-format errors, 4 for numeric degeneracies, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::SequenceTooLong { .. } => 2,
            Error::ShapeMismatch(_)
            | Error::UnknownHeadKind(_)
            | Error::CorruptBlob(_)
            | Error::Format(_)
            | Error::UnknownToken(_)
            | Error::Json(_)
            | Error::CorpusTooSmall { .. } => 3,
            Error::DegenerateInput(_)
            | Error::DegenerateStatistic { .. }
            | Error::IllConditioned(_)
            | Error::NonFinite(_) => 4,
            Error::Io { .. } => 1,
        }
    }
}
