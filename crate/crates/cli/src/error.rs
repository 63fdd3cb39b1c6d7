use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bsst_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: expected file is missing", path.display())]
    Missing { path: PathBuf },

    #[error("{}: byte {offset}: {reason}", path.display())]
    Flo {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },

    #[error("{what}: expected {expected}, found {actual}{}", missing.as_ref().map(|p| format!(" (first missing: {})", p.display())).unwrap_or_default())]
    Count {
        what: String,
        expected: usize,
        actual: usize,
        missing: Option<PathBuf>,
    },

    #[error("flow geometry differs: {} is {:?} but {} is {:?}", first.display(), first_shape, other.display(), other_shape)]
    FlowShape {
        first: PathBuf,
        first_shape: [usize; 2],
        other: PathBuf,
        other_shape: [usize; 2],
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                CliError::Missing {
                    path: path.to_path_buf(),
                }
            } else {
                CliError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        }
    }

    pub fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> CliError + '_ {
        move |source| CliError::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(_) => "core",
            CliError::Io { .. } => "io",
            CliError::Missing { .. } => "missing_file",
            CliError::Flo { .. } => "flo_format",
            CliError::Image { .. } => "image",
            CliError::Count { .. } => "count_mismatch",
            CliError::FlowShape { .. } => "flow_shape",
            CliError::Json { .. } => "json",
            CliError::Usage(_) => "usage",
        }
    }

    /// Single-line machine-readable form for stderr.
    pub fn to_json_line(&self) -> String {
        let mut msg = self.to_string();
        let mut src = std::error::Error::source(self);
        while let Some(s) = src {
            let s_text = s.to_string();
            if !msg.contains(&s_text) {
                msg = format!("{msg}: {s_text}");
            }
            src = s.source();
        }
        json!({ "error": self.kind(), "message": msg }).to_string()
    }
}
