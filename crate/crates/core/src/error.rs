use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PadError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PadError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("t = {t} outside spline domain [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("solver diverged at step {step}{}", window.map(|w| format!(" (window {w})")).unwrap_or_default())]
    Divergence { step: usize, window: Option<usize> },

    #[error("non-finite gradient in parameter group {group}")]
    NonFiniteGradient { group: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PadError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a window index to a solver divergence.
    pub fn in_window(self, index: usize) -> Self {
        match self {
            PadError::Divergence { step, .. } => PadError::Divergence {
                step,
                window: Some(index),
            },
            other => other,
        }
    }

    /// Process exit code used by the CLI and mirrored by the C status codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            PadError::Config(_) => 2,
            PadError::Input(_) | PadError::Parse { .. } | PadError::Io { .. } => 3,
            PadError::Divergence { .. }
            | PadError::NonFinite { .. }
            | PadError::NonFiniteGradient { .. } => 4,
            PadError::Dimension { .. } | PadError::Domain { .. } | PadError::Contract(_) => 3,
        }
    }

    /// Short machine-parsable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            PadError::Dimension { .. } => "dimension",
            PadError::Input(_) => "input",
            PadError::Domain { .. } => "domain",
            PadError::NonFinite { .. } => "non_finite",
            PadError::Divergence { .. } => "divergence",
            PadError::NonFiniteGradient { .. } => "non_finite_gradient",
            PadError::Contract(_) => "contract",
            PadError::Parse { .. } => "parse",
            PadError::Config(_) => "config",
            PadError::Io { .. } => "io",
        }
    }
}
