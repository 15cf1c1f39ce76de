use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration value.
    #[error("invalid input: {0}")]
    Input(String),

    /// A CSV pool could not be read or contains ragged / non-finite rows.
    #[error("pool {path}: {message}")]
    InputPool { path: PathBuf, message: String },

    /// A black-box oracle (subprocess or user callback) failed.
    #[error("oracle failure{}: {message}{}", trial_suffix(*.trial), stderr_suffix(.stderr))]
    Oracle {
        trial: Option<u64>,
        message: String,
        stderr: Option<String>,
    },

    /// An oracle output exceeded the declared l2 radius.
    #[error("output norm {norm} exceeds radius {radius}{}", trial_suffix(*.trial))]
    Radius {
        trial: Option<u64>,
        norm: f64,
        radius: f64,
    },

    /// Shape, symmetry, or positivity contract violated.
    #[error("contract violation{}: {message}", trial_suffix(*.trial))]
    Contract { trial: Option<u64>, message: String },

    #[error("ledger budget exhausted: all {rounds} scheduled rounds consumed")]
    BudgetExhausted { rounds: usize },

    #[error("ledger integrity check failed: {0}")]
    Integrity(String),

    #[error("composition rule violated: {0}")]
    Composition(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn trial_suffix(trial: Option<u64>) -> String {
    trial.map(|t| format!(" at trial {t}")).unwrap_or_default()
}

fn stderr_suffix(stderr: &Option<String>) -> String {
    match stderr {
        Some(s) if !s.trim().is_empty() => format!(" (stderr: {})", s.trim()),
        _ => String::new(),
    }
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract {
            trial: None,
            message: msg.into(),
        }
    }

    pub fn oracle(msg: impl Into<String>) -> Self {
        Error::Oracle {
            trial: None,
            message: msg.into(),
            stderr: None,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a trial index to errors that carry one, keeping an index
    /// that is already set.
    pub fn at_trial(mut self, k: u64) -> Self {
        match &mut self {
            Error::Oracle { trial, .. } | Error::Radius { trial, .. } | Error::Contract { trial, .. } => {
                trial.get_or_insert(k);
            }
            _ => {}
        }
        self
    }

    pub fn trial(&self) -> Option<u64> {
        match self {
            Error::Oracle { trial, .. } | Error::Radius { trial, .. } | Error::Contract { trial, .. } => *trial,
            _ => None,
        }
    }

    /// Stable machine-readable code used by the CLI error report.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) => "INPUT",
            Error::InputPool { .. } => "INPUT_POOL",
            Error::Oracle { .. } => "ORACLE",
            Error::Radius { .. } => "RADIUS",
            Error::Contract { .. } => "CONTRACT",
            Error::BudgetExhausted { .. } => "BUDGET_EXHAUSTED",
            Error::Integrity(_) => "INTEGRITY",
            Error::Composition(_) => "COMPOSITION",
            Error::Calibration(_) => "CALIBRATION",
            Error::Io { .. } => "IO",
            Error::Json(_) => "JSON",
        }
    }
}
