use std::fmt;

/// Process exit codes used by the command-line harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Config = 2,
    Numeric = 3,
    Io = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure at t = {t} s: {msg}")]
    NumericFailure { t: f64, msg: String },

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("ill-conditioned fit: {msg}")]
    IllConditioned {
        msg: String,
        unidentifiable: Vec<String>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    pub fn io(path: impl fmt::Display, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }

    /// Attaches a simulation timestamp to numeric failures that lack one.
    pub fn at_time(self, t: f64) -> Self {
        match self {
            Error::NumericFailure { msg, .. } => Error::NumericFailure { t, msg },
            Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{msg} (at t = {t} s)")),
            other => other,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::UnknownScenario(_)
            | Error::Format(_) => ExitCode::Config,
            Error::NumericFailure { .. } | Error::Convergence { .. } | Error::IllConditioned { .. } => {
                ExitCode::Numeric
            }
            Error::Io { .. } => ExitCode::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
