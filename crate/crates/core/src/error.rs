//! Error type shared by every module.

use thiserror::Error;

/// Everything that can go wrong while configuring or running a simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range; `path` names the offending field.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A function was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("channel capacity exceeded: {pairs} user pairs but only {channels} channel pairs")]
    Capacity { pairs: usize, channels: u32 },

    /// No usable cross-correlation peak between two parties' timestamps.
    #[error("synchronisation failed: {0}")]
    Sync(String),

    /// The bootstrap key bits do not single out one virtual-detector assignment.
    #[error("insufficient bootstrap: {0}")]
    InsufficientBootstrap(String),

    /// A rate or fraction was requested over an empty sample.
    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    /// Two runs cannot be compared because they differ in more than DTM.
    #[error("runs are not comparable: {0}")]
    Comparison(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }

    /// Short machine-friendly category name, used in CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::Capacity { .. } => "validation",
            Error::Domain(_) => "domain",
            Error::Sync(_) | Error::InsufficientBootstrap(_) => "sync",
            Error::UndefinedRate(_) => "undefined-rate",
            Error::Comparison(_) => "comparison",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "validation" => 2,
            "sync" => 3,
            "comparison" => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
