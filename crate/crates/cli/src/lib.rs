//! Command-line front end: dictionary learning, transcription with any
//! factorization method, evaluation, stereo analysis and synthetic data.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod synth;

use std::path::{Path, PathBuf};

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] amt_core::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("factorization diverged: {0}")]
    Divergence(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
