use std::path::PathBuf;

use rhythmkit_core::{eval, face, ingest, rppg, stmap, synth};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Face(#[from] face::FaceError),
    #[error(transparent)]
    Stmap(#[from] stmap::StmapError),
    #[error(transparent)]
    Rppg(#[from] rppg::RppgError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Nn(#[from] rhythmkit_nn::NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {detail}")]
    Input { path: PathBuf, detail: String },
    #[error("invalid option: {0}")]
    Usage(String),
    #[error("{context} {subject}/{video}: {inner}")]
    Video { subject: String, video: String, context: String, inner: Box<CliError> },
    #[error("no usable clip in {0}")]
    NoValidClips(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn csv_err(path: &std::path::Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv { path: path.to_path_buf(), source }
}
