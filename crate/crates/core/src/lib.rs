//! EEG vowel-imagery recognition: trial segmentation, band-pass filtering,
//! periodogram features, per-channel PCA and a dendrogram-structured RBF-SVM
//! classifier, with a synthetic corpus generator for end-to-end runs.

pub mod cli;
pub mod dsp;
pub mod dtsvm;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod spectral;
pub mod svm;
pub mod synth;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Svm(#[from] svm::SvmError),
    #[error(transparent)]
    DtSvm(#[from] dtsvm::DtSvmError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("{0}")]
    NoData(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Model(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag naming the failing stage.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Ingest(_) | Error::NoData(_) => "ingest",
            Error::Dsp(_) => "dsp",
            Error::Spectral(_) => "spectral",
            Error::Features(_) => "features",
            Error::Svm(_) => "svm",
            Error::DtSvm(_) => "dtsvm",
            Error::Eval(_) => "eval",
            Error::Synth(_) => "synth",
            Error::Config(_) => "config",
            Error::Model(_) => "model",
            Error::Io { .. } => "io",
        }
    }
}
