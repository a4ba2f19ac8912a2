//! Monte Carlo experiment harness: corpus ingestion, per-trial link
//! simulation, metrics and CSV output.

pub mod config;
pub mod corpus;
pub mod markov;
pub mod results;
mod run;

pub use config::{CorpusFormat, DetectorKind, ExperimentConfig, FadingMode, MaskingMode, ModelKind};
pub use corpus::{load_corpus, packetize, write_id_corpus};
pub use markov::MarkovChain;
pub use results::{read_results, summarize, write_results, write_summary, ResultRow, SummaryRow, RESULT_COLUMNS};
pub use run::{run_experiment, summary_path, trial_seed, Experiment, IterationMetrics, RunOutput, TrialResult};

use std::path::Path;

use thiserror::Error;

use crate::codec::CodecError;
use crate::detector::DetectError;
use crate::masker::MaskError;
use crate::phy::PhyError;
use crate::prior::PriorError;
use crate::sidecar::SidecarError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub(crate) fn corpus(line: usize, message: impl Into<String>) -> Self {
        HarnessError::Corpus {
            line,
            message: message.into(),
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Csv(e.to_string())
    }
}
