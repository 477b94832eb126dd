//! Metrics, the Given-N experiment harness and the synthetic generator.

mod experiment;
mod synth;

pub use experiment::{
    domain_maes, fit_model, given_n_splits, load_datasets, report_table, run_experiment, write_results_csv,
    CellSummary, DatasetSource, DomainSource, ExperimentConfig, FittedModel, ModelSettings,
    ResultsReport, RunRecord, TableFormat,
};
pub use synth::{synth_generate, SyntheticData, SyntheticSpec};

use thiserror::Error;

use crate::baselines::BaselineError;
use crate::data::DataError;
use crate::infer::InferError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mae: {0}")]
    Mae(&'static str),
    #[error("{0}")]
    Config(String),
    #[error("config {path}: {source}")]
    ConfigParse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: DataError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("leak: {0}")]
    Leak(String),
    #[error("{cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("empty report")]
    EmptyReport,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<DataError> for EvalError {
    fn from(source: DataError) -> Self {
        EvalError::Data {
            context: "dataset".into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Mean absolute error.
pub fn mae(predictions: &[f64], truths: &[u8]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(EvalError::Mae("length mismatch"));
    }
    if predictions.is_empty() {
        return Err(EvalError::Mae("empty input"));
    }
    let total: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, &t)| (p - t as f64).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}
