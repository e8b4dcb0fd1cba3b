use std::io;

use pdesym::canon::CanonError;
use pdesym::datagen::DatagenError;
use pdesym::expr::{DecodeError, ParseError, TokenError};
use pdesym::filter::FilterError;
use pdesym::metrics::MetricsError;
use pdesym::perturb::PerturbError;
use pdesym::solver::{GridFileError, SolverError};
use pdesym::study::StudyError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Data(String),
    #[error("{context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    GridFile(#[from] GridFileError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

fn solver_kind(e: &SolverError) -> ErrorKind {
    match e {
        SolverError::CflViolation { .. }
        | SolverError::NonFinite
        | SolverError::StepLimit { .. } => ErrorKind::Numeric,
        SolverError::InvalidGrid(_)
        | SolverError::InvalidArgument(_)
        | SolverError::NotSolvable(_) => ErrorKind::Data,
    }
}

fn filter_kind(e: &FilterError) -> ErrorKind {
    match e {
        FilterError::InvalidConfig(_) => ErrorKind::Usage,
        FilterError::ZeroCoefficient(_)
        | FilterError::DimensionMismatch { .. }
        | FilterError::TooFewFrames { .. } => ErrorKind::Data,
        FilterError::AllWeightsDegenerate => ErrorKind::Numeric,
        FilterError::Solver(s) => solver_kind(s),
    }
}

fn metrics_kind(e: &MetricsError) -> ErrorKind {
    match e {
        MetricsError::ShapeMismatch(..) | MetricsError::Decode(_) => ErrorKind::Data,
        MetricsError::DegenerateReference | MetricsError::Eval(_) => ErrorKind::Numeric,
        MetricsError::Solver(s) => solver_kind(s),
    }
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) | CliError::Perturb(_) => ErrorKind::Usage,
            CliError::Solver(e) => solver_kind(e),
            CliError::Filter(e) => filter_kind(e),
            CliError::Metrics(e) => metrics_kind(e),
            CliError::Datagen(DatagenError::Solver(e)) => solver_kind(e),
            CliError::Study(StudyError::Filter { source, .. }) => filter_kind(source),
            CliError::Study(StudyError::Metrics { source, .. }) => metrics_kind(source),
            CliError::Study(StudyError::Solver { source, .. }) => solver_kind(source),
            CliError::Study(StudyError::NoTrials) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn json(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Json { context, source }
    }
}

/// Body of the JSON object written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: ErrorKind,
    pub message: String,
    pub exit_code: u8,
}

impl ErrorReport {
    pub fn new(kind: ErrorKind, message: String) -> Self {
        ErrorReport {
            kind,
            message,
            exit_code: kind.exit_code(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}
