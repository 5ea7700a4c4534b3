//! Batch evaluation over question files: loading, scoring, repeated runs
//! and accuracy accounting.

pub mod bench;
pub mod questions;
pub mod report;
pub mod score;

use std::path::PathBuf;

use thiserror::Error;

pub use bench::{run_benchmark, BenchOptions, BenchmarkRecord, RunOutcome};
pub use questions::{load_questions, parse_questions, AnswerType, QuestionRecord};
pub use report::{
    accuracy_report, improvement_report, Accuracy, AccuracyReport, BenchReport, Improvement,
};
pub use score::{extract_choice, normalize, score_answer};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate question id {id:?} (first on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("no questions to run")]
    EmptyQuestions,
    #[error("no records to report on")]
    EmptyRecords,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("relative improvement needs a non-zero baseline")]
    ZeroBaseline,
    #[error(transparent)]
    InvalidConfig(#[from] clio_core::config::InvalidConfig),
    #[error(transparent)]
    Store(#[from] clio_steering::StoreError),
}
