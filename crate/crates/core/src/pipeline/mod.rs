//! The daily delivery loop and the end-to-end simulated experiment.

mod config;
mod day;
mod experiment;
mod store;

use std::fmt;

use thiserror::Error;

pub use config::{Config, DoseWindow, Paths, Resources, RunConfig, DEFAULT_CONFIG};
pub use day::{run_day, DayInputs, DayReport, PipelineState, SendCounts};
pub use experiment::{run_experiment, write_outputs, ExperimentResult};
pub use store::Workspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Feedback,
    Derive,
    Train,
    Candidates,
    Rank,
    Filter,
    Render,
    Deliver,
    Simulate,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Feedback => "feedback",
            Stage::Derive => "derive",
            Stage::Train => "train",
            Stage::Candidates => "candidates",
            Stage::Rank => "rank",
            Stage::Filter => "filter",
            Stage::Render => "render",
            Stage::Deliver => "deliver",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    pub(crate) fn stage(stage: Stage, e: impl fmt::Display) -> Self {
        PipelineError::Stage { stage, message: e.to_string() }
    }

    /// Process exit code: 1 config, 2 data, 3 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}
