//! End-to-end pipeline commands behind the `disrank` CLI: data generation,
//! teacher pre-training and fine-tuning, teacher scoring, student
//! distillation, evaluation, latency bench, and score histograms.
//!
//! Every command is a plain function over a [`RunConfig`]; the binary only
//! parses flags and maps errors to exit codes. Commands validate their
//! configuration and input paths before writing anything, stream
//! machine-parseable progress lines to stdout, and are bit-reproducible for
//! a fixed config and seed.

mod commands;
mod config;
mod train;

pub use commands::{
    cmd_bench, cmd_cpt, cmd_distill, cmd_eval, cmd_gen_data, cmd_score, cmd_score_dist, cmd_sft,
    BenchSummary, DistillSummary, EvalReport, GenDataSummary, ScoreDistSummary, ScoreSummary,
    TrainSummary,
};
pub use config::{
    echo_effective, load_config, EvalTarget, LossMode, ModelSection, Overrides, PathsSection,
    ResolvedPaths, RunConfig, ScoreDistSection, TrainSection,
};

/// Exit codes: 2 config, 3 io, 4 numeric divergence, 5 degenerate input.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("numeric divergence: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io(_) => 3,
            PipelineError::Numeric(_) => 4,
            PipelineError::Degenerate(_) => 5,
        }
    }
}

impl From<crate::datagen::DataError> for PipelineError {
    fn from(e: crate::datagen::DataError) -> Self {
        match e {
            crate::datagen::DataError::BadConfig(msg) => PipelineError::Config(msg),
            other => PipelineError::Io(other.to_string()),
        }
    }
}

impl From<crate::textmodel::CheckpointError> for PipelineError {
    fn from(e: crate::textmodel::CheckpointError) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<crate::numerics::NumericsError> for PipelineError {
    fn from(e: crate::numerics::NumericsError) -> Self {
        PipelineError::Numeric(e.to_string())
    }
}

impl From<crate::metrics::MetricsError> for PipelineError {
    fn from(e: crate::metrics::MetricsError) -> Self {
        PipelineError::Degenerate(e.to_string())
    }
}
