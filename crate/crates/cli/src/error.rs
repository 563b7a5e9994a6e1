use std::io;
use std::path::PathBuf;

use innerns::engine::EngineError;
use innerns::expr::ParseError;
use innerns::inner::InnerError;
use innerns::moments::MomentError;
use innerns::oracle::OracleError;
use innerns::pipeline::PipelineError;
use thiserror::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}:{column}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: u64,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Counts { path: PathBuf, msg: String },
    #[error("functional '{source_text}': {err}")]
    Functional { source_text: String, err: ParseError },
    #[error("{path}: {msg}")]
    Model { path: PathBuf, msg: String },
    #[error("{0}")]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Moments(#[from] MomentError),
    #[error("only {succeeded} of {total} models succeeded; need 2 ({failures})")]
    TooFewModels {
        succeeded: usize,
        total: usize,
        failures: String,
    },
}

fn is_config(err: &PipelineError) -> bool {
    matches!(
        err,
        PipelineError::Engine {
            source: EngineError::Config(_),
            ..
        } | PipelineError::Inner {
            source: InnerError::Engine(EngineError::Config(_)),
            ..
        } | PipelineError::Bounds(_)
    )
}

impl CliError {
    /// Stable machine-readable code.
    pub fn code(&self) -> String {
        match self {
            CliError::Usage(_) => "input.usage".into(),
            CliError::Read { .. } => "input.read".into(),
            CliError::Write { .. } => "output.write".into(),
            CliError::Parse { .. } => "input.parse".into(),
            CliError::Counts { .. } => "input.counts".into(),
            CliError::Functional { .. } => "input.functional".into(),
            CliError::Model { .. } => "input.model".into(),
            CliError::Oracle(_) => "input.grid".into(),
            CliError::Pipeline(e) if is_config(e) => "input.config".into(),
            CliError::Pipeline(e) => match e.stage() {
                Some(stage) => format!("pipeline.{stage}"),
                None => "numeric.integrand".into(),
            },
            CliError::Moments(_) => "numeric.moments".into(),
            CliError::TooFewModels { .. } => "pipeline.models".into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Read { .. }
            | CliError::Parse { .. }
            | CliError::Counts { .. }
            | CliError::Functional { .. }
            | CliError::Model { .. }
            | CliError::Oracle(_) => EXIT_INPUT,
            CliError::Pipeline(e) if is_config(e) => EXIT_INPUT,
            _ => EXIT_NUMERIC,
        }
    }

    /// `error[code]: detail` on one line.
    pub fn render(&self) -> String {
        let detail = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.code(), detail)
    }
}
