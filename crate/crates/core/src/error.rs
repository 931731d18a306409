use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{what} {value} out of range (limit {limit})")]
    Range {
        what: &'static str,
        value: u64,
        limit: u64,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid trace parameters: {0}")]
    TraceParams(String),

    #[error("log format error at line {line}: {reason}")]
    LogFormat { line: usize, reason: String },

    #[error("ratio undefined: {0}")]
    UndefinedRatio(&'static str),

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<SimError>,
    },

    #[error("slot {slot}: {source}")]
    AtSlot {
        slot: u64,
        #[source]
        source: Box<SimError>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl SimError {
    pub(crate) fn range(what: &'static str, value: u64, limit: u64) -> Self {
        SimError::Range { what, value, limit }
    }

    /// Short machine-readable code used by the CLI's `--machine` mode.
    pub fn code(&self) -> &'static str {
        match self {
            SimError::Range { .. } => "range",
            SimError::Parse { .. } => "parse",
            SimError::Config(_) => "config",
            SimError::TraceParams(_) => "trace_params",
            SimError::LogFormat { .. } => "log_format",
            SimError::UndefinedRatio(_) => "undefined_ratio",
            SimError::AtLine { source, .. } | SimError::AtSlot { source, .. } => source.code(),
            SimError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(err: std::io::Error) -> Self {
        SimError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
