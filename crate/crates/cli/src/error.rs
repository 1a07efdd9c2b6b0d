use std::fmt;

use cusa_core::io::DataError;
use cusa_core::metrics::MetricError;
use cusa_core::model::ModelError;
use cusa_core::synth::SynthError;
use cusa_core::trainer::TrainError;

/// A failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Data(String),
    Numeric(String),
    Gradcheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Gradcheck(_) => 6,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage error", m),
            CliError::Io(m) => ("I/O error", m),
            CliError::Data(m) => ("data error", m),
            CliError::Numeric(m) => ("numeric failure", m),
            CliError::Gradcheck(m) => ("gradient check failed", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidDimension { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(m) => CliError::Usage(m),
            SynthError::Data(d) => d.into(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::BatchTooLarge { .. } => {
                CliError::Usage(e.to_string())
            }
            TrainError::Numeric { .. } => CliError::Numeric(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
        }
    }
}
