//! Process-level error discipline: every failure is classed by whose fault
//! it is, and the class fixes the exit code.

use std::fmt;

use hmnet::data::DataError;
use hmnet::decode::DecodeError;
use hmnet::eval::EvalError;
use hmnet::model::ModelError;
use hmnet::train::checkpoint::CheckpointError;
use hmnet::train::TrainError;

/// Exit code 1: the invocation or configuration is wrong.
/// Exit code 2: an input file is missing, malformed, or inconsistent.
/// Exit code 3: the run itself failed (numeric trouble, decode failure).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config { .. } => CliError::Usage(e.to_string()),
            // A meeting the tables cannot express is an input problem.
            ModelError::UnknownRole { .. }
            | ModelError::EmptyTurn
            | ModelError::EmptyMeeting
            | ModelError::TagCount { .. } => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig { .. } => CliError::Usage(e.to_string()),
            TrainError::EmptyBatch => CliError::Data(e.to_string()),
            TrainError::Model(inner) => CliError::from(inner),
            TrainError::NonFiniteLoss | TrainError::NonFiniteGradient => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::BadConfig { .. } => CliError::Usage(e.to_string()),
            DecodeError::Model(inner) => CliError::from(inner),
            DecodeError::EmptyHypothesis => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}
