use rightctx::decoder::DecodeError;
use rightctx::fullsum::FullSumError;
use rightctx::trainer::TrainError;

/// Command failure, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match e {
            TrainError::Config(_) | TrainError::StepOutOfRange { .. } => CliError::Usage(msg),
            TrainError::Diverged { .. } => CliError::Numerical(msg),
            TrainError::FullSum(f) => f.into(),
            TrainError::Decode(d) => d.into(),
            _ => CliError::Data(msg),
        }
    }
}

impl From<FullSumError> for CliError {
    fn from(e: FullSumError) -> Self {
        match e {
            FullSumError::NoPath { .. }
            | FullSumError::InvalidScore { .. }
            | FullSumError::NotNormalized { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::NoSurvivor { .. } => CliError::Numerical(e.to_string()),
            DecodeError::Config(_) | DecodeError::MissingPrior => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
