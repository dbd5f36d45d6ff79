use streampoint_core::eval::EvalError;
use streampoint_core::model::checkpoint::CheckpointError;
use streampoint_core::model::ModelError;
use streampoint_core::synth::SynthError;
use streampoint_core::tensor::{GradCheckError, TensorError};
use streampoint_core::train::{OptimError, TrainError};

/// Process-level error classes mapped to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Help/version output already printed; exit 0.
    #[error("")]
    Clean,
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl AppError {
    pub fn code(&self) -> i32 {
        match self {
            AppError::Clean => 0,
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> AppError {
        AppError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<TensorError> for AppError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NumericFault { .. } => AppError::Numeric(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(TensorError::NumericFault { .. }) => {
                AppError::Numeric(e.to_string())
            }
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for AppError {
    fn from(e: SynthError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<CheckpointError> for AppError {
    fn from(e: CheckpointError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<GradCheckError> for AppError {
    fn from(e: GradCheckError) -> Self {
        AppError::Numeric(e.to_string())
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::Optim(OptimError::NonFiniteGradient { .. }) => {
                AppError::Numeric(e.to_string())
            }
            TrainError::Tensor(TensorError::NumericFault { .. }) => {
                AppError::Numeric(e.to_string())
            }
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<streampoint_core::ply::PlyError> for AppError {
    fn from(e: streampoint_core::ply::PlyError) -> Self {
        AppError::Data(e.to_string())
    }
}
