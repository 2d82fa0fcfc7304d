//! Top-level error with the module that raised it and the process exit code.

use serde::Serialize;

use crate::analytics::AnalyticsError;
use crate::backtest::BacktestError;
use crate::baselines::BaselineError;
use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::indicators::IndicatorError;
use crate::losses::LossError;
use crate::market_data::MarketDataError;
use crate::models::ModelError;
use crate::nn::NnError;
use crate::synth::SynthError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{module}: {message}")]
pub struct Error {
    pub module: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn new(module: &'static str, kind: ErrorKind, message: impl Into<String>) -> Self {
        Error {
            module,
            kind,
            message: message.into(),
        }
    }

    pub fn config(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Config, message)
    }

    pub fn data(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Data, message)
    }

    pub fn io(module: &'static str, path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::data(module, format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Single-line machine-readable report.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

macro_rules! from_module {
    ($ty:ty, $module:literal, |$e:ident| $kind:expr) => {
        impl From<$ty> for Error {
            fn from($e: $ty) -> Self {
                let kind = $kind;
                Error::new($module, kind, $e.to_string())
            }
        }
    };
}

from_module!(ConfigError, "config", |e| ErrorKind::Config);
from_module!(MarketDataError, "market_data", |e| match e {
    MarketDataError::InvalidParameter(_) => ErrorKind::Config,
    _ => ErrorKind::Data,
});
from_module!(IndicatorError, "indicators", |e| match e {
    IndicatorError::UnknownFeature(_) | IndicatorError::BadParam { .. } | IndicatorError::Duplicate(_) => ErrorKind::Config,
    _ => ErrorKind::Data,
});
from_module!(DatasetError, "dataset", |e| match e {
    DatasetError::CalendarTooShort { .. } | DatasetError::InvalidWindows(_) | DatasetError::WarmupOverlap { .. } | DatasetError::InvalidScheme(_) => ErrorKind::Config,
    DatasetError::NonFiniteReturn(_) => ErrorKind::Numeric,
    _ => ErrorKind::Data,
});
from_module!(NnError, "nn_core", |e| match e {
    NnError::InvalidParam(_) => ErrorKind::Config,
    _ => ErrorKind::Numeric,
});
from_module!(LossError, "losses", |e| match e {
    LossError::Unknown(_) => ErrorKind::Config,
    _ => ErrorKind::Numeric,
});
from_module!(ModelError, "models", |e| match e {
    ModelError::InvalidArch(_) | ModelError::InvalidEnsemble(_) => ErrorKind::Config,
    ModelError::SectorOutOfRange(_) | ModelError::EmptySamples(_) => ErrorKind::Data,
    ModelError::Nn(NnError::InvalidParam(_)) | ModelError::Loss(LossError::Unknown(_)) => ErrorKind::Config,
    _ => ErrorKind::Numeric,
});
from_module!(BaselineError, "baselines", |e| match e {
    BaselineError::UnknownPreset(_) | BaselineError::InvalidPenalty(_) => ErrorKind::Config,
    BaselineError::Shape(_) | BaselineError::TooFewSamples { .. } => ErrorKind::Data,
    _ => ErrorKind::Numeric,
});
from_module!(BacktestError, "backtest", |e| match e {
    BacktestError::UnknownStrategy(_) | BacktestError::InvalidK { .. } => ErrorKind::Config,
    BacktestError::NonFiniteScore(_) | BacktestError::BadReturn { .. } => ErrorKind::Numeric,
    _ => ErrorKind::Data,
});
from_module!(AnalyticsError, "analytics", |e| match e {
    AnalyticsError::ZeroVolatility | AnalyticsError::Invalid(_) => ErrorKind::Numeric,
    _ => ErrorKind::Data,
});
from_module!(CheckpointError, "checkpoint", |e| ErrorKind::Data);
from_module!(SynthError, "synth", |e| match e {
    SynthError::InvalidSpec(_) => ErrorKind::Config,
    _ => ErrorKind::Data,
});
