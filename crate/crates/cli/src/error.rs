//! Command errors and their exit codes.

use std::fmt;

use dockport::config::ConfigError;
use dockport::dataset::DatasetError;
use dockport::eval::EvalError;
use dockport::events::EventError;
use dockport::filters::{FilterError, WeightsError};
use dockport::geometry::GeometryError;
use dockport::raster::RasterError;
use dockport::synth::SynthError;

/// Failure classes, one per non-zero exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, usage or input content (exit 2).
    Config(String),
    /// Operating-system I/O failure (exit 3).
    Io(String),
    /// Internal invariant violation (exit 4).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Internal(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
            Self::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Io { .. } => Self::Io(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => Self::Io(e.to_string()),
            DatasetError::Geometry(g) => g.into(),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<EventError> for CliError {
    fn from(e: EventError) -> Self {
        match e {
            EventError::Io { .. } => Self::Io(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Io { .. } => Self::Io(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> Self {
        match e {
            WeightsError::Io { .. } => Self::Io(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Weights(w) => w.into(),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Dataset(d) => d.into(),
            SynthError::Raster(r) => r.into(),
            SynthError::Events(v) => v.into(),
            SynthError::Trajectory(_) => Self::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::Config(e.to_string())
    }
}
