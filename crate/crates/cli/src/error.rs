use std::fmt;
use std::process::ExitCode;

use instruct_curate::corpus::{AdapterError, RenderError};
use instruct_curate::distortion::DistortionError;
use instruct_curate::eval::{MetaError, TaxError, WinRateError};
use instruct_curate::filters::{FilterError, FilterRunError};
use instruct_curate::gateway::GatewayError;
use instruct_curate::jsonl::JsonlError;
use instruct_curate::packing::PackError;
use instruct_curate::scoring::ScorerError;
use instruct_curate::tuning_plan::PlanError;

/// Why a run stopped. Bad input and bad configuration exit 1; anything that
/// touched the file system or a remote endpoint and failed exits 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Invalid,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Invalid, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Io, message: message.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self.kind {
            Kind::Invalid => ExitCode::from(1),
            Kind::Io => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io { .. } => CliError::io(e.to_string()),
            JsonlError::Parse { .. } => CliError::invalid(e.to_string()),
        }
    }
}

impl From<ScorerError> for CliError {
    fn from(e: ScorerError) -> Self {
        match e {
            ScorerError::Unavailable(_) => CliError::io(e.to_string()),
            _ => CliError::invalid(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Scorer { source: ScorerError::Unavailable(_), .. } => CliError::io(e.to_string()),
            _ => CliError::invalid(e.to_string()),
        }
    }
}

impl From<FilterRunError<std::io::Error>> for CliError {
    fn from(e: FilterRunError<std::io::Error>) -> Self {
        match e {
            FilterRunError::Filter(f) => f.into(),
            FilterRunError::Sink(io) => CliError::io(format!("writing verdicts: {io}")),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::MissingRawAnnotation(_) | GatewayError::MalformedResponse { .. } => {
                CliError::invalid(e.to_string())
            }
            _ => CliError::io(e.to_string()),
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::invalid(e.to_string())
            }
        }
    )*};
}

invalid_from!(AdapterError, RenderError, DistortionError, PackError, PlanError, TaxError, WinRateError);

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        match e {
            MetaError::Io { .. } => CliError::io(e.to_string()),
            _ => CliError::invalid(e.to_string()),
        }
    }
}
