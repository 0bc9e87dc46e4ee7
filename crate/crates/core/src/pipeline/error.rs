use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Ingest,
    Clean,
    Typify,
    TrainHmm,
    TrainMabf,
    Generate,
    ScaleSlp,
    Evaluate,
    Match,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 10] = [
        Stage::Ingest,
        Stage::Clean,
        Stage::Typify,
        Stage::TrainHmm,
        Stage::TrainMabf,
        Stage::Generate,
        Stage::ScaleSlp,
        Stage::Evaluate,
        Stage::Match,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Clean => "clean",
            Stage::Typify => "typify",
            Stage::TrainHmm => "train-hmm",
            Stage::TrainMabf => "train-mabf",
            Stage::Generate => "generate",
            Stage::ScaleSlp => "scale-slp",
            Stage::Evaluate => "evaluate",
            Stage::Match => "match",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Failure class; decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub struct PipelineError {
    pub stage: Stage,
    pub sensor: Option<String>,
    pub kind: ErrorKind,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}", self.stage)?;
        if let Some(s) = &self.sensor {
            write!(f, ", sensor {s}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl PipelineError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl Into<String>) -> Self {
        PipelineError {
            stage,
            sensor: None,
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Stage::Config, ErrorKind::Config, message)
    }

    pub fn with_sensor(mut self, sensor: impl Into<String>) -> Self {
        self.sensor = Some(sensor.into());
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

/// Module errors that know their failure class.
pub(crate) trait Classify: fmt::Display {
    fn kind(&self) -> ErrorKind;
    fn sensor(&self) -> Option<String> {
        None
    }

    fn at(&self, stage: Stage) -> PipelineError {
        PipelineError {
            stage,
            sensor: self.sensor(),
            kind: self.kind(),
            message: self.to_string(),
        }
    }
}

impl Classify for std::io::Error {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Data
    }
}

impl Classify for crate::dataset::DatasetError {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Data
    }

    fn sensor(&self) -> Option<String> {
        use crate::dataset::DatasetError::*;
        match self {
            TooShort { sensor_id, .. } | TooSparse { sensor_id, .. } => Some(sensor_id.clone()),
            _ => None,
        }
    }
}

impl Classify for crate::typing::TypingError {
    fn kind(&self) -> ErrorKind {
        match self {
            crate::typing::TypingError::NonFinite => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

impl Classify for crate::hmm::HmmError {
    fn kind(&self) -> ErrorKind {
        use crate::hmm::HmmError::*;
        match self {
            DegenerateEmissions(_) | ZeroLikelihood => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    fn sensor(&self) -> Option<String> {
        match self {
            crate::hmm::HmmError::MissingTemperature(id) => Some(id.clone()),
            crate::hmm::HmmError::Dataset(e) => e.sensor(),
            _ => None,
        }
    }
}

impl Classify for crate::mabf::MabfError {
    fn kind(&self) -> ErrorKind {
        use crate::mabf::MabfError::*;
        match self {
            DomainError(_) | NonFinite(_) | DivergedTraining(_) | InversionFailure { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

impl Classify for crate::slp::SlpError {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Data
    }
}

impl Classify for crate::eval::EvalError {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Data
    }

    fn sensor(&self) -> Option<String> {
        match self {
            crate::eval::EvalError::Unpaired(id) => Some(id.clone()),
            crate::eval::EvalError::NoOverlap(a, _) => Some(a.clone()),
            _ => None,
        }
    }
}

impl Classify for crate::daymatch::DayMatchError {
    fn kind(&self) -> ErrorKind {
        use crate::daymatch::DayMatchError::*;
        match self {
            NonFiniteCost { .. } => ErrorKind::Numerical,
            Embedding(e) => e.kind(),
            _ => ErrorKind::Data,
        }
    }
}
