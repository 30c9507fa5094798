use std::fmt;
use std::io;
use std::path::Path;

use textnorm::corpus::CorpusError;
use textnorm::neural::NeuralError;
use textnorm::pipeline::EvalError;
use textnorm::train::TrainError;
use textnorm::verbalizer::LexiconError;

/// Failure grouped by the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (family, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Numeric(m) => ("numeric", m),
            CliError::Internal(m) => ("internal", m),
        };
        write!(f, "{family} error: {msg}")
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LexiconError> for CliError {
    fn from(e: LexiconError) -> Self {
        CliError::Data(format!("lexicon {e}"))
    }
}

impl From<NeuralError> for CliError {
    fn from(e: NeuralError) -> Self {
        let msg = e.to_string();
        match e {
            NeuralError::NonFinite(_) | NeuralError::CheckFailed { .. } => CliError::Numeric(msg),
            NeuralError::Config(_) => CliError::Usage(msg),
            NeuralError::LenExceeded { .. }
            | NeuralError::VocabOverflow { .. }
            | NeuralError::AllPad
            | NeuralError::MissingParam(_)
            | NeuralError::ShapeMismatch(_)
            | NeuralError::Checkpoint(_)
            | NeuralError::Io(_) => CliError::Data(msg),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::EmptyCorpus => CliError::Data(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Neural(n) => n.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptySplit | EvalError::SplitMismatch(_) | EvalError::BadReport { .. } => {
                CliError::Data(e.to_string())
            }
            EvalError::ZeroBase => CliError::Numeric(e.to_string()),
            EvalError::ModeMismatch { .. } => CliError::Usage(e.to_string()),
            EvalError::Neural(n) => n.into(),
        }
    }
}
