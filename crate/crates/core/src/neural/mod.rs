//! Miniature transformer: arrays, reverse-mode differentiation, layers,
//! optimizer, gradient verification and checkpoints.

pub mod array;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use array::Array;
pub use checkpoint::{Checkpoint, Dtype, RngState};
pub use gradcheck::{check_seq2seq, gradient_check, GradCheckOptions, GradCheckReport, Seq2SeqCheck};
pub use graph::{Gradients, Graph, Mask, Var};
pub use layers::{sinusoidal_positions, Activation, Dropout, ModelConfig, NormPosition, Seq2Seq, TransformerEncoder};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{Binder, Init, Initializer, ParamId, ParamSource, Parameters};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("sequence length {len} exceeds max_len {max}")]
    LenExceeded { len: usize, max: usize },
    #[error("symbol id {id} outside vocabulary of size {size}")]
    VocabOverflow { id: usize, size: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every target position is padding")]
    AllPad,
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(
        "gradient check failed at {param}[{index}]: analytic {analytic:e}, numeric {numeric:e}, relative error {rel_error:e}"
    )]
    CheckFailed { param: String, index: usize, analytic: f64, numeric: f64, rel_error: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
