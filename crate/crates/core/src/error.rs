use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value violates its invariant.
    Config { field: &'static str, reason: String },
    /// `step` was called after the last step of the episode.
    EpisodeExhausted { steps: usize },
    /// The action handed to the environment is not finite.
    InvalidAction { step: usize, value: f64 },
    /// Non-finite or otherwise unusable numeric input.
    InvalidInput(String),
    /// Vector or matrix dimensions do not line up.
    Shape { expected: usize, got: usize },
    /// A tape recorded against an older parameter set was used for backprop.
    StaleTape { tape: u64, net: u64 },
    /// Non-finite gradients or losses during optimization.
    Diverged { step: u64, detail: String },
    /// A trace too short to have a spread.
    TraceTooShort { len: usize },
    /// An error raised at a given environment step while collecting a rollout.
    AtStep { step: usize, source: alloc::boxed::Box<Error> },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config { field, reason: reason.into() }
    }

    /// True for numeric blow-ups, including ones wrapped with step context.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Diverged { .. } => true,
            Error::AtStep { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } => true,
            Error::AtStep { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config { field, reason } => write!(f, "invalid configuration `{field}`: {reason}"),
            Error::EpisodeExhausted { steps } => {
                write!(f, "episode exhausted after {steps} steps; reset the environment")
            }
            Error::InvalidAction { step, value } => {
                write!(f, "non-finite action {value} at step {step}")
            }
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Shape { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::StaleTape { tape, net } => write!(
                f,
                "tape recorded at parameter generation {tape} but network is at {net}"
            ),
            Error::Diverged { step, detail } => {
                write!(f, "training diverged at optimizer step {step}: {detail}")
            }
            Error::TraceTooShort { len } => {
                write!(f, "trace has {len} samples, need at least 2")
            }
            Error::AtStep { step, source } => write!(f, "at step {step}: {source}"),
        }
    }
}

impl core::error::Error for Error {}
