use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A flow `home -> location` exists but nothing ever returns, so the
    /// closed-form steady state is undefined.
    #[error("no return path: flow from community {home} to {location} has zero return rate")]
    NoReturnPath { home: usize, location: usize },

    #[error("community {location} has occupants but zero steady-state population")]
    EmptyNormalization { location: usize },

    #[error("non-finite state at t = {time} min (try a smaller step)")]
    NonFinite { time: f64 },

    #[error("tau-leap step underflow at t = {time} min: tau {tau} below minimum {tau_min}")]
    TauUnderflow { time: f64, tau: f64, tau_min: f64 },

    #[error("too few samples: {found} at or above x_min, need {needed}")]
    TooFewSamples { found: usize, needed: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Dimension(_)
                | Error::NoReturnPath { .. }
                | Error::TooFewSamples { .. }
        )
    }
}
