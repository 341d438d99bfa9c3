use thiserror::Error;

/// Errors produced by the TAP toolkit.
#[derive(Debug, Error)]
pub enum TapError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("invalid mechanism: {0}")]
    Mechanism(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("solver failure at step {step} (t = {time:.6} s): {msg}")]
    Solver { step: usize, time: f64, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation failed for design {design}: {source}")]
    Design {
        design: String,
        #[source]
        source: Box<TapError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TapError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        TapError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        TapError::Numerical(msg.into())
    }

    /// Attaches the design label to a simulation error.
    pub fn in_design(design: &crate::reactor::ExperimentDesign, source: TapError) -> Self {
        TapError::Design { design: design.label(), source: Box::new(source) }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_user_error(&self) -> bool {
        match self {
            TapError::Syntax { .. }
            | TapError::Mechanism(_)
            | TapError::InvalidInput(_)
            | TapError::Io { .. } => true,
            TapError::Design { source, .. } => source.is_user_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, TapError>;
