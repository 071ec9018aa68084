use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid or inconsistent input parameters.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("no transition labelled {label:?}; valid labels: {valid}")]
    UnknownTransition { label: String, valid: String },

    /// Text input that does not follow its grammar.
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("integration failed at t = {time:e} s: {message}")]
    Integration { time: f64, message: String },

    /// Steady-state or linear-algebra failure.
    #[error("solver failure: {0}")]
    Solver(String),

    #[error("fit failure: {0}")]
    Fit(String),

    /// Measurement analysis could not extract the requested quantity.
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by the user's input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownTransition { .. } | Error::Parse { .. } | Error::Io(_)
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
