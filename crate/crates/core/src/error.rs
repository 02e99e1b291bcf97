use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration key or value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Drive amplitude does not match the regime an operation requires.
    #[error("regime error: {operation} requires the {required} regime, but b_x = {b_x} T, b_z = {b_z} T is {actual} (threshold b_x/b_z = {threshold})")]
    Regime {
        operation: &'static str,
        required: &'static str,
        actual: &'static str,
        b_x: f64,
        b_z: f64,
        threshold: f64,
    },

    #[error("numerical contract violated: {0}")]
    Numerical(String),

    #[error("resource cap exceeded: {0}")]
    Cap(String),

    #[error("unknown {family} strategy `{name}` (available: {available})")]
    UnknownStrategy {
        family: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error class: 2 config, 3 numerical contract, 4 cap/resource.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Regime { .. } | Error::UnknownStrategy { .. } | Error::Json(_) => 2,
            Error::Numerical(_) => 3,
            Error::Cap(_) => 4,
            Error::Io(_) | Error::Csv(_) => 4,
        }
    }
}
