use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("scene generation gave up after {attempts} placement attempts")]
    GenerationFailure { attempts: usize },

    #[error("agent {agent} has no {sensor}")]
    SensorAbsent { agent: usize, sensor: &'static str },

    #[error("grid specs do not match")]
    SpecMismatch,

    #[error("attention needs at least one key")]
    EmptyKeySet,

    #[error("invalid config at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
