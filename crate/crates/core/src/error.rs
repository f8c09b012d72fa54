use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model singularity was reached (zero contact load, gimbal lock, singular mass matrix).
    #[error("singularity: {0}")]
    Singularity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The backward pass could not make Q_uu positive definite below the regularization cap.
    #[error("backward pass failed: Q_uu not positive definite with regularization {reg:.3e}")]
    NotPositiveDefinite { reg: f64 },

    #[error("non-finite value during {0}")]
    NonFinite(String),

    #[error("fit error: {0}")]
    Fit(String),

    /// The design matrix of a linear fit is rank deficient.
    #[error("rank deficient design: {0}")]
    Rank(String),

    /// An error tagged with the pipeline stage it came from.
    #[error("{stage}: {inner}")]
    Stage { stage: &'static str, inner: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            inner: Box::new(self),
        }
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
