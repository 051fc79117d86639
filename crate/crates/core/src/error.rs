use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rate domain error: transition `{transition}` returned {value} at t={t}")]
    RateDomain {
        transition: String,
        value: f64,
        t: f64,
    },

    #[error("matrix is not positive semidefinite within tolerance (min pivot {min_pivot:e})")]
    NotPsd { min_pivot: f64 },

    #[error("ODE solution left the admissible region at t={t}: {detail}")]
    OdeBlowUp { t: f64, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside path range [0, {end}]")]
    OutOfRange { t: f64, end: f64 },

    #[error("parameter `{name}` out of domain: {detail}")]
    ParamDomain { name: String, detail: String },

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
