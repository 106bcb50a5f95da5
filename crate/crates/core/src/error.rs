use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid direction ({x}, {y}, {z}): must be finite and non-zero")]
    InvalidDirection { x: f64, y: f64, z: f64 },

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("invalid correlation: {0}")]
    InvalidCorrelation(String),

    #[error("invalid packet: {0}")]
    InvalidPacket(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("closed-form g requires box regions; use quadrature or Monte Carlo for spheres")]
    AnalyticUnavailable,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("LP failure: {0}")]
    Lp(#[from] crate::lp::LpError),

    #[error("no LHV mixture reproduces the targets at g = {g}; Bell certificate violation {violation:.6e}")]
    ForgeryInfeasible { g: f64, violation: f64 },

    #[error("no key material: key group is empty after dropping no-click trials")]
    NoKeyMaterial,

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("estimators disagree: {0}")]
    EstimatorDisagreement(String),

    #[error("session inconclusive")]
    Inconclusive,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 config, 2 I/O, 3 estimator disagreement,
    /// 4 LP diagnostic, 5 inconclusive.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Lp(_) | Error::ForgeryInfeasible { .. } => 4,
            Error::EstimatorDisagreement(_) => 3,
            Error::Inconclusive => 5,
            Error::Io(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}
