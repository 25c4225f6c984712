use thiserror::Error;

/// Library-wide error type.
///
/// The variants map onto the CLI exit-code contract: `Model` and `Domain` are
/// configuration problems (exit 2), `Regime` means the requested computation is
/// undefined for the model's thermodynamic regime (exit 3), `Numeric` and
/// `Budget` are runtime failures of the numerics themselves (exit 4).
#[derive(Debug, Error)]
pub enum Error {
    /// The model specification is structurally invalid.
    #[error("invalid model: {0}")]
    Model(String),

    /// A parameter is outside its documented range for this model.
    #[error("{0}")]
    Domain(String),

    /// The operation is undefined in the model's regime.
    #[error("regime {regime}: {reason}")]
    Regime { regime: String, reason: String },

    /// A solver or certified computation failed to meet its contract.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A configured resource budget (memory/state space) would be exceeded.
    #[error("budget exceeded: {0}")]
    Budget(String),
}

impl Error {
    pub fn regime(regime: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Regime {
            regime: regime.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
