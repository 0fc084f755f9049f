use thiserror::Error;

/// Errors raised while building schedules, synthesizing precoders or decoding.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("inconsistent linear system: residual {residual:.3e} exceeds threshold {threshold:.3e}")]
    InconsistentSystem { residual: f64, threshold: f64 },

    #[error("rank deficient system: rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("precoder synthesis failed: {0}")]
    SynthesisFailed(String),

    #[error("antenna deficit: relays provide {available} precoder dimensions, {required} required")]
    AntennaDeficit { required: usize, available: usize },

    #[error("invalid user count {got}: at least {min} users required")]
    InvalidUserCount { got: usize, min: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl Error {
    /// True for errors that mean the requested network cannot be served
    /// (as opposed to malformed input).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::AntennaDeficit { .. }
                | Error::SynthesisFailed(_)
                | Error::RankDeficient { .. }
                | Error::InconsistentSystem { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
