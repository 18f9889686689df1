//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GrapeError>;

#[derive(Debug, Error)]
pub enum GrapeError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Importance ratio pi/mu requested where mu is zero but pi is not.
    #[error("undefined importance ratio at state {x}, action {a}: mu = 0 while pi > 0")]
    UndefinedRatio { x: usize, a: usize },

    /// KL(pi || pi_old) diverges because pi_old assigns zero mass where pi does not.
    #[error("infinite KL at state {x}, action {a}: reference policy has zero probability")]
    InfiniteKl { x: usize, a: usize },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("chain does not absorb from the requested start: {0}")]
    NonAbsorbing(String),

    #[error("environment: {0}")]
    Env(String),

    #[error("replay buffer: {0}")]
    Buffer(String),
}
