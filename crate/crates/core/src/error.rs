use thiserror::Error;

use crate::rng::FlipLedger;

/// Everything that can go wrong while sampling, compiling or enumerating.
#[derive(Debug, Clone, Error)]
pub enum FactoryError {
    /// A trial hit its raw-sample budget. The ledger holds what was consumed up to that point.
    #[error("flip budget of {limit} raw samples exhausted")]
    BudgetExhausted { limit: u64, ledger: FlipLedger },

    #[error("binary expansion failed: {0}")]
    Expansion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported structure: {0}")]
    Unsupported(String),

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("cover error: {0}")]
    Cover(String),

    /// The dyadic sampler drew a depth beyond its certified range.
    #[error("sampled depth {depth} exceeds the certified depth {limit}")]
    DepthExhausted { depth: u32, limit: u32 },
}

impl FactoryError {
    pub fn is_budget(&self) -> bool {
        matches!(self, FactoryError::BudgetExhausted { .. })
    }
}

pub type Result<T> = std::result::Result<T, FactoryError>;
