use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("observation outside the alphabet: symbol {symbol} with {n_states} states")]
    SymbolOutOfRange { symbol: usize, n_states: usize },

    /// An observation that has probability zero under the declared prescription.
    #[error("degenerate conditioning: conditioning event has mass {mass:e}")]
    DegenerateConditioning { mass: f64 },

    #[error("truncation overflow: mass {mass} deviates from 1 by more than {tol:e}")]
    TruncationOverflow { mass: f64, tol: f64 },

    #[error("grid mismatch: ({n_a} points, half-width {l_a}) vs ({n_b} points, half-width {l_b})")]
    GridMismatch { n_a: usize, l_a: f64, n_b: usize, l_b: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("guard violation: {0}")]
    Guard(String),

    #[error("node budget exceeded: more than {budget} belief nodes")]
    BudgetExceeded { budget: usize },

    #[error("missing successor value at t={t}")]
    MissingSuccessor { t: usize },

    #[error("threshold structure violated at t={t}, s={s}: {sign_changes} sign changes of J0-J1 on e >= 0")]
    StructureViolation { t: usize, s: usize, sign_changes: usize },

    #[error("information set reached with positive probability but missing from profile: {0}")]
    MissingInfoSet(String),

    #[error("belief replay miss at t={t}: belief not present in the solution graph")]
    BeliefKeyMiss { t: usize },

    #[error("policy horizon {policy} shorter than requested horizon {requested}")]
    HorizonMismatch { policy: usize, requested: usize },
}
