use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("Fock index {index} exceeds the supported range (max {max})")]
    CutoffOverflow { index: usize, max: usize },

    #[error("source Fock index {index} is not supported (max {max})")]
    InvalidIndex { index: usize, max: usize },

    #[error("no photon-number cutoff up to {max_cutoff} brings the tail mass below {tail_tol:e}")]
    TruncationFailure { max_cutoff: usize, tail_tol: f64 },

    #[error("negative probability {value:e} at photon number {index}")]
    NegativeProbability { index: usize, value: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("click probability {0:e} is too small to condition on")]
    ZeroClickProbability(f64),

    #[error("reflected-mode cutoff {cutoff} leaves tail mass {tail:e}")]
    CutoffInsufficient { cutoff: usize, tail: f64 },

    #[error("ratio undefined: {0}")]
    UndefinedRatio(&'static str),

    #[error("degenerate cell (ps = {ps}, pc = {pc}): {reason}")]
    DegenerateCell { ps: f64, pc: f64, reason: &'static str },

    #[error("negative radicand {0:e} in the classical projection")]
    NegativeRadicand(f64),

    #[error("count ordering violated: need 0 <= nc <= ns <= n, got nc = {nc}, ns = {ns}, n = {n}")]
    CountOrdering { ns: u64, nc: u64, n: u64 },

    #[error("summation window of {size} terms exceeds the limit of {limit}")]
    WindowOverflow { size: u64, limit: u64 },

    #[error("critical value search failed: {0}")]
    Infeasible(String),

    #[error("stopping probability did not reach 1 - {tolerance:e} before N = {max_runs}")]
    NonConvergence { max_runs: u64, tolerance: f64 },

    #[error("objective could not be evaluated anywhere on the search grid")]
    InfeasibleRegion,

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by hitting a configured resource ceiling.
    pub fn is_resource_exhaustion(&self) -> bool {
        matches!(
            self,
            Error::WindowOverflow { .. }
                | Error::TruncationFailure { .. }
                | Error::NonConvergence { .. }
                | Error::CutoffOverflow { .. }
        )
    }
}
