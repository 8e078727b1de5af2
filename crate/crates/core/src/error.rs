use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid Fock dimension {0} (need at least 2)")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid symmetry sector {mu} for n = {n}")]
    InvalidSector { mu: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncation risk: {0}")]
    Truncation(String),

    #[error("ill-conditioned superposition: lobe overlap {overlap:.4} exceeds 0.99")]
    IllConditionedSuperposition { overlap: f64 },

    #[error("zero-eigenvalue cluster not resolved: next |Re λ| = {next:.3e}")]
    IllResolvedDegeneracy { next: f64 },

    #[error("eigensolver failed: {reason} (residual {residual:.3e})")]
    SolverFailure { reason: String, residual: f64 },

    #[error("formula only valid for 2m > n (n = {n}, m = {m})")]
    OutOfValidity { n: usize, m: usize },

    #[error("singular Jacobian at R = 0 with n < 2")]
    SingularJacobian,

    #[error("no convergence after {iterations} iterations; best bracket [{lo:.6e}, {hi:.6e}]")]
    NonConvergence { iterations: usize, lo: f64, hi: f64 },

    #[error("mandel Q undefined for a state with zero mean photon number")]
    UndefinedQ,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("gap ratio ill-defined: Re λ_{index} vanishes")]
    IllDefinedRatio { index: usize },

    #[error("no metastable manifold: gap ratio {ratio:.3} above threshold {threshold:.3}")]
    NoMetastableManifold { ratio: f64, threshold: f64 },

    #[error("wrong model: {0}")]
    WrongModel(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("sector population starts at {start:.4}, below the fit threshold {threshold:.4}")]
    WindowTooLate { start: f64, threshold: f64 },

    #[error("integration failed: {0}")]
    StiffnessFailure(String),

    #[error("empty metastable window: tau_2 = {tau2:.3e} <= start {start:.3e}")]
    NoWindow { start: f64, tau2: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
