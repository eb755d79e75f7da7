use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid word: {0}")]
    InvalidWord(String),

    #[error("map {index} is not contracting (operator norm {norm} >= 1)")]
    NotContracting { index: usize, norm: f64 },

    #[error("map {index} is singular (smallest singular value is 0)")]
    SingularMap { index: usize },

    #[error("exact enumeration of {words} words exceeds the cap of {cap}; use the Monte Carlo estimator")]
    EnumerationTooLarge { words: f64, cap: u64 },

    #[error("inconclusive at level {n}: pressure root {root} is within 2 standard errors ({stderr}) of the target at s = {s}")]
    Inconclusive { n: usize, s: f64, root: f64, stderr: f64 },

    #[error("target {target} is outside the achievable interval [{lo}, {hi}]")]
    NoSolution { target: f64, lo: f64, hi: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("truncation tolerance not achieved at maximum depth {depth}: bound {bound}")]
    TruncationNotAchieved { depth: usize, bound: f64 },

    #[error("degenerate system: {0}")]
    DegenerateSystem(String),

    #[error("exponent t = {0} is an integer; the energy bound needs non-integral t")]
    IntegralExponent(f64),

    #[error("degenerate pair: {0}")]
    DegeneratePair(String),

    #[error("only {usable} usable scales, at least {needed} are required")]
    InsufficientScales { usable: usize, needed: usize },

    #[error("distribution {0} is not admissible: {1}")]
    Inadmissible(String, String),
}

impl Error {
    /// Stable machine-readable identifier used in CLI error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "invalid-matrix",
            Error::Domain(_) => "domain",
            Error::InvalidWord(_) => "invalid-word",
            Error::NotContracting { .. } => "not-contracting",
            Error::SingularMap { .. } => "singular-map",
            Error::EnumerationTooLarge { .. } => "enumeration-too-large",
            Error::Inconclusive { .. } => "inconclusive",
            Error::NoSolution { .. } => "no-solution",
            Error::Input(_) => "input",
            Error::TruncationNotAchieved { .. } => "truncation-not-achieved",
            Error::DegenerateSystem(_) => "degenerate-system",
            Error::IntegralExponent(_) => "integral-exponent",
            Error::DegeneratePair(_) => "degenerate-pair",
            Error::InsufficientScales { .. } => "insufficient-scales",
            Error::Inadmissible(..) => "inadmissible-distribution",
        }
    }
}
