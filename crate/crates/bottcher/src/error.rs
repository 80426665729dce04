//! Error type shared by all modules.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the crate, from malformed offspring
/// specs to numerical non-convergence.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Offspring pmf given with no support points.
    EmptyDistribution,
    /// A support key is zero, negative or unparseable; support must be ≥ 1.
    InvalidSupport(String),
    /// A pmf value is not a strictly positive finite probability.
    InvalidProbability { k: u64, p: f64 },
    /// Input probabilities do not sum to 1 within tolerance.
    NotNormalized { sum: f64 },
    /// Argument outside the documented domain of an operation.
    DomainError(String),
    /// An exact computation would exceed the configured memory cap.
    SizeCapExceeded { n: u32, required: u128, cap: u64 },
    /// Operation requires a non-degenerate offspring law (p_mu < 1).
    DegenerateDistribution,
    /// Operation requires the Böttcher regime mu > 1.
    NotBoettcherCase,
    /// Operation requires the fat-tail regime mu = 1.
    NotFatTailCase,
    /// Iteration failed to reach the requested tolerance.
    ConvergenceFailure { s: f64, residual: f64 },
    /// Bracket expansion for the concave maximizer ran out of room.
    BracketFailure { y: f64 },
    /// The conditioning event has zero probability at this proxy depth.
    ZeroProbabilityEvent { eps: f64, depth: u32 },
    /// Importance sampling produced no path inside the conditioning event.
    NoAcceptedSamples,
    /// Requested generation size is not in the support of Z_n.
    NotInSupport { m: u64, n: u32 },
    /// Integer overflow in a simulated path or size computation.
    Overflow(String),
    /// Malformed distribution spec (bad JSON, bad keys).
    InvalidSpec(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyDistribution => write!(f, "offspring pmf is empty"),
            Error::InvalidSupport(detail) => {
                write!(f, "invalid support ({detail}); support must be ≥ 1")
            }
            Error::InvalidProbability { k, p } => {
                write!(f, "probability of {k} is {p}; must be finite and > 0")
            }
            Error::NotNormalized { sum } => {
                write!(f, "probabilities sum to {sum}, outside tolerance of 1")
            }
            Error::DomainError(detail) => write!(f, "domain error: {detail}"),
            Error::SizeCapExceeded { n, required, cap } => {
                write!(f, "generation {n} needs support size {required}, over cap {cap}")
            }
            Error::DegenerateDistribution => {
                write!(f, "degenerate offspring law (p_mu = 1) not allowed here")
            }
            Error::NotBoettcherCase => {
                write!(f, "mu = 1: no Böttcher constant; see the tau operation")
            }
            Error::NotFatTailCase => write!(f, "mu > 1: tau is defined only for mu = 1"),
            Error::ConvergenceFailure { s, residual } => {
                write!(f, "iteration at s = {s} stalled with residual {residual:e}")
            }
            Error::BracketFailure { y } => {
                write!(f, "could not bracket the maximizer of y*s - k(s) at y = {y}")
            }
            Error::ZeroProbabilityEvent { eps, depth } => {
                write!(f, "event Z_n/a^n < {eps} is empty at proxy depth {depth}")
            }
            Error::NoAcceptedSamples => {
                write!(f, "no Monte Carlo path hit the conditioning event; increase samples or tilt")
            }
            Error::NotInSupport { m, n } => {
                write!(f, "m = {m} is not in the support of Z_{n}")
            }
            Error::Overflow(detail) => write!(f, "integer overflow: {detail}"),
            Error::InvalidSpec(detail) => write!(f, "invalid distribution spec: {detail}"),
        }
    }
}

impl std::error::Error for Error {}
