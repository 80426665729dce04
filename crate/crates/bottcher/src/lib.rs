//! Numerical laboratory for the lower tail of Galton–Watson martingale
//! limits.
//!
//! A supercritical Galton–Watson process with offspring law N (no
//! extinction, finite support) has generation sizes Z_n ~ W a^n with a = E N
//! and W the martingale limit. Conditioning on {W < eps} for small eps forces
//! the tree toward the regular mu-ary tree, mu the essential minimum of N.
//! This crate makes the machinery behind that statement computable:
//!
//! * [`offspring`] — the offspring law and its derived constants
//!   (mu, nu, d, a, and the Böttcher constant beta with a^beta = mu);
//! * [`generation`] — exact laws and supports of Z_n, path and tree
//!   simulation, the tree metric d(T1,T2) = e^{-n};
//! * [`laplace`] — the Laplace transform phi(s) = E e^{-sW}, the scaling
//!   function k(s) = lim a^{-n beta} log phi(s a^n), and its slope constant;
//! * [`tail`] — the Fenchel dual k*, the multiplicatively periodic tail
//!   function M with -log P(W < x) ≈ M(x) x^{-beta/(1-beta)}, the gap
//!   functional M(eps/b) b^{1/(1-beta)} - M(eps), near-constancy diagnostics,
//!   and the mu = 1 power-tail exponent tau;
//! * [`conditioning`] — exact dynamic programming and tilted Monte Carlo
//!   estimates of P(Z_k = mu^k | Z_n/a^n < eps).

pub mod conditioning;
pub mod conv;
pub mod error;
pub mod generation;
pub mod laplace;
pub mod offspring;
pub mod rng;
pub mod tail;

pub use error::{Error, Result};
pub use offspring::OffspringDistribution;
