//! Offspring law of a Galton–Watson process.
//!
//! The law of the offspring count N lives on a finite set of positive
//! integers (no extinction: P(N=0) = 0). Construction derives every constant
//! the other modules need: the essential minimum mu, the maximum nu, the span
//! d = nu - mu, the mean a = E N, and the Böttcher constant beta solving
//! a^beta = mu.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Tolerance on the input probability sum; inputs are re-normalized to exact
/// unit mass after passing this check.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Finite-support offspring distribution with derived constants.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    support: Vec<u64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    mu: u64,
    nu: u64,
    span: u64,
    lattice_gcd: u64,
    mean: f64,
    beta: f64,
    degenerate: bool,
}

#[derive(Deserialize)]
struct PmfSpec {
    pmf: BTreeMap<String, f64>,
}

impl OffspringDistribution {
    /// Build a distribution from a pmf on positive integers.
    ///
    /// Keys must be ≥ 1, values strictly positive, and the values must sum to
    /// 1 within [`NORMALIZATION_TOL`]; they are then re-normalized exactly.
    pub fn new(pmf: &BTreeMap<u64, f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        for (&k, &p) in pmf {
            if k == 0 {
                return Err(Error::InvalidSupport("key 0".to_string()));
            }
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::InvalidProbability { k, p });
            }
        }
        let sum: f64 = pmf.values().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { sum });
        }

        let support: Vec<u64> = pmf.keys().copied().collect();
        let probs: Vec<f64> = pmf.values().map(|&p| p / sum).collect();
        let log_probs: Vec<f64> = probs.iter().map(|&p| p.ln()).collect();
        let mu = support[0];
        let nu = *support.last().unwrap();
        let span = nu - mu;
        let lattice_gcd = support.iter().fold(0u64, |g, &k| gcd(g, k - mu));
        let mean: f64 = support
            .iter()
            .zip(&probs)
            .map(|(&k, &p)| k as f64 * p)
            .sum();
        let degenerate = mu == nu;
        // a^beta = mu; the degenerate case a = mu gets beta = 1 by continuity.
        let beta = if degenerate {
            1.0
        } else {
            (mu as f64).ln() / mean.ln()
        };

        Ok(Self {
            support,
            probs,
            log_probs,
            mu,
            nu,
            span,
            lattice_gcd,
            mean,
            beta,
            degenerate,
        })
    }

    /// Parse the JSON spec `{"pmf": {"2": 0.5, "3": 0.5}}`.
    pub fn from_json_spec(text: &str) -> Result<Self> {
        let spec: PmfSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let mut pmf = BTreeMap::new();
        for (key, value) in spec.pmf {
            let k: u64 = key
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSupport(format!("key `{key}`")))?;
            if pmf.insert(k, value).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate key {k}")));
            }
        }
        Self::new(&pmf)
    }

    /// Inline JSON spec equivalent to this distribution (for report metadata).
    pub fn to_json_spec(&self) -> String {
        let entries: Vec<String> = self
            .support
            .iter()
            .zip(&self.probs)
            .map(|(k, p)| format!("\"{k}\": {p}"))
            .collect();
        format!("{{\"pmf\": {{{}}}}}", entries.join(", "))
    }

    pub fn support(&self) -> &[u64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, k: u64) -> f64 {
        match self.support.binary_search(&k) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }

    pub fn log_prob(&self, k: u64) -> f64 {
        match self.support.binary_search(&k) {
            Ok(i) => self.log_probs[i],
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Essential minimum of the support.
    pub fn mu(&self) -> u64 {
        self.mu
    }

    /// Maximum of the support.
    pub fn nu(&self) -> u64 {
        self.nu
    }

    /// Span d = nu - mu.
    pub fn span(&self) -> u64 {
        self.span
    }

    /// Gcd of {k - mu : k in support}; the support of Z_n lives on
    /// mu^n + (this)·Z. Equals the span for two-point laws, 0 when degenerate.
    pub fn lattice_gcd(&self) -> u64 {
        self.lattice_gcd
    }

    /// Mean offspring number a = E N.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Böttcher constant beta with a^beta = mu. Zero iff mu = 1, in (0,1) for
    /// non-degenerate mu > 1, and 1 for point masses.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Probability generating function f(x) = Σ p_k x^k on [0, 1].
    pub fn pgf(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::DomainError(format!("pgf argument {x} outside [0,1]")));
        }
        Ok(self
            .support
            .iter()
            .zip(&self.probs)
            .map(|(&k, &p)| p * x.powi(k as i32))
            .sum())
    }

    /// log f(e^L) for L ≤ 0, stable across the whole range.
    ///
    /// Near L = 0 this uses log1p(Σ p_k expm1(kL)) so the tiny result keeps
    /// full relative precision; once f(e^L) drops below 1/2 it switches to
    /// log p_mu + mu·L + log1p(correction), which is the log-sum-exp form
    /// anchored at the dominant term. For L → -inf the value is asymptotically
    /// log p_mu + mu·L.
    pub fn log_pgf(&self, log_x: f64) -> f64 {
        debug_assert!(log_x <= 0.0 || log_x.is_nan());
        if log_x == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        // Near-one branch: f(e^L) - 1 as a sum of same-sign small terms.
        let g: f64 = self
            .support
            .iter()
            .zip(&self.probs)
            .map(|(&k, &p)| p * (k as f64 * log_x).exp_m1())
            .sum();
        if g > -0.5 {
            return g.ln_1p();
        }
        // Deep branch: anchor on the minimal support point.
        let anchor = self.log_probs[0] + self.mu as f64 * log_x;
        let correction: f64 = self
            .support
            .iter()
            .zip(&self.log_probs)
            .skip(1)
            .map(|(&k, &lp)| (lp - self.log_probs[0] + (k - self.mu) as f64 * log_x).exp())
            .sum();
        anchor + correction.ln_1p()
    }

    /// Draw one offspring count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (&k, &p) in self.support.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.nu
    }

    /// Draw the per-support-point counts of `trials` iid offspring draws
    /// (a multinomial sample via a chain of binomials). Summing
    /// k·counts[k] reproduces the law of a sum of `trials` iid copies of N.
    pub fn sample_counts<R: Rng + ?Sized>(&self, trials: u64, rng: &mut R) -> Vec<u64> {
        let mut counts = vec![0u64; self.support.len()];
        let mut remaining = trials;
        let mut mass_left = 1.0;
        for i in 0..self.support.len() {
            if remaining == 0 {
                break;
            }
            if i + 1 == self.support.len() {
                counts[i] = remaining;
                break;
            }
            let p = (self.probs[i] / mass_left).clamp(0.0, 1.0);
            let draw = Binomial::new(remaining, p)
                .expect("binomial probability in [0,1]")
                .sample(rng);
            counts[i] = draw;
            remaining -= draw;
            mass_left -= self.probs[i];
        }
        counts
    }

    /// Tilted law q with q_mu = 1 - eta and the remaining mass spread over the
    /// other support points proportionally to p. Used by the importance
    /// sampler; eta = 0 or a degenerate law returns the original law.
    pub fn tilted(&self, eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::DomainError(format!("tilt eta {eta} outside [0,1)")));
        }
        if self.degenerate || eta == 0.0 {
            return Ok(self.clone());
        }
        let rest = 1.0 - self.probs[0];
        let mut pmf = BTreeMap::new();
        pmf.insert(self.mu, 1.0 - eta);
        for (&k, &p) in self.support.iter().zip(&self.probs).skip(1) {
            pmf.insert(k, eta * p / rest);
        }
        Self::new(&pmf)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}
