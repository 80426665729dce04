//! Generation sizes Z_n of the branching process: exact distributions by
//! pgf composition, exact support sets, path simulation, and the rooted-tree
//! metric.
//!
//! Everything exact here works on dense vectors indexed over the support
//! lattice [mu^n, nu^n]; operations fail loudly with `SizeCapExceeded` when a
//! request would exceed the configured cap instead of truncating silently.

use rand::Rng;
use serde::Serialize;

use crate::conv::convolve;
use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;

/// Default cap on nu^n for exact computations (number of lattice points).
pub const DEFAULT_SUPPORT_CAP: u64 = 10_000_000;

/// Exact law of Z_n as a dense probability vector on [mu^n, nu^n].
///
/// Entries off the support lattice are zero. Z_0 = 1, so n = 0 gives the
/// point mass at 1.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationPmf {
    pub n: u32,
    /// Minimum support point mu^n; probs[i] is the mass at offset + i.
    pub offset: u64,
    pub probs: Vec<f64>,
    pub total_mass: f64,
}

impl GenerationPmf {
    pub fn prob(&self, m: u64) -> f64 {
        if m < self.offset {
            return 0.0;
        }
        self.probs
            .get((m - self.offset) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn max_point(&self) -> u64 {
        self.offset + self.probs.len() as u64 - 1
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (self.offset + i as u64) as f64 * p)
            .sum()
    }

    /// Nonzero rows (m, probability), in increasing m.
    pub fn nonzero(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(move |(i, &p)| (self.offset + i as u64, p))
    }

    /// Evaluate the generating polynomial E x^{Z_n} at x.
    pub fn pgf_at(&self, x: f64) -> f64 {
        // Horner from the top of the support down to the offset.
        let mut acc = 0.0;
        for &p in self.probs.iter().rev() {
            acc = acc * x + p;
        }
        acc * x.powi(self.offset as i32)
    }
}

fn checked_pow(base: u64, exp: u32) -> u128 {
    (base as u128).pow(exp)
}

fn cap_check(n: u32, required: u128, cap: u64) -> Result<()> {
    if required > cap as u128 {
        Err(Error::SizeCapExceeded { n, required, cap })
    } else {
        Ok(())
    }
}

/// Exact distribution of Z_n by composing offspring convolution powers:
/// pmf_{j+1} = Σ_k p_k (pmf_j)^{*k}.
pub fn exact_generation_pmf(
    dist: &OffspringDistribution,
    n: u32,
    cap: u64,
) -> Result<GenerationPmf> {
    cap_check(n, checked_pow(dist.nu(), n), cap)?;

    let mut offset = 1u64;
    let mut probs = vec![1.0f64];
    for _ in 0..n {
        let new_offset = dist.mu() * offset;
        let top = dist.nu() * (offset + probs.len() as u64 - 1);
        let mut acc = vec![0.0f64; (top - new_offset + 1) as usize];

        // Incremental convolution powers q_k = probs^{*k}, k = 1..=nu.
        let mut q = probs.clone();
        let mut q_offset = offset;
        for k in 1..=dist.nu() {
            if k > 1 {
                q = convolve(&q, &probs, usize::MAX >> 1);
                q_offset += offset;
            }
            let p_k = dist.prob(k);
            if p_k > 0.0 {
                let shift = (q_offset - new_offset) as usize;
                for (slot, &v) in acc[shift..shift + q.len()].iter_mut().zip(&q) {
                    *slot += p_k * v;
                }
            }
        }
        offset = new_offset;
        probs = acc;
    }

    let total_mass = probs.iter().sum();
    Ok(GenerationPmf {
        n,
        offset,
        probs,
        total_mass,
    })
}

/// Exact support of Z_n, no floating point involved.
///
/// Sets are tracked on the lattice mu^j + g·Z (g the support gcd), with a
/// fast path when a set is a full lattice interval; two-point offspring laws
/// stay on that path for every generation.
pub fn support(dist: &OffspringDistribution, n: u32, cap: u64) -> Result<Vec<u64>> {
    cap_check(n, checked_pow(dist.nu(), n), cap)?;
    if dist.is_degenerate() {
        return Ok(vec![dist.mu().pow(n)]);
    }
    let g = dist.lattice_gcd().max(1);
    let mut current = LatticeSet::from_points(&[1], g);
    for _ in 0..n {
        // next = union over k in support of the k-fold sumset of current.
        let mut power = current.clone();
        let mut next: Option<LatticeSet> = None;
        for k in 1..=dist.nu() {
            if k > 1 {
                power = power.sumset(&current);
            }
            if dist.prob(k) > 0.0 {
                next = Some(match next {
                    None => power.clone(),
                    Some(acc) => acc.union(&power),
                });
            }
        }
        current = next.expect("nonempty support");
    }
    Ok(current.points())
}

/// The arithmetic-progression set {m : mu^n ≤ m ≤ nu^n, m ≡ mu^n (mod d)},
/// d = nu - mu. A guaranteed subset of the exact support.
pub fn lattice_lower_bound_set(
    dist: &OffspringDistribution,
    n: u32,
    cap: u64,
) -> Result<Vec<u64>> {
    if dist.is_degenerate() {
        return Err(Error::DegenerateDistribution);
    }
    let lo = checked_pow(dist.mu(), n);
    let hi = checked_pow(dist.nu(), n);
    let d = dist.span() as u128;
    cap_check(n, (hi - lo) / d + 1, cap)?;

    let mut out = Vec::with_capacity(((hi - lo) / d + 1) as usize);
    let mut m = lo;
    while m <= hi {
        out.push(m as u64);
        m += d;
    }
    Ok(out)
}

/// log P(Z_n = mu^n): every individual in every generation must have minimal
/// offspring, which costs p_mu once per individual.
pub fn log_minimal_generation_probability(dist: &OffspringDistribution, n: u32) -> f64 {
    let log_p = dist.prob(dist.mu()).ln();
    if dist.mu() == 1 {
        n as f64 * log_p
    } else {
        // 1 + mu + ... + mu^{n-1} individuals draw offspring.
        let mu = dist.mu() as f64;
        ((mu.powi(n as i32) - 1.0) / (mu - 1.0)) * log_p
    }
}

/// P(Z_n = mu^n) = p_mu^{(mu^n - 1)/(mu - 1)} (p_1^n when mu = 1).
pub fn minimal_generation_probability(dist: &OffspringDistribution, n: u32) -> f64 {
    log_minimal_generation_probability(dist, n).exp()
}

/// Simulate one path (Z_0, ..., Z_n). Each generation draws the multinomial
/// offspring counts of all current individuals at once, which realizes the
/// same law as summing individual draws.
pub fn simulate_generations<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    n: u32,
    rng: &mut R,
) -> Result<Vec<u128>> {
    let mut path = Vec::with_capacity(n as usize + 1);
    let mut z: u128 = 1;
    path.push(z);
    for gen in 0..n {
        if z > u64::MAX as u128 {
            return Err(Error::Overflow(format!("Z_{gen} = {z} exceeds u64")));
        }
        let counts = dist.sample_counts(z as u64, rng);
        z = dist
            .support()
            .iter()
            .zip(&counts)
            .map(|(&k, &c)| k as u128 * c as u128)
            .sum();
        path.push(z);
    }
    Ok(path)
}

/// Ordered rooted tree; only the shape matters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootedTree {
    pub children: Vec<RootedTree>,
}

impl RootedTree {
    pub fn leaf() -> Self {
        RootedTree {
            children: Vec::new(),
        }
    }

    pub fn depth(&self) -> u32 {
        self.children
            .iter()
            .map(|c| c.depth() + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn node_count(&self) -> u64 {
        1 + self.children.iter().map(RootedTree::node_count).sum::<u64>()
    }
}

/// Grow a full Galton–Watson tree to the given depth.
pub fn simulate_tree<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    depth: u32,
    rng: &mut R,
) -> RootedTree {
    if depth == 0 {
        return RootedTree::leaf();
    }
    let k = dist.sample(rng);
    let children = (0..k).map(|_| simulate_tree(dist, depth - 1, rng)).collect();
    RootedTree { children }
}

/// The regular tree where every node has exactly `arity` children.
pub fn regular_tree(arity: u64, depth: u32) -> RootedTree {
    if depth == 0 {
        return RootedTree::leaf();
    }
    let child = regular_tree(arity, depth - 1);
    RootedTree {
        children: vec![child; arity as usize],
    }
}

/// Metric d(T1, T2) = e^{-n}, with n the largest generation up to which the
/// trees coincide as ordered trees; 0 if the truncations to the smaller of
/// the two depths are identical. The comparison never looks below that
/// common truncation depth.
pub fn tree_distance(a: &RootedTree, b: &RootedTree) -> f64 {
    let trunc = a.depth().min(b.depth());
    let mut frontier_a = vec![a];
    let mut frontier_b = vec![b];
    for level in 1..=trunc {
        let counts_a: Vec<usize> = frontier_a.iter().map(|t| t.children.len()).collect();
        let counts_b: Vec<usize> = frontier_b.iter().map(|t| t.children.len()).collect();
        if counts_a != counts_b {
            return (-((level - 1) as f64)).exp();
        }
        frontier_a = frontier_a
            .iter()
            .flat_map(|t| t.children.iter())
            .collect();
        frontier_b = frontier_b
            .iter()
            .flat_map(|t| t.children.iter())
            .collect();
    }
    0.0
}

/// Set of integers on the lattice lo + g·i, as bitmap plus interval fast path.
#[derive(Debug, Clone)]
struct LatticeSet {
    lo: u64,
    g: u64,
    bits: Vec<bool>,
}

impl LatticeSet {
    fn from_points(points: &[u64], g: u64) -> Self {
        let lo = *points.iter().min().unwrap();
        let hi = *points.iter().max().unwrap();
        let mut bits = vec![false; ((hi - lo) / g + 1) as usize];
        for &p in points {
            debug_assert!((p - lo) % g == 0);
            bits[((p - lo) / g) as usize] = true;
        }
        LatticeSet { lo, g, bits }
    }

    fn is_full_interval(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    fn sumset(&self, other: &Self) -> Self {
        debug_assert_eq!(self.g, other.g);
        let lo = self.lo + other.lo;
        let len = self.bits.len() + other.bits.len() - 1;
        if self.is_full_interval() && other.is_full_interval() {
            // Interval + interval on the same lattice is an interval.
            return LatticeSet {
                lo,
                g: self.g,
                bits: vec![true; len],
            };
        }
        let mut bits = vec![false; len];
        for (i, &bi) in self.bits.iter().enumerate() {
            if !bi {
                continue;
            }
            for (j, &bj) in other.bits.iter().enumerate() {
                if bj {
                    bits[i + j] = true;
                }
            }
        }
        LatticeSet { lo, g: self.g, bits }
    }

    fn union(&self, other: &Self) -> Self {
        debug_assert_eq!(self.g, other.g);
        debug_assert_eq!((self.lo.max(other.lo) - self.lo.min(other.lo)) % self.g, 0);
        let lo = self.lo.min(other.lo);
        let hi = (self.lo + (self.bits.len() as u64 - 1) * self.g)
            .max(other.lo + (other.bits.len() as u64 - 1) * other.g);
        let mut bits = vec![false; ((hi - lo) / self.g + 1) as usize];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                bits[((self.lo - lo) / self.g) as usize + i] = true;
            }
        }
        for (i, &b) in other.bits.iter().enumerate() {
            if b {
                bits[((other.lo - lo) / self.g) as usize + i] = true;
            }
        }
        LatticeSet { lo, g: self.g, bits }
    }

    fn points(&self) -> Vec<u64> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.lo + i as u64 * self.g)
            .collect()
    }
}
