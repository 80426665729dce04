//! Laplace transform of the martingale limit and the Böttcher scaling
//! function.
//!
//! With f the offspring pgf and a = E N, the transform phi(s) = E e^{-sW}
//! satisfies the Poincaré functional equation phi(a s) = f(phi(s)), so
//! phi(s) = lim_n f^{∘n}(e^{-s a^{-n}}). For mu > 1 the scaling function
//!
//!   k(s) = lim_n a^{-n beta} log phi(s a^n),   a^beta = mu,
//!
//! is finite, strictly negative, convex, decreasing, and satisfies the exact
//! scaling k(a s) = a^beta k(s); equivalently k(s) = v(s) s^beta for a
//! multiplicatively periodic factor v with period a.
//!
//! All iteration runs in log coordinates through
//! [`OffspringDistribution::log_pgf`]: iterates are exact near 1 via
//! expm1/log1p and anchored on the dominant term deep in the tail, so the
//! only error growth is one rounding per composition step.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;

/// Tolerances and depth limits for the fixed-point iterations.
#[derive(Debug, Clone, Copy)]
pub struct IterationConfig {
    /// Relative tolerance on successive iterates of log phi.
    pub phi_tol: f64,
    /// Relative tolerance on successive rescaled iterates of k.
    pub k_rel_tol: f64,
    /// Maximum composition depth.
    pub max_depth: u32,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            phi_tol: 1e-12,
            k_rel_tol: 1e-10,
            max_depth: 64,
        }
    }
}

/// log phi(s), phi(s) = E e^{-sW}.
pub fn phi_log(dist: &OffspringDistribution, s: f64, cfg: &IterationConfig) -> Result<f64> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::DomainError(format!("phi argument s = {s}")));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let a = dist.mean();
    let at_depth = |n: u32| -> f64 {
        let mut log_x = -s * a.powi(-(n as i32));
        for _ in 0..n {
            log_x = dist.log_pgf(log_x);
        }
        log_x
    };
    // Composition error decays geometrically like a^{-n}: the n vs 2n
    // residual sits at the depth-n error, and the depth-2n value is a
    // further factor a^{-n} closer to the limit. Doubling the depth until
    // the residual (or its geometric extrapolation) clears the tolerance
    // costs about twice the final depth.
    //
    // phi_tol is absolute on phi itself; on top of it the log value is
    // polished to 1e-9 relative while the depth budget lasts, so k and the
    // tail never see junk in deep-tail logs.
    let mut depth = 1;
    let mut prev = at_depth(depth);
    let mut last_abs_ok = None;
    let mut residual = f64::INFINITY;
    while depth < cfg.max_depth {
        let next = (depth * 2).min(cfg.max_depth);
        let current = at_depth(next);
        residual = (current - prev).abs();
        let extrap = a.powi(-(depth as i32)) * 2.0;
        let linear_residual = residual * current.exp();
        let abs_ok = linear_residual.min(linear_residual * extrap) <= cfg.phi_tol;
        let rel_target = 1e-9 * current.abs().max(f64::MIN_POSITIVE);
        let rel_ok = residual.min(residual * extrap) <= rel_target;
        if abs_ok && rel_ok {
            return Ok(current);
        }
        if abs_ok {
            last_abs_ok = Some(current);
        }
        prev = current;
        depth = next;
    }
    last_abs_ok.ok_or(Error::ConvergenceFailure { s, residual })
}

/// phi(s) = E e^{-sW}; decreasing in s with phi(0) = 1.
pub fn phi(dist: &OffspringDistribution, s: f64, cfg: &IterationConfig) -> Result<f64> {
    phi_log(dist, s, cfg).map(f64::exp)
}

/// k(s) together with the iteration depth used and the final residual.
pub fn k_function_detail(
    dist: &OffspringDistribution,
    s: f64,
    cfg: &IterationConfig,
) -> Result<(f64, u32, f64)> {
    if dist.is_degenerate() {
        return Err(Error::DegenerateDistribution);
    }
    if dist.mu() == 1 {
        return Err(Error::NotBoettcherCase);
    }
    if !s.is_finite() || s <= 0.0 {
        return Err(Error::DomainError(format!("k argument s = {s}")));
    }
    let mu = dist.mu() as f64;
    // Reduce s into [1, a) through the exact identity k(a s) = mu·k(s), so
    // phi is only ever iterated at moderate arguments.
    let a = dist.mean();
    let shift = (s.ln() / a.ln()).floor();
    let s_reduced = s * a.powf(-shift);
    let prefactor = mu.powf(shift);

    // Once iterates are deep enough that log f(e^L) = log p_mu + mu L holds
    // to roundoff, the remaining tail of the recursion sums exactly to
    // log(p_mu)/(mu - 1); folding it in at every step turns the slow
    // 1/mu^j approach to the limit into a fast one.
    let tail_sum = dist.log_prob(dist.mu()) / (mu - 1.0);

    let mut log_phi = phi_log(dist, s_reduced, cfg)?;
    let mut scale = 1.0; // mu^j
    let mut prev = (log_phi + tail_sum) / scale;
    let mut residual = f64::INFINITY;
    for depth in 1..=cfg.max_depth {
        log_phi = dist.log_pgf(log_phi);
        scale *= mu;
        let current = (log_phi + tail_sum) / scale;
        residual = (current - prev).abs();
        if residual <= cfg.k_rel_tol * current.abs() {
            return Ok((prefactor * current, depth, residual));
        }
        prev = current;
    }
    Err(Error::ConvergenceFailure { s, residual })
}

/// Scaling function k(s) = lim a^{-n beta} log phi(s a^n), strictly negative.
pub fn k_function(dist: &OffspringDistribution, s: f64, cfg: &IterationConfig) -> Result<f64> {
    k_function_detail(dist, s, cfg).map(|(k, _, _)| k)
}

/// Outcome of the slope-at-zero estimation for k.
///
/// The scaling identity makes |k'| grow like s^{beta-1} as s drops, so the
/// finite-difference ladder typically keeps growing instead of stabilizing;
/// `converged` records whether two successive rungs agreed, and callers use
/// the final (smallest-s, largest) estimate as the working domain bound for
/// the Fenchel dual.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DeltaEstimate {
    /// Estimate of -k'(s) at the last ladder point.
    pub delta: f64,
    /// Whether two successive ladder estimates agreed to 1e-3 relative.
    pub converged: bool,
    /// The smallest s the ladder reached.
    pub s_reached: f64,
}

/// Estimate delta = -lim_{s -> 0} k'(s) by one-sided differences at
/// geometrically decreasing s.
pub fn estimate_delta(dist: &OffspringDistribution, cfg: &IterationConfig) -> Result<DeltaEstimate> {
    const S_START: f64 = 1e-2;
    const S_MIN: f64 = 1e-8;
    const STEP: f64 = 1e-4;
    const AGREE_TOL: f64 = 1e-3;

    let slope = |s: f64| -> Result<f64> {
        let k0 = k_function(dist, s, cfg)?;
        let k1 = k_function(dist, s * (1.0 + STEP), cfg)?;
        Ok(-(k1 - k0) / (s * STEP))
    };

    let mut s = S_START;
    let mut prev = slope(s)?;
    loop {
        let s_next = s * 0.5;
        if s_next < S_MIN {
            return Ok(DeltaEstimate {
                delta: prev,
                converged: false,
                s_reached: s,
            });
        }
        let current = slope(s_next)?;
        if (current - prev).abs() <= AGREE_TOL * current.abs() {
            return Ok(DeltaEstimate {
                delta: current,
                converged: true,
                s_reached: s_next,
            });
        }
        prev = current;
        s = s_next;
    }
}

/// Tabulated k over one multiplicative period [s0, a s0), extended everywhere
/// by the exact scaling identity.
///
/// Interpolation runs on the periodic factor v(s) = k(s) s^{-beta} in log s
/// coordinates (shape-preserving cubic); v is near-constant, so this is far
/// better conditioned than interpolating k itself.
#[derive(Debug, Clone)]
pub struct ScalingFunction {
    beta: f64,
    s0: f64,
    log_a: f64,
    s_grid: Vec<f64>,
    k_values: Vec<f64>,
    v_values: Vec<f64>,
    v_slopes: Vec<f64>,
    pub delta: DeltaEstimate,
    /// Iteration metadata over the grid build.
    pub max_depth_used: u32,
    pub max_residual: f64,
}

impl ScalingFunction {
    pub const DEFAULT_POINTS: usize = 512;

    pub fn build(
        dist: &OffspringDistribution,
        points: usize,
        cfg: &IterationConfig,
    ) -> Result<Self> {
        assert!(points >= 8, "grid needs at least 8 points");
        let s0 = 1.0;
        let log_a = dist.mean().ln();
        let beta = dist.beta();

        let mut s_grid = Vec::with_capacity(points);
        let mut k_values = Vec::with_capacity(points);
        let mut v_values = Vec::with_capacity(points);
        let mut max_depth_used = 0;
        let mut max_residual: f64 = 0.0;
        for i in 0..points {
            let s = s0 * (log_a * i as f64 / points as f64).exp();
            let (k, depth, residual) = k_function_detail(dist, s, cfg)?;
            s_grid.push(s);
            k_values.push(k);
            v_values.push(k * s.powf(-beta));
            max_depth_used = max_depth_used.max(depth);
            max_residual = max_residual.max(residual);
        }
        let v_slopes = periodic_pchip_slopes(&v_values, log_a / points as f64);
        let delta = estimate_delta(dist, cfg)?;

        Ok(Self {
            beta,
            s0,
            log_a,
            s_grid,
            k_values,
            v_values,
            v_slopes,
            delta,
            max_depth_used,
            max_residual,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Periodic factor v(s) = k(s) s^{-beta}.
    pub fn eval_v(&self, s: f64) -> f64 {
        assert!(s > 0.0 && s.is_finite());
        let points = self.v_values.len();
        let r = (s.ln() - self.s0.ln()) / self.log_a;
        let frac = r - r.floor();
        let pos = frac * points as f64;
        let i = (pos as usize).min(points - 1);
        let theta = pos - i as f64;
        let j = (i + 1) % points;
        let h = self.log_a / points as f64;
        hermite(
            self.v_values[i],
            self.v_slopes[i],
            self.v_values[j],
            self.v_slopes[j],
            h,
            theta,
        )
    }

    /// k(s) anywhere on (0, inf), via the periodic factor.
    pub fn eval_k(&self, s: f64) -> f64 {
        self.eval_v(s) * s.powf(self.beta)
    }

    /// Grid rows (s, k(s), v(s)) for serialization.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.s_grid
            .iter()
            .zip(&self.k_values)
            .zip(&self.v_values)
            .map(|((&s, &k), &v)| (s, k, v))
    }
}

/// Cubic Hermite basis on [0, 1] with knot spacing h.
pub(crate) fn hermite(y0: f64, m0: f64, y1: f64, m1: f64, h: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + m0 * h * (t3 - 2.0 * t2 + t)
        + y1 * (-2.0 * t3 + 3.0 * t2)
        + m1 * h * (t3 - t2)
}

/// Fritsch–Carlson slopes for a uniformly spaced periodic data set:
/// harmonic mean of neighboring secants, zero at local extrema. Keeps the
/// interpolant free of overshoot.
pub(crate) fn periodic_pchip_slopes(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let secant =
        |i: usize| -> f64 { (values[(i + 1) % n] - values[i]) / h };
    (0..n)
        .map(|i| {
            let left = secant((i + n - 1) % n);
            let right = secant(i);
            if left * right <= 0.0 {
                0.0
            } else {
                2.0 * left * right / (left + right)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(pairs: &[(u64, f64)]) -> OffspringDistribution {
        OffspringDistribution::new(&pairs.iter().copied().collect()).unwrap()
    }

    fn cfg() -> IterationConfig {
        IterationConfig::default()
    }

    #[test]
    fn phi_at_zero_and_monotone() {
        let d = dist(&[(2, 0.5), (3, 0.5)]);
        assert_eq!(phi(&d, 0.0, &cfg()).unwrap(), 1.0);
        let mut prev = 1.0;
        for i in 1..=20 {
            let s = i as f64 * 0.5;
            let value = phi(&d, s, &cfg()).unwrap();
            assert!(value > 0.0 && value < prev, "s={s}");
            prev = value;
        }
        assert!(phi(&d, -1.0, &cfg()).is_err());
    }

    #[test]
    fn phi_degenerate_is_exponential() {
        // f(x) = x^3 gives W ≡ 1, so phi(s) = e^{-s}.
        let d = dist(&[(3, 1.0)]);
        let value = phi(&d, 2.0, &cfg()).unwrap();
        assert!((value - (-2.0f64).exp()).abs() < 1e-13, "{value}");
    }

    #[test]
    fn phi_satisfies_functional_equation() {
        for d in [
            dist(&[(2, 0.5), (3, 0.5)]),
            dist(&[(2, 0.2), (5, 0.8)]),
            dist(&[(1, 0.5), (2, 0.5)]),
        ] {
            let a = d.mean();
            for i in 0..40 {
                let s = 1e-2 * (1e4f64).powf(i as f64 / 39.0);
                let lhs = phi(&d, a * s, &cfg()).unwrap();
                let rhs = d.pgf(phi(&d, s, &cfg()).unwrap()).unwrap();
                assert!((lhs - rhs).abs() < 1e-10, "s={s}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn phi_log_convex_in_s() {
        // Laplace transforms of positive variables are log-convex.
        let d = dist(&[(2, 0.5), (3, 0.5)]);
        let ss: Vec<f64> = (0..60).map(|i| 1e-1 * 1.1f64.powi(i)).collect();
        let ls: Vec<f64> = ss
            .iter()
            .map(|&s| phi_log(&d, s, &cfg()).unwrap())
            .collect();
        for w in ss.windows(3).zip(ls.windows(3)) {
            let (s, l) = w;
            // Convexity of log phi in s on an uneven grid.
            let lam = (s[1] - s[0]) / (s[2] - s[0]);
            let chord = (1.0 - lam) * l[0] + lam * l[2];
            assert!(l[1] <= chord + 1e-12);
        }
    }

    #[test]
    fn mean_normalization_at_small_s() {
        // E W = 1: (1 - phi(s))/s -> 1 as s -> 0.
        for d in [dist(&[(2, 0.5), (3, 0.5)]), dist(&[(1, 0.5), (2, 0.5)])] {
            let s = 1e-6;
            let ratio = -phi_log(&d, s, &cfg()).unwrap().exp_m1() / s;
            assert!((ratio - 1.0).abs() < 1e-4, "{ratio}");
        }
    }

    #[test]
    fn k_rejects_wrong_regimes() {
        assert!(matches!(
            k_function(&dist(&[(1, 0.5), (2, 0.5)]), 1.0, &cfg()),
            Err(Error::NotBoettcherCase)
        ));
        assert!(matches!(
            k_function(&dist(&[(3, 1.0)]), 1.0, &cfg()),
            Err(Error::DegenerateDistribution)
        ));
        assert!(matches!(
            k_function(&dist(&[(2, 0.5), (3, 0.5)]), 0.0, &cfg()),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn k_negative_and_decreasing() {
        let d = dist(&[(2, 0.5), (3, 0.5)]);
        let k1 = k_function(&d, 1.0, &cfg()).unwrap();
        let k2 = k_function(&d, 2.0, &cfg()).unwrap();
        assert!(k2 < k1 && k1 < 0.0, "k(1)={k1}, k(2)={k2}");
    }

    #[test]
    fn k_scaling_identity() {
        let d = dist(&[(2, 0.5), (3, 0.5)]);
        let a = d.mean();
        let factor = a.powf(d.beta());
        for s in [0.5, 1.0, 2.0] {
            let lhs = k_function(&d, a * s, &cfg()).unwrap();
            let rhs = factor * k_function(&d, s, &cfg()).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-6 * rhs.abs(),
                "s={s}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn k_matches_slow_unaccelerated_oracle() {
        // Oracle: a^{-n beta} log phi(s a^n) with a plain 60-deep composition.
        let d = dist(&[(2, 0.5), (3, 0.5)]);
        let s = 1.0;
        let mut log_phi = phi_log(&d, s, &cfg()).unwrap();
        for _ in 0..60 {
            log_phi = d.log_pgf(log_phi);
        }
        let oracle = log_phi / (d.mu() as f64).powi(60);
        let fast = k_function(&d, s, &cfg()).unwrap();
        assert!(
            (fast - oracle).abs() <= 1e-6 * oracle.abs(),
            "{fast} vs {oracle}"
        );
    }

    #[test]
    fn delta_positive_and_regime_errors() {
        let d = dist(&[(2, 0.5), (3, 0.5)]);
        let est = estimate_delta(&d, &cfg()).unwrap();
        assert!(est.delta > 0.0);
        assert!(est.s_reached <= 1e-2);
        assert!(matches!(
            estimate_delta(&dist(&[(3, 1.0)]), &cfg()),
            Err(Error::DegenerateDistribution)
        ));
        assert!(matches!(
            estimate_delta(&dist(&[(1, 0.5), (2, 0.5)]), &cfg()),
            Err(Error::NotBoettcherCase)
        ));
    }

    #[test]
    fn delta_ladder_grows_toward_small_s() {
        // The scaling identity forces |k'(s)| ~ s^{beta-1}: successive ladder
        // estimates should keep growing rather than stabilize.
        let d = dist(&[(2, 0.5), (3, 0.5)]);
        let slope = |s: f64| {
            let k0 = k_function(&d, s, &cfg()).unwrap();
            let k1 = k_function(&d, s * (1.0 + 1e-4), &cfg()).unwrap();
            -(k1 - k0) / (s * 1e-4)
        };
        assert!(slope(1e-4) > slope(1e-2));
        let est = estimate_delta(&d, &cfg()).unwrap();
        assert!(!est.converged);
    }

    #[test]
    fn scaling_function_grid_and_interpolation() {
        let d = dist(&[(2, 0.5), (3, 0.5)]);
        let sf = ScalingFunction::build(&d, 128, &cfg()).unwrap();
        assert!(sf.delta.delta > 0.0);

        // Grid values strictly negative and decreasing.
        let ks: Vec<f64> = sf.rows().map(|(_, k, _)| k).collect();
        for w in ks.windows(2) {
            assert!(w[1] < w[0] && w[0] < 0.0);
        }

        // Extension by the scaling identity reproduces direct evaluation.
        let a = d.mean();
        for i in 0..24 {
            let s = 0.2 * (50.0f64).powf(i as f64 / 23.0);
            let direct = k_function(&d, s, &cfg()).unwrap();
            let tabulated = sf.eval_k(s);
            assert!(
                (tabulated - direct).abs() <= 1e-6 * direct.abs(),
                "s={s}: {tabulated} vs {direct}"
            );
            let scaled = sf.eval_k(a * s) / sf.eval_k(s);
            assert!((scaled - a.powf(d.beta())).abs() < 1e-6 * a.powf(d.beta()));
        }

        // Convex along the periodically extended grid.
        let ss: Vec<f64> = (0..200).map(|i| 0.5 * (4.0 * a * a / 0.5f64).powf(i as f64 / 199.0)).collect();
        let ks: Vec<f64> = ss.iter().map(|&s| sf.eval_k(s)).collect();
        for i in 1..ss.len() - 1 {
            let lam = (ss[i] - ss[i - 1]) / (ss[i + 1] - ss[i - 1]);
            let chord = (1.0 - lam) * ks[i - 1] + lam * ks[i + 1];
            assert!(ks[i] <= chord + 1e-9 * ks[i].abs());
        }
    }
}
