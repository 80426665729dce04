//! Lower-tail machinery for the martingale limit W.
//!
//! For mu > 1 the tail is stretched-exponential: with gamma = beta/(1-beta),
//!
//!   -log P(W < x) = M(x) x^{-gamma} + o(x^{-gamma}),   x -> 0,
//!
//! where M is multiplicatively periodic with period a^{1-beta} = a/mu and is
//! built here constructively from the Fenchel dual of the scaling function:
//! M(x) = k*(-x) x^{gamma}, k*(y) = sup_{s>0} {y s - k(s)}. The gap
//! functional M(eps/b) b^{1/(1-beta)} - M(eps) drives the conditioning
//! principle; its strict positivity for b bounded away from 1 is checked
//! numerically by [`gap_infimum`].
//!
//! For mu = 1 the tail is polynomial of order tau = -log p_1 / log a.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::laplace::{
    estimate_delta, hermite, k_function, periodic_pchip_slopes, DeltaEstimate, IterationConfig,
};
use crate::offspring::OffspringDistribution;

/// sup_{s > 0} { y·s - k(s) } for y in (-delta, 0), delta the working slope
/// bound from [`estimate_delta`]. Strictly positive on its domain.
///
/// The objective is strictly concave (k is strictly convex), so a bracketed
/// golden-section search needs no multistart.
pub fn k_dual(dist: &OffspringDistribution, y: f64, cfg: &IterationConfig) -> Result<f64> {
    let delta = estimate_delta(dist, cfg)?;
    k_dual_with_delta(dist, y, delta.delta, cfg)
}

/// Same as [`k_dual`] with a precomputed delta bound (used by the tabulated
/// tail function to avoid re-estimating delta per grid point).
pub fn k_dual_with_delta(
    dist: &OffspringDistribution,
    y: f64,
    delta: f64,
    cfg: &IterationConfig,
) -> Result<f64> {
    if !(y < 0.0 && y > -delta) {
        return Err(Error::DomainError(format!(
            "dual argument y = {y} outside (-{delta}, 0)"
        )));
    }
    let objective = |s: f64| -> Result<f64> { Ok(y * s - k_function(dist, s, cfg)?) };

    // Expand a geometric triple (lo, mid, hi) until the middle dominates.
    let mut lo = 0.5;
    let mut mid = 1.0;
    let mut hi = 2.0;
    let mut f_lo = objective(lo)?;
    let mut f_mid = objective(mid)?;
    let mut f_hi = objective(hi)?;
    let mut expansions = 0;
    while f_mid < f_lo || f_mid < f_hi {
        if expansions >= 60 {
            return Err(Error::BracketFailure { y });
        }
        expansions += 1;
        if f_lo > f_mid {
            hi = mid;
            f_hi = f_mid;
            mid = lo;
            f_mid = f_lo;
            lo *= 0.5;
            f_lo = objective(lo)?;
        } else {
            lo = mid;
            f_lo = f_mid;
            mid = hi;
            f_mid = f_hi;
            hi *= 2.0;
            f_hi = objective(hi)?;
        }
    }

    // Golden-section to relative width 1e-8.
    const INV_PHI2: f64 = 0.381_966_011_250_105_1; // (3 - sqrt 5)/2
    let mut x1 = lo + INV_PHI2 * (hi - lo);
    let mut x2 = hi - INV_PHI2 * (hi - lo);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    while hi - lo > 1e-8 * (lo.abs() + hi.abs()) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = hi - INV_PHI2 * (hi - lo);
            f2 = objective(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = lo + INV_PHI2 * (hi - lo);
            f1 = objective(x1)?;
        }
    }
    Ok(f1.max(f2))
}

/// The periodic tail function M over one multiplicative period, with exact
/// periodic reduction and shape-preserving interpolation everywhere else.
#[derive(Debug, Clone)]
pub struct TailFunction {
    dist: OffspringDistribution,
    beta: f64,
    /// gamma = beta/(1-beta), the tail exponent.
    gamma: f64,
    /// Multiplicative period a^{1-beta}.
    period: f64,
    /// Base grid covers [x0, x0·period).
    x0: f64,
    x_grid: Vec<f64>,
    m_values: Vec<f64>,
    m_slopes: Vec<f64>,
    pub delta: DeltaEstimate,
    cfg: IterationConfig,
}

impl TailFunction {
    pub const DEFAULT_POINTS: usize = 256;

    pub fn build(
        dist: &OffspringDistribution,
        points: usize,
        cfg: &IterationConfig,
    ) -> Result<Self> {
        assert!(points >= 8, "grid needs at least 8 points");
        if dist.is_degenerate() {
            return Err(Error::DegenerateDistribution);
        }
        if dist.mu() == 1 {
            return Err(Error::NotBoettcherCase);
        }
        let beta = dist.beta();
        let gamma = beta / (1.0 - beta);
        let period = dist.mean().powf(1.0 - beta);
        let delta = estimate_delta(dist, cfg)?;
        // Keep the whole base period strictly inside the domain where the
        // dual is directly computable; 0.9 guards against slope-bound error.
        let x0 = 1.0f64.min(0.9 * delta.delta / period);

        let log_period = period.ln();
        let mut x_grid = Vec::with_capacity(points);
        let mut m_values = Vec::with_capacity(points);
        for i in 0..points {
            let x = x0 * (log_period * i as f64 / points as f64).exp();
            let dual = k_dual_with_delta(dist, -x, delta.delta, cfg)?;
            x_grid.push(x);
            m_values.push(dual * x.powf(gamma));
        }
        let m_slopes = periodic_pchip_slopes(&m_values, log_period / points as f64);

        Ok(Self {
            dist: dist.clone(),
            beta,
            gamma,
            period,
            x0,
            x_grid,
            m_values,
            m_slopes,
            delta,
            cfg: *cfg,
        })
    }

    pub fn dist(&self) -> &OffspringDistribution {
        &self.dist
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Tail exponent beta/(1-beta).
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Multiplicative period a^{1-beta}.
    pub fn period(&self) -> f64 {
        self.period
    }

    /// M(x) for any x > 0: reduce into the base period by exact
    /// multiplicative periodicity, then interpolate.
    pub fn m_eval(&self, x: f64) -> f64 {
        assert!(x > 0.0 && x.is_finite(), "M argument must be positive");
        let points = self.m_values.len();
        let r = (x.ln() - self.x0.ln()) / self.period.ln();
        let frac = r - r.floor();
        let pos = frac * points as f64;
        let i = (pos as usize).min(points - 1);
        let theta = pos - i as f64;
        let j = (i + 1) % points;
        let h = self.period.ln() / points as f64;
        hermite(
            self.m_values[i],
            self.m_slopes[i],
            self.m_values[j],
            self.m_slopes[j],
            h,
            theta,
        )
    }

    /// M computed directly from the dual, without the grid; only valid while
    /// x stays inside the working domain (0, 0.9·delta).
    pub fn m_direct(&self, x: f64) -> Result<f64> {
        let dual = k_dual_with_delta(&self.dist, -x, self.delta.delta, &self.cfg)?;
        Ok(dual * x.powf(self.gamma))
    }

    /// Grid rows (x, M(x), M(x)·x^{-gamma}); the last column is the predicted
    /// -log P(W < x).
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.x_grid
            .iter()
            .zip(&self.m_values)
            .map(|(&x, &m)| (x, m, m * x.powf(-self.gamma)))
    }
}

/// Leading term of -log P(W_1 + ... + W_m < x): m·M(x/m)·(x/m)^{-gamma}.
pub fn tail_log_prediction(tf: &TailFunction, m: u64, x: f64) -> f64 {
    assert!(m >= 1);
    let per_copy = x / m as f64;
    m as f64 * tf.m_eval(per_copy) * per_copy.powf(-tf.gamma)
}

/// Gap functional M(eps/b)·b^{1/(1-beta)} - M(eps).
pub fn gap(tf: &TailFunction, eps: f64, b: f64) -> f64 {
    assert!(eps > 0.0 && b >= 1.0);
    tf.m_eval(eps / b) * b.powf(1.0 / (1.0 - tf.beta)) - tf.m_eval(eps)
}

/// Grid minimum of the gap functional.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub b0: f64,
    pub b_max: f64,
    pub eps_points: usize,
    pub b_points: usize,
    pub infimum: f64,
    pub argmin_eps: f64,
    pub argmin_b: f64,
    /// Whether the analytic one-sided bound min(M)·b_max^{1/(1-beta)} - max(M)
    /// already dominates the grid minimum, so enlarging b beyond b_max cannot
    /// produce a smaller gap.
    pub beyond_bound_ok: bool,
}

/// Minimize the gap functional over one eps period × [b0, b_max].
///
/// By periodicity of M, scanning eps over a single period is exhaustive. A
/// non-positive result is a legitimate return value (it would falsify the
/// tail pipeline), not an error.
pub fn gap_infimum(
    tf: &TailFunction,
    b0: f64,
    eps_points: usize,
    b_points: usize,
    b_max: f64,
) -> GapReport {
    assert!(b0 > 1.0, "b0 must exceed 1");
    assert!(b_max >= b0);
    let mut infimum = f64::INFINITY;
    let mut argmin_eps = f64::NAN;
    let mut argmin_b = f64::NAN;
    for i in 0..eps_points {
        let eps = tf.x0 * (tf.period.ln() * i as f64 / eps_points as f64).exp();
        for j in 0..b_points {
            let b = if b_points == 1 {
                b0
            } else {
                b0 * (b_max / b0).powf(j as f64 / (b_points - 1) as f64)
            };
            let value = gap(tf, eps, b);
            if value < infimum {
                infimum = value;
                argmin_eps = eps;
                argmin_b = b;
            }
        }
    }
    let m_min = tf.m_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let m_max = tf.m_values.iter().cloned().fold(0.0f64, f64::max);
    let beyond = m_min * b_max.powf(1.0 / (1.0 - tf.beta)) - m_max;
    GapReport {
        b0,
        b_max,
        eps_points,
        b_points,
        infimum,
        argmin_eps,
        argmin_b,
        beyond_bound_ok: beyond >= infimum,
    }
}

/// Power-tail exponent tau = -log p_1 / log a for mu = 1.
pub fn tau(dist: &OffspringDistribution) -> Result<f64> {
    if dist.is_degenerate() {
        return Err(Error::DegenerateDistribution);
    }
    if dist.mu() != 1 {
        return Err(Error::NotFatTailCase);
    }
    Ok(-dist.prob(1).ln() / dist.mean().ln())
}

/// How flat M is over its period.
#[derive(Debug, Clone, Serialize)]
pub struct NearConstancyReport {
    pub m_min: f64,
    pub m_max: f64,
    /// max M / min M ≥ 1.
    pub oscillation_ratio: f64,
    /// Amplitude of the first Fourier harmonic of M in log-x over one period.
    pub first_harmonic_amplitude: f64,
    /// Minimum relative per-step decrease of M(x)·x^{-1/(1-beta)} across two
    /// periods; ≥ 0 means the product is non-increasing on the grid.
    pub monotonicity_margin: f64,
}

pub fn near_constancy_report(tf: &TailFunction) -> NearConstancyReport {
    let n = tf.m_values.len();
    let m_min = tf.m_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let m_max = tf.m_values.iter().cloned().fold(0.0f64, f64::max);

    let (mut re, mut im) = (0.0f64, 0.0f64);
    for (j, &m) in tf.m_values.iter().enumerate() {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
        re += m * theta.cos();
        im -= m * theta.sin();
    }
    let first_harmonic_amplitude = 2.0 * (re * re + im * im).sqrt() / n as f64;

    // M(x)·x^{-1/(1-beta)} across two periods.
    let exponent = -1.0 / (1.0 - tf.beta);
    let mut margin = f64::INFINITY;
    let steps = 2 * n;
    let mut prev = f64::NAN;
    for i in 0..=steps {
        let x = tf.x0 * (tf.period.ln() * i as f64 / n as f64).exp();
        let g = tf.m_eval(x) * x.powf(exponent);
        if prev.is_finite() {
            margin = margin.min((prev - g) / prev);
        }
        prev = g;
    }

    NearConstancyReport {
        m_min,
        m_max,
        oscillation_ratio: m_max / m_min,
        first_harmonic_amplitude,
        monotonicity_margin: margin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::ScalingFunction;

    fn dist(pairs: &[(u64, f64)]) -> OffspringDistribution {
        OffspringDistribution::new(&pairs.iter().copied().collect()).unwrap()
    }

    fn cfg() -> IterationConfig {
        IterationConfig::default()
    }

    fn two_three() -> OffspringDistribution {
        dist(&[(2, 0.5), (3, 0.5)])
    }

    #[test]
    fn dual_is_sup_over_linear_witnesses() {
        let d = two_three();
        let y = -0.1;
        let dual = k_dual(&d, y, &cfg()).unwrap();
        assert!(dual > 0.0);
        for i in 0..100 {
            let s = 1e-3 * (1e6f64).powf(i as f64 / 99.0);
            let witness = y * s - k_function(&d, s, &cfg()).unwrap();
            assert!(dual >= witness - 1e-9 * dual.abs(), "s={s}");
        }
    }

    #[test]
    fn dual_matches_dense_grid_search() {
        let d = two_three();
        let sf = ScalingFunction::build(&d, 512, &cfg()).unwrap();
        for y in [-0.05, -0.1, -0.5] {
            let dual = k_dual(&d, y, &cfg()).unwrap();
            let mut best = f64::NEG_INFINITY;
            for i in 0..100_000 {
                let s = 1e-4 * (1e12f64).powf(i as f64 / 99_999.0);
                best = best.max(y * s - sf.eval_k(s));
            }
            assert!(
                (dual - best).abs() <= 1e-6 * dual.abs(),
                "y={y}: {dual} vs {best}"
            );
        }
    }

    #[test]
    fn dual_scaling_identity() {
        let d = two_three();
        let a = d.mean();
        let factor = a.powf(d.beta());
        for y in [-0.05, -0.2, -0.8] {
            let lhs = k_dual(&d, y * a.powf(d.beta() - 1.0), &cfg()).unwrap();
            let rhs = factor * k_dual(&d, y, &cfg()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-5 * rhs.abs(), "y={y}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn dual_domain_errors() {
        let d = two_three();
        assert!(matches!(
            k_dual(&d, 0.0, &cfg()),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            k_dual(&d, -1e9, &cfg()),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn tail_function_positive_and_periodic() {
        let d = two_three();
        let tf = TailFunction::build(&d, 128, &cfg()).unwrap();

        // Positivity over three decades.
        for i in 0..1000 {
            let x = 1e-2 * (1e3f64).powf(i as f64 / 999.0);
            assert!(tf.m_eval(x) > 0.0, "x={x}");
        }

        // Exact periodic reduction: grid-based values repeat exactly.
        for i in 0..50 {
            let x = 0.3 * (2.0f64).powf(i as f64 / 49.0);
            let lhs = tf.m_eval(x * tf.period());
            let rhs = tf.m_eval(x);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs, "x={x}");
        }

        // Periodicity of the underlying dual-route values.
        for i in 0..20 {
            let x = tf.x0 * (tf.period().ln() * i as f64 / 20.0).exp();
            let direct = tf.m_direct(x).unwrap();
            let shifted = tf.m_direct(x * tf.period()).unwrap();
            assert!(
                (shifted - direct).abs() <= 1e-4 * direct,
                "x={x}: {direct} vs {shifted}"
            );
            // Interpolated values match direct computation closely.
            assert!((tf.m_eval(x) - direct).abs() <= 1e-6 * direct);
        }
    }

    #[test]
    fn prediction_reduces_and_scales() {
        let d = two_three();
        let tf = TailFunction::build(&d, 128, &cfg()).unwrap();
        let x = 0.4;
        let single = tail_log_prediction(&tf, 1, x);
        assert!((single - tf.m_eval(x) * x.powf(-tf.gamma())).abs() < 1e-12);
        // prediction(m, m x) = m * prediction(1, x).
        for m in [2u64, 3, 7] {
            let lhs = tail_log_prediction(&tf, m, m as f64 * x);
            let rhs = m as f64 * single;
            assert!((lhs - rhs).abs() < 1e-9 * rhs, "m={m}");
        }
    }

    #[test]
    fn gap_identities() {
        let d = two_three();
        let tf = TailFunction::build(&d, 128, &cfg()).unwrap();
        let a = d.mean();
        assert_eq!(gap(&tf, 0.7, 1.0), 0.0);
        // b = period: periodicity turns the gap into (a-1)·M(eps).
        for eps in [0.2, 0.5, 0.9] {
            let lhs = gap(&tf, eps, tf.period());
            let rhs = (a - 1.0) * tf.m_eval(eps);
            assert!((lhs - rhs).abs() <= 1e-9 * rhs, "eps={eps}");
            assert!(lhs > 0.0);
        }
        // Positive for b bounded away from 1.
        for i in 0..16 {
            let eps = 0.1 * (10.0f64).powf(i as f64 / 15.0);
            for j in 0..16 {
                let b = 1.05 * (4.0f64).powf(j as f64 / 15.0);
                assert!(gap(&tf, eps, b) > 0.0, "eps={eps} b={b}");
            }
        }
    }

    #[test]
    fn gap_infimum_positive_and_stable() {
        let d = two_three();
        let tf = TailFunction::build(&d, 128, &cfg()).unwrap();
        let b0 = 1.0 + 2.0f64.powi(-3);
        let b_max = tf.period() * b0;
        let coarse = gap_infimum(&tf, b0, 128, 32, b_max);
        assert!(coarse.infimum > 0.0);
        assert!(coarse.beyond_bound_ok);
        let fine = gap_infimum(&tf, b0, 256, 64, b_max);
        assert!(
            (fine.infimum - coarse.infimum).abs() <= 0.05 * coarse.infimum,
            "{} vs {}",
            fine.infimum,
            coarse.infimum
        );
        // At b0 = period the infimum dominates (a-1)·min M.
        let m_min = tf.m_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let at_period = gap_infimum(&tf, tf.period(), 64, 16, tf.period() * tf.period());
        assert!(at_period.infimum >= (d.mean() - 1.0) * m_min - 1e-9);
    }

    #[test]
    fn tau_values_and_regimes() {
        let d = dist(&[(1, 0.5), (2, 0.5)]);
        let t = tau(&d).unwrap();
        assert!((t - 2.0f64.ln() / 1.5f64.ln()).abs() < 1e-12);
        assert!((t - 1.70951).abs() < 1e-5);

        let skewed = dist(&[(1, 0.9), (2, 0.1)]);
        let t = tau(&skewed).unwrap();
        assert!((t - (-(0.9f64.ln()) / 1.1f64.ln())).abs() < 1e-12);
        assert!((t - 1.10544).abs() < 1e-5);

        assert!(matches!(tau(&two_three()), Err(Error::NotFatTailCase)));
        assert!(matches!(
            tau(&dist(&[(1, 1.0)])),
            Err(Error::DegenerateDistribution)
        ));
    }

    #[test]
    fn near_constancy_diagnostics() {
        let d = two_three();
        let tf = TailFunction::build(&d, 128, &cfg()).unwrap();
        let report = near_constancy_report(&tf);
        assert!(report.oscillation_ratio >= 1.0);
        assert!(report.m_min > 0.0);
        assert!(report.monotonicity_margin >= -1e-8, "{report:?}");
        assert!(report.first_harmonic_amplitude >= 0.0);
        // The oscillation is small but the report only records it.
        assert!(report.oscillation_ratio < 2.0);
    }

    #[test]
    fn tail_function_rejects_wrong_regimes() {
        assert!(matches!(
            TailFunction::build(&dist(&[(1, 0.5), (2, 0.5)]), 64, &cfg()),
            Err(Error::NotBoettcherCase)
        ));
        assert!(matches!(
            TailFunction::build(&dist(&[(3, 1.0)]), 64, &cfg()),
            Err(Error::DegenerateDistribution)
        ));
    }
}
