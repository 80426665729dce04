//! Conditioning experiments: what the tree looks like given that the
//! martingale limit is small.
//!
//! W itself is an almost-sure limit, so every estimate here conditions on the
//! computable proxy event {Z_n/a^n < eps}, with the depth n reported next to
//! every number. Exact values come from truncated dynamic programming over
//! generation laws; everything below the threshold is exact, and a separate
//! log scale per vector keeps windows representable even when the actual
//! probabilities are far below the double-precision floor.
//!
//! The key decomposition: conditional on Z_k = m, the process at depth n is a
//! sum of m independent copies of Z_{n-k}, so
//!
//!   P(Z_k = m, Z_n ≤ t) = P(Z_k = m) · P(Z_{n-k}^{(1)} + ... + Z_{n-k}^{(m)} ≤ t).

use rayon::prelude::*;
use serde::Serialize;

use crate::conv::ScaledPmf;
use crate::error::{Error, Result};
use crate::generation::{
    exact_generation_pmf, log_minimal_generation_probability, support,
};
use crate::offspring::OffspringDistribution;
use crate::rng::path_rng;
use crate::tail::{gap, tau, TailFunction};

/// Default cap on the truncated DP window length (entries per vector).
pub const DEFAULT_WINDOW_CAP: u64 = 16_384;

/// Exponential tilt used by the importance sampler: offspring in the first
/// `horizon` generations are drawn with the minimal count boosted to
/// probability 1 - eta.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TiltConfig {
    pub eta: f64,
    /// Generations to tilt; `None` picks ceil(log eps / log(mu/a)).
    pub horizon: Option<u32>,
}

impl Default for TiltConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            horizon: None,
        }
    }
}

fn mu_pow(mu: u64, e: u32) -> u128 {
    (mu as u128).pow(e)
}

/// Threshold for the event {Z_n/a^n < eps}: the largest integer strictly
/// below eps·a^n, or an error when the event is empty or too wide to hold.
fn event_threshold(dist: &OffspringDistribution, n: u32, eps: f64, cap: u64) -> Result<u64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::DomainError(format!("eps = {eps}")));
    }
    let bound = eps * dist.mean().powi(n as i32);
    if bound > u64::MAX as f64 / 2.0 {
        return Err(Error::SizeCapExceeded {
            n,
            required: bound as u128,
            cap,
        });
    }
    let t = (bound.ceil() as u64).saturating_sub(1);
    let floor = mu_pow(dist.mu(), n);
    if (t as u128) < floor {
        return Err(Error::ZeroProbabilityEvent { eps, depth: n });
    }
    let window = t as u128 - floor + 1;
    if window > cap as u128 {
        return Err(Error::SizeCapExceeded {
            n,
            required: window,
            cap,
        });
    }
    Ok(t)
}

/// Law of Z_depth restricted to [mu^depth, trunc], with exact sub-threshold
/// mass.
///
/// Levels are built by the first-generation decomposition
/// pmf_{j+1} = Σ_k p_k (pmf_j)^{*k}. A level-j subtree value v can only
/// appear in a final sum ≤ trunc if v ≤ trunc - mu^depth + mu^j (every one of
/// the other mu^{depth-j}-1 subtrees at that level contributes at least
/// mu^j), so each level is truncated there and the window length stays
/// constant across levels.
pub fn truncated_generation_log_pmf(
    dist: &OffspringDistribution,
    depth: u32,
    trunc: u64,
) -> ScaledPmf {
    let slack = trunc as i128 - mu_pow(dist.mu(), depth) as i128;
    if slack < 0 {
        return ScaledPmf {
            offset: trunc + 1,
            vals: Vec::new(),
            log_scale: 0.0,
        };
    }
    let mut current = ScaledPmf::point(1);
    for level in 0..depth {
        let level_trunc = (slack + mu_pow(dist.mu(), level + 1) as i128) as u64;
        let mut acc: Option<ScaledPmf> = None;
        let mut power = current.clone();
        power.truncate(level_trunc);
        for k in 1..=dist.nu() {
            if k > 1 {
                power = power.convolve_truncated(&current, level_trunc);
            }
            let p = dist.prob(k);
            if p > 0.0 {
                acc = Some(match acc {
                    None => scale_copy(&power, p.ln()),
                    Some(sum) => accumulate(sum, &power, p.ln()),
                });
            }
        }
        current = acc.expect("offspring support is nonempty");
        current.normalize();
    }
    current
}

fn scale_copy(pmf: &ScaledPmf, log_weight: f64) -> ScaledPmf {
    ScaledPmf {
        offset: pmf.offset,
        vals: pmf.vals.clone(),
        log_scale: pmf.log_scale + log_weight,
    }
}

/// acc + e^{log_weight}·pmf, aligning offsets and log scales.
fn accumulate(acc: ScaledPmf, pmf: &ScaledPmf, log_weight: f64) -> ScaledPmf {
    if pmf.is_zero() {
        return acc;
    }
    if acc.is_zero() {
        return scale_copy(pmf, log_weight);
    }
    let pmf_scale = pmf.log_scale + log_weight;
    let offset = acc.offset.min(pmf.offset);
    let end = (acc.offset + acc.vals.len() as u64).max(pmf.offset + pmf.vals.len() as u64);
    let target = acc.log_scale.max(pmf_scale);
    let mut vals = vec![0.0f64; (end - offset) as usize];
    let acc_factor = (acc.log_scale - target).exp();
    let start = (acc.offset - offset) as usize;
    for (slot, &v) in vals[start..].iter_mut().zip(&acc.vals) {
        *slot = v * acc_factor;
    }
    let pmf_factor = (pmf_scale - target).exp();
    let start = (pmf.offset - offset) as usize;
    for (slot, &v) in vals[start..].iter_mut().zip(&pmf.vals) {
        *slot += v * pmf_factor;
    }
    ScaledPmf {
        offset,
        vals,
        log_scale: target,
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// Exact conditional probabilities for one (k, n, eps) cell.
#[derive(Debug, Clone, Serialize)]
pub struct ExactConditional {
    /// P(Z_k = mu^k | Z_n/a^n < eps).
    pub value: f64,
    /// log P(Z_k = mu^k, Z_n ≤ t).
    pub log_numerator: f64,
    /// log P(Z_n ≤ t).
    pub log_denominator: f64,
    /// log P(Z_k > mu^k, Z_n ≤ t), accumulated per generation-k size rather
    /// than by subtraction, so it stays accurate when the conditional is
    /// within roundoff of 1.
    pub log_complement: f64,
    /// Threshold t: the event is {Z_n ≤ t}.
    pub threshold: u64,
    pub depth: u32,
}

/// Exact P(Z_k = mu^k | Z_n/a^n < eps) by truncated convolution DP.
pub fn exact_conditional(
    dist: &OffspringDistribution,
    k: u32,
    n: u32,
    eps: f64,
    cap: u64,
) -> Result<f64> {
    exact_conditional_detail(dist, k, n, eps, cap).map(|d| d.value)
}

/// Full detail of the exact conditional computation.
pub fn exact_conditional_detail(
    dist: &OffspringDistribution,
    k: u32,
    n: u32,
    eps: f64,
    cap: u64,
) -> Result<ExactConditional> {
    if k >= n {
        return Err(Error::DomainError(format!(
            "need k < n, got k = {k}, n = {n}"
        )));
    }
    let t = event_threshold(dist, n, eps, cap)?;
    if dist.is_degenerate() {
        // One tree exists; the event has probability one when feasible.
        return Ok(ExactConditional {
            value: 1.0,
            log_numerator: 0.0,
            log_denominator: 0.0,
            log_complement: f64::NEG_INFINITY,
            threshold: t,
            depth: n,
        });
    }

    let denominator = truncated_generation_log_pmf(dist, n, t);
    let log_denominator = denominator.log_mass();
    if log_denominator == f64::NEG_INFINITY {
        return Err(Error::ZeroProbabilityEvent { eps, depth: n });
    }

    // Numerator: minimal generation k, then mu^k independent subtrees.
    let m0 = mu_pow(dist.mu(), k) as u64;
    let copy_min = mu_pow(dist.mu(), n - k) as u64;
    let base_trunc = t - (m0 - 1) * copy_min;
    let base = truncated_generation_log_pmf(dist, n - k, base_trunc);
    let minimal_sum = base.power_truncated(m0, t, copy_min);
    let log_numerator = log_minimal_generation_probability(dist, k) + minimal_sum.log_mass();

    // Complement: every feasible generation-k size m > mu^k contributes
    // P(Z_k = m)·P(sum of m copies of Z_{n-k} ≤ t); sizes with
    // m·mu^{n-k} > t are impossible and skipped.
    let gen_k = exact_generation_pmf(dist, k, cap)?;
    let m_feasible_max = t / copy_min;
    let mut terms = Vec::new();
    let mut running = minimal_sum;
    let mut m_current = m0;
    for (m, p) in gen_k.nonzero() {
        if m == m0 {
            continue;
        }
        if m > m_feasible_max {
            break;
        }
        while m_current < m {
            running = running.convolve_truncated(&base, t);
            m_current += 1;
        }
        terms.push(p.ln() + running.log_mass());
    }
    let log_complement = log_sum_exp(&terms);

    Ok(ExactConditional {
        value: (log_numerator - log_denominator).exp(),
        log_numerator,
        log_denominator,
        log_complement,
        threshold: t,
        depth: n,
    })
}

/// Self-normalized importance-sampling estimate of the same conditional.
#[derive(Debug, Clone, Serialize)]
pub struct McConditional {
    pub estimate: f64,
    /// 1.96·(delta-method standard error) of the ratio estimate.
    pub ci_halfwidth: f64,
    /// Effective sample size of the accepted, weighted paths.
    pub ess: f64,
    /// Paths that landed inside the conditioning event.
    pub accepted: u64,
    pub samples: u64,
    pub threshold: u64,
    pub depth: u32,
    pub tilt_horizon: u32,
}

/// Kahan-compensated accumulator; used so that the reduction over paths is
/// exactly reproducible and insensitive to summation noise.
#[derive(Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Monte Carlo estimate of P(Z_k = mu^k | Z_n/a^n < eps) with exponential
/// tilting of the first generations toward minimal offspring.
///
/// Paths use independent streams derived from (seed, path index) and the
/// reduction is done in path order, so the result is byte-identical for a
/// fixed seed regardless of how many workers run the paths.
pub fn mc_conditional(
    dist: &OffspringDistribution,
    k: u32,
    n: u32,
    eps: f64,
    samples: u64,
    tilt: &TiltConfig,
    seed: u64,
) -> Result<McConditional> {
    if k >= n {
        return Err(Error::DomainError(format!(
            "need k < n, got k = {k}, n = {n}"
        )));
    }
    if samples == 0 {
        return Err(Error::DomainError("samples must be ≥ 1".to_string()));
    }
    let t = event_threshold(dist, n, eps, u64::MAX / 4)?;
    let horizon = tilt
        .horizon
        .unwrap_or_else(|| {
            let ratio = dist.mu() as f64 / dist.mean();
            if eps >= 1.0 || dist.is_degenerate() {
                0
            } else {
                (eps.ln() / ratio.ln()).ceil().max(0.0) as u32
            }
        })
        .min(n);
    let tilted = dist.tilted(tilt.eta)?;
    let target = mu_pow(dist.mu(), k);

    // log(p/q) per support point of the tilted law.
    let log_ratio: Vec<f64> = dist
        .support()
        .iter()
        .map(|&j| dist.log_prob(j) - tilted.log_prob(j))
        .collect();

    let results: Vec<(f64, bool, bool)> = (0..samples)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path);
            let mut z: u128 = 1;
            let mut log_w = 0.0;
            let mut hit_k = k == 0;
            let mut alive = true;
            for gen in 0..n {
                let law = if gen < horizon { &tilted } else { dist };
                let counts = law.sample_counts(z as u64, &mut rng);
                let mut next: u128 = 0;
                for (i, (&j, &c)) in dist.support().iter().zip(&counts).enumerate() {
                    next += j as u128 * c as u128;
                    if gen < horizon {
                        log_w += c as f64 * log_ratio[i];
                    }
                }
                z = next;
                if gen + 1 == k {
                    hit_k = z == target;
                }
                // Z_n ≥ z·mu^{n-gen-1}: abandon paths that can no longer land
                // below the threshold.
                if z * mu_pow(dist.mu(), n - gen - 1) > t as u128 {
                    alive = false;
                    break;
                }
            }
            let in_event = alive && z <= t as u128;
            (log_w, hit_k && in_event, in_event)
        })
        .collect();

    let mut num = Kahan::default();
    let mut den = Kahan::default();
    let mut den_sq = Kahan::default();
    let mut accepted = 0u64;
    for &(log_w, ab, b) in &results {
        if b {
            let w = log_w.exp();
            accepted += 1;
            den.add(w);
            den_sq.add(w * w);
            if ab {
                num.add(w);
            }
        }
    }
    if accepted == 0 || den.sum <= 0.0 {
        return Err(Error::NoAcceptedSamples);
    }
    let estimate = num.sum / den.sum;
    let mut var = Kahan::default();
    for &(log_w, ab, b) in &results {
        if b {
            let w = log_w.exp();
            let g = w * ((ab as u8 as f64) - estimate * (b as u8 as f64));
            var.add(g * g);
        }
    }
    let se = var.sum.sqrt() / den.sum;
    Ok(McConditional {
        estimate,
        ci_halfwidth: 1.96 * se,
        ess: den.sum * den.sum / den_sq.sum,
        accepted,
        samples,
        threshold: t,
        depth: n,
        tilt_horizon: horizon,
    })
}

/// Configuration for the conditional-probability ladder experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Config {
    pub eps_start: f64,
    pub eps_decades: u32,
    pub points_per_decade: u32,
    /// Monte Carlo samples for entries whose exact window exceeds the cap;
    /// 0 disables the fallback.
    pub samples: u64,
    pub tilt: TiltConfig,
    pub seed: u64,
    pub window_cap: u64,
    /// Proxy depth: smallest n with (mu/a)^n < eps/depth_margin.
    pub depth_margin: f64,
    /// Same for mu = 1, where deeper proxies are cheap and the power-tail
    /// slope needs them.
    pub mu1_depth_margin: f64,
    pub pass_threshold: f64,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self {
            eps_start: 0.8,
            eps_decades: 1,
            points_per_decade: 6,
            samples: 200_000,
            tilt: TiltConfig::default(),
            seed: 1,
            window_cap: DEFAULT_WINDOW_CAP,
            depth_margin: 2.0,
            mu1_depth_margin: 20.0,
            pass_threshold: 0.99,
        }
    }
}

/// One rung of the conditional-probability ladder.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionEntry {
    pub eps: f64,
    pub depth: u32,
    pub threshold: u64,
    pub method: String,
    pub estimate: f64,
    /// CI half-width; zero for exact entries.
    pub ci_halfwidth: f64,
    pub ess: Option<f64>,
    /// log10 P(Z_n/a^n < eps) at this proxy depth.
    pub denominator_log10: f64,
    /// Denominator probability; 0 when it underflows a double.
    pub denominator_prob: f64,
    /// Exact estimate recomputed one proxy level shallower when feasible
    /// (depth-robustness check).
    pub estimate_prev_depth: Option<f64>,
}

/// The eps-ladder report for one distribution and observation generation k.
#[derive(Debug, Clone, Serialize)]
pub struct ConditioningReport {
    pub schema_version: u32,
    pub dist_spec: String,
    pub k: u32,
    pub mu: u64,
    pub regime: String,
    pub config: Theorem1Config,
    pub entries: Vec<ConditionEntry>,
    pub final_estimate: f64,
    /// Non-decreasing within CI noise along the ladder.
    pub monotone: bool,
    pub pass: bool,
    /// mu = 1 extras: the exponent formula and the fitted log-log slope of
    /// the proxy probability.
    pub tau_formula: Option<f64>,
    pub tau_slope: Option<f64>,
}

/// Run the conditional-probability ladder P(Z_k = mu^k | Z_n/a^n < eps) over
/// decreasing eps, exact DP where the window fits and tilted Monte Carlo
/// beyond, and check convergence toward 1.
pub fn theorem1_experiment(
    dist: &OffspringDistribution,
    k: u32,
    config: &Theorem1Config,
) -> Result<ConditioningReport> {
    let mut config = config.clone();
    let points = config.eps_decades * config.points_per_decade;
    let eps_ladder: Vec<f64> = if dist.is_degenerate() {
        // W ≡ 1: the event {W < eps} needs eps > 1, so the ladder descends
        // toward 1 instead of toward 0.
        if config.eps_start <= 1.0 {
            config.eps_start = 2.0;
        }
        (0..=points)
            .map(|i| {
                1.01 * (config.eps_start / 1.01).powf(1.0 - i as f64 / points.max(1) as f64)
            })
            .collect()
    } else {
        (0..=points)
            .map(|i| config.eps_start * 10f64.powf(-(i as f64) / config.points_per_decade as f64))
            .collect()
    };

    let margin = if dist.mu() == 1 {
        config.mu1_depth_margin
    } else {
        config.depth_margin
    };
    let ratio = dist.mu() as f64 / dist.mean();

    let mut entries = Vec::new();
    for &eps in &eps_ladder {
        let min_depth = if dist.is_degenerate() {
            k + 1
        } else {
            (((eps / margin).ln() / ratio.ln()).ceil().max(1.0) as u32).max(k + 1)
        };
        // For mu > 1 the proxy improves with depth, so take the deepest
        // level whose truncated window still fits the cap. For mu = 1 the
        // margin already buys a wide window at tiny cost and extra depth
        // only inflates it, so the margin depth is used as is.
        let mut exact_depth = None;
        let scan_top = if dist.mu() > 1 && !dist.is_degenerate() {
            60
        } else {
            min_depth
        };
        for depth in min_depth..=scan_top {
            match event_threshold(dist, depth, eps, config.window_cap) {
                Ok(_) => exact_depth = Some(depth),
                Err(_) => break,
            }
        }
        let entry = match exact_depth {
            Some(depth) => {
                let detail = exact_conditional_detail(dist, k, depth, eps, config.window_cap)?;
                let estimate_prev_depth = (depth > k + 1)
                    .then(|| exact_conditional(dist, k, depth - 1, eps, config.window_cap).ok())
                    .flatten();
                ConditionEntry {
                    eps,
                    depth,
                    threshold: detail.threshold,
                    method: "exact".to_string(),
                    estimate: detail.value,
                    ci_halfwidth: 0.0,
                    ess: None,
                    denominator_log10: detail.log_denominator / std::f64::consts::LN_10,
                    denominator_prob: detail.log_denominator.exp(),
                    estimate_prev_depth,
                }
            }
            None if config.samples > 0 => {
                let mc = mc_conditional(
                    dist,
                    k,
                    min_depth,
                    eps,
                    config.samples,
                    &config.tilt,
                    config.seed,
                )?;
                ConditionEntry {
                    eps,
                    depth: min_depth,
                    threshold: mc.threshold,
                    method: "mc".to_string(),
                    estimate: mc.estimate,
                    ci_halfwidth: mc.ci_halfwidth,
                    ess: Some(mc.ess),
                    denominator_log10: f64::NAN,
                    denominator_prob: f64::NAN,
                    estimate_prev_depth: None,
                }
            }
            None => {
                return Err(Error::SizeCapExceeded {
                    n: min_depth,
                    required: (eps * dist.mean().powi(min_depth as i32)) as u128,
                    cap: config.window_cap,
                })
            }
        };
        entries.push(entry);
    }

    let final_entry = entries.last().expect("ladder is nonempty");
    let final_estimate = final_entry.estimate;
    let monotone = entries.windows(2).all(|w| {
        w[1].estimate >= w[0].estimate - (w[0].ci_halfwidth + w[1].ci_halfwidth) - 1e-9
    });
    let mut pass = if final_entry.method == "exact" {
        final_estimate > config.pass_threshold
    } else {
        final_estimate + final_entry.ci_halfwidth > config.pass_threshold
    };

    let (tau_formula, tau_slope) = if dist.mu() == 1 && !dist.is_degenerate() {
        let tau_value = tau(dist)?;
        let pts: Vec<(f64, f64)> = entries
            .iter()
            .filter(|e| e.denominator_log10.is_finite())
            .map(|e| (e.eps.ln(), e.denominator_log10 * std::f64::consts::LN_10))
            .collect();
        let slope = fit_slope(&pts);
        if let Some(s) = slope {
            if (s - tau_value).abs() > 0.25 * tau_value {
                pass = false;
            }
        }
        (Some(tau_value), slope)
    } else {
        (None, None)
    };

    Ok(ConditioningReport {
        schema_version: 1,
        dist_spec: dist.to_json_spec(),
        k,
        mu: dist.mu(),
        regime: if dist.is_degenerate() {
            "degenerate".to_string()
        } else if dist.mu() == 1 {
            "fat-tail".to_string()
        } else {
            "boettcher".to_string()
        },
        config,
        entries,
        final_estimate,
        monotone,
        pass: pass && monotone,
        tau_formula,
        tau_slope,
    })
}

/// Least-squares slope of y against x.
fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// One row of the conditioned-vs-unconditioned tail comparison.
#[derive(Debug, Clone, Serialize)]
pub struct GqrksRow {
    pub eps: f64,
    /// Proxy depth used for both probabilities.
    pub proxy_depth: u32,
    /// log P(W < eps) - log P(W < eps | Z_n = m), both from exact DP proxies.
    pub lhs: f64,
    /// Leading term (M(eps mu^n/m)(m/mu^n)^{1/(1-beta)} - M(eps))·eps^{-gamma}.
    pub rhs: f64,
    pub ratio: Option<f64>,
}

/// Comparison of the conditioned tail-probability drop against its periodic
/// leading term.
#[derive(Debug, Clone, Serialize)]
pub struct GqrksReport {
    pub schema_version: u32,
    pub dist_spec: String,
    pub n: u32,
    pub m: u64,
    /// b = m/mu^n ≥ 1.
    pub b: f64,
    /// True when m = mu^n: the leading term vanishes and only the lhs is
    /// reported.
    pub degenerate_bracket: bool,
    pub rows: Vec<GqrksRow>,
    /// |ratio - 1| < 0.25 at the smallest eps (None for the degenerate
    /// bracket).
    pub pass: Option<bool>,
}

/// Check the drop log P(W<eps) - log P(W<eps | Z_n=m) against the tail
/// function prediction over an eps grid, at the deepest feasible proxy depth.
pub fn gqrks_check(
    dist: &OffspringDistribution,
    tf: &TailFunction,
    n: u32,
    m: u64,
    eps_grid: &[f64],
    window_cap: u64,
) -> Result<GqrksReport> {
    if dist.mu() == 1 {
        return Err(Error::NotBoettcherCase);
    }
    if dist.is_degenerate() {
        return Err(Error::DegenerateDistribution);
    }
    let gen_support = support(dist, n, window_cap)?;
    if !gen_support.contains(&m) {
        return Err(Error::NotInSupport { m, n });
    }
    let mu_n = mu_pow(dist.mu(), n) as u64;
    let b = m as f64 / mu_n as f64;
    let degenerate_bracket = m == mu_n;
    let gamma = tf.gamma();

    // A few levels past the minimum feasible depth; the proxy probabilities
    // converge geometrically in depth, so chasing the cap buys nothing.
    const DEPTH_MARGIN: f64 = 8.0;
    let ratio = dist.mu() as f64 / dist.mean();

    let mut rows = Vec::new();
    for &eps in eps_grid {
        // Deepest depth up to the margin target at which the truncated
        // window fits the cap and the conditioned event {sum of m copies of
        // Z_{depth-n} ≤ t} is nonempty.
        let target = ((eps / DEPTH_MARGIN).ln() / ratio.ln()).ceil().max(1.0) as u32;
        let mut chosen = None;
        for depth in (n + 1)..=target.max(n + 1) {
            match event_threshold(dist, depth, eps, window_cap) {
                Ok(t) => {
                    let copy_min = mu_pow(dist.mu(), depth - n);
                    if m as u128 * copy_min <= t as u128 {
                        chosen = Some((depth, t));
                    }
                }
                Err(_) => {
                    if chosen.is_some() {
                        break;
                    }
                }
            }
        }
        let (depth, t) = chosen.ok_or(Error::SizeCapExceeded {
            n,
            required: (eps * dist.mean().powi(n as i32 + 1)) as u128,
            cap: window_cap,
        })?;

        let unconditioned = truncated_generation_log_pmf(dist, depth, t).log_mass();
        let copy_min = mu_pow(dist.mu(), depth - n) as u64;
        let base_trunc = t - (m - 1) * copy_min;
        let base = truncated_generation_log_pmf(dist, depth - n, base_trunc);
        let conditioned = base.power_truncated(m, t, copy_min).log_mass();
        let lhs = unconditioned - conditioned;
        let rhs = gap(tf, eps, b) * eps.powf(-gamma);
        let ratio = (!degenerate_bracket).then(|| lhs / rhs);
        rows.push(GqrksRow {
            eps,
            proxy_depth: depth,
            lhs,
            rhs,
            ratio,
        });
    }

    let pass = (!degenerate_bracket).then(|| {
        rows.iter()
            .filter(|r| r.eps == rows.iter().map(|q| q.eps).fold(f64::INFINITY, f64::min))
            .all(|r| r.ratio.map(|q| (q - 1.0).abs() < 0.25).unwrap_or(false))
    });

    Ok(GqrksReport {
        schema_version: 1,
        dist_spec: dist.to_json_spec(),
        n,
        m,
        b,
        degenerate_bracket,
        rows,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::minimal_generation_probability;

    fn dist(pairs: &[(u64, f64)]) -> OffspringDistribution {
        OffspringDistribution::new(&pairs.iter().copied().collect()).unwrap()
    }

    fn two_three() -> OffspringDistribution {
        dist(&[(2, 0.5), (3, 0.5)])
    }

    const CAP: u64 = DEFAULT_WINDOW_CAP;

    /// Plain-double oracle: untruncated DP for the joint and marginal
    /// probabilities, no scaling, no truncation.
    fn full_dp_conditional(d: &OffspringDistribution, k: u32, n: u32, eps: f64) -> (f64, f64) {
        let t = ((eps * d.mean().powi(n as i32)).ceil() as u64) - 1;
        let z_n = exact_generation_pmf(d, n, 100_000_000).unwrap();
        let denom: f64 = z_n.nonzero().filter(|&(m, _)| m <= t).map(|(_, p)| p).sum();
        // Sum of mu^k iid copies of Z_{n-k} via plain convolution.
        let z_rest = exact_generation_pmf(d, n - k, 100_000_000).unwrap();
        let copies = d.mu().pow(k);
        let mut sum_vals = vec![1.0f64];
        let mut sum_offset = 0u64;
        for _ in 0..copies {
            sum_vals = crate::conv::convolve(&sum_vals, &z_rest.probs, usize::MAX >> 1);
            sum_offset += z_rest.offset;
        }
        let tail_mass: f64 = sum_vals
            .iter()
            .enumerate()
            .filter(|&(i, _)| sum_offset + i as u64 <= t)
            .map(|(_, &p)| p)
            .sum();
        let numer = minimal_generation_probability(d, k) * tail_mass;
        (numer / denom, denom)
    }

    #[test]
    fn truncated_pmf_matches_full_dp() {
        let d = two_three();
        for n in 1..=6 {
            let full = exact_generation_pmf(&d, n, CAP).unwrap();
            let t = (full.offset + full.probs.len() as u64 * 2 / 3).max(full.offset + 1);
            let truncated = truncated_generation_log_pmf(&d, n, t);
            for (m, p) in full.nonzero() {
                if m > t {
                    continue;
                }
                let got = truncated.log_mass_at(m).exp();
                assert!((got - p).abs() < 1e-12, "n={n} m={m}: {got} vs {p}");
            }
        }
    }

    #[test]
    fn exact_conditional_matches_full_dp_oracle() {
        let d = two_three();
        let eps = 0.27;
        let (oracle, oracle_denom) = full_dp_conditional(&d, 1, 6, eps);
        let detail = exact_conditional_detail(&d, 1, 6, eps, CAP).unwrap();
        assert!(
            (detail.value - oracle).abs() < 1e-10,
            "{} vs {oracle}",
            detail.value
        );
        assert!((detail.log_denominator.exp() - oracle_denom).abs() < 1e-12);
        // Conditioning on a rare small event boosts the minimal generation.
        assert!(detail.value > 0.5);
    }

    #[test]
    fn exact_conditional_certain_event_is_unconditional() {
        let d = two_three();
        // eps above (nu/a)^n: the event is certain.
        let eps = (3.0f64 / 2.5).powi(4) * 1.1;
        let value = exact_conditional(&d, 1, 4, eps, CAP).unwrap();
        assert!((value - 0.5).abs() < 1e-12, "{value}");
    }

    #[test]
    fn exact_conditional_empty_event() {
        let d = two_three();
        let eps = (2.0f64 / 2.5).powi(6) * 0.99;
        assert!(matches!(
            exact_conditional(&d, 1, 6, eps, CAP),
            Err(Error::ZeroProbabilityEvent { .. })
        ));
    }

    #[test]
    fn exact_conditional_parts_are_consistent() {
        let d = two_three();
        let detail = exact_conditional_detail(&d, 1, 7, 0.3, CAP).unwrap();
        // P(Z_1 = mu) + P(Z_1 > mu) = P(event), all computed separately.
        let total = log_sum_exp(&[detail.log_numerator, detail.log_complement]);
        assert!(
            (total - detail.log_denominator).abs() < 1e-10,
            "{total} vs {}",
            detail.log_denominator
        );
    }

    #[test]
    fn degenerate_conditional_is_one() {
        let d = dist(&[(3, 1.0)]);
        let detail = exact_conditional_detail(&d, 1, 3, 1.5, CAP).unwrap();
        assert_eq!(detail.value, 1.0);
        assert!(matches!(
            exact_conditional(&d, 1, 3, 0.9, CAP),
            Err(Error::ZeroProbabilityEvent { .. })
        ));
    }

    #[test]
    fn mc_matches_exact_within_ci() {
        let d = two_three();
        let eps = 0.3;
        let exact = exact_conditional(&d, 1, 7, eps, CAP).unwrap();
        // Milder tilt than the default: likelihood ratios per draw stay near
        // 1 and the weight distribution keeps a usable effective sample size.
        let tilt = TiltConfig {
            eta: 0.2,
            horizon: None,
        };
        let mc = mc_conditional(&d, 1, 7, eps, 200_000, &tilt, 11).unwrap();
        assert!(
            (mc.estimate - exact).abs() <= 3.0 * mc.ci_halfwidth.max(1e-4),
            "mc {} vs exact {exact} (ci {})",
            mc.estimate,
            mc.ci_halfwidth
        );
        // Tilted weights are heavy-tailed, so the effective sample size is a
        // small fraction of the accepted count.
        assert!(mc.ess > 20.0, "ess = {}", mc.ess);
        assert!(mc.accepted > 1_000);
    }

    #[test]
    fn mc_without_tilt_matches_naive_rejection() {
        let d = two_three();
        let eps = 0.9; // moderate event, no tilt needed
        let no_tilt = TiltConfig {
            eta: 0.0,
            horizon: Some(0),
        };
        let mc = mc_conditional(&d, 1, 5, eps, 100_000, &no_tilt, 5).unwrap();

        // Naive rejection with its own stream layout.
        let mut hits = 0u64;
        let mut inside = 0u64;
        let t = mc.threshold;
        for path in 0..100_000u64 {
            let mut rng = path_rng(977, path);
            let z = crate::generation::simulate_generations(&d, 5, &mut rng).unwrap();
            if z[5] <= t as u128 {
                inside += 1;
                if z[1] == 2 {
                    hits += 1;
                }
            }
        }
        let naive = hits as f64 / inside as f64;
        let naive_se = (naive * (1.0 - naive) / inside as f64).sqrt();
        assert!(
            (mc.estimate - naive).abs() <= 1.96 * (mc.ci_halfwidth / 1.96 + naive_se) + 1e-3,
            "mc {} vs naive {naive}",
            mc.estimate
        );
    }

    #[test]
    fn mc_is_thread_count_invariant() {
        let d = two_three();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                mc_conditional(&d, 1, 6, 0.3, 20_000, &TiltConfig::default(), 123).unwrap()
            })
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.estimate.to_bits(), four.estimate.to_bits());
        assert_eq!(one.ci_halfwidth.to_bits(), four.ci_halfwidth.to_bits());
    }

    #[test]
    fn mc_degenerate_estimates_one() {
        let d = dist(&[(3, 1.0)]);
        let mc = mc_conditional(&d, 1, 4, 1.5, 1000, &TiltConfig::default(), 3).unwrap();
        assert_eq!(mc.estimate, 1.0);
    }

    #[test]
    fn theorem1_degenerate_all_ones() {
        let d = dist(&[(3, 1.0)]);
        let report = theorem1_experiment(&d, 1, &Theorem1Config::default()).unwrap();
        assert!(report.pass);
        assert!(report.entries.iter().all(|e| e.estimate == 1.0));
        assert_eq!(report.regime, "degenerate");
    }

    #[test]
    fn bayes_consistency_exact_routes() {
        // P(A|B)P(B) = P(B|A)P(A) with A = {Z_k = mu^k}, B the proxy event.
        let d = two_three();
        let detail = exact_conditional_detail(&d, 1, 6, 0.3, CAP).unwrap();
        let log_p_a = log_minimal_generation_probability(&d, 1);
        // P(B|A) comes out of the numerator route.
        let log_p_b_given_a = detail.log_numerator - log_p_a;
        let lhs = detail.value.ln() + detail.log_denominator;
        let rhs = log_p_b_given_a + log_p_a;
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
