//! Convolution kernels for integer-supported mass functions.
//!
//! Two representations are used across the crate:
//!
//! * plain dense vectors with an integer offset, for exact generation pmfs;
//! * [`ScaledPmf`], the same vector plus a separate log scale factor, for
//!   truncated dynamic programming in the deep lower tail where the actual
//!   probabilities underflow doubles by thousands of orders of magnitude.
//!
//! Everything runs through schoolbook convolution. Entries of these vectors
//! legitimately span thousands of orders of magnitude, and every entry is a
//! sum of nonnegative products, so the schoolbook loop keeps full *relative*
//! precision per entry. Transform-based convolution only bounds the error
//! relative to the largest entry, which silently injects mass exactly where
//! the lower-tail DP is most sensitive (this is observable as inflated tail
//! probabilities after a few generations), so it is not used here.
//!
//! All truncation is by absolute support point: entries above the threshold
//! can never contribute to sub-threshold sums (all support points are ≥ 1),
//! so truncating inputs first is exact.

/// Linear convolution of `a` and `b`, keeping only the first `cap_len`
/// entries of the result. O(len(a)·len(b)).
pub fn convolve(a: &[f64], b: &[f64], cap_len: usize) -> Vec<f64> {
    let la = a.len().min(cap_len);
    let lb = b.len().min(cap_len);
    if la == 0 || lb == 0 || cap_len == 0 {
        return Vec::new();
    }
    let a = &a[..la];
    let b = &b[..lb];
    let out_len = (la + lb - 1).min(cap_len);
    let mut out = vec![0.0; out_len];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 || i >= out_len {
            continue;
        }
        let jmax = (out_len - i).min(b.len());
        let row = &mut out[i..i + jmax];
        for (slot, &bj) in row.iter_mut().zip(&b[..jmax]) {
            *slot += ai * bj;
        }
    }
    out
}

/// Mass function on an integer lattice with a separate log scale:
/// the actual mass at support point `offset + i` is `vals[i] * exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct ScaledPmf {
    pub offset: u64,
    pub vals: Vec<f64>,
    pub log_scale: f64,
}

impl ScaledPmf {
    /// Point mass at `point` (unit probability).
    pub fn point(point: u64) -> Self {
        Self {
            offset: point,
            vals: vec![1.0],
            log_scale: 0.0,
        }
    }

    pub fn from_dense(offset: u64, vals: Vec<f64>) -> Self {
        let mut pmf = Self {
            offset,
            vals,
            log_scale: 0.0,
        };
        pmf.normalize();
        pmf
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty() || self.vals.iter().all(|&v| v == 0.0)
    }

    /// Rescale so the largest entry is 1, folding the factor into `log_scale`.
    pub fn normalize(&mut self) {
        let max = self.vals.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 && max.is_finite() {
            let inv = 1.0 / max;
            for v in &mut self.vals {
                *v *= inv;
            }
            self.log_scale += max.ln();
        }
    }

    /// Drop entries above the absolute support point `trunc` (inclusive keep).
    pub fn truncate(&mut self, trunc: u64) {
        if self.offset > trunc {
            self.vals.clear();
            return;
        }
        let keep = (trunc - self.offset + 1) as usize;
        if self.vals.len() > keep {
            self.vals.truncate(keep);
        }
    }

    /// Convolve two scaled pmfs, truncating the result above `trunc`.
    pub fn convolve_truncated(&self, other: &Self, trunc: u64) -> Self {
        let offset = self.offset + other.offset;
        if self.is_zero() || other.is_zero() || offset > trunc {
            return Self {
                offset,
                vals: Vec::new(),
                log_scale: self.log_scale + other.log_scale,
            };
        }
        let cap_len = (trunc - offset + 1) as usize;
        let vals = convolve(&self.vals, &other.vals, cap_len);
        let mut out = Self {
            offset,
            vals,
            log_scale: self.log_scale + other.log_scale,
        };
        out.normalize();
        out
    }

    /// Log of the total mass of the (truncated) vector.
    pub fn log_mass(&self) -> f64 {
        let sum: f64 = self.vals.iter().sum();
        if sum <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.log_scale + sum.ln()
        }
    }

    /// Log of the mass at one support point.
    pub fn log_mass_at(&self, point: u64) -> f64 {
        if point < self.offset {
            return f64::NEG_INFINITY;
        }
        let i = (point - self.offset) as usize;
        match self.vals.get(i) {
            Some(&v) if v > 0.0 => self.log_scale + v.ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    /// `m`-fold convolution power of `self`, truncated so that the partial
    /// sum of `j` copies keeps only points ≤ trunc - (m-j)·per_copy_min.
    /// `per_copy_min` must be a lower bound for the support of one copy;
    /// points above that sliding threshold cannot appear in an m-copy sum
    /// that stays ≤ trunc.
    pub fn power_truncated(&self, m: u64, trunc: u64, per_copy_min: u64) -> Self {
        assert!(m >= 1);
        let thresh = |copies: u64| -> u64 {
            // trunc - (m - copies) * per_copy_min, saturating.
            trunc.saturating_sub((m - copies).saturating_mul(per_copy_min))
        };
        let mut result: Option<(Self, u64)> = None; // (partial product, copies)
        let mut base = {
            let mut b = self.clone();
            b.truncate(thresh(1));
            b.normalize();
            b
        };
        let mut base_copies = 1u64;
        let mut remaining = m;
        loop {
            if remaining & 1 == 1 {
                result = Some(match result {
                    None => (base.clone(), base_copies),
                    Some((acc, copies)) => {
                        let total = copies + base_copies;
                        (acc.convolve_truncated(&base, thresh(total)), total)
                    }
                });
            }
            remaining >>= 1;
            if remaining == 0 {
                break;
            }
            base_copies *= 2;
            base = base.convolve_truncated(&base, thresh(base_copies.min(m)));
        }
        result.expect("m >= 1").0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolve_against_direct_polynomial_product() {
        let a = [0.25, 0.5, 0.25];
        let b = [0.5, 0.3, 0.2];
        let got = convolve(&a, &b, usize::MAX >> 1);
        let expect = [0.125, 0.325, 0.325, 0.175, 0.05];
        assert_eq!(got.len(), expect.len());
        for (x, y) in got.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn truncation_is_exact_for_kept_entries() {
        let a = vec![0.25, 0.5, 0.25];
        let b = vec![0.5, 0.5];
        let full = convolve(&a, &b, usize::MAX >> 1);
        let cut = convolve(&a, &b, 2);
        assert_eq!(&full[..2], &cut[..]);
    }

    #[test]
    fn deep_tail_entries_keep_relative_precision() {
        // Convolving a slope of 60 orders of magnitude must reproduce each
        // product exactly; transform-based convolution would flush the small
        // entries to noise.
        let steep: Vec<f64> = (0..6).map(|i| 10f64.powi(-12 * i)).collect();
        let conv = convolve(&steep, &steep, usize::MAX >> 1);
        // Bottom entry: 1e-60 * 1e-60 = 1e-120.
        let last = conv.last().copied().unwrap();
        assert!((last / 1e-120 - 1.0).abs() < 1e-12, "{last}");
    }

    #[test]
    fn scaled_power_matches_plain_convolution() {
        // Law on {1, 2} with probs 0.5/0.5: the 4-fold power is binomial.
        let pmf = ScaledPmf::from_dense(1, vec![0.5, 0.5]);
        let p4 = pmf.power_truncated(4, 8, 1);
        assert_eq!(p4.offset, 4);
        let expect = [0.0625, 0.25, 0.375, 0.25, 0.0625];
        for (i, &e) in expect.iter().enumerate() {
            let got = (p4.log_mass_at(4 + i as u64)).exp();
            assert!((got - e).abs() < 1e-12, "i={i}: {got} vs {e}");
        }
        // Truncated at 6: same leading entries, nothing above.
        let p4t = pmf.power_truncated(4, 6, 1);
        assert!((p4t.log_mass_at(6).exp() - 0.375).abs() < 1e-12);
        assert_eq!(p4t.log_mass_at(7), f64::NEG_INFINITY);
        // Mass below the sliding thresholds is preserved exactly.
        let lhs = p4t.log_mass();
        let rhs = (0.0625f64 + 0.25 + 0.375).ln();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn log_scale_tracks_tiny_masses() {
        // 2^-200 point masses convolved: exp would underflow without scaling.
        let mut a = ScaledPmf::point(1);
        a.log_scale = -200.0 * std::f64::consts::LN_2;
        let b = a.clone();
        let c = a.convolve_truncated(&b, 10);
        assert!((c.log_mass() - (-400.0 * std::f64::consts::LN_2)).abs() < 1e-9);
    }
}
