//! Binomial confidence intervals and tests.

use statrs::distribution::{Binomial, DiscreteCDF};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    assert!(n > 0 && k <= n, "need 0 <= k <= n, n > 0");
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `P(X >= k)` for `X ~ Bin(n, p)`.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let b = Binomial::new(p, n).expect("valid binomial");
    b.sf(k - 1)
}

/// Paired comparison of two error indicators over the same trials.
///
/// Under equal error rates the trials where exactly one arrangement fails
/// split evenly; the p-value is the chance of at least `a_only` of the
/// discordant trials going against `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub a_only: u64,
    pub b_only: u64,
    /// One-sided p-value for "a errs more often than b".
    pub p_value: f64,
}

impl PairedTest {
    pub fn new(a_only: u64, b_only: u64) -> Self {
        let n = a_only + b_only;
        let p_value = if n == 0 { 1.0 } else { binomial_upper_tail(a_only, n, 0.5) };
        Self { a_only, b_only, p_value }
    }

    /// True unless `a` is significantly worse than `b` at level `alpha`.
    pub fn a_not_worse(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}
