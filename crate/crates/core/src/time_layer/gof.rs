//! Kolmogorov–Smirnov test against the unit exponential, for time-rescaled gaps.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value > level
    }
}

/// One-sample KS test of `sample` against Exp(1). The p-value uses the
/// asymptotic Kolmogorov distribution with Stephens' finite-sample correction.
pub fn ks_exponential(sample: &[f64]) -> KsResult {
    let n = sample.len();
    if n == 0 {
        return KsResult { statistic: 0.0, p_value: 1.0, n };
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = if x > 0.0 { -(-x).exp_m1() } else { 0.0 };
        d = d.max(cdf - i as f64 / nf).max((i + 1) as f64 / nf - cdf);
    }
    let root = nf.sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * d;
    KsResult { statistic: d, p_value: kolmogorov_survival(lambda), n }
}

/// `P(K > λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2 k² λ²}`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_critical_value() {
        // The asymptotic 5% critical value of sqrt(n) D is 1.3581.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn exact_quantiles_have_small_statistic() {
        let n = 1000;
        let sample: Vec<f64> = (0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        let r = ks_exponential(&sample);
        assert!((r.statistic - 0.5 / n as f64).abs() < 1e-12);
        assert!(r.passes(0.05));
    }

    #[test]
    fn wrong_scale_is_rejected() {
        let n = 1000;
        let sample: Vec<f64> = (0..n).map(|i| -3.0 * (1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        assert!(!ks_exponential(&sample).passes(0.05));
    }
}
