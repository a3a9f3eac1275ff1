//! Interval estimates and two-sample summaries for Monte Carlo output.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::fmt::Write as _;

pub const DEFAULT_LEVEL: f64 = 0.99;

/// Two-sided standard normal quantile for a confidence `level`.
pub fn z_for_level(level: f64) -> f64 {
    assert!(level > 0.0 && level < 1.0, "confidence level must be in (0,1)");
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0)
}

/// Wilson score interval for `successes` out of `n` trials.
pub fn wilson(successes: u64, n: u64, level: f64) -> (f64, f64) {
    assert!(n > 0, "wilson interval needs at least one trial");
    let z = z_for_level(level);
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    // Clamp so that low <= p <= high survives rounding at p = 0 or 1.
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

/// Standard error of a proportion estimate.
pub fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n > 1, "need at least two samples");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic sup |F_a - F_b|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        // Step past ties on both sides before comparing the ECDFs.
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `alpha`.
pub fn ks_critical(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// One row of an estimate series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub t: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: u64,
    pub method: String,
    pub cap_hit: f64,
}

impl EstimateRow {
    pub fn from_counts(t: f64, successes: u64, n: u64, level: f64, method: &str) -> Self {
        let (ci_low, ci_high) = wilson(successes, n, level);
        EstimateRow {
            t,
            estimate: successes as f64 / n as f64,
            ci_low,
            ci_high,
            replicates: n,
            method: method.to_string(),
            cap_hit: 0.0,
        }
    }

    /// Standard error of the point estimate.
    pub fn se(&self) -> f64 {
        binomial_se(self.estimate, self.replicates)
    }
}

/// Time series of proportion estimates with Wilson intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSeries {
    pub rows: Vec<EstimateRow>,
    /// Fraction of replicates stopped at the size cap (dual estimator only).
    pub cap_hit_fraction: f64,
    /// Set when `cap_hit_fraction` exceeds 1%; estimates are then lower bounds.
    pub cap_biased: bool,
}

pub const CSV_HEADER: &str = "t,estimate,ci_low,ci_high,replicates,method,cap_hit";

impl EstimateSeries {
    pub fn from_counts(
        grid: &[f64],
        successes: &[u64],
        n: u64,
        level: f64,
        method: &str,
    ) -> Self {
        assert_eq!(grid.len(), successes.len());
        let rows = grid
            .iter()
            .zip(successes)
            .map(|(&t, &s)| EstimateRow::from_counts(t, s, n, level, method))
            .collect();
        EstimateSeries {
            rows,
            cap_hit_fraction: 0.0,
            cap_biased: false,
        }
    }

    pub fn with_cap_hits(mut self, cap_hits: u64) -> Self {
        let n = self.rows.first().map_or(1, |r| r.replicates.max(1));
        self.cap_hit_fraction = cap_hits as f64 / n as f64;
        self.cap_biased = self.cap_hit_fraction > 0.01;
        for r in &mut self.rows {
            r.cap_hit = self.cap_hit_fraction;
        }
        self
    }

    /// RFC 4180 CSV with the fixed header and CRLF record terminators.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push_str("\r\n");
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}\r\n",
                r.t, r.estimate, r.ci_low, r.ci_high, r.replicates, r.method, r.cap_hit
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn z_99() {
        assert!((z_for_level(0.99) - 2.5758293035489).abs() < 1e-9);
        assert!((z_for_level(0.95) - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn wilson_known_value() {
        // 50/100 at 95%: centre 0.5, half-width z*sqrt(0.25/100 + z^2/40000)/(1+z^2/100)
        let (lo, hi) = wilson(50, 100, 0.95);
        assert!((lo - 0.403_831).abs() < 1e-5, "{lo}");
        assert!((hi - 0.596_169).abs() < 1e-5, "{hi}");
    }

    #[test]
    fn wilson_edges() {
        let (lo, hi) = wilson(0, 10, 0.99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
        let (lo, hi) = wilson(10, 10, 0.99);
        assert_eq!(hi, 1.0);
        assert!(lo < 1.0);
    }

    #[test]
    fn wilson_coverage_calibration() {
        // 99% intervals on Bernoulli(theta) should cover in 98-100% of trials.
        let theta = 0.3;
        let trials = 1000;
        let mut covered = 0;
        for i in 0..trials {
            let mut rng = rng_stream(2024, i);
            let n = 500u64;
            let s = (0..n).filter(|_| rng.random::<f64>() < theta).count() as u64;
            let (lo, hi) = wilson(s, n, 0.99);
            if lo <= theta && theta <= hi {
                covered += 1;
            }
        }
        let frac = covered as f64 / trials as f64;
        assert!((0.98..=1.0).contains(&frac), "coverage {frac}");
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &[10.0, 11.0]), 1.0);
        // ECDFs at 2.0: 2/3 vs 1/2
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[1.5, 2.5]);
        assert!((d - (2.0 / 3.0 - 0.5f64).max(1.0 / 3.0)).abs() < 1e-12, "{d}");
    }

    #[test]
    fn ks_critical_value() {
        // c(0.01) = 1.6276
        let c = ks_critical(0.01, 10_000, 10_000);
        assert!((c - 1.627_59 * (2.0f64 / 10_000.0).sqrt()).abs() < 1e-5);
    }

    #[test]
    fn csv_header_fixed() {
        let s = EstimateSeries::from_counts(&[0.0, 1.0], &[10, 5], 10, 0.99, "dual");
        let csv = s.to_csv();
        assert!(csv.starts_with("t,estimate,ci_low,ci_high,replicates,method,cap_hit\r\n"));
        assert!(csv.contains("\r\n0,1,"));
        assert_eq!(csv.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn wilson_brackets_estimate(n in 1u64..5000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
            let s = ((n as f64) * frac).floor() as u64;
            let (lo, hi) = wilson(s, n, level);
            let p = s as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        }
    }
}
