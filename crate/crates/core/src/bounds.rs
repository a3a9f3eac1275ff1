//! Closed-form bounds on occupancy and first-return times.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// 1/(1+Dt): lower bound on p_t for maximum degree D.
pub fn lower_bound_bounded_degree(d: f64, t: f64) -> f64 {
    debug_assert!(d >= 1.0 && t >= 0.0);
    1.0 / (1.0 + d * t)
}

/// C/(t log t), the shape of the lower bound on Galton–Watson trees.
pub fn gw_lower_bound_form(c: f64, t: f64) -> Result<f64> {
    if !(t > 1.0) {
        return Err(Error::Domain(format!("t log t bound needs t > 1, got {t}")));
    }
    Ok(c / (t * t.ln()))
}

/// t/(t + I), where I is the occupancy integral over [t, u].
pub fn sigma_tail_bound_general(t: f64, integral: f64) -> f64 {
    debug_assert!(t >= 0.0 && integral >= 0.0);
    if t == 0.0 {
        return 0.0;
    }
    t / (t + integral)
}

/// Integral of 1/(1+Ds) over [t, u].
pub fn bounded_degree_integral(d: f64, t: f64, u: f64) -> f64 {
    ((1.0 + d * u).ln() - (1.0 + d * t).ln()) / d
}

/// The general tail bound with the bounded-degree integral plugged in.
pub fn sigma_tail_bound_degree(d: f64, t: f64, u: f64) -> f64 {
    sigma_tail_bound_general(t, bounded_degree_integral(d, t, u))
}

/// (1+eps)/(2 sqrt(pi t)).
pub fn line_upper_bound(t: f64, eps: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("upper envelope needs t > 0, got {t}")));
    }
    Ok((1.0 + eps) / (2.0 * (PI * t).sqrt()))
}

/// Piecewise-linear occupancy curve with trapezoidal integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyIntegral {
    times: Vec<f64>,
    values: Vec<f64>,
    // cumulative[i] = integral over [times[0], times[i]]
    cumulative: Vec<f64>,
}

impl OccupancyIntegral {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::Config("occupancy grid and values must match and be nonempty".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("occupancy grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("occupancy values must be nonnegative".into()));
        }
        let mut cumulative = vec![0.0];
        for i in 1..times.len() {
            let area = 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
            cumulative.push(cumulative[i - 1] + area);
        }
        Ok(OccupancyIntegral {
            times,
            values,
            cumulative,
        })
    }

    /// Sample `f` on a uniform grid of `n` intervals over [a, b].
    pub fn from_fn(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let times: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Integral from the grid start to `x`, linear between nodes.
    fn primitive(&self, x: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= x).max(1) - 1;
        let i = i.min(self.times.len() - 1);
        if i == self.times.len() - 1 {
            return self.cumulative[i];
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        let s = x - t0;
        let vx = v0 + (v1 - v0) * s / (t1 - t0);
        self.cumulative[i] + 0.5 * (v0 + vx) * s
    }

    /// I(t, u) for t <= u inside the grid.
    pub fn integral(&self, t: f64, u: f64) -> Result<f64> {
        let (lo, hi) = (self.times[0], *self.times.last().unwrap());
        if !(t <= u && t >= lo && u <= hi) {
            return Err(Error::Domain(format!(
                "integral over [{t}, {u}] outside grid [{lo}, {hi}]"
            )));
        }
        Ok((self.primitive(u) - self.primitive(t)).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        assert_eq!(lower_bound_bounded_degree(3.0, 0.0), 1.0);
        assert_eq!(lower_bound_bounded_degree(1.0, 1.0), 0.5);
        assert!((lower_bound_bounded_degree(4.0, 2.0) - 1.0 / 9.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((gw_lower_bound_form(1.0, e).unwrap() - 1.0 / e).abs() < 1e-15);
        assert!(matches!(gw_lower_bound_form(1.0, 1.0), Err(Error::Domain(_))));
        assert!((line_upper_bound(1.0 / (4.0 * PI), 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(line_upper_bound(0.0, 0.1).is_err());
    }

    #[test]
    fn sigma_tail_bounds() {
        assert_eq!(sigma_tail_bound_degree(2.0, 0.0, 5.0), 0.0);
        // log((1+u)/2) = 1
        let u = 2.0 * std::f64::consts::E - 1.0;
        assert!((sigma_tail_bound_degree(1.0, 1.0, u) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degree_form_matches_quadrature() {
        for (d, t, u) in [(1.0, 1.0, 10.0), (3.0, 0.5, 40.0), (4.0, 2.0, 3.0)] {
            let occ = OccupancyIntegral::from_fn(t, u, 200_000, |s| 1.0 / (1.0 + d * s)).unwrap();
            let i = occ.integral(t, u).unwrap();
            let general = sigma_tail_bound_general(t, i);
            let degree = sigma_tail_bound_degree(d, t, u);
            assert!((general - degree).abs() <= 1e-8, "{d} {t} {u}: {general} vs {degree}");
        }
    }

    #[test]
    fn integral_domain() {
        let occ = OccupancyIntegral::from_fn(0.0, 1.0, 10, |_| 1.0).unwrap();
        assert!((occ.integral(0.25, 0.75).unwrap() - 0.5).abs() < 1e-12);
        assert!(occ.integral(0.5, 2.0).is_err());
        assert!(OccupancyIntegral::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn integral_is_additive(
            vals in prop::collection::vec(0.0f64..1.0, 3..40),
            a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0,
        ) {
            let n = vals.len();
            let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let occ = OccupancyIntegral::new(times, vals).unwrap();
            let mut x = [a, b, c];
            x.sort_by(f64::total_cmp);
            let whole = occ.integral(x[0], x[2]).unwrap();
            let parts = occ.integral(x[0], x[1]).unwrap() + occ.integral(x[1], x[2]).unwrap();
            prop_assert!(whole >= 0.0);
            prop_assert!((whole - parts).abs() < 1e-12);
        }

        #[test]
        fn envelopes_are_monotone(d in 1.0f64..8.0, t in 0.0f64..50.0, dt in 0.0f64..10.0, u in 0.0f64..100.0, du in 0.0f64..50.0) {
            prop_assert!(lower_bound_bounded_degree(d, t + dt) <= lower_bound_bounded_degree(d, t));
            let t1 = t + 0.01;
            prop_assert!(line_upper_bound(t1 + dt, 0.0).unwrap() <= line_upper_bound(t1, 0.0).unwrap());
            let u1 = t + u + 0.01;
            prop_assert!(sigma_tail_bound_degree(d, t, u1 + du) <= sigma_tail_bound_degree(d, t, u1) + 1e-15);
            prop_assert!((gw_lower_bound_form(2.0 * d, t + 1.5).unwrap() - 2.0 * gw_lower_bound_form(d, t + 1.5).unwrap()).abs() < 1e-12);
        }
    }
}
