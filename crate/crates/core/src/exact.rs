//! Exact small-instance probabilities from the Kolmogorov forward equations.
//!
//! CRW and the voter cluster are Markov chains on subsets of V; for graphs
//! of at most 12 vertices the full subset chain is integrated with an
//! adaptive Dormand–Prince 5(4) scheme. Birth–death chains (the branching
//! comparison walk and the constant-rate walk) are integrated on a
//! truncated state space with the escaped mass tracked in a leak state.

use crate::error::{config, Error, Result};
use crate::graph::{make_graph, GraphSpec};

pub const MAX_EXACT_VERTICES: usize = 12;

/// Integrator tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            atol: 1e-10,
            rtol: 1e-8,
        }
    }
}

/// Sparse generator of a finite continuous-time Markov chain, stored by
/// source state. Diagonal entries are implied by the exit rates.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    row_start: Vec<usize>,
    to: Vec<u32>,
    rate: Vec<f64>,
    exit: Vec<f64>,
}

impl GeneratorMatrix {
    fn build(n: usize, mut transitions: impl FnMut(usize, &mut Vec<(usize, f64)>)) -> Self {
        let mut g = GeneratorMatrix {
            row_start: Vec::with_capacity(n + 1),
            to: Vec::new(),
            rate: Vec::new(),
            exit: Vec::with_capacity(n),
        };
        let mut buf = Vec::new();
        for s in 0..n {
            buf.clear();
            transitions(s, &mut buf);
            g.row_start.push(g.to.len());
            let mut exit = 0.0;
            for &(t, r) in &buf {
                g.to.push(t as u32);
                g.rate.push(r);
                exit += r;
            }
            g.exit.push(exit);
        }
        g.row_start.push(g.to.len());
        g
    }

    pub fn states(&self) -> usize {
        self.exit.len()
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().copied().fold(0.0, f64::max)
    }

    /// Off-diagonal rates, from `s`.
    pub fn row(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_start[s]..self.row_start[s + 1]).map(|i| (self.to[i] as usize, self.rate[i]))
    }

    /// Rates are nonnegative, targets in range, and each row sums to zero.
    pub fn check(&self) -> Result<()> {
        for s in 0..self.states() {
            let mut sum = -self.exit[s];
            for (t, r) in self.row(s) {
                if r < 0.0 || t >= self.states() {
                    return Err(Error::InvariantViolation(format!("bad rate {r} from {s} to {t}")));
                }
                sum += r;
            }
            if sum.abs() > 1e-12 {
                return Err(Error::InvariantViolation(format!("row {s} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// dp = p Q.
    fn forward(&self, p: &[f64], dp: &mut [f64]) {
        for (d, (&pi, &e)) in dp.iter_mut().zip(p.iter().zip(&self.exit)) {
            *d = -pi * e;
        }
        for (s, &ps) in p.iter().enumerate() {
            if ps == 0.0 {
                continue;
            }
            for i in self.row_start[s]..self.row_start[s + 1] {
                dp[self.to[i] as usize] += ps * self.rate[i];
            }
        }
    }
}

// Dormand–Prince 5(4) tableau. The system is autonomous, so the nodes
// c_i are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate p' = pQ from `p0` at time 0, returning p at each of `times`
/// (nondecreasing, nonnegative).
pub fn integrate_forward(
    q: &GeneratorMatrix,
    p0: &[f64],
    times: &[f64],
    tol: Tolerance,
) -> Result<Vec<Vec<f64>>> {
    let n = q.states();
    assert_eq!(p0.len(), n);
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return config("output times must be nonnegative and nondecreasing");
    }
    let mut y = p0.to_vec();
    let mut t = 0.0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let rate = q.max_exit_rate().max(1e-12);
    let mut h = 0.1 / rate;
    q.forward(&y, &mut k[0]);
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            acc += step * a * kj[i];
                        }
                    }
                    stage[i] = acc;
                }
                q.forward(&stage, &mut k[s]);
                if s == 6 {
                    y_new.copy_from_slice(&stage);
                }
            }
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((step * e).abs() / sc);
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut y_new);
                // First-same-as-last: stage 7 is f at the new point.
                let (first, rest) = k.split_at_mut(1);
                std::mem::swap(&mut first[0], &mut rest[5]);
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if !last || err > 1.0 {
                h = step * factor;
            }
            if h < 1e-14 * (1.0 + t) {
                return Err(Error::InvariantViolation("ODE step size underflow".into()));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn check_size(adj: &[Vec<usize>]) -> Result<usize> {
    let n = adj.len();
    if n > MAX_EXACT_VERTICES {
        return Err(Error::Size {
            vertices: n,
            max: MAX_EXACT_VERTICES,
        });
    }
    if n == 0 {
        return config("empty graph");
    }
    Ok(n)
}

/// Adjacency of a finite graph spec, for the exact routines.
pub fn adjacency_of(spec: &GraphSpec) -> Result<Vec<Vec<usize>>> {
    let mut g = make_graph(spec, 0)?;
    if !spec.is_finite() {
        return config(format!("exact oracle needs a finite graph, got '{spec}'"));
    }
    if let Some(n) = spec.explicit_order() {
        if n as usize > MAX_EXACT_VERTICES {
            return Err(Error::Size {
                vertices: n as usize,
                max: MAX_EXACT_VERTICES,
            });
        }
    }
    let adj = g.to_adjacency()?;
    check_size(&adj)?;
    Ok(adj)
}

/// CRW generator on nonempty subsets; state index = mask - 1.
pub fn crw_generator(adj: &[Vec<usize>]) -> Result<GeneratorMatrix> {
    let n = check_size(adj)?;
    let states = (1usize << n) - 1;
    Ok(GeneratorMatrix::build(states, |s, out| {
        let mask = s + 1;
        for u in (0..n).filter(|u| mask >> u & 1 == 1) {
            for &w in &adj[u] {
                let next = (mask & !(1 << u)) | 1 << w;
                out.push((next - 1, 1.0));
            }
        }
    }))
}

/// Voter-cluster generator on all subsets; state index = mask, 0 absorbing.
pub fn cluster_generator(adj: &[Vec<usize>]) -> Result<GeneratorMatrix> {
    let n = check_size(adj)?;
    Ok(GeneratorMatrix::build(1 << n, |mask, out| {
        for x in (0..n).filter(|x| mask >> x & 1 == 1) {
            for &y in adj[x].iter().filter(|&&y| mask >> y & 1 == 0) {
                out.push((mask | 1 << y, 1.0));
                out.push((mask & !(1 << x), 1.0));
            }
        }
    }))
}

fn check_vertex(adj: &[Vec<usize>], v: usize) -> Result<()> {
    if v >= adj.len() {
        return config(format!("vertex {v} not in graph of {} vertices", adj.len()));
    }
    Ok(())
}

/// P(v occupied at t) for CRW started from every vertex occupied.
pub fn crw_exact_pt(adj: &[Vec<usize>], v: usize, times: &[f64], tol: Tolerance) -> Result<Vec<f64>> {
    check_vertex(adj, v)?;
    let q = crw_generator(adj)?;
    let full = (1usize << adj.len()) - 1;
    let mut p0 = vec![0.0; q.states()];
    p0[full - 1] = 1.0;
    let sols = integrate_forward(&q, &p0, times, tol)?;
    Ok(sols
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .filter(|(s, _)| (s + 1) >> v & 1 == 1)
                .map(|(_, x)| x)
                .sum()
        })
        .collect())
}

/// P(cluster of v nonempty at t).
pub fn cluster_exact_survival(
    adj: &[Vec<usize>],
    v: usize,
    times: &[f64],
    tol: Tolerance,
) -> Result<Vec<f64>> {
    check_vertex(adj, v)?;
    let q = cluster_generator(adj)?;
    let mut p0 = vec![0.0; q.states()];
    p0[1 << v] = 1.0;
    let sols = integrate_forward(&q, &p0, times, tol)?;
    Ok(sols.iter().map(|p| 1.0 - p[0]).collect())
}

/// |P(v in xi_t) - P(zeta_t^v nonempty)| at each time. A gap above 1e-6
/// signals a modelling fault and is reported as an error.
pub fn duality_gap(adj: &[Vec<usize>], v: usize, times: &[f64], tol: Tolerance) -> Result<Vec<f64>> {
    let a = crw_exact_pt(adj, v, times, tol)?;
    let b = cluster_exact_survival(adj, v, times, tol)?;
    let gaps: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
    if let Some(g) = gaps.iter().find(|&&g| g > 1e-6) {
        return Err(Error::InvariantViolation(format!(
            "duality gap {g:e} exceeds 1e-6: CRW and cluster models disagree"
        )));
    }
    Ok(gaps)
}

/// P(sigma_t > u): v stays vacant throughout [t, u].
pub fn sigma_tail_exact(adj: &[Vec<usize>], v: usize, t: f64, u: f64, tol: Tolerance) -> Result<f64> {
    check_vertex(adj, v)?;
    if !(u > t && t >= 0.0) {
        return config("need u > t >= 0");
    }
    let q = crw_generator(adj)?;
    let states = q.states();
    let full = (1usize << adj.len()) - 1;
    let mut p0 = vec![0.0; states];
    p0[full - 1] = 1.0;
    let mut p = integrate_forward(&q, &p0, &[t], tol)?.remove(0);
    let sink = states;
    let has_v = |s: usize| (s + 1) >> v & 1 == 1;
    for (s, x) in p.iter_mut().enumerate() {
        if has_v(s) {
            *x = 0.0;
        }
    }
    p.push(0.0);
    // Entering a state that occupies v moves the mass to the sink.
    let taboo = GeneratorMatrix::build(states + 1, |s, out| {
        if s == sink || has_v(s) {
            return;
        }
        for (to, r) in q.row(s) {
            out.push((if has_v(to) { sink } else { to }, r));
        }
    });
    let p = integrate_forward(&taboo, &p, &[u - t], tol)?.remove(0);
    Ok(p[..states].iter().sum())
}

/// Result of a truncated birth–death survival computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSurvival {
    /// P(not absorbed at 0), counting escaped mass as surviving.
    pub survival: f64,
    /// Mass that reached the truncation level.
    pub leak: f64,
    pub truncation: usize,
}

/// Birth–death chain on {0..K} absorbed at 0, moving k -> k +/- 1 each at
/// rate `rate(k)`; births from K go to a leak state.
#[derive(Debug, Clone)]
pub struct BranchingChain {
    q: GeneratorMatrix,
    k: usize,
}

impl BranchingChain {
    pub fn new(k: usize, rate: impl Fn(usize) -> f64) -> Self {
        let leak = k + 1;
        let q = GeneratorMatrix::build(k + 2, |s, out| {
            if s == 0 || s == leak {
                return;
            }
            let r = rate(s);
            out.push((s - 1, r));
            out.push((if s == k { leak } else { s + 1 }, r));
        });
        BranchingChain { q, k }
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.q
    }

    pub fn survival(&self, times: &[f64], tol: Tolerance) -> Result<Vec<ChainSurvival>> {
        let mut p0 = vec![0.0; self.k + 2];
        p0[1] = 1.0;
        let sols = integrate_forward(&self.q, &p0, times, tol)?;
        Ok(sols
            .iter()
            .map(|p| ChainSurvival {
                survival: 1.0 - p[0],
                leak: p[self.k + 1],
                truncation: self.k,
            })
            .collect())
    }
}

pub const LEAK_LIMIT: f64 = 1e-10;

/// Truncation level K = max(64, ceil(40 (1 + rate * t))).
pub fn default_truncation(rate: f64, t: f64) -> usize {
    64usize.max((40.0 * (1.0 + rate * t)).ceil() as usize)
}

fn checked(s: ChainSurvival) -> Result<ChainSurvival> {
    if s.leak > LEAK_LIMIT {
        return Err(Error::TruncationLeak {
            k: s.truncation,
            leak: s.leak,
            limit: LEAK_LIMIT,
        });
    }
    Ok(s)
}

/// P(W_t > 0) for the walk moving k -> k +/- 1 each at rate D k, from 1.
pub fn branching_survival(d: f64, t: f64, k: Option<usize>) -> Result<ChainSurvival> {
    if !(d >= 1.0) || !(t >= 0.0) {
        return config("branching survival needs D >= 1 and t >= 0");
    }
    let k = k.unwrap_or_else(|| default_truncation(d, t));
    let chain = BranchingChain::new(k, |s| d * s as f64);
    checked(chain.survival(&[t], Tolerance::default())?[0])
}

/// Survival of the walk moving +/-1 each at constant rate `a`, from 1.
pub fn constant_rate_survival(a: f64, t: f64, k: Option<usize>) -> Result<ChainSurvival> {
    if !(a > 0.0) || !(t >= 0.0) {
        return config("constant-rate survival needs a > 0 and t >= 0");
    }
    let k = k.unwrap_or_else(|| default_truncation(a, t));
    let chain = BranchingChain::new(k, |_| a);
    checked(chain.survival(&[t], Tolerance::default())?[0])
}

/// e^{-x} (I_0(x) + I_1(x)) by the power series, summed in log space.
pub fn scaled_bessel_i0_plus_i1(x: f64) -> f64 {
    assert!(x >= 0.0);
    if x == 0.0 {
        return 1.0;
    }
    let half_log = (x / 2.0).ln();
    let kmax = (x + 60.0 * x.sqrt() + 60.0) as usize;
    let mut logs = Vec::with_capacity(2 * kmax);
    for nu in 0..2u32 {
        // log of e^{-x} (x/2)^{2k+nu} / (k! (k+nu)!)
        let mut lt = -x + nu as f64 * half_log;
        for k in 0..kmax {
            logs.push(lt);
            lt += 2.0 * half_log - ((k + 1) as f64).ln() - ((k + 1 + nu as usize) as f64).ln();
        }
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m.exp() * logs.iter().map(|l| (l - m).exp()).sum::<f64>()
}

/// Closed form of the constant-rate survival: e^{-2at}(I_0 + I_1)(2at).
pub fn constant_rate_survival_bessel(a: f64, t: f64) -> f64 {
    scaled_bessel_i0_plus_i1(2.0 * a * t)
}
