//! The voter-model cluster dual to coalescing random walk.
//!
//! When the clock on directed edge (u, w) rings, w joins the cluster of u.
//! Tracking only the cluster of a tagged vertex v, every ordered pair
//! (x, y) with x inside and y outside contributes a growth event (y joins,
//! rate 1) and a shrink event (x leaves, rate 1). The cluster size is
//! therefore a skip-free martingale whose total jump rate is twice the
//! number of boundary pairs, and P(cluster of v alive at t) = p_t(v).
//!
//! Boundary pairs are kept in an indexed set so both event types sample a
//! uniform pair in O(1) and update in O(deg).

use crate::error::{config, Error, Result};
use crate::graph::{GraphOracle, GraphSource, GraphSpec, TreeMode, VertexId};
use crate::rng::{exp_time, SimRng};
use crate::runner::{fold_replicates, run_replicates, sum_columns};
use crate::stats::{binomial_se, mean_se, EstimateRow, EstimateSeries};
use indexmap::IndexSet;
use rand::Rng;
use rustc_hash::FxBuildHasher;

pub const DEFAULT_SIZE_CAP: usize = 1_000_000;

#[inline]
fn pack(x: VertexId, y: VertexId) -> u64 {
    (x.0 as u64) << 32 | y.0 as u64
}

#[inline]
fn unpack(p: u64) -> (VertexId, VertexId) {
    (VertexId((p >> 32) as u32), VertexId(p as u32))
}

/// The cluster of the tagged vertex and its boundary bookkeeping.
#[derive(Debug, Clone)]
pub struct ClusterState {
    member: Vec<bool>,
    size: usize,
    /// Directed boundary pairs (inside, outside).
    pairs: IndexSet<u64, FxBuildHasher>,
    /// Outside-neighbor count of each member.
    outside: Vec<u32>,
    pinned: Option<VertexId>,
    clock: f64,
    jumps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMove {
    Grow(VertexId),
    Shrink(VertexId),
    /// A shrink event hit the pinned vertex and left the cluster unchanged.
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterEvent {
    pub time: f64,
    pub kind: ClusterMove,
}

pub fn cluster_init(g: &mut GraphOracle, v: VertexId) -> Result<ClusterState> {
    g.neighbors(v)?;
    let mut s = ClusterState {
        member: vec![false; g.exposed_count()],
        size: 0,
        pairs: IndexSet::with_hasher(FxBuildHasher),
        outside: vec![0; g.exposed_count()],
        pinned: None,
        clock: 0.0,
        jumps: 0,
    };
    s.add(g, v);
    Ok(s)
}

impl ClusterState {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Number of directed boundary pairs (edges leaving the cluster).
    pub fn boundary_out(&self) -> usize {
        self.pairs.len()
    }

    /// Total transition rate: growth and shrinkage each at `boundary_out`.
    pub fn total_rate(&self) -> f64 {
        2.0 * self.pairs.len() as f64
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn jump_count(&self) -> u64 {
        self.jumps
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.member.get(v.index()).copied().unwrap_or(false)
    }

    pub fn members(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.member
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| VertexId(i as u32))
    }

    pub fn outside_count(&self, v: VertexId) -> u32 {
        self.outside.get(v.index()).copied().unwrap_or(0)
    }

    /// Keep `v` in the cluster: shrink events that would remove it are blocked.
    pub fn pin(&mut self, v: Option<VertexId>) {
        self.pinned = v;
    }

    fn fit(&mut self, n: usize) {
        if self.member.len() < n {
            self.member.resize(n, false);
            self.outside.resize(n, 0);
        }
    }

    fn add(&mut self, g: &mut GraphOracle, y: VertexId) {
        g.expand(y);
        self.fit(g.exposed_count());
        self.member[y.index()] = true;
        self.size += 1;
        for &z in g.adjacent(y) {
            if self.member[z.index()] {
                self.pairs.swap_remove(&pack(z, y));
                self.outside[z.index()] -= 1;
            } else {
                self.pairs.insert(pack(y, z));
                self.outside[y.index()] += 1;
            }
        }
    }

    fn remove(&mut self, g: &GraphOracle, x: VertexId) {
        self.member[x.index()] = false;
        self.size -= 1;
        for &z in g.adjacent(x) {
            if self.member[z.index()] {
                self.pairs.insert(pack(z, x));
                self.outside[z.index()] += 1;
            } else {
                self.pairs.swap_remove(&pack(x, z));
            }
        }
        self.outside[x.index()] = 0;
    }

    /// Time of the next transition; `None` when the cluster is empty or has
    /// no boundary (it then never changes again).
    pub fn next_event_time(&self, rng: &mut SimRng) -> Option<f64> {
        (!self.pairs.is_empty()).then(|| self.clock + exp_time(rng, self.total_rate()))
    }

    /// Apply the transition scheduled at `time`.
    pub fn fire(&mut self, g: &mut GraphOracle, rng: &mut SimRng, time: f64) -> ClusterEvent {
        let (x, y) = unpack(
            *self
                .pairs
                .get_index(rng.random_range(0..self.pairs.len()))
                .expect("nonempty boundary"),
        );
        self.clock = time;
        self.jumps += 1;
        let kind = if rng.random::<bool>() {
            self.add(g, y);
            ClusterMove::Grow(y)
        } else if self.pinned == Some(x) {
            ClusterMove::Blocked
        } else {
            self.remove(g, x);
            ClusterMove::Shrink(x)
        };
        ClusterEvent { time, kind }
    }

    /// One transition; `Err` on an empty cluster, `Ok(None)` when frozen.
    pub fn step(&mut self, g: &mut GraphOracle, rng: &mut SimRng) -> Result<Option<ClusterEvent>> {
        if self.is_empty() {
            return Err(Error::Usage("cluster_step on an empty cluster".into()));
        }
        Ok(self
            .next_event_time(rng)
            .map(|t| self.fire(g, rng, t)))
    }

    /// Recount boundary pairs and per-member counts from scratch.
    pub fn audit(&self, g: &GraphOracle) -> Result<()> {
        let mut count = 0usize;
        for x in self.members() {
            let out = g
                .adjacent(x)
                .iter()
                .filter(|z| !self.contains(**z))
                .count();
            if out as u32 != self.outside[x.index()] {
                return Err(Error::InvariantViolation(format!(
                    "member {x}: outside count {} but recount {out}",
                    self.outside[x.index()]
                )));
            }
            count += out;
        }
        if count != self.pairs.len() || self.members().count() != self.size {
            return Err(Error::InvariantViolation(format!(
                "boundary {} but recount {count}",
                self.pairs.len()
            )));
        }
        Ok(())
    }
}

/// Advance `s` up to time `t_end`, calling `at_grid` with the cluster size
/// for each grid time passed. Stops early past `size_cap`, returning true.
fn run_cluster(
    s: &mut ClusterState,
    g: &mut GraphOracle,
    rng: &mut SimRng,
    grid: &[f64],
    size_cap: usize,
    mut at_grid: impl FnMut(usize, usize),
) -> bool {
    let t_end = *grid.last().expect("nonempty grid");
    let mut j = 0;
    loop {
        let next = if s.is_empty() {
            f64::INFINITY
        } else {
            s.next_event_time(rng).unwrap_or(f64::INFINITY)
        };
        while j < grid.len() && grid[j] < next {
            at_grid(j, s.size());
            j += 1;
        }
        if next > t_end {
            return false;
        }
        s.fire(g, rng, next);
        if s.size() > size_cap {
            // Scored as surviving for the remaining grid times.
            while j < grid.len() {
                at_grid(j, usize::MAX);
                j += 1;
            }
            return true;
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return config("time grid must be nonempty, nonnegative and strictly increasing");
    }
    Ok(())
}

/// Dual estimate of p_t(v) = P(cluster of v nonempty at t) on a grid.
#[allow(clippy::too_many_arguments)]
pub fn survival_series(
    spec: &GraphSpec,
    mode: TreeMode,
    v: VertexId,
    grid: &[f64],
    reps: u64,
    seed: u64,
    size_cap: usize,
    level: f64,
) -> Result<EstimateSeries> {
    check_grid(grid)?;
    if size_cap < 1 || reps == 0 {
        return config("size_cap and replicates must be >= 1");
    }
    let source = GraphSource::new(spec, mode, false)?;
    source.check_vertex(v)?;
    let rows = run_replicates(reps, seed, |_, rng| {
        let mut g = source.instantiate(rng);
        let mut s = cluster_init(&mut g, v).expect("checked vertex");
        let mut alive = vec![0u64; grid.len() + 1];
        let capped = run_cluster(&mut s, &mut g, rng, grid, size_cap, |j, size| {
            alive[j] = u64::from(size > 0);
        });
        alive[grid.len()] = u64::from(capped);
        alive
    });
    let sums = sum_columns(&rows, grid.len() + 1);
    let cap_hits = sums[grid.len()];
    Ok(EstimateSeries::from_counts(grid, &sums[..grid.len()], reps, level, "dual").with_cap_hits(cap_hits))
}

/// E[min(tau, T)] for the cluster lifetime tau, with its standard error.
///
/// On recurrent graphs E[tau] itself is infinite; only truncated means are
/// reported.
pub fn truncated_mean_lifetime(
    spec: &GraphSpec,
    mode: TreeMode,
    v: VertexId,
    horizon: f64,
    reps: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(horizon > 0.0) || reps < 2 {
        return config("need horizon > 0 and at least 2 replicates");
    }
    let source = GraphSource::new(spec, mode, false)?;
    source.check_vertex(v)?;
    let lifetimes = run_replicates(reps, seed, |_, rng| {
        let mut g = source.instantiate(rng);
        let mut s = cluster_init(&mut g, v).expect("checked vertex");
        loop {
            match s.next_event_time(rng) {
                Some(t) if t < horizon => {
                    s.fire(&mut g, rng, t);
                    if s.is_empty() {
                        return t;
                    }
                }
                _ => return horizon,
            }
        }
    });
    Ok(mean_se(&lifetimes))
}

/// P(sigma_t > u) through the dual: the backward cluster from v with v
/// pinned for backward time u - t, then free for time t. v stays vacant on
/// [t, u] exactly when this cluster is empty at the end.
pub fn sigma_tail_dual(
    spec: &GraphSpec,
    mode: TreeMode,
    v: VertexId,
    t: f64,
    u: f64,
    reps: u64,
    seed: u64,
    level: f64,
) -> Result<EstimateRow> {
    if !(u > t && t >= 0.0) || reps == 0 {
        return config(format!("need u > t >= 0 and reps >= 1, got t={t}, u={u}"));
    }
    let source = GraphSource::new(spec, mode, false)?;
    source.check_vertex(v)?;
    let empty = run_replicates(reps, seed, |_, rng| {
        let mut g = source.instantiate(rng);
        let mut s = cluster_init(&mut g, v).expect("checked vertex");
        s.pin(Some(v));
        let mut phase_end = u - t;
        let mut pinned = true;
        loop {
            let next = s.next_event_time(rng).unwrap_or(f64::INFINITY);
            if next > phase_end {
                if pinned {
                    // Memorylessness lets the pending event be redrawn.
                    s.clock = phase_end;
                    s.pin(None);
                    pinned = false;
                    phase_end = u;
                    continue;
                }
                return u64::from(s.is_empty());
            }
            s.fire(&mut g, rng, next);
            if s.is_empty() {
                return 1;
            }
        }
    });
    let k = empty.iter().sum::<u64>();
    Ok(EstimateRow::from_counts(u, k, reps, level, "dual_sigma_tail"))
}

/// One step of a jump-indexed trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpRecord {
    pub index: u64,
    pub size: usize,
    pub boundary_out: usize,
    pub clock: f64,
    /// Running maximum exposed degree D_k at this point.
    pub max_exposed_degree: u32,
}

/// Cluster sizes at jump times t_0 < t_1 < ... . After absorption, padding
/// jumps at rate 1 keep the sequence infinite (size stays 0).
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTrace {
    pub records: Vec<JumpRecord>,
}

pub fn jump_trace(
    g: &mut GraphOracle,
    v: VertexId,
    n_jumps: u64,
    rng: &mut SimRng,
) -> Result<JumpTrace> {
    let mut s = cluster_init(g, v)?;
    let mut records = Vec::with_capacity(n_jumps as usize + 1);
    let mut clock = 0.0;
    let record = |s: &ClusterState, g: &GraphOracle, i: u64, clock: f64| JumpRecord {
        index: i,
        size: s.size(),
        boundary_out: s.boundary_out(),
        clock,
        max_exposed_degree: g.exposed_max_degree().max_degree,
    };
    records.push(record(&s, g, 0, 0.0));
    for i in 1..=n_jumps {
        if s.is_empty() {
            clock += exp_time(rng, 1.0);
        } else {
            match s.next_event_time(rng) {
                Some(t) => {
                    s.fire(g, rng, t);
                    clock = t;
                }
                // A cluster covering a whole finite graph never moves again.
                None => return config("cluster has no boundary; jump trace is finite"),
            }
        }
        records.push(record(&s, g, i, clock));
    }
    Ok(JumpTrace { records })
}

/// Aggregated jump-indexed statistics over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleStats {
    pub reps: u64,
    /// Mean cluster size at jump index i = 0..=n_jumps.
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// (threshold m, empirical P(sup_i size > m), standard error)
    pub sup_exceed: Vec<(f64, f64, f64)>,
    /// Steps where 2 * boundary exceeded 2 * D_k * size (must be zero).
    pub rate_bound_violations: u64,
}

#[derive(Clone)]
struct TraceAcc {
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
    exceed: Vec<u64>,
    violations: u64,
}

/// Means are reported for jump indices 0..=n_jumps; the supremum behind
/// `sup_exceed` is taken over the first `sup_jumps` jumps.
#[allow(clippy::too_many_arguments)]
pub fn martingale_trace(
    spec: &GraphSpec,
    mode: TreeMode,
    v: VertexId,
    n_jumps: u64,
    sup_jumps: u64,
    thresholds: &[f64],
    reps: u64,
    seed: u64,
) -> Result<MartingaleStats> {
    if n_jumps < 1 || reps < 2 {
        return config("need n_jumps >= 1 and at least 2 replicates");
    }
    let source = GraphSource::new(spec, mode, false)?;
    source.check_vertex(v)?;
    let width = n_jumps as usize + 1;
    let run_to = n_jumps.max(sup_jumps) as usize + 1;
    let acc = fold_replicates(
        reps,
        seed,
        || TraceAcc {
            sum: vec![0; width],
            sum_sq: vec![0; width],
            exceed: vec![0; thresholds.len()],
            violations: 0,
        },
        |acc, _, rng| {
            let mut g = source.instantiate(rng);
            let mut s = cluster_init(&mut g, v).expect("checked vertex");
            let mut sup = 1usize;
            acc.sum[0] += 1;
            acc.sum_sq[0] += 1;
            for i in 1..run_to {
                let Some(t) = s.next_event_time(rng) else {
                    break;
                };
                s.fire(&mut g, rng, t);
                let size = s.size();
                if size == 0 {
                    // Padding jumps contribute zeros from here on.
                    break;
                }
                let d = g.exposed_max_degree().max_degree as usize;
                if s.boundary_out() > d * size {
                    acc.violations += 1;
                }
                if i as u64 <= sup_jumps {
                    sup = sup.max(size);
                }
                if i < width {
                    acc.sum[i] += size as u64;
                    acc.sum_sq[i] += (size * size) as u64;
                }
            }
            for (e, &m) in acc.exceed.iter_mut().zip(thresholds) {
                *e += u64::from(sup as f64 > m);
            }
        },
        |mut a, b| {
            for (x, y) in a.sum.iter_mut().zip(&b.sum) {
                *x += y;
            }
            for (x, y) in a.sum_sq.iter_mut().zip(&b.sum_sq) {
                *x += y;
            }
            for (x, y) in a.exceed.iter_mut().zip(&b.exceed) {
                *x += y;
            }
            a.violations += b.violations;
            a
        },
    );
    let n = reps as f64;
    let mean: Vec<f64> = acc.sum.iter().map(|&s| s as f64 / n).collect();
    let se = acc
        .sum_sq
        .iter()
        .zip(&mean)
        .map(|(&sq, &m)| ((sq as f64 / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    let sup_exceed = thresholds
        .iter()
        .zip(&acc.exceed)
        .map(|(&m, &k)| {
            let p = k as f64 / n;
            (m, p, binomial_se(p, reps))
        })
        .collect();
    Ok(MartingaleStats {
        reps,
        mean,
        se,
        sup_exceed,
        rate_bound_violations: acc.violations,
    })
}

/// Monte Carlo survival of the comparison walk W: from k it moves to k+1
/// and to k-1 each at rate `d * k`, absorbed at 0, started from 1.
pub fn branching_walk_survival(
    d: f64,
    grid: &[f64],
    reps: u64,
    seed: u64,
    level: f64,
) -> Result<EstimateSeries> {
    check_grid(grid)?;
    if !(d > 0.0) {
        return config("branching rate must be positive");
    }
    let t_end = *grid.last().expect("nonempty");
    let rows = run_replicates(reps, seed, |_, rng| {
        let mut k: u64 = 1;
        let mut clock = 0.0;
        let mut alive = vec![0u64; grid.len()];
        let mut j = 0;
        loop {
            let next = if k == 0 {
                f64::INFINITY
            } else {
                clock + exp_time(rng, 2.0 * d * k as f64)
            };
            while j < grid.len() && grid[j] < next {
                alive[j] = u64::from(k > 0);
                j += 1;
            }
            if next > t_end {
                return alive;
            }
            clock = next;
            if rng.random::<bool>() {
                k += 1;
            } else {
                k -= 1;
            }
        }
    });
    let counts = sum_columns(&rows, grid.len());
    Ok(EstimateSeries::from_counts(grid, &counts, reps, level, "branching"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_graph;
    use crate::rng::rng_stream;
    use proptest::prelude::*;

    fn graph(s: &str) -> GraphOracle {
        make_graph(&s.parse().unwrap(), 5).unwrap()
    }

    #[test]
    fn init_boundary() {
        let mut z = graph("line");
        assert_eq!(cluster_init(&mut z, VertexId::ROOT).unwrap().boundary_out(), 2);
        let mut t = graph("regtree:3");
        assert_eq!(cluster_init(&mut t, VertexId::ROOT).unwrap().boundary_out(), 3);
        let mut gw = graph("gw:geom:0.3");
        let root_deg = gw.degree(VertexId::ROOT) as usize;
        let s = cluster_init(&mut gw, VertexId::ROOT).unwrap();
        assert_eq!(s.boundary_out(), root_deg);
        assert_eq!(s.size(), 1);
        assert_eq!(s.clock(), 0.0);
    }

    #[test]
    fn line_intervals_have_rate_four() {
        let mut z = graph("line");
        let mut rng = rng_stream(8, 0);
        let mut s = cluster_init(&mut z, VertexId::ROOT).unwrap();
        for _ in 0..5000 {
            if s.is_empty() {
                s = cluster_init(&mut z, VertexId::ROOT).unwrap();
            }
            assert_eq!(s.total_rate(), 4.0);
            // Members form an interval.
            let mut xs: Vec<i64> = s.members().map(|m| z.coordinate(m).unwrap()).collect();
            xs.sort_unstable();
            assert!(xs.windows(2).all(|w| w[1] == w[0] + 1));
            s.step(&mut z, &mut rng).unwrap();
        }
    }

    #[test]
    fn singleton_grows_or_dies_evenly() {
        let n = 20_000;
        let mut grows = 0;
        for i in 0..n {
            let mut t = graph("regtree:3");
            let mut rng = rng_stream(4, i);
            let mut s = cluster_init(&mut t, VertexId::ROOT).unwrap();
            s.step(&mut t, &mut rng).unwrap();
            match s.size() {
                2 => grows += 1,
                0 => {}
                k => panic!("size {k} after one jump"),
            }
        }
        let p = grows as f64 / n as f64;
        assert!((p - 0.5).abs() < 3.0 * binomial_se(0.5, n), "{p}");
    }

    #[test]
    fn empty_cluster_step_is_usage_error() {
        let mut k2 = graph("complete:2");
        let mut rng = rng_stream(0, 0);
        let mut s = cluster_init(&mut k2, VertexId(0)).unwrap();
        while !s.is_empty() && s.size() < 2 {
            s.step(&mut k2, &mut rng).unwrap();
        }
        if s.is_empty() {
            assert!(matches!(s.step(&mut k2, &mut rng), Err(Error::Usage(_))));
        } else {
            // Whole graph: no boundary, frozen forever.
            assert_eq!(s.step(&mut k2, &mut rng).unwrap(), None);
        }
    }

    #[test]
    fn survival_t0_and_k2() {
        let spec: GraphSpec = "complete:2".parse().unwrap();
        let s = survival_series(&spec, TreeMode::Annealed, VertexId(0), &[0.0, 1.0], 100_000, 3, 10, 0.99)
            .unwrap();
        assert_eq!(s.rows[0].estimate, 1.0);
        let exact = (1.0 + (-2.0f64).exp()) / 2.0;
        assert!(s.rows[1].ci_low <= exact && exact <= s.rows[1].ci_high, "{:?}", s.rows[1]);
    }

    #[test]
    fn duality_against_direct_on_cycle() {
        let spec: GraphSpec = "cycle:6".parse().unwrap();
        let d = survival_series(&spec, TreeMode::Annealed, VertexId(0), &[2.0], 50_000, 1, 1000, 0.99)
            .unwrap();
        let c = crate::crw::crw_occupancy_series(&spec, TreeMode::Annealed, VertexId(0), &[2.0], 50_000, 2, 0.99)
            .unwrap();
        let (a, b) = (&d.rows[0], &c.rows[0]);
        let pooled = (a.se().powi(2) + b.se().powi(2)).sqrt();
        assert!((a.estimate - b.estimate).abs() < 3.0 * pooled, "{a:?} {b:?}");
    }

    #[test]
    fn cap_hits_flag_bias() {
        let spec: GraphSpec = "regtree:3".parse().unwrap();
        let s = survival_series(&spec, TreeMode::Annealed, VertexId::ROOT, &[1.0, 50.0], 2000, 1, 3, 0.99)
            .unwrap();
        assert!(s.cap_hit_fraction > 0.01);
        assert!(s.cap_biased);
        assert!(s.rows.iter().all(|r| r.cap_hit == s.cap_hit_fraction));
    }

    #[test]
    fn trace_mean_starts_at_one_and_padding_is_zero() {
        let spec: GraphSpec = "regtree:3".parse().unwrap();
        let m = martingale_trace(&spec, TreeMode::Annealed, VertexId::ROOT, 50, 50, &[5.0], 2000, 1).unwrap();
        assert_eq!(m.mean[0], 1.0);
        assert_eq!(m.rate_bound_violations, 0);
        let mut g = graph("regtree:3");
        let mut rng = rng_stream(2, 0);
        let tr = jump_trace(&mut g, VertexId::ROOT, 200, &mut rng).unwrap();
        assert_eq!(tr.records.len(), 201);
        for w in tr.records.windows(2) {
            let (a, b) = (w[0].size as i64, w[1].size as i64);
            assert!((a - b).abs() == 1 || (a == 0 && b == 0));
            assert!(w[1].clock > w[0].clock);
        }
    }

    #[test]
    fn dual_sigma_tail_zero_window() {
        let spec: GraphSpec = "cycle:5".parse().unwrap();
        let r = sigma_tail_dual(&spec, TreeMode::Annealed, VertexId(0), 0.0, 2.0, 500, 1, 0.99).unwrap();
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn branching_walk_matches_closed_form() {
        let s = branching_walk_survival(2.0, &[0.5, 1.0], 50_000, 7, 0.99).unwrap();
        for r in &s.rows {
            let exact = 1.0 / (1.0 + 2.0 * r.t);
            assert!((r.estimate - exact).abs() < 3.0 * r.se(), "{r:?}");
        }
    }

    #[test]
    fn truncated_lifetime_grows_with_horizon() {
        let spec: GraphSpec = "line".parse().unwrap();
        let (a, _) = truncated_mean_lifetime(&spec, TreeMode::Annealed, VertexId::ROOT, 5.0, 20_000, 1).unwrap();
        let (b, _) = truncated_mean_lifetime(&spec, TreeMode::Annealed, VertexId::ROOT, 50.0, 20_000, 1).unwrap();
        assert!(a <= 5.0 && b > a);
    }

    fn audit_run(spec: &str, seed: u64, steps: usize) {
        let mut g = graph(spec);
        let bounded = g.spec().max_degree();
        let infinite = !g.spec().is_finite();
        let mut rng = rng_stream(seed, 0);
        let mut s = cluster_init(&mut g, VertexId::ROOT).unwrap();
        for _ in 0..steps {
            let before = s.size() as i64;
            match s.step(&mut g, &mut rng) {
                Ok(Some(_)) => {}
                _ => break,
            }
            s.audit(&g).unwrap();
            assert_eq!((s.size() as i64 - before).abs(), 1, "skip-free");
            if s.is_empty() {
                break;
            }
            let d = g.exposed_max_degree().max_degree as f64;
            assert!(s.total_rate() <= 2.0 * d * s.size() as f64);
            if let Some(dmax) = bounded {
                assert!(s.total_rate() <= 2.0 * dmax as f64 * s.size() as f64);
            }
            if infinite {
                assert!(s.total_rate() >= 2.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn boundary_bookkeeping(seed in 0u64..100_000, which in 0usize..6) {
            let spec = ["regtree:3", "line", "gw:geom:0.5", "torus:2:5", "cycle:7", "gw:poisson:2"][which];
            audit_run(spec, seed, 400);
        }
    }
}
