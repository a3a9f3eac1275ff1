//! Coalescing random walk, simulated event by event.
//!
//! Every directed edge (u, w) carries a unit-rate clock; when it rings and
//! u is occupied the particle jumps to w, merging with any particle already
//! there. Forward simulation uses the Gillespie direct method over occupied
//! vertices: the aggregate rate is the sum of their degrees. For coupling
//! experiments the same state can instead be driven by an explicit stream of
//! edge rings ([`record_arrows`], [`CrwState::apply_arrow`]).

use crate::error::{config, Result};
use crate::graph::{GraphOracle, GraphSource, GraphSpec, TreeMode, VertexId};
use crate::rng::{exp_time, SimRng};
use crate::runner::{run_replicates, sum_columns};
use crate::stats::{binomial_se, EstimateSeries};
use rand::Rng;

const ABSENT: u32 = u32::MAX;

/// Initial particle configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSet {
    /// One particle on every vertex of a finite graph or window.
    All,
    Vertices(Vec<VertexId>),
}

/// The occupied set, the simulation clock and the aggregate jump rate.
#[derive(Debug, Clone)]
pub struct CrwState {
    list: Vec<VertexId>,
    pos: Vec<u32>,
    clock: f64,
    total_rate: u64,
}

/// One particle jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrwEvent {
    pub time: f64,
    pub from: VertexId,
    pub to: VertexId,
    pub merged: bool,
}

/// A ring of the clock on directed edge `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrow {
    pub time: f64,
    pub from: VertexId,
    pub to: VertexId,
}

pub fn crw_init(g: &mut GraphOracle, initial: &InitialSet) -> Result<CrwState> {
    let vertices: Vec<VertexId> = match initial {
        InitialSet::All => {
            let n = g.expose_all()?;
            (0..n as u32).map(VertexId).collect()
        }
        InitialSet::Vertices(vs) => vs.clone(),
    };
    if vertices.is_empty() {
        return config("initial particle set is empty");
    }
    let mut s = CrwState {
        list: Vec::with_capacity(vertices.len()),
        pos: vec![ABSENT; g.exposed_count()],
        clock: 0.0,
        total_rate: 0,
    };
    for v in vertices {
        if !g.is_exposed(v) {
            return config(format!("initial vertex {v} is not in the graph"));
        }
        if !s.is_occupied(v) {
            s.insert(v, g.degree(v));
        }
    }
    Ok(s)
}

impl CrwState {
    #[inline]
    pub fn is_occupied(&self, v: VertexId) -> bool {
        self.pos.get(v.index()).is_some_and(|&p| p != ABSENT)
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn total_rate(&self) -> u64 {
        self.total_rate
    }

    pub fn occupied(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.list.iter().copied()
    }

    /// Sum of degrees of occupied vertices, recomputed from scratch.
    pub fn recount_rate(&self, g: &GraphOracle) -> u64 {
        self.list.iter().map(|&v| g.degree(v) as u64).sum()
    }

    fn insert(&mut self, v: VertexId, degree: u32) {
        if v.index() >= self.pos.len() {
            self.pos.resize(v.index() + 1, ABSENT);
        }
        self.pos[v.index()] = self.list.len() as u32;
        self.list.push(v);
        self.total_rate += degree as u64;
    }

    fn remove(&mut self, v: VertexId, degree: u32) {
        let i = self.pos[v.index()] as usize;
        self.list.swap_remove(i);
        if let Some(&moved) = self.list.get(i) {
            self.pos[moved.index()] = i as u32;
        }
        self.pos[v.index()] = ABSENT;
        self.total_rate -= degree as u64;
    }

    /// Move the particle at `u` to `w`, merging if `w` is occupied.
    fn jump(&mut self, g: &GraphOracle, u: VertexId, w: VertexId) -> bool {
        self.remove(u, g.degree(u));
        if self.is_occupied(w) {
            true
        } else {
            self.insert(w, g.degree(w));
            false
        }
    }

    /// Pick the vertex of the next jump: occupied `u` with probability
    /// deg(u)/total_rate, then a uniform neighbor.
    fn pick_move(&self, g: &mut GraphOracle, rng: &mut SimRng) -> (VertexId, VertexId) {
        let dmax = g.exposed_max_degree().max_degree;
        let u = loop {
            let u = self.list[rng.random_range(0..self.list.len())];
            if rng.random_range(0..dmax) < g.degree(u) {
                break u;
            }
        };
        let w = g.neighbor(u, rng.random_range(0..g.degree(u) as usize));
        (u, w)
    }

    /// Time of the next event, or `None` in a terminal (rate-0) state.
    pub fn next_event_time(&self, rng: &mut SimRng) -> Option<f64> {
        (self.total_rate > 0).then(|| self.clock + exp_time(rng, self.total_rate as f64))
    }

    /// Perform the jump of an event scheduled at `time`.
    pub fn fire(&mut self, g: &mut GraphOracle, rng: &mut SimRng, time: f64) -> CrwEvent {
        let (u, w) = self.pick_move(g, rng);
        self.clock = time;
        let merged = self.jump(g, u, w);
        CrwEvent {
            time,
            from: u,
            to: w,
            merged,
        }
    }

    /// One Gillespie step. `None` when no particle can move.
    pub fn step(&mut self, g: &mut GraphOracle, rng: &mut SimRng) -> Option<CrwEvent> {
        let t = self.next_event_time(rng)?;
        Some(self.fire(g, rng, t))
    }

    /// Apply one edge ring from the graphical representation.
    pub fn apply_arrow(&mut self, g: &GraphOracle, arrow: &Arrow) -> Option<bool> {
        self.clock = arrow.time;
        self.is_occupied(arrow.from)
            .then(|| self.jump(g, arrow.from, arrow.to))
    }
}

/// Sample the graphical representation on a fully exposed finite graph:
/// a Poisson stream of rings over all directed edges up to `horizon`.
pub fn record_arrows(g: &mut GraphOracle, horizon: f64, rng: &mut SimRng) -> Result<Vec<Arrow>> {
    let n = g.expose_all()?;
    let edges: Vec<(VertexId, VertexId)> = (0..n as u32)
        .map(VertexId)
        .flat_map(|u| g.adjacent(u).iter().map(move |&w| (u, w)).collect::<Vec<_>>())
        .collect();
    let rate = edges.len() as f64;
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += exp_time(rng, rate);
        if t > horizon {
            return Ok(out);
        }
        let (from, to) = edges[rng.random_range(0..edges.len())];
        out.push(Arrow { time: t, from, to });
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return config("time grid is empty");
    }
    if grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return config("time grid must be nonnegative and strictly increasing");
    }
    Ok(())
}

/// Run one trajectory from all-occupied and record whether `v` is occupied
/// at each grid time.
pub fn occupancy_trajectory(
    g: &mut GraphOracle,
    v: VertexId,
    grid: &[f64],
    rng: &mut SimRng,
) -> Vec<u64> {
    let mut s = crw_init(g, &InitialSet::All).expect("finite graph");
    let mut out = Vec::with_capacity(grid.len());
    let t_end = *grid.last().expect("nonempty grid");
    loop {
        let next = s.next_event_time(rng).unwrap_or(f64::INFINITY);
        while out.len() < grid.len() && grid[out.len()] < next {
            out.push(u64::from(s.is_occupied(v)));
        }
        if next > t_end {
            return out;
        }
        s.fire(g, rng, next);
    }
}

/// Monte Carlo estimate of p_t(v) = P(v occupied at t) on a grid, one
/// trajectory per replicate reused across grid times.
pub fn crw_occupancy_series(
    spec: &GraphSpec,
    mode: TreeMode,
    v: VertexId,
    grid: &[f64],
    reps: u64,
    seed: u64,
    level: f64,
) -> Result<EstimateSeries> {
    check_grid(grid)?;
    if reps == 0 {
        return config("replicates must be >= 1");
    }
    let source = GraphSource::new(spec, mode, true)?;
    source.check_vertex(v)?;
    let rows = run_replicates(reps, seed, |_, rng| {
        let mut g = source.instantiate(rng);
        occupancy_trajectory(&mut g, v, grid, rng)
    });
    let counts = sum_columns(&rows, grid.len());
    Ok(EstimateSeries::from_counts(grid, &counts, reps, level, "direct"))
}

/// First occupancy time of the target at or after the window start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSample {
    pub t: f64,
    pub sigma: f64,
    pub censored: bool,
}

/// One replicate of sigma_t: run from all-occupied to `horizon`.
pub fn sigma_trajectory(
    g: &mut GraphOracle,
    v: VertexId,
    t: f64,
    horizon: f64,
    rng: &mut SimRng,
) -> SigmaSample {
    let mut s = crw_init(g, &InitialSet::All).expect("finite graph");
    loop {
        let next = s.next_event_time(rng).unwrap_or(f64::INFINITY);
        if next > t && s.clock() <= t && s.is_occupied(v) {
            // Occupied at time t itself.
            return SigmaSample { t, sigma: t, censored: false };
        }
        if next > horizon {
            return SigmaSample {
                t,
                sigma: horizon,
                censored: true,
            };
        }
        let ev = s.fire(g, rng, next);
        if next >= t && ev.to == v {
            return SigmaSample {
                t,
                sigma: next,
                censored: false,
            };
        }
    }
}

pub fn sigma_samples(
    spec: &GraphSpec,
    mode: TreeMode,
    v: VertexId,
    t: f64,
    horizon: f64,
    reps: u64,
    seed: u64,
) -> Result<Vec<SigmaSample>> {
    if !(horizon > t && t >= 0.0) {
        return config(format!("need horizon > t >= 0, got t={t}, horizon={horizon}"));
    }
    let source = GraphSource::new(spec, mode, true)?;
    source.check_vertex(v)?;
    Ok(run_replicates(reps, seed, |_, rng| {
        let mut g = source.instantiate(rng);
        sigma_trajectory(&mut g, v, t, horizon, rng)
    }))
}

/// Empirical P(sigma_t > u) and its standard error.
pub fn sigma_tail(samples: &[SigmaSample], u: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return config("no sigma samples");
    }
    if let Some(s) = samples.iter().find(|s| s.censored && s.sigma < u) {
        return config(format!("horizon {} is before u = {u}", s.sigma));
    }
    let n = samples.len() as u64;
    let k = samples.iter().filter(|s| s.sigma > u || (s.censored && s.sigma >= u)).count();
    let p = k as f64 / n as f64;
    Ok((p, binomial_se(p, n)))
}

/// Result of comparing estimates on windows of radius R and 2R.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCheck {
    /// (t, estimate at R, estimate at 2R, pooled standard error)
    pub rows: Vec<(f64, f64, f64, f64)>,
    pub accepted: bool,
}

/// Truncation check for direct estimation on an infinite graph: accept the
/// radius when the R and 2R estimates differ by less than one pooled
/// standard error at every grid time.
pub fn validate_window(
    spec: &GraphSpec,
    v: VertexId,
    grid: &[f64],
    radius: u32,
    reps: u64,
    seed: u64,
) -> Result<WindowCheck> {
    if spec.is_explicit() {
        return config("window validation applies to line, regtree and gw graphs");
    }
    let base = GraphSpec {
        window: None,
        ..spec.clone()
    };
    let small = crw_occupancy_series(
        &base.clone().with_window(Some(radius))?,
        TreeMode::Annealed,
        v,
        grid,
        reps,
        seed,
        0.99,
    )?;
    let large = crw_occupancy_series(
        &base.with_window(Some(2 * radius))?,
        TreeMode::Annealed,
        v,
        grid,
        reps,
        seed.wrapping_add(1),
        0.99,
    )?;
    let rows: Vec<_> = small
        .rows
        .iter()
        .zip(&large.rows)
        .map(|(a, b)| {
            let pooled = (a.se().powi(2) + b.se().powi(2)).sqrt();
            (a.t, a.estimate, b.estimate, pooled)
        })
        .collect();
    let accepted = rows.iter().all(|&(_, a, b, se)| (a - b).abs() <= se);
    Ok(WindowCheck { rows, accepted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_graph;
    use crate::rng::rng_stream;
    use proptest::prelude::*;

    fn graph(s: &str) -> GraphOracle {
        make_graph(&s.parse().unwrap(), 0).unwrap()
    }

    #[test]
    fn init_rates() {
        let mut c4 = graph("cycle:4");
        let s = crw_init(&mut c4, &InitialSet::All).unwrap();
        assert_eq!((s.len(), s.total_rate()), (4, 8));
        let mut p3 = graph("path:3");
        let s = crw_init(&mut p3, &InitialSet::Vertices(vec![VertexId(1)])).unwrap();
        assert_eq!(s.total_rate(), 2);
        let mut k2 = graph("complete:2");
        let s = crw_init(&mut k2, &InitialSet::All).unwrap();
        assert_eq!(s.total_rate(), 2);
    }

    #[test]
    fn empty_initial_set_rejected() {
        let mut c4 = graph("cycle:4");
        assert!(crw_init(&mut c4, &InitialSet::Vertices(vec![])).is_err());
        let mut t = graph("regtree:3");
        assert!(crw_init(&mut t, &InitialSet::All).is_err());
    }

    #[test]
    fn k2_first_event_coalesces() {
        for i in 0..50 {
            let mut g = graph("complete:2");
            let mut rng = rng_stream(3, i);
            let mut s = crw_init(&mut g, &InitialSet::All).unwrap();
            let ev = s.step(&mut g, &mut rng).unwrap();
            assert!(ev.merged);
            assert_eq!(s.len(), 1);
        }
    }

    #[test]
    fn single_particle_never_merges() {
        let mut g = graph("cycle:4");
        let mut rng = rng_stream(1, 0);
        let mut s = crw_init(&mut g, &InitialSet::Vertices(vec![VertexId(2)])).unwrap();
        let mut gaps = Vec::new();
        for _ in 0..20_000 {
            let before = s.clock();
            let ev = s.step(&mut g, &mut rng).unwrap();
            assert!(!ev.merged);
            assert_eq!(s.len(), 1);
            gaps.push(ev.time - before);
        }
        // Exponential(2) holding times.
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn rate_audit_along_trajectory() {
        for spec in ["cycle:8", "star:4", "path:5", "bintree:3", "torus:2:5"] {
            let mut g = graph(spec);
            let mut rng = rng_stream(11, 0);
            let mut s = crw_init(&mut g, &InitialSet::All).unwrap();
            let mut last = s.len();
            while s.step(&mut g, &mut rng).is_some() {
                assert_eq!(s.total_rate(), s.recount_rate(&g));
                assert!(s.len() <= last);
                assert!(!s.is_empty());
                last = s.len();
                if s.clock() > 20.0 {
                    break;
                }
            }
        }
    }

    #[test]
    fn t_zero_estimate_is_one() {
        let spec: GraphSpec = "path:4".parse().unwrap();
        let s = crw_occupancy_series(&spec, TreeMode::Annealed, VertexId(2), &[0.0, 0.5], 200, 1, 0.99)
            .unwrap();
        assert_eq!(s.rows[0].estimate, 1.0);
    }

    #[test]
    fn k2_occupancy_matches_closed_form() {
        let spec: GraphSpec = "complete:2".parse().unwrap();
        let s = crw_occupancy_series(&spec, TreeMode::Annealed, VertexId(0), &[1.0], 100_000, 9, 0.99)
            .unwrap();
        let exact = (1.0 + (-2.0f64).exp()) / 2.0;
        let r = &s.rows[0];
        assert!(r.ci_low <= exact && exact <= r.ci_high, "{r:?} vs {exact}");
    }

    #[test]
    fn vertex_transitive_exchangeability() {
        let spec: GraphSpec = "cycle:6".parse().unwrap();
        let a = crw_occupancy_series(&spec, TreeMode::Annealed, VertexId(0), &[1.0], 40_000, 5, 0.99)
            .unwrap();
        let b = crw_occupancy_series(&spec, TreeMode::Annealed, VertexId(3), &[1.0], 40_000, 6, 0.99)
            .unwrap();
        let (ra, rb) = (&a.rows[0], &b.rows[0]);
        let pooled = (ra.se().powi(2) + rb.se().powi(2)).sqrt();
        assert!((ra.estimate - rb.estimate).abs() < 3.0 * pooled);
    }

    #[test]
    fn sigma_at_zero_is_zero() {
        let spec: GraphSpec = "cycle:5".parse().unwrap();
        let s = sigma_samples(&spec, TreeMode::Annealed, VertexId(0), 0.0, 3.0, 100, 2).unwrap();
        assert!(s.iter().all(|x| x.sigma == 0.0 && !x.censored));
    }

    #[test]
    fn sigma_samples_respect_window() {
        let spec: GraphSpec = "cycle:6".parse().unwrap();
        let s = sigma_samples(&spec, TreeMode::Annealed, VertexId(0), 1.0, 4.0, 2000, 4).unwrap();
        for x in &s {
            assert!(x.sigma >= 1.0 && x.sigma <= 4.0);
            if x.censored {
                assert_eq!(x.sigma, 4.0);
            }
        }
        let (p, _) = sigma_tail(&s, 4.0).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(sigma_tail(&s, 5.0).is_err());
    }

    #[test]
    fn bad_grid_and_vertex() {
        let spec: GraphSpec = "cycle:4".parse().unwrap();
        assert!(crw_occupancy_series(&spec, TreeMode::Annealed, VertexId(0), &[1.0, 0.5], 10, 0, 0.99)
            .is_err());
        assert!(crw_occupancy_series(&spec, TreeMode::Annealed, VertexId(9), &[1.0], 10, 0, 0.99)
            .is_err());
        assert!(sigma_samples(&spec, TreeMode::Annealed, VertexId(0), 2.0, 1.0, 10, 0).is_err());
    }

    #[test]
    fn window_validation_mechanics() {
        let spec: GraphSpec = "line".parse().unwrap();
        // Radius 1 vs 2 at t = 3 is grossly truncated.
        let bad = validate_window(&spec, VertexId::ROOT, &[3.0], 1, 20_000, 1).unwrap();
        assert!(!bad.accepted);
        assert!(validate_window(&"cycle:5".parse().unwrap(), VertexId(0), &[1.0], 2, 10, 0).is_err());
    }

    fn monotone_coupling_case(spec: &str, seed: u64, a_mask: u32, extra_mask: u32) {
        let mut g = graph(spec);
        let n = g.expose_all().unwrap() as u32;
        let pick = |mask: u32| -> Vec<VertexId> {
            (0..n).filter(|i| mask >> i & 1 == 1).map(VertexId).collect()
        };
        let a_set = pick(a_mask | 1);
        let b_set = pick(a_mask | extra_mask | 1);
        let mut rng = rng_stream(seed, 0);
        let arrows = record_arrows(&mut g, 5.0, &mut rng).unwrap();
        let mut a = crw_init(&mut g, &InitialSet::Vertices(a_set)).unwrap();
        let mut b = crw_init(&mut g, &InitialSet::Vertices(b_set)).unwrap();
        for arrow in &arrows {
            a.apply_arrow(&g, arrow);
            b.apply_arrow(&g, arrow);
            assert!(a.occupied().all(|v| b.is_occupied(v)), "A-state escaped B-state");
            assert_eq!(a.total_rate(), a.recount_rate(&g));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn coupling_is_monotone(seed in 0u64..10_000, a in 0u32..256, extra in 0u32..256,
                                which in 0usize..3) {
            let spec = ["cycle:8", "bintree:2", "star:6"][which];
            monotone_coupling_case(spec, seed, a, extra);
        }
    }
}
