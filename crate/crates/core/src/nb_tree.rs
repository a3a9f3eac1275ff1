//! Non-backtracking coalescing walks on rooted trees.
//!
//! Three processes share one finite rooted tree:
//!
//! * the full model: each particle remembers the edge it arrived by and may
//!   not cross it next; particles heading away from the root are the ones
//!   annihilated in collisions with rootward particles;
//! * the zap model, where a particle simply moves rootward at rate 1 and is
//!   deleted at the rate it would otherwise have turned away;
//! * the dual voter cluster with an absorbing extra vertex, whose size is a
//!   martingale because its grow and shrink rates coincide.
//!
//! Both forward models use nominal tree degrees (root degree = number of
//! children). On a finite window, a move across the window boundary heads
//! away from the root and deletes the particle. The dual counts the edge
//! from the root to the absorbing vertex, so every vertex has augmented
//! degree children + 1 there.

use crate::error::{config, Error, Result};
use crate::graph::{GraphOracle, GraphSource, GraphSpec, TreeMode, VertexId};
use crate::rng::{exp_time, SimRng};
use crate::runner::{fold_replicates, run_replicates, sum_columns};
use crate::stats::{mean_se, EstimateSeries};
use indexmap::{IndexMap, IndexSet};
use rand::Rng;
use rustc_hash::FxBuildHasher;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    TowardsRoot,
    Away,
}

/// An edge at a vertex, named from that vertex's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    Parent,
    /// Index among the nominal children.
    Child(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NbParticle {
    pub position: VertexId,
    pub forbidden: Edge,
    pub direction: Direction,
}

/// A fully exposed finite rooted tree with the nominal-degree view.
#[derive(Debug, Clone)]
pub struct RootedTree {
    g: GraphOracle,
    max_degree: u32,
}

impl RootedTree {
    pub fn new(mut g: GraphOracle) -> Result<Self> {
        if !g.spec().is_rooted_tree() {
            return config(format!("'{}' is not a rooted tree", g.spec()));
        }
        if !g.spec().is_finite() {
            return config(format!(
                "'{}' is infinite; give a depth window such as @6",
                g.spec()
            ));
        }
        let n = g.expose_all()?;
        let mut max_degree = 0;
        for i in 0..n as u32 {
            let v = VertexId(i);
            if g.nominal_children(v) == 0 {
                return config(format!(
                    "vertex {v} is a leaf; the non-backtracking model needs degree >= 2 off the root \
                     and at least one child at the root"
                ));
            }
            max_degree = max_degree.max(g.nominal_degree(v));
        }
        Ok(RootedTree { g, max_degree })
    }

    pub fn from_spec(spec: &GraphSpec, tree_seed: u64) -> Result<Self> {
        Self::new(crate::graph::make_graph(spec, tree_seed)?)
    }

    pub fn graph(&self) -> &GraphOracle {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.g.exposed_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nominal tree degree d_v.
    #[inline]
    pub fn degree(&self, v: VertexId) -> u32 {
        self.g.nominal_degree(v)
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    /// The `slot`-th edge at `v` other than `forbidden`: parent first, then
    /// children in order.
    fn allowed_edge(&self, v: VertexId, forbidden: Edge, slot: u32) -> Edge {
        let has_parent = self.g.parent(v).is_some();
        let mut k = slot;
        if has_parent && forbidden != Edge::Parent {
            if k == 0 {
                return Edge::Parent;
            }
            k -= 1;
        }
        if let Edge::Child(f) = forbidden {
            if k >= f {
                k += 1;
            }
        }
        debug_assert!(k < self.g.nominal_children(v));
        Edge::Child(k)
    }

    /// Endpoint of `edge` at `v`; `None` when it leaves the window.
    fn target(&self, v: VertexId, edge: Edge) -> Option<VertexId> {
        match edge {
            Edge::Parent => self.g.parent(v),
            Edge::Child(c) => {
                if self.g.children_in_window(v) {
                    let skip = usize::from(self.g.parent(v).is_some());
                    Some(self.g.adjacent(v)[skip + c as usize])
                } else {
                    None
                }
            }
        }
    }

    /// Edge at `w` pointing back to its neighbor `v`.
    fn back_edge(&self, v: VertexId, w: VertexId) -> Edge {
        if self.g.parent(w) == Some(v) {
            Edge::Parent
        } else {
            Edge::Child(self.g.child_index(v))
        }
    }
}

/// Ring of the clock at `vertex` selecting its `slot`-th allowed edge.
///
/// Every particle at v has exactly d_v - 1 allowed edges, so a Poisson
/// stream of rings at rate d_v - 1 per vertex, with a uniform slot, drives
/// the full and zap models together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ring {
    pub time: f64,
    pub vertex: VertexId,
    pub slot: u32,
}

/// A Poisson ring stream on the whole tree up to `horizon`.
pub fn ring_stream(tree: &RootedTree, horizon: f64, rng: &mut SimRng) -> Vec<Ring> {
    let weights: Vec<u32> = (0..tree.len() as u32)
        .map(|i| tree.degree(VertexId(i)) - 1)
        .collect();
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    let mut out = Vec::new();
    if total == 0 {
        return out;
    }
    let mut t = 0.0;
    loop {
        t += exp_time(rng, total as f64);
        if t > horizon {
            return out;
        }
        let mut x = rng.random_range(0..total);
        let v = weights
            .iter()
            .position(|&w| {
                if x < w as u64 {
                    true
                } else {
                    x -= w as u64;
                    false
                }
            })
            .expect("x < total");
        out.push(Ring {
            time: t,
            vertex: VertexId(v as u32),
            slot: x as u32,
        });
    }
}

/// One particle move in the full model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbEvent {
    pub time: f64,
    pub from: VertexId,
    /// `None` if the particle left the window.
    pub to: Option<VertexId>,
    pub before: Direction,
    pub after: Direction,
    /// Whether the mover is still alive after collisions and deletions.
    pub survived: bool,
}

/// Shared interface of the two forward models.
pub trait RootProcess {
    fn clock(&self) -> f64;
    /// Root occupation time accrued up to the clock.
    fn occupation(&self) -> f64;
    fn root_occupied(&self) -> bool;
    fn total_rate(&self) -> u64;
    fn particle_count(&self) -> usize;
    /// Run the clock forward to `to` without an event.
    fn advance(&mut self, to: f64);
    fn apply_ring(&mut self, tree: &RootedTree, ring: Ring) -> Result<()>;
    /// Uniform occupied vertex, accepted with probability (d_v - 1)/(D - 1).
    fn sample_vertex(&self, tree: &RootedTree, rng: &mut SimRng) -> VertexId;

    /// Gillespie event at `time`.
    fn fire(&mut self, tree: &RootedTree, rng: &mut SimRng, time: f64) -> Result<()> {
        let v = self.sample_vertex(tree, rng);
        let slot = rng.random_range(0..tree.degree(v) - 1);
        self.apply_ring(
            tree,
            Ring {
                time,
                vertex: v,
                slot,
            },
        )
    }

    fn next_event_time(&self, rng: &mut SimRng) -> Option<f64> {
        match self.total_rate() {
            0 => None,
            r => Some(self.clock() + exp_time(rng, r as f64)),
        }
    }
}

fn sample_weighted<'a>(
    len: usize,
    at: impl Fn(usize) -> u32 + 'a,
    tree: &RootedTree,
    rng: &mut SimRng,
) -> VertexId {
    let cap = tree.max_degree() - 1;
    loop {
        let v = VertexId(at(rng.random_range(0..len)));
        if rng.random_range(0..cap) < tree.degree(v) - 1 {
            return v;
        }
    }
}

/// The full non-backtracking model with priority to rootward particles.
#[derive(Debug, Clone)]
pub struct NbState {
    particles: IndexMap<u32, NbParticle, FxBuildHasher>,
    clock: f64,
    occupation: f64,
    total_rate: u64,
    delete_on_turn: bool,
}

/// One particle per vertex, forbidden edge uniform among the child edges,
/// all heading rootward.
pub fn nb_init(tree: &RootedTree, rng: &mut SimRng, delete_on_turn: bool) -> NbState {
    let mut s = NbState {
        particles: IndexMap::with_capacity_and_hasher(tree.len(), FxBuildHasher),
        clock: 0.0,
        occupation: 0.0,
        total_rate: 0,
        delete_on_turn,
    };
    for i in 0..tree.len() as u32 {
        let v = VertexId(i);
        let c = rng.random_range(0..tree.graph().nominal_children(v));
        s.insert(
            tree,
            NbParticle {
                position: v,
                forbidden: Edge::Child(c),
                direction: Direction::TowardsRoot,
            },
        );
    }
    s
}

impl NbState {
    pub fn particle(&self, v: VertexId) -> Option<&NbParticle> {
        self.particles.get(&v.0)
    }

    pub fn particles(&self) -> impl Iterator<Item = &NbParticle> {
        self.particles.values()
    }

    fn insert(&mut self, tree: &RootedTree, p: NbParticle) {
        self.total_rate += (tree.degree(p.position) - 1) as u64;
        if let Some(old) = self.particles.insert(p.position.0, p) {
            self.total_rate -= (tree.degree(old.position) - 1) as u64;
        }
    }

    fn take(&mut self, tree: &RootedTree, v: VertexId) -> Option<NbParticle> {
        let p = self.particles.swap_remove(&v.0)?;
        self.total_rate -= (tree.degree(v) - 1) as u64;
        Some(p)
    }

    /// Apply a ring, reporting the move if `ring.vertex` was occupied.
    pub fn ring(&mut self, tree: &RootedTree, ring: Ring) -> Result<Option<NbEvent>> {
        self.advance(ring.time);
        let v = ring.vertex;
        let Some(p) = self.take(tree, v) else {
            return Ok(None);
        };
        let edge = tree.allowed_edge(v, p.forbidden, ring.slot);
        let after = match edge {
            Edge::Parent => Direction::TowardsRoot,
            Edge::Child(_) => Direction::Away,
        };
        if p.direction == Direction::Away && after == Direction::TowardsRoot {
            return Err(Error::InvariantViolation(format!(
                "particle at {v} turned back towards the root"
            )));
        }
        let to = tree.target(v, edge);
        let mut ev = NbEvent {
            time: ring.time,
            from: v,
            to,
            before: p.direction,
            after,
            survived: false,
        };
        let Some(w) = to else {
            return Ok(Some(ev));
        };
        if self.delete_on_turn && after == Direction::Away {
            return Ok(Some(ev));
        }
        let mover = NbParticle {
            position: w,
            forbidden: tree.back_edge(v, w),
            direction: after,
        };
        // A collision removes the away-directed particle if directions
        // differ, and the occupant otherwise; either way at most one stays.
        let mover_dies = self
            .particle(w)
            .is_some_and(|o| o.direction != after && after == Direction::Away);
        if !mover_dies {
            self.take(tree, w);
            self.insert(tree, mover);
            ev.survived = true;
        }
        Ok(Some(ev))
    }

    /// Gillespie step; `None` once no particle can move.
    pub fn step(&mut self, tree: &RootedTree, rng: &mut SimRng) -> Result<Option<NbEvent>> {
        let Some(t) = self.next_event_time(rng) else {
            return Ok(None);
        };
        let v = self.sample_vertex(tree, rng);
        let slot = rng.random_range(0..tree.degree(v) - 1);
        self.ring(
            tree,
            Ring {
                time: t,
                vertex: v,
                slot,
            },
        )
    }
}

impl RootProcess for NbState {
    fn clock(&self) -> f64 {
        self.clock
    }
    fn occupation(&self) -> f64 {
        self.occupation
    }
    fn root_occupied(&self) -> bool {
        self.particles.contains_key(&VertexId::ROOT.0)
    }
    fn total_rate(&self) -> u64 {
        self.total_rate
    }
    fn particle_count(&self) -> usize {
        self.particles.len()
    }
    fn advance(&mut self, to: f64) {
        debug_assert!(to >= self.clock);
        if self.root_occupied() {
            self.occupation += to - self.clock;
        }
        self.clock = to;
    }
    fn apply_ring(&mut self, tree: &RootedTree, ring: Ring) -> Result<()> {
        self.ring(tree, ring).map(|_| ())
    }
    fn sample_vertex(&self, tree: &RootedTree, rng: &mut SimRng) -> VertexId {
        sample_weighted(
            self.particles.len(),
            |i| *self.particles.get_index(i).expect("in range").0,
            tree,
            rng,
        )
    }
}

/// The zap model: rootward moves at rate 1, deletion at rate d_v - 2 off
/// the root and d_root - 1 at the root.
#[derive(Debug, Clone)]
pub struct ZapState {
    occupied: IndexSet<u32, FxBuildHasher>,
    clock: f64,
    occupation: f64,
    total_rate: u64,
}

pub fn zap_init(tree: &RootedTree) -> ZapState {
    let mut s = ZapState {
        occupied: IndexSet::with_capacity_and_hasher(tree.len(), FxBuildHasher),
        clock: 0.0,
        occupation: 0.0,
        total_rate: 0,
    };
    for i in 0..tree.len() as u32 {
        s.insert(tree, VertexId(i));
    }
    s
}

impl ZapState {
    pub fn is_occupied(&self, v: VertexId) -> bool {
        self.occupied.contains(&v.0)
    }

    pub fn occupied(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.occupied.iter().map(|&i| VertexId(i))
    }

    fn insert(&mut self, tree: &RootedTree, v: VertexId) {
        if self.occupied.insert(v.0) {
            self.total_rate += (tree.degree(v) - 1) as u64;
        }
    }

    fn remove(&mut self, tree: &RootedTree, v: VertexId) -> bool {
        let hit = self.occupied.swap_remove(&v.0);
        if hit {
            self.total_rate -= (tree.degree(v) - 1) as u64;
        }
        hit
    }

    /// Gillespie step; returns false once nothing can happen.
    pub fn zap_step(&mut self, tree: &RootedTree, rng: &mut SimRng) -> bool {
        match self.next_event_time(rng) {
            Some(t) => {
                self.fire(tree, rng, t).expect("zap rings cannot fail");
                true
            }
            None => false,
        }
    }
}

impl RootProcess for ZapState {
    fn clock(&self) -> f64 {
        self.clock
    }
    fn occupation(&self) -> f64 {
        self.occupation
    }
    fn root_occupied(&self) -> bool {
        self.is_occupied(VertexId::ROOT)
    }
    fn total_rate(&self) -> u64 {
        self.total_rate
    }
    fn particle_count(&self) -> usize {
        self.occupied.len()
    }
    fn advance(&mut self, to: f64) {
        debug_assert!(to >= self.clock);
        if self.root_occupied() {
            self.occupation += to - self.clock;
        }
        self.clock = to;
    }
    /// Slot 0 off the root is the rootward move; every other slot deletes.
    fn apply_ring(&mut self, tree: &RootedTree, ring: Ring) -> Result<()> {
        self.advance(ring.time);
        let v = ring.vertex;
        if !self.remove(tree, v) {
            return Ok(());
        }
        if ring.slot == 0 {
            if let Some(p) = tree.graph().parent(v) {
                self.insert(tree, p);
            }
        }
        Ok(())
    }
    fn sample_vertex(&self, tree: &RootedTree, rng: &mut SimRng) -> VertexId {
        sample_weighted(
            self.occupied.len(),
            |i| *self.occupied.get_index(i).expect("in range"),
            tree,
            rng,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbModel {
    FullNb,
    Zap,
}

impl FromStr for NbModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_nb" | "full" => Ok(NbModel::FullNb),
            "zap" => Ok(NbModel::Zap),
            _ => config(format!("unknown model '{s}' (expected full_nb or zap)")),
        }
    }
}

impl std::fmt::Display for NbModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NbModel::FullNb => "full_nb",
            NbModel::Zap => "zap",
        })
    }
}

/// Run to `horizon`, calling `at_grid(j, occupied)` for each grid time.
pub fn run_root_process<P: RootProcess>(
    s: &mut P,
    tree: &RootedTree,
    rng: &mut SimRng,
    horizon: f64,
    grid: &[f64],
    mut at_grid: impl FnMut(usize, bool),
) -> Result<f64> {
    let mut j = 0;
    loop {
        let next = s.next_event_time(rng).unwrap_or(f64::INFINITY);
        while j < grid.len() && grid[j] < next {
            at_grid(j, s.root_occupied());
            j += 1;
        }
        if next > horizon {
            s.advance(horizon);
            return Ok(s.occupation());
        }
        s.fire(tree, rng, next)?;
    }
}

/// Root occupation time X_T per replicate and the root-occupancy series.
#[derive(Debug, Clone, PartialEq)]
pub struct RootOccupation {
    pub model: NbModel,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    pub occupancy: EstimateSeries,
}

#[allow(clippy::too_many_arguments)]
pub fn root_occupation(
    model: NbModel,
    spec: &GraphSpec,
    mode: TreeMode,
    horizon: f64,
    grid: &[f64],
    reps: u64,
    seed: u64,
    level: f64,
) -> Result<RootOccupation> {
    if !(horizon > 0.0) || reps < 2 {
        return config("need T > 0 and at least 2 replicates");
    }
    if grid.iter().any(|&t| !(0.0..=horizon).contains(&t)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return config("occupancy grid must be increasing and inside [0, T]");
    }
    let source = GraphSource::new(spec, mode, false)?;
    // Validate the tree shape once (random trees are re-checked per replicate).
    RootedTree::new(source.instantiate(&mut crate::rng::rng_stream(seed, u64::MAX)))?;
    let rows = run_replicates(reps, seed, |_, rng| -> Result<(f64, Vec<u64>)> {
        let tree = RootedTree::new(source.instantiate(rng))?;
        let mut hits = vec![0u64; grid.len()];
        let on_grid = |j: usize, occ: bool| hits[j] = u64::from(occ);
        let x = match model {
            NbModel::FullNb => {
                let mut s = nb_init(&tree, rng, false);
                run_root_process(&mut s, &tree, rng, horizon, grid, on_grid)?
            }
            NbModel::Zap => {
                let mut s = zap_init(&tree);
                run_root_process(&mut s, &tree, rng, horizon, grid, on_grid)?
            }
        };
        Ok((x, hits))
    });
    let mut samples = Vec::with_capacity(rows.len());
    let mut hit_rows = Vec::with_capacity(rows.len());
    for r in rows {
        let (x, h) = r?;
        samples.push(x);
        hit_rows.push(h);
    }
    let (mean, se) = mean_se(&samples);
    let sums = sum_columns(&hit_rows, grid.len());
    let method = format!("{model}_root");
    Ok(RootOccupation {
        model,
        samples,
        mean,
        se,
        occupancy: EstimateSeries::from_counts(grid, &sums, reps, level, &method),
    })
}

/// Dual cluster of the root for the zap model, with absorbing vertex 𝔞 as
/// the root's parent.
#[derive(Debug, Clone)]
pub struct NbClusterState {
    members: IndexSet<u32, FxBuildHasher>,
    /// Non-member children of members: the grow candidates.
    frontier: IndexSet<u32, FxBuildHasher>,
    r_plus: u64,
    r_minus: u64,
    max_weight: u32,
    clock: f64,
    jumps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbClusterMove {
    /// A non-member child joined from its member parent.
    Grow,
    /// A member was taken over by its non-member parent (or 𝔞, at the root).
    Capture,
    /// A member was sent to the cluster of 𝔞.
    Zap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbClusterEvent {
    pub time: f64,
    pub kind: NbClusterMove,
    pub vertex: VertexId,
}

/// Augmented degree: children plus the parent edge, the root's parent being 𝔞.
#[inline]
fn dual_degree(g: &GraphOracle, v: VertexId) -> u32 {
    g.nominal_children(v) + 1
}

pub fn nb_cluster_init(g: &mut GraphOracle) -> Result<NbClusterState> {
    if !g.spec().is_rooted_tree() {
        return config(format!("'{}' is not a rooted tree", g.spec()));
    }
    if g.spec().window.is_some() {
        return config("the dual cluster runs on the untruncated tree; drop the @R window");
    }
    let mut s = NbClusterState {
        members: IndexSet::with_hasher(FxBuildHasher),
        frontier: IndexSet::with_hasher(FxBuildHasher),
        r_plus: 0,
        r_minus: 0,
        max_weight: 1,
        clock: 0.0,
        jumps: 0,
    };
    s.add(g, VertexId::ROOT)?;
    Ok(s)
}

impl NbClusterState {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.members.contains(&v.0)
    }

    pub fn members(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.members.iter().map(|&i| VertexId(i))
    }

    /// Maintained (r_plus, r_minus).
    pub fn rates(&self) -> (u64, u64) {
        (self.r_plus, self.r_minus)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn jump_count(&self) -> u64 {
        self.jumps
    }

    fn parent_in(&self, g: &GraphOracle, w: VertexId) -> bool {
        g.parent(w).is_some_and(|p| self.contains(p))
    }

    /// Rate at which member `w` leaves: capture plus zap.
    fn shrink_weight(&self, g: &GraphOracle, w: VertexId) -> u32 {
        dual_degree(g, w) - 2 + u32::from(!self.parent_in(g, w))
    }

    fn add(&mut self, g: &mut GraphOracle, u: VertexId) -> Result<()> {
        let d = dual_degree(g, u);
        if d < 2 {
            return config(format!("vertex {u} is a leaf of the tree; the zap rate d-2 is negative"));
        }
        self.members.insert(u.0);
        self.frontier.swap_remove(&u.0);
        self.r_minus += (d - 2) as u64 + u64::from(!self.parent_in(g, u));
        self.max_weight = self.max_weight.max(d - 1);
        let children = g.children(u).to_vec();
        for c in children {
            if self.contains(c) {
                self.r_minus -= 1;
            } else {
                self.frontier.insert(c.0);
            }
        }
        self.r_plus = self.frontier.len() as u64;
        Ok(())
    }

    fn remove(&mut self, g: &GraphOracle, w: VertexId) {
        self.r_minus -= self.shrink_weight(g, w) as u64;
        self.members.swap_remove(&w.0);
        if self.parent_in(g, w) {
            self.frontier.insert(w.0);
        }
        let adjacent: &[VertexId] = if g.children_in_window(w) { g.adjacent(w) } else { &[] };
        for &c in adjacent {
            if g.parent(w) == Some(c) {
                continue;
            }
            if self.contains(c) {
                self.r_minus += 1;
            } else {
                self.frontier.swap_remove(&c.0);
            }
        }
        self.r_plus = self.frontier.len() as u64;
    }

    pub fn next_event_time(&self, rng: &mut SimRng) -> Option<f64> {
        match self.r_plus + self.r_minus {
            0 => None,
            r => Some(self.clock + exp_time(rng, r as f64)),
        }
    }

    pub fn fire(&mut self, g: &mut GraphOracle, rng: &mut SimRng, time: f64) -> Result<NbClusterEvent> {
        self.clock = time;
        self.jumps += 1;
        let total = self.r_plus + self.r_minus;
        if rng.random_range(0..total) < self.r_plus {
            let i = rng.random_range(0..self.frontier.len());
            let u = VertexId(*self.frontier.get_index(i).expect("in range"));
            self.add(g, u)?;
            return Ok(NbClusterEvent {
                time,
                kind: NbClusterMove::Grow,
                vertex: u,
            });
        }
        loop {
            let i = rng.random_range(0..self.members.len());
            let w = VertexId(*self.members.get_index(i).expect("in range"));
            let capture = u32::from(!self.parent_in(g, w));
            let weight = dual_degree(g, w) - 2 + capture;
            let x = rng.random_range(0..self.max_weight);
            if x < weight {
                self.remove(g, w);
                let kind = if x < capture {
                    NbClusterMove::Capture
                } else {
                    NbClusterMove::Zap
                };
                return Ok(NbClusterEvent {
                    time,
                    kind,
                    vertex: w,
                });
            }
        }
    }

    /// One event; `Ok(None)` once the cluster is empty.
    pub fn step(&mut self, g: &mut GraphOracle, rng: &mut SimRng) -> Result<Option<NbClusterEvent>> {
        match self.next_event_time(rng) {
            Some(t) => self.fire(g, rng, t).map(Some),
            None => Ok(None),
        }
    }
}

/// Recompute r_plus and r_minus from the member set and require that they
/// agree with each other and with the maintained counters.
pub fn nb_rate_audit(s: &NbClusterState, g: &GraphOracle) -> Result<(u64, u64)> {
    let mut sum_up = 0u64;
    let mut sum_zap = 0u64;
    let mut internal = 0u64;
    let mut orphans = 0u64;
    for w in s.members() {
        let d = dual_degree(g, w) as u64;
        sum_up += d - 1;
        sum_zap += d - 2;
        if s.parent_in(g, w) {
            internal += 1;
        } else {
            orphans += 1;
        }
    }
    let r_plus = sum_up - internal;
    let r_minus = sum_zap + orphans;
    if r_plus != r_minus {
        return Err(Error::InvariantViolation(format!(
            "grow rate {r_plus} != shrink rate {r_minus}"
        )));
    }
    if (r_plus, r_minus) != s.rates() {
        return Err(Error::InvariantViolation(format!(
            "maintained rates {:?} differ from recount ({r_plus}, {r_minus})",
            s.rates()
        )));
    }
    Ok((r_plus, r_minus))
}

/// Audit every state along `steps`-event trajectories; returns the number
/// of audited states.
pub fn nb_audit_run(spec: &GraphSpec, mode: TreeMode, steps: u64, reps: u64, seed: u64) -> Result<u64> {
    let source = GraphSource::new(spec, mode, false)?;
    let counts = run_replicates(reps, seed, |_, rng| -> Result<u64> {
        let mut g = source.instantiate(rng);
        let mut s = nb_cluster_init(&mut g)?;
        let mut audited = 0;
        for _ in 0..=steps {
            nb_rate_audit(&s, &g)?;
            audited += 1;
            if s.step(&mut g, rng)?.is_none() {
                break;
            }
        }
        Ok(audited)
    });
    counts.into_iter().sum()
}

/// P(dual cluster of the root nonempty at t) on a grid.
#[allow(clippy::too_many_arguments)]
pub fn nb_cluster_survival(
    spec: &GraphSpec,
    mode: TreeMode,
    grid: &[f64],
    reps: u64,
    seed: u64,
    size_cap: usize,
    level: f64,
) -> Result<EstimateSeries> {
    if grid.is_empty() || grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return config("time grid must be nonempty, nonnegative and strictly increasing");
    }
    let source = GraphSource::new(spec, mode, false)?;
    nb_cluster_init(&mut source.instantiate(&mut crate::rng::rng_stream(seed, u64::MAX)))?;
    let t_end = *grid.last().expect("nonempty");
    let rows = run_replicates(reps, seed, |_, rng| -> Result<Vec<u64>> {
        let mut g = source.instantiate(rng);
        let mut s = nb_cluster_init(&mut g)?;
        let mut alive = vec![0u64; grid.len() + 1];
        let mut j = 0;
        loop {
            let next = s.next_event_time(rng).unwrap_or(f64::INFINITY);
            while j < grid.len() && grid[j] < next {
                alive[j] = u64::from(!s.is_empty());
                j += 1;
            }
            if next > t_end {
                break;
            }
            s.fire(&mut g, rng, next)?;
            if s.size() > size_cap {
                alive[j..].iter_mut().for_each(|a| *a = 1);
                alive[grid.len()] = 1;
                break;
            }
        }
        Ok(alive)
    });
    let rows: Vec<Vec<u64>> = rows.into_iter().collect::<Result<_>>()?;
    let sums = sum_columns(&rows, grid.len() + 1);
    Ok(EstimateSeries::from_counts(grid, &sums[..grid.len()], reps, level, "nb_dual")
        .with_cap_hits(sums[grid.len()]))
}

/// Mean and SE of the dual cluster size after each of the given jump counts.
pub fn nb_cluster_martingale(
    spec: &GraphSpec,
    mode: TreeMode,
    checkpoints: &[u64],
    reps: u64,
    seed: u64,
) -> Result<Vec<(u64, f64, f64)>> {
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) || reps < 2 {
        return config("checkpoints must increase and replicates must be >= 2");
    }
    let source = GraphSource::new(spec, mode, false)?;
    nb_cluster_init(&mut source.instantiate(&mut crate::rng::rng_stream(seed, u64::MAX)))?;
    let k = checkpoints.len();
    let last = checkpoints.last().copied().unwrap_or(0);
    let (sums, failures) = fold_replicates(
        reps,
        seed,
        || (vec![0u64; 2 * k], 0u64),
        |(acc, bad), _, rng| {
            let mut g = source.instantiate(rng);
            let Ok(mut s) = nb_cluster_init(&mut g) else {
                *bad += 1;
                return;
            };
            let mut j = 0;
            for n in 0..=last {
                while j < k && checkpoints[j] == n {
                    let z = s.size() as u64;
                    acc[2 * j] += z;
                    acc[2 * j + 1] += z * z;
                    j += 1;
                }
                match s.step(&mut g, rng) {
                    Ok(Some(_)) => {}
                    Ok(None) => break,
                    Err(_) => {
                        *bad += 1;
                        return;
                    }
                }
            }
        },
        |(mut a, x), (b, y)| {
            a.iter_mut().zip(b).for_each(|(p, q)| *p += q);
            (a, x + y)
        },
    );
    if failures > 0 {
        return config(format!("{failures} replicates hit a leaf of the tree"));
    }
    let n = reps as f64;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let mean = sums[2 * j] as f64 / n;
            let var = (sums[2 * j + 1] as f64 / n - mean * mean) * n / (n - 1.0);
            (i, mean, (var.max(0.0) / n).sqrt())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::lower_bound_bounded_degree;
    use crate::graph::make_graph;
    use crate::rng::rng_stream;
    use crate::stats::{ks_critical, ks_statistic};
    use proptest::prelude::*;

    fn tree(s: &str) -> RootedTree {
        RootedTree::from_spec(&s.parse().unwrap(), 3).unwrap()
    }

    #[test]
    fn init_forbids_a_child_edge_uniformly() {
        let t = tree("bintree:5");
        assert_eq!(t.len(), 63);
        let mut counts = [0u32; 2];
        for seed in 0..2000 {
            let s = nb_init(&t, &mut rng_stream(seed, 0), false);
            assert_eq!(s.particle_count(), 63);
            for p in s.particles() {
                assert_eq!(p.direction, Direction::TowardsRoot);
                assert!(matches!(p.forbidden, Edge::Child(0 | 1)));
            }
            if let Edge::Child(c) = s.particle(VertexId(5)).unwrap().forbidden {
                counts[c as usize] += 1;
            }
        }
        // Binomial(2000, 1/2): 4 SE is about 90.
        assert!((counts[0] as i64 - 1000).abs() < 90, "{counts:?}");
    }

    #[test]
    fn non_trees_and_infinite_trees_are_rejected() {
        assert!(RootedTree::from_spec(&"regtree:3".parse().unwrap(), 0).is_err());
        assert!(RootedTree::from_spec(&"cycle:4".parse().unwrap(), 0).is_err());
    }

    #[test]
    fn single_allowed_edge_on_a_path() {
        // Rooted half-line of depth 2: root - a - b. At a with forbidden b,
        // the only allowed edge is the parent.
        let t = tree("regtree:2:1@2");
        let a = t.graph().adjacent(VertexId::ROOT)[0];
        assert_eq!(t.degree(a) - 1, 1);
        assert_eq!(t.allowed_edge(a, Edge::Child(0), 0), Edge::Parent);
    }

    #[test]
    fn rootward_mover_removes_away_occupant() {
        let t = tree("bintree:2");
        let mut s = nb_init(&t, &mut rng_stream(0, 0), false);
        let g = t.graph();
        let a = g.adjacent(VertexId::ROOT)[0];
        // Turn the root particle away into `a`'s sibling's position... set up
        // by hand: root particle heading away, then a's particle moves up.
        let root_p = NbParticle {
            position: VertexId::ROOT,
            forbidden: Edge::Child(1),
            direction: Direction::Away,
        };
        s.insert(&t, root_p);
        let ev = s
            .ring(
                &t,
                Ring {
                    time: 0.1,
                    vertex: a,
                    slot: 0,
                },
            )
            .unwrap()
            .unwrap();
        assert_eq!(ev.to, Some(VertexId::ROOT));
        assert!(ev.survived);
        let p = s.particle(VertexId::ROOT).unwrap();
        assert_eq!(p.direction, Direction::TowardsRoot);
        assert_eq!(p.forbidden, Edge::Child(g.child_index(a)));
        assert!(s.particle(a).is_none());
    }

    #[test]
    fn away_mover_dies_on_rootward_occupant() {
        let t = tree("bintree:2");
        let mut s = nb_init(&t, &mut rng_stream(0, 0), false);
        let g = t.graph();
        let a = g.adjacent(VertexId::ROOT)[0];
        // Root particle with forbidden child 1 moves away into child 0 = a,
        // whose particle heads rootward.
        s.insert(
            &t,
            NbParticle {
                position: VertexId::ROOT,
                forbidden: Edge::Child(1),
                direction: Direction::TowardsRoot,
            },
        );
        let ev = s
            .ring(
                &t,
                Ring {
                    time: 0.1,
                    vertex: VertexId::ROOT,
                    slot: 0,
                },
            )
            .unwrap()
            .unwrap();
        assert_eq!(ev.to, Some(a));
        assert_eq!(ev.after, Direction::Away);
        assert!(!ev.survived);
        assert_eq!(s.particle(a).unwrap().direction, Direction::TowardsRoot);
        assert!(!s.root_occupied());
        assert_eq!(s.occupation(), 0.1);
    }

    #[test]
    fn rate_bookkeeping_and_direction_monotonicity() {
        let t = tree("bintree:6");
        for seed in 0..20 {
            let mut rng = rng_stream(seed, 0);
            let mut s = nb_init(&t, &mut rng, false);
            let mut last_x = 0.0;
            while let Some(ev) = s.step(&t, &mut rng).unwrap() {
                assert!(!(ev.before == Direction::Away && ev.after == Direction::TowardsRoot));
                let recount: u64 = s.particles().map(|p| (t.degree(p.position) - 1) as u64).sum();
                assert_eq!(recount, s.total_rate());
                for p in s.particles() {
                    if p.direction == Direction::Away {
                        assert_eq!(p.forbidden, Edge::Parent);
                    }
                }
                assert!(s.occupation() >= last_x);
                last_x = s.occupation();
            }
            assert_eq!(s.particle_count(), 0);
        }
    }

    #[test]
    fn zap_examples() {
        // Half-line: nothing is ever deleted and the root stays occupied.
        let t = tree("regtree:2:1@8");
        let mut rng = rng_stream(1, 0);
        let mut s = zap_init(&t);
        let x = run_root_process(&mut s, &t, &mut rng, 7.5, &[], |_, _| {}).unwrap();
        assert_eq!(x, 7.5);
        // Full model agrees on the half-line too.
        let mut f = nb_init(&t, &mut rng, false);
        assert_eq!(run_root_process(&mut f, &t, &mut rng, 7.5, &[], |_, _| {}).unwrap(), 7.5);

        // Lone root particle with d_root = 3 (regtree:4:3) is deleted at rate 2.
        let t = tree("regtree:4:3@1");
        let n = 20_000;
        let mut total = 0.0;
        for i in 0..n {
            let mut rng = rng_stream(2, i);
            let mut s = zap_init(&t);
            for c in t.graph().adjacent(VertexId::ROOT).to_vec() {
                s.remove(&t, c);
            }
            let x = run_root_process(&mut s, &t, &mut rng, 100.0, &[], |_, _| {}).unwrap();
            total += x;
        }
        let mean = total / n as f64;
        // Exp(2): mean 0.5, SE 0.5/sqrt(n) = 0.0035.
        assert!((mean - 0.5).abs() < 0.015, "{mean}");
    }

    #[test]
    fn degree_two_particles_march_without_deletion() {
        let t = tree("regtree:2:1@6");
        let mut s = zap_init(&t);
        for i in 0..6u32 {
            s.remove(&t, VertexId(i));
        }
        // Only the deepest vertex is occupied; it reaches the root in 6 jumps.
        let mut rng = rng_stream(4, 0);
        for _ in 0..6 {
            assert!(s.zap_step(&t, &mut rng));
            assert_eq!(s.particle_count(), 1);
        }
        assert!(s.root_occupied());
    }

    fn coupled_paths(spec: &str, delete_on_turn: bool, seed: u64) {
        let t = tree(spec);
        let mut rng = rng_stream(seed, 0);
        let mut full = nb_init(&t, &mut rng, delete_on_turn);
        let mut zap = zap_init(&t);
        for ring in ring_stream(&t, 6.0, &mut rng) {
            full.apply_ring(&t, ring).unwrap();
            zap.apply_ring(&t, ring).unwrap();
            assert_eq!(full.root_occupied(), zap.root_occupied(), "{spec} at {}", ring.time);
            let rootward: Vec<VertexId> = full
                .particles()
                .filter(|p| p.direction == Direction::TowardsRoot)
                .map(|p| p.position)
                .collect();
            assert_eq!(rootward.len(), zap.particle_count());
            assert!(rootward.iter().all(|&v| zap.is_occupied(v)));
        }
        assert_eq!(full.occupation(), zap.occupation());
    }

    #[test]
    fn full_and_zap_coincide_under_shared_rings() {
        for seed in 0..30 {
            coupled_paths("bintree:4", true, seed);
            coupled_paths("bintree:4", false, seed);
            coupled_paths("regtree:4:3@3", false, seed);
            coupled_paths("gw:geom:0.5@5", false, seed);
        }
    }

    #[test]
    fn small_horizon_occupation_ratio() {
        let r = root_occupation(NbModel::FullNb, &"bintree:4".parse().unwrap(), TreeMode::Annealed, 1e-3, &[], 200, 1, 0.99).unwrap();
        assert!(r.mean / 1e-3 > 0.99);
    }

    #[test]
    fn full_and_zap_agree_in_distribution() {
        let spec: GraphSpec = "bintree:5".parse().unwrap();
        let n = 4000;
        let a = root_occupation(NbModel::FullNb, &spec, TreeMode::Annealed, 4.0, &[1.0, 4.0], n, 7, 0.99).unwrap();
        let b = root_occupation(NbModel::Zap, &spec, TreeMode::Annealed, 4.0, &[1.0, 4.0], n, 8, 0.99).unwrap();
        let pooled = (a.se.powi(2) + b.se.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 3.0 * pooled, "{} {} {pooled}", a.mean, b.mean);
        let d = ks_statistic(&a.samples, &b.samples);
        assert!(d < ks_critical(0.01, a.samples.len(), b.samples.len()), "{d}");
    }

    #[test]
    fn dual_rate_examples() {
        let mut g = make_graph(&"regtree:3:2".parse().unwrap(), 0).unwrap();
        let s = nb_cluster_init(&mut g).unwrap();
        // Root with augmented degree 3: two children, parent 𝔞 outside.
        assert_eq!(nb_rate_audit(&s, &g).unwrap(), (2, 2));

        let mut g = make_graph(&"regtree:2:1".parse().unwrap(), 0).unwrap();
        let s = nb_cluster_init(&mut g).unwrap();
        assert_eq!(nb_rate_audit(&s, &g).unwrap(), (1, 1));

        // {root, one child} on the binary tree: 3 frontier children, and
        // shrink rates 1 + 1 (root) + 1 (child zap) = 3.
        let mut g = make_graph(&"regtree:3:2".parse().unwrap(), 0).unwrap();
        let mut s = nb_cluster_init(&mut g).unwrap();
        let c = g.adjacent(VertexId::ROOT)[0];
        s.add(&mut g, c).unwrap();
        assert_eq!(nb_rate_audit(&s, &g).unwrap(), (3, 3));

        // The full depth-2 subtree.
        for v in g.children(c).to_vec() {
            s.add(&mut g, v).unwrap();
        }
        let c2 = g.adjacent(VertexId::ROOT)[1];
        s.add(&mut g, c2).unwrap();
        for v in g.children(c2).to_vec() {
            s.add(&mut g, v).unwrap();
        }
        assert_eq!(s.size(), 7);
        assert_eq!(nb_rate_audit(&s, &g).unwrap(), (8, 8));
        s.remove(&g, c);
        nb_rate_audit(&s, &g).unwrap();
    }

    #[test]
    fn dual_rejects_windows_and_non_trees() {
        assert!(nb_cluster_init(&mut make_graph(&"bintree:3".parse().unwrap(), 0).unwrap()).is_err());
        assert!(nb_cluster_init(&mut make_graph(&"cycle:5".parse().unwrap(), 0).unwrap()).is_err());
    }

    #[test]
    fn dual_size_is_a_martingale() {
        let spec: GraphSpec = "regtree:3:2".parse().unwrap();
        let m = nb_cluster_martingale(&spec, TreeMode::Annealed, &[10, 100, 400], 4000, 5).unwrap();
        for (i, mean, se) in m {
            assert!((mean - 1.0).abs() < 3.0 * se + 1e-12, "{i}: {mean} ± {se}");
        }
    }

    #[test]
    fn dual_survival_respects_degree_bound() {
        let spec: GraphSpec = "regtree:3:2".parse().unwrap();
        let grid = [0.5, 2.0, 8.0];
        let s = nb_cluster_survival(&spec, TreeMode::Annealed, &grid, 4000, 9, 100_000, 0.99).unwrap();
        for r in &s.rows {
            assert!(r.estimate >= lower_bound_bounded_degree(3.0, r.t) - 3.0 * r.se(), "{r:?}");
        }
    }

    #[test]
    fn audits_hold_on_gw_trees() {
        let spec: GraphSpec = "gw:geom:0.5".parse().unwrap();
        assert!(nb_audit_run(&spec, TreeMode::Annealed, 500, 30, 3).unwrap() > 30);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn dual_rates_balance_along_trajectories(seed in 0u64..1_000_000) {
            let mut g = make_graph(&"regtree:3:2".parse().unwrap(), 0).unwrap();
            let mut s = nb_cluster_init(&mut g).unwrap();
            let mut rng = rng_stream(seed, 0);
            for _ in 0..300 {
                nb_rate_audit(&s, &g).unwrap();
                if s.step(&mut g, &mut rng).unwrap().is_none() {
                    break;
                }
                prop_assert!(!s.contains(VertexId(u32::MAX)));
            }
        }
    }
}
