//! Graph oracles: explicit finite graphs, lattice and tree windows, and
//! lazily generated (possibly infinite) graphs including on-the-fly
//! Galton–Watson trees.
//!
//! All simulators talk to a [`GraphOracle`] through degree and neighbor
//! queries. Vertex ids are dense integers assigned in order of first
//! exposure; id 0 is the origin (lattices) or root (trees). Finite kinds
//! expose every vertex at construction, in label order.
//!
//! # Spec grammar
//!
//! ```text
//! path:N            path on N vertices 0-1-...-(N-1)
//! cycle:N           cycle on N >= 3 vertices
//! complete:N        complete graph K_N
//! star:K            center 0 joined to K leaves
//! edges:A-B,C-D,..  explicit simple edge list on vertices 0..N-1
//! torus:D:L         D-dimensional discrete torus of side L >= 3
//! bintree:L         rooted binary tree (root degree 2, internal degree 3), depth L
//! line              the integer line Z (lazy)
//! regtree:D[:R]     D-regular tree, root degree R (default D) (lazy)
//! gw:geom:P         Galton–Watson, offspring Geometric(P) on {1,2,...}
//! gw:poisson:L      Galton–Watson, offspring 1 + Poisson(L)
//! gw:unif:A:B       Galton–Watson, offspring uniform on {A,...,B}, A >= 1
//! ```
//!
//! Lazy kinds accept a window radius (graph distance from the origin);
//! vertices on the window boundary simply have fewer neighbors.

use crate::error::{config, Error, Result};
use crate::rng::mix64;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Geometric, Poisson};
use rand_xoshiro::SplitMix64;
use rustc_hash::FxHashMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VertexId(pub u32);

impl VertexId {
    pub const ROOT: VertexId = VertexId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Offspring law of a Galton–Watson tree, supported on {1, 2, ...}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OffspringDistribution {
    /// P(k) = p (1-p)^(k-1), k >= 1.
    GeometricOnPositives { p: f64 },
    /// 1 + Poisson(lambda).
    OnePlusPoisson { lambda: f64 },
    /// Uniform on {a, ..., b}.
    BoundedUniform { a: u32, b: u32 },
}

impl OffspringDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::GeometricOnPositives { p } if !(p > 0.0 && p < 1.0) => {
                config(format!("geometric offspring needs p in (0,1), got {p}"))
            }
            Self::OnePlusPoisson { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                config(format!("poisson offspring needs lambda > 0, got {lambda}"))
            }
            Self::BoundedUniform { a, b } if a < 1 || a > b => config(format!(
                "uniform offspring needs 1 <= a <= b, got a={a}, b={b}"
            )),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            // rand_distr's Geometric counts failures before the first success.
            Self::GeometricOnPositives { p } => {
                let g = Geometric::new(p).expect("validated");
                1 + g.sample(rng).min(u32::MAX as u64 - 1) as u32
            }
            Self::OnePlusPoisson { lambda } => {
                let d = Poisson::new(lambda).expect("validated");
                1 + d.sample(rng) as u32
            }
            Self::BoundedUniform { a, b } => rng.random_range(a..=b),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::GeometricOnPositives { p } => 1.0 / p,
            Self::OnePlusPoisson { lambda } => 1.0 + lambda,
            Self::BoundedUniform { a, b } => (a as f64 + b as f64) / 2.0,
        }
    }

    /// Largest possible offspring count, if bounded.
    pub fn max_offspring(&self) -> Option<u32> {
        match *self {
            Self::BoundedUniform { b, .. } => Some(b),
            _ => None,
        }
    }

    /// Rate c with P(X > x) <= e^{-cx} for large x, when the family has one
    /// in closed form (exact for the geometric family).
    pub fn tail_rate(&self) -> Option<f64> {
        match *self {
            Self::GeometricOnPositives { p } => Some(-(1.0 - p).ln()),
            Self::BoundedUniform { .. } => Some(f64::INFINITY),
            Self::OnePlusPoisson { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphKind {
    Path(u32),
    Cycle(u32),
    Complete(u32),
    Star(u32),
    Edges { n: u32, edges: Vec<(u32, u32)> },
    Torus { dim: u32, side: u32 },
    Line,
    RegularTree { degree: u32, root_degree: u32 },
    GaltonWatson(OffspringDistribution),
}

/// Generator parameters for a graph, plus an optional window radius for
/// the lazy kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub window: Option<u32>,
}

impl GraphSpec {
    pub fn new(kind: GraphKind) -> Self {
        GraphSpec { kind, window: None }
    }

    pub fn with_window(mut self, radius: Option<u32>) -> Result<Self> {
        match (self.window, radius) {
            (Some(a), Some(b)) if a != b => {
                return config(format!("conflicting window radii {a} and {b}"))
            }
            (_, Some(r)) => {
                if self.is_explicit() {
                    return config("a window radius only applies to line, regtree and gw graphs");
                }
                self.window = Some(r);
            }
            _ => {}
        }
        Ok(self)
    }

    /// Graph given by an explicit vertex set (no window needed).
    pub fn is_explicit(&self) -> bool {
        !matches!(
            self.kind,
            GraphKind::Line | GraphKind::RegularTree { .. } | GraphKind::GaltonWatson(_)
        )
    }

    pub fn is_finite(&self) -> bool {
        self.is_explicit() || self.window.is_some()
    }

    pub fn is_rooted_tree(&self) -> bool {
        matches!(
            self.kind,
            GraphKind::RegularTree { .. } | GraphKind::GaltonWatson(_)
        )
    }

    /// Whether two oracles built from this spec differ only by the tree seed.
    pub fn is_random(&self) -> bool {
        matches!(self.kind, GraphKind::GaltonWatson(_))
    }

    /// Number of vertices of an explicit graph.
    pub fn explicit_order(&self) -> Option<u32> {
        Some(match &self.kind {
            GraphKind::Path(n) | GraphKind::Cycle(n) | GraphKind::Complete(n) => *n,
            GraphKind::Star(k) => k + 1,
            GraphKind::Edges { n, .. } => *n,
            GraphKind::Torus { dim, side } => side.checked_pow(*dim)?,
            _ => return None,
        })
    }

    /// Maximum degree over the whole (possibly infinite) graph, if bounded.
    pub fn max_degree(&self) -> Option<u32> {
        match &self.kind {
            GraphKind::Path(n) => Some(if *n > 2 { 2 } else { 1 }),
            GraphKind::Cycle(_) => Some(2),
            GraphKind::Complete(n) => Some(n - 1),
            GraphKind::Star(k) => Some((*k).max(1)),
            GraphKind::Edges { n, edges } => {
                let mut deg = vec![0u32; *n as usize];
                for &(a, b) in edges {
                    deg[a as usize] += 1;
                    deg[b as usize] += 1;
                }
                deg.into_iter().max()
            }
            GraphKind::Torus { dim, .. } => Some(2 * dim),
            GraphKind::Line => Some(2),
            GraphKind::RegularTree {
                degree,
                root_degree,
            } => Some((*degree).max(*root_degree)),
            GraphKind::GaltonWatson(o) => o.max_offspring().map(|b| b + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            GraphKind::Path(n) | GraphKind::Complete(n) if *n < 2 => {
                config(format!("graph needs n >= 2 vertices, got {n}"))
            }
            GraphKind::Cycle(n) if *n < 3 => config(format!(
                "cycle needs n >= 3 vertices (use complete:2 for K_2), got {n}"
            )),
            GraphKind::Star(k) if *k < 1 => config("star needs at least one leaf"),
            GraphKind::Edges { n, edges } => {
                if *n < 2 {
                    return config("edge list must span at least 2 vertices");
                }
                let mut seen = std::collections::HashSet::new();
                let mut deg = vec![0u32; *n as usize];
                for &(a, b) in edges {
                    if a == b {
                        return config(format!("self-loop at {a}"));
                    }
                    if !seen.insert((a.min(b), a.max(b))) {
                        return config(format!("repeated edge {a}-{b}"));
                    }
                    deg[a as usize] += 1;
                    deg[b as usize] += 1;
                }
                if let Some(v) = deg.iter().position(|&d| d == 0) {
                    return config(format!("vertex {v} is isolated"));
                }
                Ok(())
            }
            GraphKind::Torus { dim, side } => {
                if *dim < 1 || *side < 3 {
                    return config(format!("torus needs dim >= 1 and side >= 3, got {dim}:{side}"));
                }
                if side.checked_pow(*dim).is_none_or(|n| n > 1 << 24) {
                    return config("torus too large");
                }
                Ok(())
            }
            GraphKind::RegularTree {
                degree,
                root_degree,
            } if *degree < 2 || *root_degree < 1 => config(format!(
                "regular tree needs degree >= 2 and root degree >= 1, got {degree}:{root_degree}"
            )),
            GraphKind::GaltonWatson(o) => o.validate(),
            _ => Ok(()),
        }
    }
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("cannot parse {what} from '{s}'")))
}

impl FromStr for GraphSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (body, suffix) = match s.trim().split_once('@') {
            Some((b, r)) => (b, Some(parse_num::<u32>(r, "window radius")?)),
            None => (s.trim(), None),
        };
        let spec = parse_body(body)?;
        spec.with_window(suffix)
    }
}

fn parse_body(s: &str) -> Result<GraphSpec> {
    {
        let parts: Vec<&str> = s.split(':').collect();
        let arity = |n: usize| -> Result<()> {
            if parts.len() == n {
                Ok(())
            } else {
                config(format!("graph spec '{s}' expects {} parameter(s)", n - 1))
            }
        };
        let mut window = None;
        let kind = match parts[0] {
            "path" => {
                arity(2)?;
                GraphKind::Path(parse_num(parts[1], "path length")?)
            }
            "cycle" => {
                arity(2)?;
                GraphKind::Cycle(parse_num(parts[1], "cycle length")?)
            }
            "complete" => {
                arity(2)?;
                GraphKind::Complete(parse_num(parts[1], "vertex count")?)
            }
            "star" => {
                arity(2)?;
                GraphKind::Star(parse_num(parts[1], "leaf count")?)
            }
            "edges" => {
                arity(2)?;
                let mut edges: Vec<(u32, u32)> = Vec::new();
                for e in parts[1].split(',').filter(|e| !e.trim().is_empty()) {
                    let (a, b) = e
                        .split_once('-')
                        .ok_or_else(|| Error::Config(format!("edge '{e}' is not of the form a-b")))?;
                    edges.push((parse_num(a, "vertex")?, parse_num(b, "vertex")?));
                }
                let n = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
                GraphKind::Edges { n, edges }
            }
            "torus" => {
                arity(3)?;
                GraphKind::Torus {
                    dim: parse_num(parts[1], "dimension")?,
                    side: parse_num(parts[2], "side length")?,
                }
            }
            "bintree" => {
                arity(2)?;
                window = Some(parse_num(parts[1], "depth")?);
                GraphKind::RegularTree {
                    degree: 3,
                    root_degree: 2,
                }
            }
            "line" | "Z" => {
                arity(1)?;
                GraphKind::Line
            }
            "regtree" => {
                if parts.len() != 2 && parts.len() != 3 {
                    return config(format!("graph spec '{s}' expects regtree:D or regtree:D:R"));
                }
                let degree = parse_num(parts[1], "degree")?;
                let root_degree = match parts.get(2) {
                    Some(r) => parse_num(r, "root degree")?,
                    None => degree,
                };
                GraphKind::RegularTree {
                    degree,
                    root_degree,
                }
            }
            "gw" => {
                let family = parts.get(1).copied().unwrap_or("");
                let o = match family {
                    "geom" => {
                        arity(3)?;
                        OffspringDistribution::GeometricOnPositives {
                            p: parse_num(parts[2], "p")?,
                        }
                    }
                    "poisson" => {
                        arity(3)?;
                        OffspringDistribution::OnePlusPoisson {
                            lambda: parse_num(parts[2], "lambda")?,
                        }
                    }
                    "unif" => {
                        arity(4)?;
                        OffspringDistribution::BoundedUniform {
                            a: parse_num(parts[2], "a")?,
                            b: parse_num(parts[3], "b")?,
                        }
                    }
                    other => {
                        return config(format!(
                            "unknown offspring family '{other}' (expected geom, poisson or unif)"
                        ))
                    }
                };
                GraphKind::GaltonWatson(o)
            }
            other => {
                return config(format!(
                    "unknown graph kind '{other}' (expected path, cycle, complete, star, edges, \
                     torus, bintree, line, regtree or gw)"
                ))
            }
        };
        let spec = GraphSpec { kind, window };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            GraphKind::Path(n) => write!(f, "path:{n}")?,
            GraphKind::Cycle(n) => write!(f, "cycle:{n}")?,
            GraphKind::Complete(n) => write!(f, "complete:{n}")?,
            GraphKind::Star(k) => write!(f, "star:{k}")?,
            GraphKind::Edges { edges, .. } => {
                let list: Vec<String> = edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
                write!(f, "edges:{}", list.join(","))?
            }
            GraphKind::Torus { dim, side } => write!(f, "torus:{dim}:{side}")?,
            GraphKind::Line => write!(f, "line")?,
            GraphKind::RegularTree {
                degree,
                root_degree,
            } => {
                if degree == root_degree {
                    write!(f, "regtree:{degree}")?
                } else {
                    write!(f, "regtree:{degree}:{root_degree}")?
                }
            }
            GraphKind::GaltonWatson(o) => match o {
                OffspringDistribution::GeometricOnPositives { p } => write!(f, "gw:geom:{p}")?,
                OffspringDistribution::OnePlusPoisson { lambda } => {
                    write!(f, "gw:poisson:{lambda}")?
                }
                OffspringDistribution::BoundedUniform { a, b } => write!(f, "gw:unif:{a}:{b}")?,
            },
        }
        if let Some(r) = self.window {
            write!(f, "@{r}")?;
        }
        Ok(())
    }
}

/// Exposure count and running maximum of exposed degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExposureStats {
    pub k: usize,
    pub max_degree: u32,
}

const NO_PARENT: u32 = u32::MAX;
const UNEXPANDED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, Default)]
struct TreeNode {
    parent: u32,
    depth: u32,
    /// Nominal number of children (ignores the window).
    children: u32,
    child_index: u32,
    key: u64,
}

/// Adjacency oracle over a (possibly infinite, possibly random) graph.
#[derive(Debug, Clone)]
pub struct GraphOracle {
    spec: GraphSpec,
    tree_seed: u64,
    degree: Vec<u32>,
    adj_start: Vec<u32>,
    adj: Vec<VertexId>,
    coord: Vec<i64>,
    coord_ids: FxHashMap<i64, VertexId>,
    tree: Vec<TreeNode>,
    max_degree: u32,
}

/// Build an oracle for `spec`. `tree_seed` only matters for random kinds.
pub fn make_graph(spec: &GraphSpec, tree_seed: u64) -> Result<GraphOracle> {
    GraphOracle::new(spec.clone(), tree_seed)
}

impl GraphOracle {
    pub fn new(spec: GraphSpec, tree_seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut g = GraphOracle {
            spec,
            tree_seed,
            degree: Vec::new(),
            adj_start: Vec::new(),
            adj: Vec::new(),
            coord: Vec::new(),
            coord_ids: FxHashMap::default(),
            tree: Vec::new(),
            max_degree: 0,
        };
        match g.spec.kind.clone() {
            GraphKind::Line => {
                g.expose_coord(0);
            }
            GraphKind::RegularTree { .. } | GraphKind::GaltonWatson(_) => {
                g.expose_tree_node(NO_PARENT, 0, 0, mix64(tree_seed));
            }
            _ => g.build_explicit(),
        }
        Ok(g)
    }

    fn build_explicit(&mut self) {
        let n = self.spec.explicit_order().expect("explicit kind") as usize;
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut link = |a: u32, b: u32| {
            lists[a as usize].push(b);
            lists[b as usize].push(a);
        };
        match &self.spec.kind {
            GraphKind::Path(n) => (1..*n).for_each(|i| link(i - 1, i)),
            GraphKind::Cycle(n) => (0..*n).for_each(|i| link(i, (i + 1) % n)),
            GraphKind::Complete(n) => {
                for a in 0..*n {
                    for b in a + 1..*n {
                        link(a, b);
                    }
                }
            }
            GraphKind::Star(k) => (1..=*k).for_each(|i| link(0, i)),
            GraphKind::Edges { edges, .. } => edges.iter().for_each(|&(a, b)| link(a, b)),
            GraphKind::Torus { dim, side } => {
                let (dim, side) = (*dim, *side);
                for v in 0..n as u32 {
                    let mut stride = 1u32;
                    for _ in 0..dim {
                        let c = (v / stride) % side;
                        // Link only the +1 neighbor so each edge appears once.
                        let up = v - c * stride + ((c + 1) % side) * stride;
                        link(v, up);
                        stride *= side;
                    }
                }
            }
            _ => unreachable!("lazy kinds are not explicit"),
        }
        for (v, mut l) in lists.into_iter().enumerate() {
            l.sort_unstable();
            self.degree.push(l.len() as u32);
            self.max_degree = self.max_degree.max(l.len() as u32);
            self.adj_start.push(self.adj.len() as u32);
            self.adj.extend(l.into_iter().map(VertexId));
            debug_assert_eq!(self.adj_start.len(), v + 1);
        }
    }

    fn push_vertex(&mut self, degree: u32) -> VertexId {
        let id = VertexId(self.degree.len() as u32);
        self.degree.push(degree);
        self.adj_start.push(UNEXPANDED);
        self.max_degree = self.max_degree.max(degree);
        id
    }

    fn in_window(&self, dist: u64) -> bool {
        self.spec.window.is_none_or(|r| dist <= r as u64)
    }

    fn expose_coord(&mut self, x: i64) -> VertexId {
        if let Some(&id) = self.coord_ids.get(&x) {
            return id;
        }
        let deg = [x - 1, x + 1]
            .iter()
            .filter(|y| self.in_window(y.unsigned_abs()))
            .count() as u32;
        let id = self.push_vertex(deg);
        self.coord.push(x);
        self.coord_ids.insert(x, id);
        id
    }

    fn expose_tree_node(&mut self, parent: u32, depth: u32, child_index: u32, key: u64) -> VertexId {
        let children = match &self.spec.kind {
            GraphKind::RegularTree {
                degree,
                root_degree,
            } => {
                if parent == NO_PARENT {
                    *root_degree
                } else {
                    degree - 1
                }
            }
            GraphKind::GaltonWatson(o) => {
                let mut rng = SplitMix64::seed_from_u64(key);
                o.sample(&mut rng)
            }
            _ => unreachable!(),
        };
        let has_parent = u32::from(parent != NO_PARENT);
        let real_children = if self.in_window(depth as u64 + 1) {
            children
        } else {
            0
        };
        let id = self.push_vertex(has_parent + real_children);
        self.tree.push(TreeNode {
            parent,
            depth,
            children,
            child_index,
            key,
        });
        id
    }

    fn check(&self, v: VertexId) -> Result<()> {
        if v.index() < self.degree.len() {
            Ok(())
        } else {
            Err(Error::Usage(format!(
                "vertex {v} has not been exposed (exposed: {})",
                self.degree.len()
            )))
        }
    }

    /// Assign ids to every neighbor of `v` (sampling offspring for GW trees).
    pub fn expand(&mut self, v: VertexId) {
        let i = v.index();
        if self.adj_start[i] != UNEXPANDED {
            return;
        }
        let mut nbrs: Vec<VertexId> = Vec::with_capacity(self.degree[i] as usize);
        match self.spec.kind {
            GraphKind::Line => {
                let x = self.coord[i];
                for y in [x - 1, x + 1] {
                    if self.in_window(y.unsigned_abs()) {
                        nbrs.push(self.expose_coord(y));
                    }
                }
            }
            GraphKind::RegularTree { .. } | GraphKind::GaltonWatson(_) => {
                let node = self.tree[i];
                if node.parent != NO_PARENT {
                    nbrs.push(VertexId(node.parent));
                }
                if self.in_window(node.depth as u64 + 1) {
                    for c in 0..node.children {
                        let key = mix64(node.key ^ mix64(c as u64 + 1));
                        nbrs.push(self.expose_tree_node(v.0, node.depth + 1, c, key));
                    }
                }
            }
            _ => unreachable!("explicit graphs are fully expanded"),
        }
        debug_assert_eq!(nbrs.len() as u32, self.degree[i]);
        self.adj_start[i] = self.adj.len() as u32;
        self.adj.extend(nbrs);
    }

    /// Neighbors of an exposed vertex; newly seen vertices get fresh ids.
    pub fn neighbors(&mut self, v: VertexId) -> Result<&[VertexId]> {
        self.check(v)?;
        self.expand(v);
        Ok(self.adjacent(v))
    }

    /// Neighbors of an already expanded vertex.
    ///
    /// Panics if `v` has not been expanded.
    #[inline]
    pub fn adjacent(&self, v: VertexId) -> &[VertexId] {
        let s = self.adj_start[v.index()];
        assert!(s != UNEXPANDED, "vertex {v} not expanded");
        let s = s as usize;
        &self.adj[s..s + self.degree[v.index()] as usize]
    }

    /// `i`-th neighbor of `v`, expanding `v` if needed.
    #[inline]
    pub fn neighbor(&mut self, v: VertexId, i: usize) -> VertexId {
        self.expand(v);
        self.adjacent(v)[i]
    }

    #[inline]
    pub fn degree(&self, v: VertexId) -> u32 {
        self.degree[v.index()]
    }

    pub fn checked_degree(&self, v: VertexId) -> Result<u32> {
        self.check(v)?;
        Ok(self.degree(v))
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn tree_seed(&self) -> u64 {
        self.tree_seed
    }

    pub fn exposed_count(&self) -> usize {
        self.degree.len()
    }

    pub fn is_exposed(&self, v: VertexId) -> bool {
        v.index() < self.degree.len()
    }

    /// (vertex, degree) pairs in discovery order.
    pub fn exposure_log(&self) -> impl Iterator<Item = (VertexId, u32)> + '_ {
        self.degree
            .iter()
            .enumerate()
            .map(|(i, &d)| (VertexId(i as u32), d))
    }

    /// Current exposure count k and D_k, the maximum exposed degree.
    pub fn exposed_max_degree(&self) -> ExposureStats {
        ExposureStats {
            k: self.degree.len(),
            max_degree: self.max_degree,
        }
    }

    /// Expose every vertex of a finite graph or window (breadth-first).
    pub fn expose_all(&mut self) -> Result<usize> {
        if !self.spec.is_finite() {
            return config(format!(
                "graph '{}' is infinite; give a window radius to expose all vertices",
                self.spec
            ));
        }
        let mut i = 0;
        while i < self.degree.len() {
            self.expand(VertexId(i as u32));
            i += 1;
        }
        Ok(self.degree.len())
    }

    /// Expose vertices breadth-first until at least `k` are exposed or the
    /// graph is exhausted.
    pub fn expose_bfs(&mut self, k: usize) -> usize {
        let mut i = 0;
        while self.degree.len() < k && i < self.degree.len() {
            self.expand(VertexId(i as u32));
            i += 1;
        }
        self.degree.len()
    }

    /// Lattice coordinate of a line vertex.
    pub fn coordinate(&self, v: VertexId) -> Option<i64> {
        self.coord.get(v.index()).copied()
    }

    /// Adjacency lists of a fully exposed finite graph.
    pub fn to_adjacency(&mut self) -> Result<Vec<Vec<usize>>> {
        let n = self.expose_all()?;
        Ok((0..n)
            .map(|i| {
                self.adjacent(VertexId(i as u32))
                    .iter()
                    .map(|w| w.index())
                    .collect()
            })
            .collect())
    }

    // Rooted-tree views (tree kinds only).

    fn node(&self, v: VertexId) -> &TreeNode {
        &self.tree[v.index()]
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        let p = self.node(v).parent;
        (p != NO_PARENT).then_some(VertexId(p))
    }

    pub fn depth(&self, v: VertexId) -> u32 {
        self.node(v).depth
    }

    /// Position of `v` among its parent's children.
    pub fn child_index(&self, v: VertexId) -> u32 {
        self.node(v).child_index
    }

    /// Number of children ignoring the window.
    pub fn nominal_children(&self, v: VertexId) -> u32 {
        self.node(v).children
    }

    /// Tree degree ignoring the window: children, plus one for the parent edge.
    pub fn nominal_degree(&self, v: VertexId) -> u32 {
        let n = self.node(v);
        n.children + u32::from(n.parent != NO_PARENT)
    }

    /// Whether the children of `v` lie inside the window.
    pub fn children_in_window(&self, v: VertexId) -> bool {
        self.in_window(self.node(v).depth as u64 + 1)
    }

    /// Children of `v` inside the window (empty on the window boundary).
    pub fn children(&mut self, v: VertexId) -> &[VertexId] {
        self.expand(v);
        let skip = usize::from(self.node(v).parent != NO_PARENT);
        &self.adjacent(v)[skip..]
    }
}

/// Quenched (one fixed tree) or annealed (fresh tree per replicate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TreeMode {
    #[default]
    Annealed,
    Quenched(u64),
}

/// Hands each replicate its own private oracle.
///
/// Deterministic graphs are built once and cloned. Random graphs are
/// rebuilt per replicate, from the replicate's stream when annealed or from
/// the fixed tree seed when quenched.
#[derive(Debug, Clone)]
pub struct GraphSource {
    spec: GraphSpec,
    mode: TreeMode,
    template: GraphOracle,
    expose_all: bool,
}

impl GraphSource {
    /// `expose_all` requests every vertex of a finite graph up front (needed
    /// for the "all occupied" initial condition).
    pub fn new(spec: &GraphSpec, mode: TreeMode, expose_all: bool) -> Result<Self> {
        let seed = match mode {
            TreeMode::Quenched(s) => s,
            TreeMode::Annealed => 0,
        };
        let mut template = make_graph(spec, seed)?;
        if expose_all {
            template.expose_all()?;
        }
        Ok(GraphSource {
            spec: spec.clone(),
            mode,
            template,
            expose_all,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    /// Oracle for one replicate. Annealed random graphs consume one draw.
    pub fn instantiate<R: Rng + ?Sized>(&self, rng: &mut R) -> GraphOracle {
        if self.spec.is_random() && self.mode == TreeMode::Annealed {
            let mut g = make_graph(&self.spec, rng.random()).expect("validated spec");
            if self.expose_all {
                g.expose_all().expect("finite window");
            }
            g
        } else {
            self.template.clone()
        }
    }

    /// Check that `v` names a vertex every instance will have.
    pub fn check_vertex(&self, v: VertexId) -> Result<()> {
        let ok = if self.spec.is_random() {
            v == VertexId::ROOT
        } else {
            self.template.is_exposed(v)
        };
        if ok {
            Ok(())
        } else {
            config(format!("vertex {v} is not a vertex of '{}'", self.spec))
        }
    }
}
