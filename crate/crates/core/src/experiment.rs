//! Experiment configuration, subcommand dispatch and report serialization.
//!
//! A config is a flat set of `key = value` lines (`#` starts a comment).
//! The same keys double as CLI flags. Every report embeds the config text
//! that produced it, so any CSV can be regenerated from its summary.

use crate::bounds::{
    gw_lower_bound_form, lower_bound_bounded_degree, sigma_tail_bound_degree,
    sigma_tail_bound_general, OccupancyIntegral,
};
use crate::crw::crw_occupancy_series;
use crate::error::{config, Error, Result};
use crate::exact::{
    adjacency_of, cluster_exact_survival, constant_rate_survival, crw_exact_pt, duality_gap,
    Tolerance,
};
use crate::graph::{GraphKind, GraphSpec, TreeMode, VertexId};
use crate::nb_tree::{nb_cluster_martingale, nb_cluster_survival, root_occupation, NbModel};
use crate::stats::{ks_critical, ks_statistic, z_for_level, EstimateRow, EstimateSeries};
use crate::voter::{martingale_trace, sigma_tail_dual, survival_series, DEFAULT_SIZE_CAP};
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Estimate,
    VerifyBounds,
    Duality,
    NbCompare,
    Oracle,
    Martingale,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Estimate,
        Command::VerifyBounds,
        Command::Duality,
        Command::NbCompare,
        Command::Oracle,
        Command::Martingale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::VerifyBounds => "verify-bounds",
            Command::Duality => "duality",
            Command::NbCompare => "nb-compare",
            Command::Oracle => "oracle",
            Command::Martingale => "martingale",
        }
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .map_or_else(|| config(format!("unknown command '{s}'")), Ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Direct,
    Dual,
    Oracle,
    NbFull,
    NbZap,
    NbDual,
}

impl Method {
    const NAMES: [(Method, &'static str); 6] = [
        (Method::Direct, "direct"),
        (Method::Dual, "dual"),
        (Method::Oracle, "oracle"),
        (Method::NbFull, "nb_full"),
        (Method::NbZap, "nb_zap"),
        (Method::NbDual, "nb_dual"),
    ];
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::NAMES
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(m, _)| *m)
            .map_or_else(
                || config(format!("unknown method '{s}' (direct, dual, oracle, nb_full, nb_zap, nb_dual)")),
                Ok,
            )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = Method::NAMES.iter().find(|(m, _)| m == self).expect("listed").1;
        f.write_str(name)
    }
}

/// Time grid: `linear:a:b:n`, `log:a:b:n`, or a comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeGrid {
    List(Vec<f64>),
    Linear { a: f64, b: f64, n: usize },
    Log { a: f64, b: f64, n: usize },
}

impl TimeGrid {
    pub fn points(&self) -> Vec<f64> {
        match *self {
            TimeGrid::List(ref v) => v.clone(),
            TimeGrid::Linear { a, b, n } => {
                if n == 1 {
                    return vec![a];
                }
                (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
            }
            TimeGrid::Log { a, b, n } => {
                if n == 1 {
                    return vec![a];
                }
                let (la, lb) = (a.ln(), b.ln());
                (0..n)
                    .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
                    .collect()
            }
        }
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .map_or_else(|| config(format!("{what}: '{s}' is not a finite number")), Ok)
}

fn parse_u64(s: &str, what: &str) -> Result<u64> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| Error::Config(format!("{what}: '{s}' is not a nonnegative integer")))
}

fn parse_list<T>(s: &str, mut item: impl FnMut(&str) -> Result<T>) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| item(x.trim())).collect()
}

impl FromStr for TimeGrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let grid = match parts.as_slice() {
            [kind @ ("linear" | "log"), a, b, n] => {
                let a = parse_f64(a, "grid start")?;
                let b = parse_f64(b, "grid end")?;
                let n = parse_u64(n, "grid count")? as usize;
                if n == 0 || b < a || (n > 1 && b == a) {
                    return config(format!("grid '{s}' needs n >= 1 and end > start"));
                }
                if *kind == "log" {
                    if a <= 0.0 {
                        return config(format!("log grid '{s}' needs a positive start"));
                    }
                    TimeGrid::Log { a, b, n }
                } else {
                    TimeGrid::Linear { a, b, n }
                }
            }
            [_] => TimeGrid::List(parse_list(s, |x| parse_f64(x, "time"))?),
            _ => return config(format!("bad time grid '{s}' (linear:a:b:n, log:a:b:n or t1,t2,...)")),
        };
        let pts = grid.points();
        if pts.is_empty() || pts[0] < 0.0 || pts.windows(2).any(|w| w[1] <= w[0]) {
            return config(format!("time grid '{s}' must be nonempty, nonnegative and increasing"));
        }
        Ok(grid)
    }
}

impl fmt::Display for TimeGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeGrid::List(v) => {
                let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&s.join(","))
            }
            TimeGrid::Linear { a, b, n } => write!(f, "linear:{a}:{b}:{n}"),
            TimeGrid::Log { a, b, n } => write!(f, "log:{a}:{b}:{n}"),
        }
    }
}

/// Every knob of a run. Field names match the config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub graph: GraphSpec,
    pub v: u32,
    pub method: Method,
    pub t: TimeGrid,
    pub reps: u64,
    pub seed: u64,
    pub size_cap: usize,
    pub window: Option<u32>,
    /// Fixes the random tree (quenched); absent means annealed.
    pub tree_seed: Option<u64>,
    pub level: f64,
    /// Jump indices at which martingale means are checked.
    pub checkpoints: Vec<u64>,
    /// Jumps over which the supremum is taken, with its thresholds.
    pub sup_jumps: u64,
    pub thresholds: Vec<f64>,
    /// (t, u) pairs for first-occupancy tail checks.
    pub sigma_pairs: Vec<(f64, f64)>,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub samples_out: Option<PathBuf>,
}

pub const CONFIG_KEYS: [&str; 18] = [
    "command",
    "graph",
    "v",
    "method",
    "t",
    "reps",
    "seed",
    "size_cap",
    "window",
    "tree_seed",
    "level",
    "checkpoints",
    "sup_jumps",
    "thresholds",
    "sigma_pairs",
    "out",
    "summary",
    "samples_out",
];

impl ExperimentConfig {
    pub fn new(command: Command, graph: GraphSpec) -> Self {
        ExperimentConfig {
            command,
            graph,
            v: 0,
            method: match command {
                Command::Duality | Command::Oracle => Method::Oracle,
                Command::NbCompare => Method::NbFull,
                _ => Method::Dual,
            },
            t: TimeGrid::List(vec![1.0]),
            reps: 10_000,
            seed: 1,
            size_cap: DEFAULT_SIZE_CAP,
            window: None,
            tree_seed: None,
            level: 0.99,
            checkpoints: vec![10, 100, 1000],
            sup_jumps: 900,
            thresholds: vec![60.0],
            sigma_pairs: Vec::new(),
            out: None,
            summary: None,
            samples_out: None,
        }
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let opt = |v: &str| (!v.is_empty() && v != "none").then(|| v.to_string());
        match key {
            "command" => self.command = value.parse()?,
            "graph" => self.graph = value.parse()?,
            "v" => {
                self.v = u32::try_from(parse_u64(value, "v")?)
                    .map_err(|_| Error::Config(format!("vertex '{value}' out of range")))?
            }
            "method" => self.method = value.parse()?,
            "t" => self.t = value.parse()?,
            "reps" => {
                self.reps = parse_u64(value, "reps")?;
                if self.reps < 2 {
                    return config("reps must be >= 2");
                }
            }
            "seed" => self.seed = parse_u64(value, "seed")?,
            "size_cap" => self.size_cap = parse_u64(value, "size_cap")?.max(1) as usize,
            "window" => {
                self.window = opt(value)
                    .map(|w| parse_u64(&w, "window").map(|x| x as u32))
                    .transpose()?
            }
            "tree_seed" => {
                self.tree_seed = opt(value).map(|s| parse_u64(&s, "tree_seed")).transpose()?
            }
            "level" => {
                let l = parse_f64(value, "level")?;
                if !(l > 0.0 && l < 1.0) {
                    return config("level must be in (0, 1)");
                }
                self.level = l;
            }
            "checkpoints" => self.checkpoints = parse_list(value, |x| parse_u64(x, "checkpoint"))?,
            "sup_jumps" => self.sup_jumps = parse_u64(value, "sup_jumps")?,
            "thresholds" => self.thresholds = parse_list(value, |x| parse_f64(x, "threshold"))?,
            "sigma_pairs" => {
                self.sigma_pairs = parse_list(value, |x| {
                    let (t, u) = x
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("sigma pair '{x}' is not t:u")))?;
                    let (t, u) = (parse_f64(t, "sigma t")?, parse_f64(u, "sigma u")?);
                    if !(u > t && t >= 0.0) {
                        return config(format!("sigma pair '{x}' needs u > t >= 0"));
                    }
                    Ok((t, u))
                })?
            }
            "out" => self.out = opt(value).map(PathBuf::from),
            "summary" => self.summary = opt(value).map(PathBuf::from),
            "samples_out" => self.samples_out = opt(value).map(PathBuf::from),
            _ => {
                return config(format!(
                    "unknown key '{key}' (known: {})",
                    CONFIG_KEYS.join(", ")
                ))
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines. `command` and `graph` are required.
    pub fn parse_kv(text: &str) -> Result<Self> {
        Self::from_pairs(&kv_pairs(text)?)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let find = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let command = find("command")
            .ok_or_else(|| Error::Config("missing 'command'".into()))?
            .parse()?;
        let graph = find("graph")
            .ok_or_else(|| Error::Config("missing 'graph'".into()))?
            .parse()?;
        let mut c = ExperimentConfig::new(command, graph);
        for (k, v) in pairs {
            if k != "command" && k != "graph" {
                c.set(k, v)?;
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_kv(&std::fs::read_to_string(path)?)
    }

    /// Canonical `key = value` text; parses back to an equal config.
    pub fn to_kv(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let join = |v: Vec<String>| v.join(",");
        let lines = [
            ("command", self.command.name().to_string()),
            ("graph", self.graph.to_string()),
            ("v", self.v.to_string()),
            ("method", self.method.to_string()),
            ("t", self.t.to_string()),
            ("reps", self.reps.to_string()),
            ("seed", self.seed.to_string()),
            ("size_cap", self.size_cap.to_string()),
            ("window", self.window.map_or("none".into(), |w| w.to_string())),
            ("tree_seed", self.tree_seed.map_or("none".into(), |s| s.to_string())),
            ("level", self.level.to_string()),
            ("checkpoints", join(self.checkpoints.iter().map(|x| x.to_string()).collect())),
            ("sup_jumps", self.sup_jumps.to_string()),
            ("thresholds", join(self.thresholds.iter().map(|x| x.to_string()).collect())),
            (
                "sigma_pairs",
                join(self.sigma_pairs.iter().map(|(t, u)| format!("{t}:{u}")).collect()),
            ),
            ("out", path(&self.out)),
            ("summary", path(&self.summary)),
            ("samples_out", path(&self.samples_out)),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The graph with the configured window applied.
    pub fn effective_graph(&self) -> Result<GraphSpec> {
        self.graph.clone().with_window(self.window)
    }

    pub fn tree_mode(&self) -> TreeMode {
        self.tree_seed.map_or(TreeMode::Annealed, TreeMode::Quenched)
    }
}

/// Raw `key = value` pairs of a config text, in order.
pub fn kv_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// One bound or identity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub t: f64,
    /// Bound or reference value.
    pub bound: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se: f64,
    pub passed: bool,
    /// Reported for information; does not affect the exit status.
    pub informational: bool,
}

impl Check {
    fn from_row(name: &str, row: &EstimateRow, bound: f64, passed: bool) -> Self {
        Check {
            name: name.to_string(),
            t: row.t,
            bound,
            estimate: row.estimate,
            ci_low: row.ci_low,
            ci_high: row.ci_high,
            se: row.se(),
            passed,
            informational: false,
        }
    }

    fn value(name: &str, t: f64, bound: f64, estimate: f64, passed: bool) -> Self {
        Check {
            name: name.to_string(),
            t,
            bound,
            estimate,
            ci_low: estimate,
            ci_high: estimate,
            se: 0.0,
            passed,
            informational: false,
        }
    }

    fn info(mut self) -> Self {
        self.informational = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateAccounting {
    pub requested: u64,
    pub completed: u64,
    pub cap_hit_fraction: f64,
    pub cap_biased: bool,
}

/// JSON summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: Command,
    /// Canonical config text; feed it back to `--config` to rerun.
    pub config: String,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub replicates: ReplicateAccounting,
    pub wall_clock_seconds: f64,
    pub notes: Vec<String>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Report {
    pub series: EstimateSeries,
    pub summary: Summary,
    /// Raw per-replicate samples (root occupation times), if any.
    pub samples: Vec<f64>,
}

impl Report {
    pub fn csv(&self) -> String {
        self.series.to_csv()
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("serializable summary") + "\n"
    }

    pub fn passed(&self) -> bool {
        self.summary.passed
    }

    /// Write the CSV, summary and sample files named in the config.
    pub fn write(&self, cfg: &ExperimentConfig) -> Result<()> {
        if let Some(p) = &cfg.out {
            std::fs::write(p, self.csv())?;
        }
        if let Some(p) = &cfg.summary {
            std::fs::write(p, self.summary_json())?;
        }
        if let Some(p) = &cfg.samples_out {
            let text: String = self.samples.iter().map(|x| format!("{x}\n")).collect();
            std::fs::write(p, text)?;
        }
        Ok(())
    }
}

fn merge_series(parts: Vec<EstimateSeries>) -> EstimateSeries {
    let cap = parts.iter().map(|s| s.cap_hit_fraction).fold(0.0, f64::max);
    EstimateSeries {
        rows: parts.into_iter().flat_map(|s| s.rows).collect(),
        cap_hit_fraction: cap,
        cap_biased: cap > 0.01,
    }
}

fn exact_row(t: f64, p: f64, method: &str) -> EstimateRow {
    EstimateRow {
        t,
        estimate: p,
        ci_low: p,
        ci_high: p,
        replicates: 0,
        method: method.to_string(),
        cap_hit: 0.0,
    }
}

fn mean_row(t: f64, mean: f64, se: f64, reps: u64, level: f64, method: &str) -> EstimateRow {
    let z = z_for_level(level);
    EstimateRow {
        t,
        estimate: mean,
        ci_low: mean - z * se,
        ci_high: mean + z * se,
        replicates: reps,
        method: method.to_string(),
        cap_hit: 0.0,
    }
}

/// Estimate series for `cfg.method` on the configured grid.
pub fn estimate_series(cfg: &ExperimentConfig) -> Result<EstimateSeries> {
    let spec = cfg.effective_graph()?;
    let grid = cfg.t.points();
    let v = VertexId(cfg.v);
    let mode = cfg.tree_mode();
    let nb_root_only = || {
        if cfg.v != 0 {
            return config("the non-backtracking models observe the root; use v = 0");
        }
        Ok(())
    };
    match cfg.method {
        Method::Direct => {
            if !spec.is_finite() {
                return config(format!(
                    "direct simulation needs a finite graph; add a window (e.g. window = 12) to '{spec}'"
                ));
            }
            crw_occupancy_series(&spec, mode, v, &grid, cfg.reps, cfg.seed, cfg.level)
        }
        Method::Dual => survival_series(&spec, mode, v, &grid, cfg.reps, cfg.seed, cfg.size_cap, cfg.level),
        Method::Oracle => {
            let adj = adjacency_of(&spec)?;
            let p = crw_exact_pt(&adj, cfg.v as usize, &grid, Tolerance::default())?;
            Ok(EstimateSeries {
                rows: grid.iter().zip(p).map(|(&t, p)| exact_row(t, p, "oracle")).collect(),
                cap_hit_fraction: 0.0,
                cap_biased: false,
            })
        }
        Method::NbFull | Method::NbZap => {
            nb_root_only()?;
            let model = if cfg.method == Method::NbFull {
                NbModel::FullNb
            } else {
                NbModel::Zap
            };
            let horizon = *grid.last().expect("nonempty grid");
            Ok(root_occupation(model, &spec, mode, horizon, &grid, cfg.reps, cfg.seed, cfg.level)?.occupancy)
        }
        Method::NbDual => {
            nb_root_only()?;
            nb_cluster_survival(&spec, mode, &grid, cfg.reps, cfg.seed, cfg.size_cap, cfg.level)
        }
    }
}

/// Run the configured subcommand.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut samples = Vec::new();
    let mut checks = Vec::new();
    let mut completed = cfg.reps;
    let series = match cfg.command {
        Command::Estimate => {
            if cfg.method == Method::Oracle {
                completed = 0;
            }
            estimate_series(cfg)?
        }
        Command::Oracle => {
            completed = 0;
            let spec = cfg.effective_graph()?;
            let adj = adjacency_of(&spec)?;
            let grid = cfg.t.points();
            let p = crw_exact_pt(&adj, cfg.v as usize, &grid, Tolerance::default())?;
            let q = cluster_exact_survival(&adj, cfg.v as usize, &grid, Tolerance::default())?;
            merge_series(vec![
                EstimateSeries {
                    rows: grid.iter().zip(p).map(|(&t, p)| exact_row(t, p, "oracle")).collect(),
                    cap_hit_fraction: 0.0,
                    cap_biased: false,
                },
                EstimateSeries {
                    rows: grid.iter().zip(q).map(|(&t, p)| exact_row(t, p, "oracle_dual")).collect(),
                    cap_hit_fraction: 0.0,
                    cap_biased: false,
                },
            ])
        }
        Command::Duality => {
            completed = 0;
            let spec = cfg.effective_graph()?;
            let adj = adjacency_of(&spec)?;
            let grid = cfg.t.points();
            let tol = Tolerance::default();
            let p = crw_exact_pt(&adj, cfg.v as usize, &grid, tol)?;
            let gaps = duality_gap(&adj, cfg.v as usize, &grid, tol)?;
            for (&t, &g) in grid.iter().zip(&gaps) {
                checks.push(Check::value("duality_gap", t, 1e-8, g, g <= 1e-8));
            }
            EstimateSeries {
                rows: grid.iter().zip(p).map(|(&t, p)| exact_row(t, p, "oracle")).collect(),
                cap_hit_fraction: 0.0,
                cap_biased: false,
            }
        }
        Command::VerifyBounds => verify_bounds(cfg, &mut checks, &mut notes)?,
        Command::NbCompare => nb_compare(cfg, &mut checks, &mut samples)?,
        Command::Martingale => martingale(cfg, &mut checks)?,
    };
    if series.cap_biased {
        notes.push(format!(
            "{:.2}% of replicates hit the size cap; estimates are lower bounds",
            100.0 * series.cap_hit_fraction
        ));
    }
    let passed = checks.iter().all(|c| c.passed || c.informational);
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        command: cfg.command,
        config: cfg.to_kv(),
        checks,
        passed,
        replicates: ReplicateAccounting {
            requested: if completed == 0 { 0 } else { cfg.reps },
            completed,
            cap_hit_fraction: series.cap_hit_fraction,
            cap_biased: series.cap_biased,
        },
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        notes,
    };
    Ok(Report {
        series,
        summary,
        samples,
    })
}

fn verify_bounds(cfg: &ExperimentConfig, checks: &mut Vec<Check>, notes: &mut Vec<String>) -> Result<EstimateSeries> {
    let spec = cfg.effective_graph()?;
    let series = estimate_series(cfg)?;
    let d = spec.max_degree().map(f64::from);
    let is_gw = matches!(spec.kind, GraphKind::GaltonWatson(_));
    let is_line = matches!(spec.kind, GraphKind::Line);
    if let Some(d) = d {
        for r in &series.rows {
            let b = lower_bound_bounded_degree(d, r.t);
            checks.push(Check::from_row("lower_bound_bounded_degree", r, b, r.estimate >= b - 3.0 * r.se()));
        }
    }
    if is_gw {
        let mut inf = f64::INFINITY;
        for r in series.rows.iter().filter(|r| r.t > 1.0) {
            // p_t t log t = p_t / form(1, t); positivity of the lower CI edge.
            let scale = 1.0 / gw_lower_bound_form(1.0, r.t)?;
            let mut c = Check::from_row("gw_t_log_t", r, 0.0, r.ci_low > 0.0);
            c.estimate = r.estimate * scale;
            c.ci_low = r.ci_low * scale;
            c.ci_high = r.ci_high * scale;
            c.se *= scale;
            inf = inf.min(c.estimate);
            checks.push(c);
        }
        if inf.is_finite() {
            notes.push(format!("inf over grid of p_t * t * log t = {inf}"));
        }
    }
    if is_gw || is_line {
        for r in series.rows.iter().filter(|r| r.t > 0.0) {
            let b = constant_rate_survival(1.0, r.t, None)?.survival;
            checks.push(Check::from_row("constant_rate_comparator", r, b, r.estimate <= b + 3.0 * r.se()));
        }
    }
    if is_line {
        // Reported constant of sqrt(t) p_t, against the oracle asymptote
        // for the line (per-direction rate 2) and the form 1/(2 sqrt(pi)).
        for r in series.rows.iter().filter(|r| r.t >= 5.0) {
            let fitted = r.t.sqrt() * r.estimate;
            let oracle = r.t.sqrt() * constant_rate_survival(2.0, r.t, None)?.survival;
            checks.push(Check::value("sqrt_t_constant", r.t, oracle, fitted, true).info());
        }
        notes.push(format!(
            "sqrt(t) p_t constants: oracle asymptote 1/sqrt(2 pi) = {:.6}; 1/(2 sqrt(pi)) = {:.6}",
            1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            1.0 / (2.0 * std::f64::consts::PI.sqrt())
        ));
    }
    if !cfg.sigma_pairs.is_empty() {
        let Some(d) = d else {
            return config("sigma-tail checks need a graph of bounded degree");
        };
        let occupancy = OccupancyIntegral::new(
            series.rows.iter().map(|r| r.t).collect(),
            series.rows.iter().map(|r| r.estimate).collect(),
        )
        .ok();
        for (k, &(t, u)) in cfg.sigma_pairs.iter().enumerate() {
            let row = sigma_tail_dual(
                &spec,
                cfg.tree_mode(),
                VertexId(cfg.v),
                t,
                u,
                cfg.reps,
                cfg.seed.wrapping_add(1 + k as u64),
                cfg.level,
            )?;
            let b = sigma_tail_bound_degree(d, t, u);
            let mut c = Check::from_row("sigma_tail_bound_degree", &row, b, row.estimate <= b + 3.0 * row.se());
            c.t = t;
            c.name = format!("sigma_tail_bound_degree(u={u})");
            checks.push(c);
            if let Some(i) = occupancy.as_ref().and_then(|o| o.integral(t, u).ok()) {
                let g = sigma_tail_bound_general(t, i);
                let mut c = Check::from_row("sigma_tail_bound_general", &row, g, row.estimate <= g + 3.0 * row.se()).info();
                c.t = t;
                c.name = format!("sigma_tail_bound_general(u={u})");
                checks.push(c);
            }
        }
    }
    if checks.is_empty() {
        notes.push("no bound applies to this graph".into());
    }
    Ok(series)
}

fn nb_compare(cfg: &ExperimentConfig, checks: &mut Vec<Check>, samples: &mut Vec<f64>) -> Result<EstimateSeries> {
    let spec = cfg.effective_graph()?;
    let grid = cfg.t.points();
    let horizon = *grid.last().expect("nonempty grid");
    let mode = cfg.tree_mode();
    let full = root_occupation(NbModel::FullNb, &spec, mode, horizon, &grid, cfg.reps, cfg.seed, cfg.level)?;
    let zap = root_occupation(
        NbModel::Zap,
        &spec,
        mode,
        horizon,
        &grid,
        cfg.reps,
        cfg.seed.wrapping_add(1),
        cfg.level,
    )?;
    let pooled = (full.se.powi(2) + zap.se.powi(2)).sqrt();
    let diff = (full.mean - zap.mean).abs();
    checks.push(Check {
        name: "mean_x_difference".into(),
        t: horizon,
        bound: 3.0 * pooled,
        estimate: diff,
        ci_low: diff,
        ci_high: diff,
        se: pooled,
        passed: diff < 3.0 * pooled,
        informational: false,
    });
    let d = ks_statistic(&full.samples, &zap.samples);
    let crit = ks_critical(0.01, full.samples.len(), zap.samples.len());
    checks.push(Check::value("ks_statistic", horizon, crit, d, d < crit));
    let rows = vec![
        mean_row(horizon, full.mean, full.se, cfg.reps, cfg.level, "full_nb_mean_x"),
        mean_row(horizon, zap.mean, zap.se, cfg.reps, cfg.level, "zap_mean_x"),
    ];
    samples.extend(&full.samples);
    samples.extend(&zap.samples);
    Ok(merge_series(vec![
        full.occupancy,
        zap.occupancy,
        EstimateSeries {
            rows,
            cap_hit_fraction: 0.0,
            cap_biased: false,
        },
    ]))
}

fn martingale(cfg: &ExperimentConfig, checks: &mut Vec<Check>) -> Result<EstimateSeries> {
    let spec = cfg.effective_graph()?;
    let mode = cfg.tree_mode();
    let v = VertexId(cfg.v);
    let mut rows = Vec::new();
    let mut check_mean = |i: u64, mean: f64, se: f64, method: &str| {
        checks.push(Check {
            name: "mean_cluster_size".into(),
            t: i as f64,
            bound: 1.0,
            estimate: mean,
            ci_low: mean - 3.0 * se,
            ci_high: mean + 3.0 * se,
            se,
            passed: (mean - 1.0).abs() <= 3.0 * se,
            informational: false,
        });
        rows.push(mean_row(i as f64, mean, se, cfg.reps, cfg.level, method));
    };
    match cfg.method {
        Method::NbDual => {
            for (i, mean, se) in nb_cluster_martingale(&spec, mode, &cfg.checkpoints, cfg.reps, cfg.seed)? {
                check_mean(i, mean, se, "nb_dual_martingale");
            }
        }
        Method::Dual => {
            let n = cfg.checkpoints.iter().copied().max().unwrap_or(1).max(1);
            let m = martingale_trace(&spec, mode, v, n, cfg.sup_jumps, &cfg.thresholds, cfg.reps, cfg.seed)?;
            for &i in &cfg.checkpoints {
                check_mean(i, m.mean[i as usize], m.se[i as usize], "dual_martingale");
            }
            for &(thr, p, se) in &m.sup_exceed {
                let mut c = Check::value("sup_exceedance", cfg.sup_jumps as f64, 1.0 / thr, p, p <= 1.0 / thr + 3.0 * se);
                c.se = se;
                checks.push(c);
            }
            checks.push(Check::value(
                "rate_bound_violations",
                n.max(cfg.sup_jumps) as f64,
                0.0,
                m.rate_bound_violations as f64,
                m.rate_bound_violations == 0,
            ));
        }
        other => return config(format!("martingale runs the dual or nb_dual cluster, not '{other}'")),
    }
    Ok(EstimateSeries {
        rows,
        cap_hit_fraction: 0.0,
        cap_biased: false,
    })
}
