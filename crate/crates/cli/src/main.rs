use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use crw_core::experiment::{kv_pairs, run, Command, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Coalescing random walk / voter dual experiments.
///
/// Worker count: set CRW_WORKERS (default: available parallelism).
#[derive(Parser)]
#[command(name = "crw", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Estimate p_t(v) on a time grid.
    Estimate(Flags),
    /// Compare estimates against the closed-form bounds.
    VerifyBounds(Flags),
    /// Exact duality gap on a small graph.
    Duality(Flags),
    /// Root occupation time: full non-backtracking model vs zap model.
    NbCompare(Flags),
    /// Exact occupancy probabilities on a small graph.
    Oracle(Flags),
    /// Jump-indexed cluster-size martingale checks.
    Martingale(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// key = value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph spec, e.g. cycle:8, regtree:3, gw:geom:0.5, bintree:6, line@50.
    #[arg(long)]
    graph: Option<String>,
    /// Target vertex id.
    #[arg(long)]
    v: Option<String>,
    /// direct, dual, oracle, nb_full, nb_zap or nb_dual.
    #[arg(long)]
    method: Option<String>,
    /// Time grid: linear:a:b:n, log:a:b:n or t1,t2,...
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    size_cap: Option<String>,
    /// Window radius for line, regtree and gw graphs.
    #[arg(long)]
    window: Option<String>,
    /// Fix the random tree (quenched); default is annealed.
    #[arg(long)]
    tree_seed: Option<String>,
    /// Confidence level of the Wilson intervals.
    #[arg(long)]
    level: Option<String>,
    /// Jump indices for martingale means, comma-separated.
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long)]
    sup_jumps: Option<String>,
    #[arg(long)]
    thresholds: Option<String>,
    /// First-occupancy tail checks as t:u pairs, comma-separated.
    #[arg(long)]
    sigma_pairs: Option<String>,
    /// CSV output path (default: stdout).
    #[arg(long)]
    out: Option<String>,
    /// JSON summary path.
    #[arg(long)]
    summary: Option<String>,
    /// Per-replicate samples, one per line (nb-compare).
    #[arg(long)]
    samples_out: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("graph", &self.graph),
            ("v", &self.v),
            ("method", &self.method),
            ("t", &self.t),
            ("reps", &self.reps),
            ("seed", &self.seed),
            ("size_cap", &self.size_cap),
            ("window", &self.window),
            ("tree_seed", &self.tree_seed),
            ("level", &self.level),
            ("checkpoints", &self.checkpoints),
            ("sup_jumps", &self.sup_jumps),
            ("thresholds", &self.thresholds),
            ("sigma_pairs", &self.sigma_pairs),
            ("out", &self.out),
            ("summary", &self.summary),
            ("samples_out", &self.samples_out),
        ]
    }
}

fn build_config(command: Command, flags: &Flags) -> Result<ExperimentConfig> {
    let mut pairs = Vec::new();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        pairs = kv_pairs(&text)?;
    }
    // The subcommand and explicit flags win over the file.
    pairs.push(("command".into(), command.name().into()));
    for (k, v) in flags.pairs() {
        if let Some(v) = v {
            pairs.push((k.into(), v.clone()));
        }
    }
    Ok(ExperimentConfig::from_pairs(&pairs)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match &cli.command {
        Sub::Estimate(f) => (Command::Estimate, f),
        Sub::VerifyBounds(f) => (Command::VerifyBounds, f),
        Sub::Duality(f) => (Command::Duality, f),
        Sub::NbCompare(f) => (Command::NbCompare, f),
        Sub::Oracle(f) => (Command::Oracle, f),
        Sub::Martingale(f) => (Command::Martingale, f),
    };
    let result = build_config(command, flags).and_then(|cfg| {
        let report = run(&cfg)?;
        report.write(&cfg)?;
        if cfg.out.is_none() {
            print!("{}", report.csv());
        }
        for c in &report.summary.checks {
            let status = match (c.informational, c.passed) {
                (true, _) => "info",
                (false, true) => "pass",
                (false, false) => "FAIL",
            };
            eprintln!(
                "{status} {} t={} estimate={} bound={}",
                c.name, c.t, c.estimate, c.bound
            );
        }
        for n in &report.summary.notes {
            eprintln!("note: {n}");
        }
        Ok(report.passed())
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
