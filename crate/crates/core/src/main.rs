use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use migrate_core::archive::IslandConfig;
use migrate_core::harness::sweep::{default_checkpoints, rows_csv, summary_csv};
use migrate_core::harness::trace::write_files_atomically;
use migrate_core::harness::{
    bootstrap_nearest, load_donors, run, sweep, write_run_outputs, Method, OptimizerKind, RunConfig, RunStatus,
    SweepPoint,
};
use migrate_core::tasks::{GridTask, TaskKind};

#[derive(Parser)]
#[command(name = "migrate", version, about = "Mixed-policy GRPO search over black-box objectives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search and write its outputs.
    Run(RunArgs),
    /// Run every grid point for every seed and tabulate best-so-far.
    Sweep(SweepArgs),
    /// Pick initial parameters for a grid task from solved runs.
    Bootstrap(BootstrapArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to words when no config file is given.
    #[arg(long, value_enum)]
    task: Option<TaskKind>,
    /// Defaults to migrate when no config file is given.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Embedding file (words) or ARC-format JSON (grids).
    #[arg(long)]
    task_file: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    mu: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    eps_low: Option<f64>,
    #[arg(long)]
    eps_high: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    mutation_rate: Option<f64>,
    #[arg(long)]
    warmstart: Option<usize>,
    #[arg(long)]
    stop_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Enable the islands archive with default settings.
    #[arg(long)]
    islands: bool,
    /// Word task: two words per fresh slot, keep the better.
    #[arg(long)]
    word_pairs: bool,
    #[arg(long)]
    bootstrap_params: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => RunConfig::defaults(
                self.task.unwrap_or(TaskKind::Words),
                self.method.unwrap_or(Method::Migrate),
            ),
        };
        if self.config.is_some() {
            if let Some(m) = self.method {
                c.method = m;
            }
            if let Some(t) = self.task {
                c.task.kind = t;
            }
        }
        if self.alpha.is_some() || self.beta.is_some() || self.gamma.is_some() {
            let (a, b, g) = (self.alpha.unwrap_or(c.alpha), self.beta.unwrap_or(c.beta), self.gamma.unwrap_or(c.gamma));
            c = c.with_mix(a, b, g);
        }
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => { $(if let Some(v) = self.$flag.clone() { c.$field = v; })* };
        }
        set!(n <- group_size, budget <- budget, k <- topk, mu <- mu, lr <- lr, optimizer <- optimizer,
             eps_low <- eps_low, eps_high <- eps_high, temperature <- temperature,
             mutation_rate <- mutation_rate, warmstart <- warmstart, seed <- seed);
        if let Some(t) = self.stop_threshold {
            c.stop_threshold = Some(t);
        }
        if let Some(f) = &self.task_file {
            c.task.file = Some(f.clone());
        }
        if let Some(p) = &self.bootstrap_params {
            c.bootstrap_params = Some(p.clone());
        }
        if self.islands && c.islands.is_none() {
            c.islands = Some(IslandConfig::default());
        }
        c.word_pairs |= self.word_pairs;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// JSON array of points: {"alpha","beta","gamma", optional "mutation_rate", "exploit_prob"}.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Evaluation counts at which best-so-far is tabulated; default quarters of the budget.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<usize>,
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    /// Directory of run outputs (each with best.txt and params.mgp).
    #[arg(long)]
    solved_dir: PathBuf,
    /// ARC-format JSON of the unsolved task.
    #[arg(long)]
    task: PathBuf,
    /// Base config; defaults to the grid migrate config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the resulting config; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => {
            let cfg = a.config.build()?;
            let outcome = run(&cfg)?;
            write_run_outputs(&outcome, &cfg, &a.out)?;
            println!("{}", serde_json::to_string_pretty(&outcome.trace.summary)?);
            if let RunStatus::Error(e) = &outcome.trace.summary.status {
                bail!("run aborted: {e}");
            }
        }
        Command::Sweep(a) => {
            let base = a.config.build()?;
            let points: Vec<SweepPoint> = serde_json::from_str(
                &std::fs::read_to_string(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?,
            )?;
            let checkpoints = if a.checkpoints.is_empty() { default_checkpoints(base.budget) } else { a.checkpoints };
            let result = sweep(&base, &points, &a.seeds, &checkpoints)?;
            write_files_atomically(
                &a.out,
                &[
                    ("sweep_runs.csv".into(), rows_csv(&result)?.into_bytes()),
                    ("sweep_summary.csv".into(), summary_csv(&result)?.into_bytes()),
                ],
            )?;
            print!("{}", summary_csv(&result)?);
        }
        Command::Bootstrap(a) => {
            let mut base = match &a.config {
                Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
                None => RunConfig::defaults(TaskKind::Grids, Method::Migrate),
            };
            base.task.file = Some(a.task.clone());
            let task = GridTask::load(&a.task)?;
            let donors = load_donors(&a.solved_dir)?;
            let choice = bootstrap_nearest(&task, &base, &donors);
            match choice.chosen {
                Some(i) => eprintln!(
                    "nearest donor: {} (train reward {})",
                    donors[i].name,
                    choice.rewards[i].unwrap_or(0.0)
                ),
                None => eprintln!("no usable donor; config keeps fresh parameters"),
            }
            let json = choice.config.to_json();
            match a.out {
                Some(p) => std::fs::write(&p, json + "\n")?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}
