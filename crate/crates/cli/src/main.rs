use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use serde_json::json;

use schednet::csma::{distributed_topk, l1_distance, ocsma_simulate, ocsma_stationary};
use schednet::env::EnvConfig;
use schednet::harness::{
    self, distributed_topk_on_trace, read_schedule_trace, ExperimentConfig, Snapshot, SweepParam,
};
use schednet::wsa::{top_k, Wsa};
use schednet::SimRng;

#[derive(Parser)]
#[command(name = "schednet", version, about = "Train and inspect agents that learn whom to let talk on a shared medium")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config and write curves, snapshots and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the training budget.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Greedy evaluation of a snapshot.
    Evaluate {
        #[arg(long)]
        snapshot: PathBuf,
        /// Experiment config whose environment to evaluate on (default: the snapshot's own).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scheduler to evaluate with; must match the snapshot.
        #[arg(long)]
        wsa: Option<String>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-step schedules and weights of greedy execution (JSONL).
    TraceSchedule {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Broadcast messages with ground-truth labels (JSONL).
    TraceMessages {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Medium-access simulation of the schedulers; prints JSON.
    CsmaSim {
        #[arg(long, value_enum, default_value_t = CsmaMode::Topk)]
        mode: CsmaMode,
        /// Comma-separated weights, e.g. `0.74,0.27,0.26,0.26`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Option<Vec<f64>>,
        /// Schedule trace written by `trace-schedule`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0.01)]
        window: f64,
        /// Contention trials for inline weights in top-k mode.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Simulated time in ocsma mode.
        #[arg(long, default_value_t = 1e6)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-run an experiment over k or l.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated values (default: k = 1..n, l = 1,2,4,8).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CsmaMode {
    Topk,
    Ocsma,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    K,
    L,
}

fn load_config(path: &Path, out: Option<PathBuf>, steps: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(steps) = steps {
        cfg.hyperparameters.training_steps = steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_snapshot(path: &Path) -> Result<Snapshot> {
    Snapshot::load(path).with_context(|| format!("reading snapshot {}", path.display()))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        // A closed pipe (e.g. `| head`) is not an error of ours.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn csma_sim(
    mode: CsmaMode,
    weights: Option<Vec<f64>>,
    trace: Option<PathBuf>,
    k: usize,
    window: f64,
    trials: usize,
    duration: f64,
    seed: u64,
) -> Result<serde_json::Value> {
    let trace = trace.map(|p| read_schedule_trace(&p)).transpose()?;
    let mut rng = SimRng::seed_from_u64(seed);
    Ok(match (mode, weights, trace) {
        (_, Some(_), Some(_)) => bail!("pass either --weights or --trace, not both"),
        (_, None, None) => bail!("pass --weights or --trace"),
        (CsmaMode::Topk, Some(w), None) => {
            if trials == 0 {
                bail!("--trials must be positive");
            }
            let central = top_k(&w, k)?;
            let mut counts = vec![0usize; w.len()];
            let mut matches = 0;
            let mut collisions = 0;
            for _ in 0..trials {
                let (c, rep) = distributed_topk(&w, k, window, &mut rng)?;
                collisions += rep.collisions;
                matches += (c == central) as usize;
                for i in c.scheduled() {
                    counts[i] += 1;
                }
            }
            json!({
                "mode": "topk",
                "weights": w,
                "k": k,
                "sensing_window": window,
                "trials": trials,
                "schedule_frequency": counts.iter().map(|&c| c as f64 / trials as f64).collect::<Vec<_>>(),
                "success_rate": matches as f64 / trials as f64,
                "collisions": collisions,
            })
        }
        (CsmaMode::Topk, None, Some(t)) => {
            let ws: Vec<Vec<f64>> = t.records.into_iter().map(|r| r.w).collect();
            let rep = distributed_topk_on_trace(&ws, k, window, seed)?;
            json!({ "mode": "topk", "k": k, "sensing_window": window, "report": rep })
        }
        (CsmaMode::Ocsma, w, t) => {
            let w = match (w, t) {
                (Some(w), _) => w,
                (None, Some(t)) => t.summary.mean_weights,
                (None, None) => unreachable!(),
            };
            let stats = ocsma_simulate(&w, duration, &mut rng)?;
            let stationary = ocsma_stationary(&w);
            json!({
                "mode": "ocsma",
                "weights": w,
                "l1_to_stationary": l1_distance(&stats.busy_conditional, &stationary),
                "stationary": stationary,
                "stats": stats,
            })
        }
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, steps } => {
            let cfg = load_config(&config, out, steps)?;
            let outputs = harness::run_experiment(&cfg)?;
            print_json(&json!({
                "summary": outputs.summary_path,
                "curves": outputs.curves,
                "snapshots": outputs.snapshots,
                "mean_steps": outputs.summary.mean_steps,
                "ci95": outputs.summary.ci95,
            }))
        }
        Command::Evaluate {
            snapshot,
            config,
            wsa,
            episodes,
            seed,
        } => {
            let snap = load_snapshot(&snapshot)?;
            let env: EnvConfig = match config {
                Some(p) => ExperimentConfig::load(&p)?.env,
                None => snap.env.clone(),
            };
            let wsa = wsa.map(|s| s.parse::<Wsa>()).transpose()?;
            let eval = harness::evaluate(&snap, &env, wsa, episodes, seed)?;
            print_json(&serde_json::to_value(eval)?)
        }
        Command::TraceSchedule {
            snapshot,
            steps,
            seed,
            out,
        } => {
            let snap = load_snapshot(&snapshot)?;
            let trace = harness::export_schedule_trace(&snap, &snap.env, steps, seed)?;
            harness::write_schedule_trace(&trace, BufWriter::new(File::create(&out)?))?;
            print_json(&serde_json::to_value(&trace.summary)?)
        }
        Command::TraceMessages {
            snapshot,
            steps,
            seed,
            out,
        } => {
            let snap = load_snapshot(&snapshot)?;
            let log = harness::export_message_log(&snap, &snap.env, steps, seed)?;
            harness::write_jsonl(&log, BufWriter::new(File::create(&out)?))?;
            print_json(&json!({ "records": log.len(), "out": out }))
        }
        Command::CsmaSim {
            mode,
            weights,
            trace,
            k,
            window,
            trials,
            duration,
            seed,
        } => print_json(&csma_sim(mode, weights, trace, k, window, trials, duration, seed)?),
        Command::Sweep {
            config,
            param,
            values,
            out,
            steps,
        } => {
            let cfg = load_config(&config, out, steps)?;
            let param = match param {
                Param::K => SweepParam::K,
                Param::L => SweepParam::L,
            };
            let values = values.unwrap_or_else(|| param.default_values(cfg.env.n_agents()));
            let summary = harness::sweep(&cfg, param, &values)?;
            print_json(&serde_json::to_value(summary)?)
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
