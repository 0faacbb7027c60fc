//! Experiment orchestration and artifact export.
//!
//! Output files of [`run_experiment`] in `output_dir`:
//! - `config.toml`: the resolved configuration
//! - `curve_seed{s}.jsonl`: one [`CurvePoint`] per evaluation
//! - `snapshot_seed{s}.bin`: final parameters ([`snapshot`] format)
//! - `final_seed{s}.json`: final greedy evaluation of that seed
//! - `summary.json`: across-seed aggregate ([`Summary`])

pub mod config;
pub mod snapshot;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use config::{Algo, ExperimentConfig, NetworkSizes};
pub use snapshot::{Policy, Snapshot};

use crate::actor::ActionMode;
use crate::baselines::{Idqn, IdqnTrainer};
use crate::csma::distributed_topk;
use crate::env::{EnvConfig, MessageLabel};
use crate::error::{Error, Result};
use crate::trainer::{
    derive_seed, evaluate_policy, run_learner, CurvePoint, EvalSummary, JointPolicy, Learner, SchedNet, Trainer,
};
use crate::wsa::{top_k, Wsa};
use crate::SimRng;

pub const SUMMARY_VERSION: u32 = 1;

/// Final greedy evaluation of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub mean_steps: f64,
    pub ci95: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub label: String,
    pub algo: Algo,
    pub env: String,
    pub wsa: Wsa,
    pub k: usize,
    pub l: usize,
    pub training_steps: u64,
    pub per_seed: Vec<SeedResult>,
    /// Mean of the per-seed means.
    pub mean_steps: f64,
    /// Student-t 95% half-width across seeds; zero for one seed.
    pub ci95: f64,
}

/// `(mean, half-width)` of a Student-t 95% interval with `n - 1` degrees of freedom.
pub fn student_t_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

pub fn aggregate(config: &ExperimentConfig, per_seed: Vec<SeedResult>) -> Summary {
    let means: Vec<f64> = per_seed.iter().map(|r| r.mean_steps).collect();
    let (mean_steps, ci95) = student_t_ci95(&means);
    Summary {
        version: SUMMARY_VERSION,
        label: config.label(),
        algo: config.algo,
        env: config.env.name().into(),
        wsa: config.wsa,
        k: config.k,
        l: config.l,
        training_steps: config.hyperparameters.training_steps,
        per_seed,
        mean_steps,
        ci95,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutputs {
    pub curves: Vec<PathBuf>,
    pub snapshots: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: Summary,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn curve_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("curve_seed{seed}.jsonl"))
}

pub fn snapshot_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("snapshot_seed{seed}.bin"))
}

pub fn final_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("final_seed{seed}.json"))
}

/// Trains one seed, streaming its learning curve to `curve_out`.
pub fn train_seed<W: Write>(config: &ExperimentConfig, seed: u64, mut curve_out: W) -> Result<(Snapshot, SeedResult)> {
    config.validate()?;
    let hp = config.hyperparameters.clone();
    let env = config.env.clone();
    let mut on_point = |p: &CurvePoint| -> Result<()> {
        serde_json::to_writer(&mut curve_out, p)?;
        curve_out.write_all(b"\n")?;
        Ok(())
    };
    let (policy, step) = match config.algo {
        Algo::Schednet => {
            let model = SchedNet::new(config.model_config()?, derive_seed(seed, 0))?;
            let mut tr = Trainer::new(model, env.clone(), hp.clone(), seed)?;
            run_learner(&mut tr, &mut on_point)?;
            let step = tr.steps_done();
            (Policy::Schednet(tr.model), step)
        }
        Algo::Idqn => {
            let e = env.build()?;
            let model = Idqn::for_env(e.as_ref(), config.critic_hidden(), derive_seed(seed, 0))?;
            let mut tr = IdqnTrainer::new(model, env.clone(), hp.clone(), seed)?;
            run_learner(&mut tr, &mut on_point)?;
            let step = tr.steps_done();
            (Policy::Idqn(tr.model), step)
        }
    };
    curve_out.flush()?;
    let snapshot = Snapshot { env, seed, step, policy };
    let eval = evaluate(&snapshot, &snapshot.env, None, hp.final_eval_episodes, derive_seed(seed, 4))?;
    Ok((
        snapshot,
        SeedResult {
            seed,
            mean_steps: eval.mean_steps,
            ci95: eval.ci95,
            episodes: eval.episodes,
        },
    ))
}

/// One training run per seed, then the across-seed summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutputs> {
    config.validate()?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::config("output_dir", format!("cannot create {}: {e}", dir.display())))?;
    std::fs::write(dir.join("config.toml"), config.to_toml_string()?)
        .map_err(|e| Error::config("output_dir", format!("cannot write to {}: {e}", dir.display())))?;
    let mut curves = Vec::new();
    let mut snapshots = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let cpath = curve_path(dir, seed);
        let (snap, result) = train_seed(config, seed, BufWriter::new(File::create(&cpath)?))?;
        let spath = snapshot_path(dir, seed);
        snap.save(&spath)?;
        write_json(&final_path(dir, seed), &result)?;
        curves.push(cpath);
        snapshots.push(spath);
        per_seed.push(result);
    }
    let summary = aggregate(config, per_seed);
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    Ok(RunOutputs {
        curves,
        snapshots,
        summary_path,
        summary,
    })
}

/// Rebuilds `summary.json` content from the per-seed files of a finished run.
pub fn recompute_summary(config: &ExperimentConfig) -> Result<Summary> {
    let per_seed = config
        .seeds
        .iter()
        .map(|&s| read_json(&final_path(&config.output_dir, s)))
        .collect::<Result<Vec<SeedResult>>>()?;
    Ok(aggregate(config, per_seed))
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn check_env(snapshot: &Snapshot, env: &EnvConfig) -> Result<()> {
    let (a, b) = (snapshot.env.build()?, env.build()?);
    if snapshot.env.name() != env.name()
        || a.n_agents() != b.n_agents()
        || a.obs_dim() != b.obs_dim()
        || a.state_dim() != b.state_dim()
        || a.n_actions() != b.n_actions()
    {
        return Err(Error::Snapshot(format!(
            "snapshot trained on `{}` does not fit environment `{}`",
            snapshot.env.name(),
            env.name()
        )));
    }
    Ok(())
}

/// Rejects a scheduler that differs from the one the snapshot was trained with.
fn check_wsa(snapshot: &Snapshot, wsa: Option<Wsa>) -> Result<()> {
    match (&snapshot.policy, wsa) {
        (_, None) => Ok(()),
        (Policy::Schednet(m), Some(w)) if m.config.wsa == w => Ok(()),
        (Policy::Schednet(m), Some(w)) => Err(Error::config(
            "wsa",
            format!("snapshot was trained with `{}`; cannot evaluate with `{w}`", m.config.wsa),
        )),
        (Policy::Idqn(_), Some(w)) => Err(Error::config("wsa", format!("IDQN snapshots take no scheduler, got `{w}`"))),
    }
}

impl JointPolicy for Snapshot {
    fn act_greedy(&self, obs: &[Vec<f64>], t: u64, rng: &mut SimRng) -> Result<Vec<usize>> {
        match &self.policy {
            Policy::Schednet(m) => m.act_greedy(obs, t, rng),
            Policy::Idqn(m) => m.act_greedy(obs, t, rng),
        }
    }
}

/// Greedy, noise-free evaluation of a snapshot. `wsa`, if given, must match the snapshot.
pub fn evaluate(
    snapshot: &Snapshot,
    env: &EnvConfig,
    wsa: Option<Wsa>,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    check_env(snapshot, env)?;
    check_wsa(snapshot, wsa)?;
    evaluate_policy(snapshot, env, episodes, seed)
}

fn schednet(snapshot: &Snapshot) -> Result<&SchedNet> {
    match &snapshot.policy {
        Policy::Schednet(m) => Ok(m),
        Policy::Idqn(_) => Err(Error::Snapshot("IDQN snapshots have no scheduler or messages".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub t: u64,
    pub c: Vec<u8>,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub counts: Vec<usize>,
    pub mean_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub records: Vec<ScheduleRecord>,
    pub summary: TraceSummary,
}

/// One greedy step record of a message log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub t: u64,
    pub agent: usize,
    /// The broadcast message as received (after wire quantization).
    pub message: Vec<f64>,
    pub label: Option<MessageLabel>,
}

/// Runs greedy episodes back to back for `steps` steps, calling `visit`
/// before each step with the slot index, decision and environment.
fn rollout<F>(model: &SchedNet, env_config: &EnvConfig, steps: usize, seed: u64, mut visit: F) -> Result<()>
where
    F: FnMut(u64, &crate::trainer::Decision, &dyn crate::env::Environment) -> Result<()>,
{
    let mut env = env_config.build()?;
    let mut rng = SimRng::seed_from_u64(seed);
    let (_, mut obs) = env.reset(&mut rng)?;
    for t in 0..steps as u64 {
        let d = model.decide(&obs, t, 0.0, ActionMode::Greedy, &mut rng)?;
        visit(t, &d, env.as_ref())?;
        let r = env.step(&d.actions, &mut rng)?;
        obs = if r.episode_over() {
            env.reset(&mut rng)?.1
        } else {
            r.observations
        };
    }
    Ok(())
}

/// Per-step schedules and weights of greedy execution, with per-agent totals.
pub fn export_schedule_trace(snapshot: &Snapshot, env: &EnvConfig, steps: usize, seed: u64) -> Result<ScheduleTrace> {
    check_env(snapshot, env)?;
    let model = schednet(snapshot)?;
    let n = model.config.n_agents;
    let mut records = Vec::with_capacity(steps);
    rollout(model, env, steps, seed, |t, d, _| {
        records.push(ScheduleRecord {
            t,
            c: d.schedule.to_bits(),
            w: d.weights.clone(),
        });
        Ok(())
    })?;
    let mut counts = vec![0; n];
    let mut mean_weights = vec![0.0; n];
    for r in &records {
        for i in 0..n {
            counts[i] += r.c[i] as usize;
            mean_weights[i] += r.w[i];
        }
    }
    for m in &mut mean_weights {
        *m /= records.len().max(1) as f64;
    }
    Ok(ScheduleTrace {
        summary: TraceSummary {
            steps: records.len(),
            counts,
            mean_weights,
        },
        records,
    })
}

/// Messages broadcast by scheduled agents during greedy execution, labelled
/// with what the sender could see.
pub fn export_message_log(snapshot: &Snapshot, env: &EnvConfig, steps: usize, seed: u64) -> Result<Vec<MessageRecord>> {
    check_env(snapshot, env)?;
    let model = schednet(snapshot)?;
    let mut out = Vec::new();
    rollout(model, env, steps, seed, |t, d, e| {
        for i in d.schedule.scheduled() {
            out.push(MessageRecord {
                t,
                agent: i,
                message: d.messages[i].iter().map(|&x| crate::actor::quantize(x)).collect(),
                label: e.message_label(i),
            });
        }
        Ok(())
    })?;
    Ok(out)
}

/// Line-tagged JSONL form of a trace: step records, then one summary line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceLine {
    Step(ScheduleRecord),
    Summary(TraceSummary),
}

pub fn write_schedule_trace<W: Write>(trace: &ScheduleTrace, mut out: W) -> Result<()> {
    for r in &trace.records {
        serde_json::to_writer(&mut out, &TraceLine::Step(r.clone()))?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut out, &TraceLine::Summary(trace.summary.clone()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_schedule_trace(path: &Path) -> Result<ScheduleTrace> {
    let mut records = Vec::new();
    let mut summary = None;
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line)? {
            TraceLine::Step(r) => records.push(r),
            TraceLine::Summary(s) => summary = Some(s),
        }
    }
    let summary = summary.ok_or_else(|| Error::InvalidArgument("trace has no summary line".into()))?;
    Ok(ScheduleTrace { records, summary })
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// How often distributed Top(k) reproduces centralized Top(k) on logged weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsmaTraceReport {
    pub steps: usize,
    pub matches: usize,
    pub success_rate: f64,
    pub collisions: usize,
}

pub fn distributed_topk_on_trace(
    weights: &[Vec<f64>],
    k: usize,
    sensing_window: f64,
    seed: u64,
) -> Result<CsmaTraceReport> {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut matches = 0;
    let mut collisions = 0;
    for w in weights {
        let (c, rep) = distributed_topk(w, k, sensing_window, &mut rng)?;
        collisions += rep.collisions;
        if c == top_k(w, k)? {
            matches += 1;
        }
    }
    Ok(CsmaTraceReport {
        steps: weights.len(),
        matches,
        success_rate: matches as f64 / weights.len().max(1) as f64,
        collisions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    K,
    L,
}

impl SweepParam {
    /// `k` over `1..=n`; `l` over `{1, 2, 4, 8}`.
    pub fn default_values(self, n_agents: usize) -> Vec<usize> {
        match self {
            SweepParam::K => (1..=n_agents).collect(),
            SweepParam::L => vec![1, 2, 4, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: usize,
    pub output_dir: PathBuf,
    pub mean_steps: f64,
    pub ci95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub version: u32,
    pub param: SweepParam,
    pub entries: Vec<SweepEntry>,
}

/// Runs `base` once per value of `param`, each in its own subdirectory.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[usize]) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            let name = match param {
                SweepParam::K => {
                    c.k = v;
                    format!("k{v}")
                }
                SweepParam::L => {
                    c.l = v;
                    format!("l{v}")
                }
            };
            c.output_dir = base.output_dir.join(name);
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    for (c, &v) in configs.iter().zip(values) {
        let out = run_experiment(c)?;
        entries.push(SweepEntry {
            value: v,
            output_dir: c.output_dir.clone(),
            mean_steps: out.summary.mean_steps,
            ci95: out.summary.ci95,
        });
    }
    let summary = SweepSummary {
        version: SUMMARY_VERSION,
        param,
        entries,
    };
    write_json(&base.output_dir.join("sweep_summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn student_t_reference_values() {
        let (m, h) = student_t_ci95(&[4.0, 4.0, 4.0]);
        assert_eq!((m, h), (4.0, 0.0));
        assert_eq!(student_t_ci95(&[7.0]), (7.0, 0.0));
        // t_{0.975, 2} = 4.302653; sd of (1, 2, 3) is 1.
        let (m, h) = student_t_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 4.302653 / 3f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn sweep_defaults() {
        assert_eq!(SweepParam::K.default_values(4), vec![1, 2, 3, 4]);
        assert_eq!(SweepParam::L.default_values(4), vec![1, 2, 4, 8]);
    }
}
