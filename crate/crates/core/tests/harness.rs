use std::path::Path;

use schednet::env::{CcnConfig, EnvConfig, PpConfig};
use schednet::harness::{
    self, aggregate, read_curve, Algo, ExperimentConfig, Policy, SeedResult, Snapshot,
};
use schednet::trainer::{Hyperparameters, ModelConfig, SchedNet};
use schednet::wsa::Wsa;
use schednet::Error;

fn short_pp() -> EnvConfig {
    EnvConfig::Pp(PpConfig {
        max_steps: 40,
        ..PpConfig::default()
    })
}

fn tiny(dir: &Path, algo: Algo, seeds: Vec<u64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(short_pp(), algo, Wsa::TopK, 1, 2, seeds, dir.to_path_buf());
    c.hyperparameters = Hyperparameters {
        training_steps: 200,
        batch_size: 16,
        buffer_capacity: 500,
        eval_interval: 100,
        eval_episodes: 2,
        final_eval_episodes: 3,
        ..Hyperparameters::default()
    };
    c
}

fn untrained(env: &EnvConfig, wsa: Wsa, k: usize, l: usize) -> Snapshot {
    let e = env.build().unwrap();
    let cfg = ModelConfig::for_env(e.as_ref(), wsa, k, l, 8, 16).unwrap();
    Snapshot {
        env: env.clone(),
        seed: 0,
        step: 0,
        policy: Policy::Schednet(SchedNet::new(cfg, 11).unwrap()),
    }
}

#[test]
fn two_seeds_write_two_curves_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Algo::Schednet, vec![1, 2]);
    let out = harness::run_experiment(&cfg).unwrap();
    assert_eq!(out.curves.len(), 2);
    assert_eq!(out.snapshots.len(), 2);
    for (seed, path) in [1, 2].iter().zip(&out.curves) {
        assert_eq!(path, &harness::curve_path(dir.path(), *seed));
        let curve = read_curve(path).unwrap();
        assert_eq!(curve.iter().map(|p| p.step).collect::<Vec<_>>(), vec![0, 100, 200]);
        assert!(curve.iter().all(|p| p.algo == "schednet" && p.eval_mean_steps > 0.0));
    }
    assert!(out.summary_path.exists());
    assert!(dir.path().join("config.toml").exists());
    assert_eq!(out.summary.per_seed.len(), 2);
    assert_eq!(harness::recompute_summary(&cfg).unwrap(), out.summary);
    assert_eq!(ExperimentConfig::load(&dir.path().join("config.toml")).unwrap(), cfg);

    let snap = Snapshot::load(&out.snapshots[0]).unwrap();
    assert_eq!(snap.step, 200);
    let again = harness::evaluate(&snap, &cfg.env, Some(Wsa::TopK), 3, 5).unwrap();
    assert_eq!(again.episodes, 3);
}

#[test]
fn idqn_runs_through_the_same_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), Algo::Idqn, vec![3]);
    cfg.env = EnvConfig::Ccn(CcnConfig {
        max_steps: 30,
        ..CcnConfig::default()
    });
    let out = harness::run_experiment(&cfg).unwrap();
    let snap = Snapshot::load(&out.snapshots[0]).unwrap();
    assert_eq!(snap.algo(), "idqn");
    assert!(harness::export_schedule_trace(&snap, &cfg.env, 5, 0).is_err());
    assert!(matches!(
        harness::evaluate(&snap, &cfg.env, Some(Wsa::TopK), 2, 0),
        Err(Error::Config { .. })
    ));
}

#[test]
fn identical_seed_means_give_zero_interval() {
    let cfg = tiny(Path::new("unused"), Algo::Schednet, vec![1, 2, 3]);
    let per_seed = (1..=3)
        .map(|seed| SeedResult {
            seed,
            mean_steps: 42.5,
            ci95: 3.0,
            episodes: 10,
        })
        .collect();
    let s = aggregate(&cfg, per_seed);
    assert_eq!(s.mean_steps, 42.5);
    assert_eq!(s.ci95, 0.0);
}

#[test]
fn k_above_agent_count_is_rejected() {
    let mut cfg = tiny(Path::new("unused"), Algo::Schednet, vec![1]);
    cfg.k = 5;
    match cfg.validate() {
        Err(Error::Config { path, .. }) => assert_eq!(path, "k"),
        other => panic!("expected a config error, got {other:?}"),
    }
    let e = EnvConfig::pp().build().unwrap();
    assert!(ModelConfig::for_env(e.as_ref(), Wsa::TopK, 5, 2, 8, 16).is_err());
}

#[test]
fn evaluation_with_a_different_scheduler_is_rejected() {
    let snap = untrained(&short_pp(), Wsa::TopK, 1, 2);
    assert!(harness::evaluate(&snap, &snap.env, Some(Wsa::TopK), 1, 0).is_ok());
    match harness::evaluate(&snap, &snap.env, Some(Wsa::RoundRobin), 1, 0) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "wsa"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn snapshot_on_the_wrong_environment_is_rejected() {
    let snap = untrained(&short_pp(), Wsa::TopK, 1, 2);
    let ccn = EnvConfig::ccn();
    assert!(matches!(harness::evaluate(&snap, &ccn, None, 1, 0), Err(Error::Snapshot(_))));
    assert!(harness::export_schedule_trace(&snap, &ccn, 5, 0).is_err());
    let bigger = EnvConfig::Pp(PpConfig {
        view_sizes: vec![5, 3, 3],
        ..PpConfig::default()
    });
    assert!(harness::evaluate(&snap, &bigger, None, 1, 0).is_err());
}

#[test]
fn schedule_trace_counts_add_up() {
    for k in 1..=4 {
        let snap = untrained(&short_pp(), Wsa::TopK, k, 2);
        let trace = harness::export_schedule_trace(&snap, &snap.env, 50, 1).unwrap();
        assert_eq!(trace.records.len(), 50);
        assert_eq!(trace.summary.counts.iter().sum::<usize>(), 50 * k);
        for r in &trace.records {
            assert_eq!(r.c.iter().map(|&b| b as usize).sum::<usize>(), k);
        }
    }
}

#[test]
fn round_robin_trace_is_balanced() {
    let snap = untrained(&short_pp(), Wsa::RoundRobin, 1, 2);
    let trace = harness::export_schedule_trace(&snap, &snap.env, 24, 2).unwrap();
    assert_eq!(trace.summary.counts, vec![6, 6, 6, 6]);
    for (t, r) in trace.records.iter().enumerate() {
        assert_eq!(r.c[t % 4], 1);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    harness::write_schedule_trace(&trace, std::fs::File::create(&path).unwrap()).unwrap();
    assert_eq!(harness::read_schedule_trace(&path).unwrap(), trace);
}

#[test]
fn message_log_carries_labels() {
    let snap = untrained(&short_pp(), Wsa::TopK, 2, 2);
    let log = harness::export_message_log(&snap, &snap.env, 30, 3).unwrap();
    assert_eq!(log.len(), 60);
    for rec in &log {
        assert_eq!(rec.message.len(), 2);
        let label = rec.label.as_ref().expect("predator-prey messages are labelled");
        assert_eq!(label.prey_visible, label.prey_quadrant.is_some());
        assert!(label.agent_quadrant < 4);
    }
    // Two senders per step, in ascending agent order.
    for pair in log.chunks_exact(2) {
        assert_eq!(pair[0].t, pair[1].t);
        assert!(pair[0].agent < pair[1].agent);
    }
}
