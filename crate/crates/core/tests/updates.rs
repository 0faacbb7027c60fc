use rand::{Rng, SeedableRng};

use schednet::env::EnvConfig;
use schednet::nn::Activation;
use schednet::trainer::{ModelConfig, SchedNet, Transition};
use schednet::wsa::{top_k, Wsa};
use schednet::SimRng;

fn model(seed: u64) -> SchedNet {
    let env = EnvConfig::pp().build().unwrap();
    let cfg = ModelConfig::for_env(env.as_ref(), Wsa::TopK, 1, 2, 32, 64).unwrap();
    SchedNet::new(cfg, seed).unwrap()
}

fn batch(size: usize, seed: u64) -> Vec<Transition> {
    let mut env = EnvConfig::pp().build().unwrap();
    let mut rng = SimRng::seed_from_u64(seed);
    let (mut s, mut o) = env.reset(&mut rng).unwrap();
    let mut out = Vec::new();
    while out.len() < size {
        let u: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let r = env.step(&u, &mut rng).unwrap();
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        out.push(Transition {
            state: s,
            obs: o.concat(),
            actions: u,
            reward: r.reward,
            next_state: r.state.clone(),
            next_obs: r.observations.concat(),
            schedule: top_k(&w, 1).unwrap(),
            weights: w,
            done: r.done,
        });
        (s, o) = if r.episode_over() {
            env.reset(&mut rng).unwrap()
        } else {
            (r.state, r.observations)
        };
    }
    out
}

/// KL(pi || uniform) = log |A| - H(pi).
fn kl_to_uniform(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum();
    (p.len() as f64).ln() - h
}

#[test]
fn entropy_only_update_moves_policy_toward_uniform() {
    let mut m = model(1);
    // Sharpen agent 0's policy first so there is room to flatten it.
    let last = *m.actors[0].selector.spec.layers().last().unwrap();
    for (i, p) in m.actors[0].selector.params.as_mut_slice()[last.bias()].iter_mut().enumerate() {
        *p = 2.0 * i as f64;
    }
    // A single transition: the update sees exactly the probed input.
    let data = batch(1, 2);
    let refs: Vec<&Transition> = data.iter().collect();
    let probe = &data[0];
    let policy = |m: &SchedNet| {
        let o = probe.agent_obs(0, 5);
        let sender = probe.schedule.scheduled().next().unwrap();
        let msg = m.actors[sender].encode(probe.agent_obs(sender, 5)).unwrap();
        m.actors[0].policy(o, &msg).unwrap()
    };
    let zero = vec![0.0; refs.len()];
    let mut prev = kl_to_uniform(&policy(&m));
    assert!(prev > 0.5);
    for _ in 0..20 {
        m.actor_update_with_advantages(&refs, &zero, 1e-3, 0.1).unwrap();
        let kl = kl_to_uniform(&policy(&m));
        assert!(kl < prev, "KL rose from {prev} to {kl}");
        prev = kl;
    }
}

#[test]
fn weight_generators_climb_an_identity_critic() {
    let mut m = model(3);
    // Q(s, w) = sum_i w_i through one hidden unit; the trunk features are ignored.
    let h = m.critic.hidden();
    let n = 4;
    let q = &mut m.critic.q_head;
    let layers = q.spec.layers();
    let p = q.params.as_mut_slice();
    p.iter_mut().for_each(|x| *x = 0.0);
    let fan_out = layers[0].fan_out;
    for i in 0..n {
        p[layers[0].weights().start + (h + i) * fan_out] = 1.0;
    }
    p[layers[1].weights().start] = 1.0;
    assert_eq!(m.critic.q_head.spec.output_activation, Activation::Linear);

    let data = batch(64, 4);
    let refs: Vec<&Transition> = data.iter().collect();
    let weights = |m: &SchedNet| -> Vec<f64> {
        data.iter()
            .flat_map(|t| (0..n).map(move |i| (t, i)))
            .map(|(t, i)| m.actors[i].generate_weight(t.agent_obs(i, 5)).unwrap())
            .collect()
    };
    let before = weights(&m);
    let q0 = m.wg_update(&refs, 1e-3).unwrap();
    for _ in 0..49 {
        m.wg_update(&refs, 1e-3).unwrap();
    }
    let after = weights(&m);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((q0 - mean(&before) * n as f64).abs() < 1e-9);
    assert!(mean(&after) > mean(&before) + 0.01, "{} -> {}", mean(&before), mean(&after));
    for i in 0..n {
        let col = |v: &[f64]| v.iter().skip(i).step_by(n).sum::<f64>();
        assert!(col(&after) > col(&before), "agent {i} weight did not rise");
    }
}
