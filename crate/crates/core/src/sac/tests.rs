use super::*;
use crate::envs::{EnvSpec, ObsScale};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_config() -> SacConfig {
    SacConfig {
        hidden: 16,
        batch_size: 8,
        ..SacConfig::default()
    }
}

fn nav_agent<T: Float>(seed: u64) -> SacAgent<T> {
    SacAgent::new(small_config(), EnvSpec::nav2d().obs_scale(), 2, &mut rng(seed)).unwrap()
}

fn random_batch(len: usize, seed: u64) -> Batch {
    let mut r = rng(seed);
    let mut buf = ReplayBuffer::new(2, 2, 64);
    for k in 0..len {
        let s: Vec<f32> = (0..2).map(|_| r.random_range(0.0..10.0)).collect();
        let a: Vec<f32> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
        let s2 = vec![s[0] + a[0], s[1] + a[1]];
        buf.push(&Transition {
            state: s,
            action: a,
            next_state: s2,
            done: k % 3 == 0,
            reward_learned: r.random_range(-1.0..1.0),
            reward_diversity: 0.0,
            reward_gt: 0.0,
            episode: 0,
            t: k as u32,
        })
        .unwrap();
    }
    buf.batch_of(&(0..len as u64).collect::<Vec<_>>())
}

#[test]
fn zero_actor_mean_action_is_zero() {
    let mut agent = nav_agent::<f32>(0);
    let n = agent.actor().param_count();
    agent.actor_mut().set_params(&vec![0.0; n]).unwrap();
    let a = agent.act(&[3.0, 4.0], ActMode::Mean, &mut rng(1)).unwrap();
    assert_eq!(a, vec![0.0, 0.0]);
}

#[test]
fn sampled_actions_stay_inside_bounds() {
    let agent = nav_agent::<f32>(2);
    let mut r = rng(3);
    for _ in 0..2000 {
        let s = [r.random_range(-50.0..50.0), r.random_range(-50.0..50.0)];
        let a = agent.act(&s, ActMode::Sample, &mut r).unwrap();
        assert!(a.iter().all(|v| v.abs() < 1.0 || *v == v.signum()), "{a:?}");
        assert!(a.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn sampled_actions_strictly_inside_for_moderate_states() {
    let agent = nav_agent::<f64>(2);
    let mut r = rng(4);
    for _ in 0..2000 {
        let s = [r.random_range(0.0..10.0), r.random_range(0.0..10.0)];
        let a = agent.act(&s, ActMode::Sample, &mut r).unwrap();
        assert!(a.iter().all(|v| v.abs() < 1.0), "{a:?}");
    }
}

#[test]
fn sampling_is_reproducible_under_a_fixed_seed() {
    let run = || {
        let agent = nav_agent::<f32>(5);
        let mut r = rng(6);
        (0..50).map(|_| agent.act(&[1.0, 2.0], ActMode::Sample, &mut r).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn mean_mode_ignores_randomness() {
    let agent = nav_agent::<f32>(7);
    let a = agent.act(&[1.0, 2.0], ActMode::Mean, &mut rng(1)).unwrap();
    let b = agent.act(&[1.0, 2.0], ActMode::Mean, &mut rng(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_finite_observation_rejected() {
    let agent = nav_agent::<f32>(7);
    assert!(agent.act(&[f32::NAN, 0.0], ActMode::Mean, &mut rng(0)).is_err());
}

#[test]
fn zero_discount_target_is_reward() {
    let mut agent = nav_agent::<f64>(8);
    agent.config.gamma = 0.0;
    let batch = random_batch(8, 9);
    let r: Vec<f64> = batch.reward_learned.iter().map(|&v| v as f64).collect();
    let noise = agent.sample_noise(8, &mut rng(10));
    assert_eq!(agent.critic_targets(&batch, &r, &noise).unwrap(), r);
}

#[test]
fn done_transition_target_is_reward() {
    let agent = nav_agent::<f64>(8);
    let mut batch = random_batch(8, 11);
    batch.done = vec![true; 8];
    let r: Vec<f64> = batch.reward_learned.iter().map(|&v| v as f64).collect();
    let noise = agent.sample_noise(8, &mut rng(12));
    assert_eq!(agent.critic_targets(&batch, &r, &noise).unwrap(), r);
}

/// Scalar recomputation of the soft Bellman target using the Gaussian
/// density of the pre-squash value directly.
fn scalar_target(agent: &SacAgent<f64>, batch: &Batch, i: usize, r: f64, eps: &[f64]) -> f64 {
    if batch.done[i] {
        return r;
    }
    let scale = agent.obs_scale();
    let s2: Vec<f64> = (0..2)
        .map(|k| (batch.next_states[2 * i + k] as f64 - scale.center[k]) / scale.half_range[k])
        .collect();
    let head = agent.actor().forward_one(&s2).unwrap();
    let mut logp = 0.0;
    let mut act = Vec::new();
    for j in 0..2 {
        let mu = head[j];
        let log_std = -5.0 + 3.5 * (head[2 + j].tanh() + 1.0);
        let sd = log_std.exp();
        let u = mu + sd * eps[j];
        let z = (u - mu) / sd;
        logp += -0.5 * z * z - sd.ln() - 0.5 * (2.0 * core::f64::consts::PI).ln();
        let a = u.tanh();
        logp -= (1.0 - a * a + 1e-6).ln();
        act.push(a);
    }
    let mut x = s2.clone();
    x.extend(&act);
    let q1 = agent.targets()[0].forward_one(&x).unwrap()[0];
    let q2 = agent.targets()[1].forward_one(&x).unwrap()[0];
    r + agent.config.gamma * (q1.min(q2) - agent.alpha() * logp)
}

#[test]
fn critic_target_matches_scalar_oracle() {
    for seed in 0..5 {
        let mut agent = nav_agent::<f64>(20 + seed);
        agent.set_log_alpha(0.3f64.ln());
        let batch = random_batch(8, 30 + seed);
        let r: Vec<f64> = batch.reward_learned.iter().map(|&v| v as f64).collect();
        let noise = agent.sample_noise(8, &mut rng(40 + seed));
        let y = agent.critic_targets(&batch, &r, &noise).unwrap();
        for i in 0..8 {
            let oracle = scalar_target(&agent, &batch, i, r[i], noise.row(i));
            assert!((y[i] - oracle).abs() < 1e-6, "{} vs {}", y[i], oracle);
        }
    }
}

#[test]
fn non_finite_target_reports_numerical_error() {
    let agent = nav_agent::<f64>(1);
    let batch = random_batch(4, 2);
    let mut r = vec![0.0; 4];
    r[1] = f64::NAN;
    let noise = agent.sample_noise(4, &mut rng(3));
    assert!(matches!(agent.critic_targets(&batch, &r, &noise), Err(Error::Numerical(_))));
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let mut agent = nav_agent::<f64>(50);
    let batch = random_batch(8, 51);
    let y: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
    for c in agent.critics_mut() {
        c.zero_grad();
    }
    agent.critic_loss_grad(&batch, &y).unwrap();
    let mut r = rng(52);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let analytic_all = [agent.critics()[0].grads(), agent.critics()[1].grads()];
    for k in 0..2 {
        let analytic = &analytic_all[k];
        let base = agent.critics()[k].params();
        for _ in 0..100 {
            let idx = r.random_range(0..base.len());
            let mut eval = |delta: f64| {
                let mut p = base.clone();
                p[idx] += delta;
                agent.critics_mut()[k].set_params(&p).unwrap();
                agent.critic_loss_grad(&batch, &y).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[idx], numeric));
        }
        agent.critics_mut()[k].set_params(&base).unwrap();
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

pub(crate) fn actor_fd_worst(agent: &mut SacAgent<f64>, states: &Matrix<f64>, noise: &Matrix<f64>, seed: u64) -> f64 {
    agent.actor_mut().zero_grad();
    agent.actor_loss_grad(states, noise).unwrap();
    let analytic = agent.actor().grads();
    let base = agent.actor().params();
    let mut r = rng(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let idx = r.random_range(0..base.len());
        let mut eval = |delta: f64| {
            let mut p = base.clone();
            p[idx] += delta;
            agent.actor_mut().set_params(&p).unwrap();
            agent.actor_loss_grad(states, noise).unwrap().0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(analytic[idx], numeric));
    }
    agent.actor_mut().set_params(&base).unwrap();
    worst
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut agent = nav_agent::<f64>(60);
    agent.set_log_alpha(0.2f64.ln());
    let batch = random_batch(8, 61);
    let states = agent.observations(&batch.states, 8);
    let noise = agent.sample_noise(8, &mut rng(62));
    let worst = actor_fd_worst(&mut agent, &states, &noise, 63);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn constant_critics_and_zero_temperature_give_zero_actor_gradient() {
    let mut agent = nav_agent::<f64>(70);
    agent.set_log_alpha(f64::NEG_INFINITY);
    for c in agent.critics_mut() {
        let n = c.param_count();
        let mut p = vec![0.0; n];
        p[n - 1] = 3.0;
        c.set_params(&p).unwrap();
    }
    let batch = random_batch(8, 71);
    let states = agent.observations(&batch.states, 8);
    let noise = agent.sample_noise(8, &mut rng(72));
    agent.actor_mut().zero_grad();
    agent.actor_loss_grad(&states, &noise).unwrap();
    assert!(agent.actor().grads().iter().all(|g| *g == 0.0));
}

#[test]
fn temperature_falls_when_entropy_exceeds_target() {
    let mut agent = nav_agent::<f64>(80);
    // Unit-scale Gaussian before squashing, centered at zero.
    let last = agent.actor().layers().len() - 1;
    agent.actor_mut().layer_mut(last).weight_mut().iter_mut().for_each(|w| *w = 0.0);
    agent.actor_mut().layer_mut(last).bias_mut().copy_from_slice(&[0.0, 0.0, 0.458, 0.458]);
    let batch = random_batch(16, 81);
    let states = agent.observations(&batch.states, 16);
    let noise = agent.sample_noise(16, &mut rng(82));
    let (_, mean_lp) = agent.actor_loss_grad(&states, &noise).unwrap();
    assert!(-mean_lp > agent.target_entropy());
    assert!(agent.temperature_grad(mean_lp) > 0.0);
    let before = agent.alpha();
    agent.update_actor_and_temperature(&batch, &mut rng(83)).unwrap();
    assert!(agent.alpha() < before);
}

#[test]
fn temperature_rises_when_entropy_below_target() {
    let mut agent = nav_agent::<f64>(84);
    let last = agent.actor().layers().len() - 1;
    for b in agent.actor_mut().layer_mut(last).bias_mut()[2..].iter_mut() {
        *b = -3.0;
    }
    let batch = random_batch(16, 85);
    let before = agent.alpha();
    agent.update_actor_and_temperature(&batch, &mut rng(86)).unwrap();
    assert!(agent.alpha() > before);
}

#[test]
fn polyak_shrinks_target_distance_with_frozen_critics() {
    let mut agent = nav_agent::<f32>(90);
    let n = agent.critics()[0].param_count();
    agent.critics_mut()[0].set_params(&vec![0.5; n]).unwrap();
    let mut last = agent.targets()[0].param_distance(&agent.critics()[0]);
    for _ in 0..50 {
        agent.update_targets().unwrap();
        let d = agent.targets()[0].param_distance(&agent.critics()[0]);
        assert!(d < last);
        last = d;
    }
}

#[test]
fn copy_networks_is_exact_and_keeps_temperature() {
    let a = nav_agent::<f32>(1);
    let mut b = nav_agent::<f32>(2);
    b.set_log_alpha(-3.0);
    b.copy_networks_from(&a).unwrap();
    assert_eq!(a.actor().to_bytes(), b.actor().to_bytes());
    for k in 0..2 {
        assert_eq!(a.critics()[k].to_bytes(), b.critics()[k].to_bytes());
        assert_eq!(a.targets()[k].to_bytes(), b.targets()[k].to_bytes());
    }
    assert_eq!(b.log_alpha(), -3.0);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut agent = nav_agent::<f32>(3);
        let batch = random_batch(8, 4);
        let r = batch.reward_learned.clone();
        let mut g = rng(5);
        for _ in 0..20 {
            agent.update(&batch, &r, &mut g).unwrap();
        }
        (agent.actor().params(), agent.critics()[1].params(), agent.log_alpha())
    };
    assert_eq!(run(), run());
}

#[test]
fn bandit_policy_mean_converges_to_best_action() {
    let best = 0.5f32;
    let config = SacConfig {
        hidden: 32,
        gamma: 0.0,
        actor_lr: 3e-3,
        critic_lr: 3e-3,
        alpha_lr: 3e-3,
        batch_size: 64,
        ..SacConfig::default()
    };
    let mut g = rng(100);
    let mut agent = SacAgent::<f32>::new(config, ObsScale::identity(1), 1, &mut g).unwrap();
    let mut buf = ReplayBuffer::new(1, 1, 4096);
    for k in 0..4096 {
        let a = g.random_range(-1.0f32..1.0);
        buf.push(&Transition {
            state: vec![0.0],
            action: vec![a],
            next_state: vec![0.0],
            done: true,
            reward_learned: -4.0 * (a - best) * (a - best),
            reward_diversity: 0.0,
            reward_gt: 0.0,
            episode: k,
            t: 0,
        })
        .unwrap();
    }
    for _ in 0..3000 {
        let batch = buf.sample(64, &mut g).unwrap();
        let r = batch.reward_learned.clone();
        agent.update(&batch, &r, &mut g).unwrap();
    }
    let a = agent.act(&[0.0], ActMode::Mean, &mut g).unwrap()[0];
    assert!((a - best).abs() < 0.05, "mean action {a}");
}
