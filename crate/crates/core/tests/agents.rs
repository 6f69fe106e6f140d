use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use signal_lab::agents::{
    dqn_target, n_step_returns, sample_phase, A2cAgent, A2cConfig, DqnAgent, EpsilonSchedule, FixedTimeAgent, QConfig,
    RolloutStep, SnnAgent,
};
use signal_lab::harness::gradcheck;
use signal_lab::nn::{checkpoint, AdamConfig, ArchSpec, ConvSpec, Network};
use signal_lab::observation::{phase_onehot, Frame, Observation, SnnFeatures};
use signal_lab::replay::{ReplayMemory, Transition};
use signal_lab::sim::{IntersectionState, Phase, SimConfig};

fn binomial_bounds(n: u64, p: f64) -> (u64, u64) {
    let b = Binomial::new(p, n).unwrap();
    (b.inverse_cdf(0.0005), b.inverse_cdf(0.9995))
}

fn tiny_obs(seed: u64) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let mut obs = Observation::new(Frame::from_pixels(8, 8, (0..64).map(|_| rng.random()).collect()).unwrap());
    for _ in 0..3 {
        obs = obs
            .push_frame(Frame::from_pixels(8, 8, (0..64).map(|_| rng.random()).collect()).unwrap())
            .unwrap();
    }
    obs
}

fn tiny_arch() -> ArchSpec {
    ArchSpec {
        input: [4, 8, 8],
        convs: vec![ConvSpec {
            filters: 3,
            kernel: 4,
            stride: 2,
        }],
        hidden: 12,
    }
}

fn fast_adam() -> AdamConfig {
    AdamConfig {
        learning_rate: 1e-3,
        ..AdamConfig::default()
    }
}

fn dqn(seed: u64, config: QConfig) -> DqnAgent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DqnAgent::new(Network::q_network(&tiny_arch(), 2, &mut rng).unwrap(), config).unwrap()
}

#[test]
fn uniform_exploration_is_fair() {
    let agent = dqn(0, QConfig::default());
    let obs = tiny_obs(1);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 10_000;
    let ewg = (0..n)
        .filter(|_| agent.act_with_epsilon(&obs, 1.0, &mut rng).unwrap() == Phase::Ewg)
        .count() as u64;
    let (lo, hi) = binomial_bounds(n, 0.5);
    assert!((lo..=hi).contains(&ewg), "{ewg} EWG picks outside [{lo}, {hi}]");
}

#[test]
fn policy_sampling_follows_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let probs = [0.3, 0.7];
    let mut ewg = 0;
    for _ in 0..n {
        let (a, lp, _) = sample_phase(&probs, 0.0, &mut rng);
        assert!((lp - probs[a.index()].ln()).abs() < 1e-15);
        ewg += (a == Phase::Ewg) as u64;
    }
    let (lo, hi) = binomial_bounds(n, 0.7);
    assert!((lo..=hi).contains(&ewg));
}

#[test]
fn epsilon_anneals_linearly_then_holds() {
    let s = EpsilonSchedule {
        start: 1.0,
        end: 0.1,
        anneal_steps: 100,
    };
    assert_eq!(s.value(0), 1.0);
    assert!((s.value(50) - 0.55).abs() < 1e-12);
    assert!((s.value(100) - 0.1).abs() < 1e-12);
    assert!((s.value(10_000) - 0.1).abs() < 1e-12);
}

#[test]
fn repeated_updates_fit_a_single_transition() {
    let mut agent = dqn(
        3,
        QConfig {
            adam: fast_adam(),
            batch_size: 4,
            ..QConfig::default()
        },
    );
    let mut memory = ReplayMemory::new(4).unwrap();
    memory.push(Transition {
        s: tiny_obs(10),
        a: Phase::Ewg,
        r: -2.0,
        s_next: tiny_obs(11),
        terminal: true,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = agent.train_step(&memory, &mut rng).unwrap();
    let mut last = first;
    for _ in 0..300 {
        last = agent.train_step(&memory, &mut rng).unwrap();
    }
    assert!(last < first * 1e-2, "loss {first} -> {last}");
    let q = agent.q_values(&tiny_obs(10)).unwrap();
    assert!((q.data()[1] + 2.0).abs() < 0.1);
}

#[test]
fn zero_td_error_gives_zero_loss_and_gradient() {
    let agent = dqn(4, QConfig::default());
    let s = tiny_obs(3);
    let q = agent.q_values(&s).unwrap();
    let t = Transition {
        s: s.clone(),
        a: Phase::Nsg,
        r: q.data()[0],
        s_next: tiny_obs(4),
        terminal: true,
    };
    let batch = vec![&t];
    let targets = agent.targets(&batch).unwrap();
    assert_eq!(targets, vec![q.data()[0]]);
    let (loss, grads) = agent.loss_and_grads(&batch, &targets).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(grads.max_abs(), 0.0);
}

#[test]
fn targets_use_the_frozen_network() {
    let mut agent = dqn(
        6,
        QConfig {
            adam: fast_adam(),
            batch_size: 2,
            gamma: 0.9,
            target_sync_period: 1000,
            ..QConfig::default()
        },
    );
    let t = Transition {
        s: tiny_obs(1),
        a: Phase::Nsg,
        r: -1.0,
        s_next: tiny_obs(2),
        terminal: false,
    };
    let q_next = agent.target_q_values(&t.s_next).unwrap();
    let expected = dqn_target(-1.0, q_next.data(), false, 0.9);
    let mut memory = ReplayMemory::new(2).unwrap();
    memory.push(t.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        agent.train_step(&memory, &mut rng).unwrap();
    }
    assert_eq!(agent.targets(&[&t]).unwrap(), vec![expected]);
    agent.target_sync();
    assert_ne!(agent.targets(&[&t]).unwrap(), vec![expected]);
}

#[test]
fn sync_happens_every_period() {
    let mut agent = dqn(
        8,
        QConfig {
            adam: fast_adam(),
            batch_size: 1,
            target_sync_period: 3,
            ..QConfig::default()
        },
    );
    let mut memory = ReplayMemory::new(1).unwrap();
    memory.push(Transition {
        s: tiny_obs(5),
        a: Phase::Ewg,
        r: -3.0,
        s_next: tiny_obs(6),
        terminal: false,
    });
    let probe = tiny_obs(9);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let initial = agent.target_q_values(&probe).unwrap();
    for step in 1..=9u64 {
        agent.train_step(&memory, &mut rng).unwrap();
        let tq = agent.target_q_values(&probe).unwrap();
        if step % 3 == 0 {
            assert_eq!(tq, agent.q_values(&probe).unwrap());
        } else if step < 3 {
            assert_eq!(tq, initial);
        }
    }
}

#[test]
fn snn_learns_to_prefer_the_cheaper_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Network::shallow(SnnFeatures::WIDTH, 16, 2, &mut rng).unwrap();
    let mut agent = SnnAgent::new(
        net,
        QConfig {
            adam: fast_adam(),
            batch_size: 8,
            gamma: 0.0,
            ..QConfig::default()
        },
    )
    .unwrap();
    let s = SnnFeatures {
        queue_counts: [4, 3, 0, 0],
        phase_onehot: phase_onehot(Phase::Ewg),
    };
    let mut memory = ReplayMemory::new(16).unwrap();
    for (a, r) in [(Phase::Nsg, -1.0), (Phase::Ewg, -8.0)] {
        memory.push(Transition {
            s,
            a,
            r,
            s_next: s,
            terminal: false,
        });
    }
    for _ in 0..500 {
        agent.train_step(&memory, &mut rng).unwrap();
    }
    assert_eq!(agent.greedy_action(&s).unwrap(), Phase::Nsg);
}

#[test]
fn positive_advantage_raises_action_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = Network::policy_value(&tiny_arch(), 2, &mut rng).unwrap();
    let mut agent = A2cAgent::new(
        net,
        A2cConfig {
            adam: fast_adam(),
            gamma: 0.0,
            value_coef: 0.0,
            ..A2cConfig::default()
        },
    )
    .unwrap();
    let s = tiny_obs(20);
    let (p_before, v) = agent.evaluate(&s).unwrap();
    agent
        .record(RolloutStep {
            s: s.clone(),
            a: Phase::Ewg,
            r: v + 5.0,
            log_prob: p_before[1].ln(),
            value: v,
        })
        .unwrap();
    agent.update(0.0).unwrap();
    let (p_after, _) = agent.evaluate(&s).unwrap();
    assert!(p_after[1] > p_before[1]);
    assert!(agent.rollout().is_empty());
}

#[test]
fn critic_moves_towards_the_return() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = Network::policy_value(&tiny_arch(), 2, &mut rng).unwrap();
    let mut agent = A2cAgent::new(
        net,
        A2cConfig {
            adam: fast_adam(),
            gamma: 0.5,
            ..A2cConfig::default()
        },
    )
    .unwrap();
    let s = tiny_obs(21);
    let v0 = agent.value(&s).unwrap();
    for _ in 0..200 {
        let (_, v) = agent.evaluate(&s).unwrap();
        agent
            .record(RolloutStep {
                s: s.clone(),
                a: Phase::Nsg,
                r: 3.0,
                log_prob: 0.5f64.ln(),
                value: v,
            })
            .unwrap();
        agent.update(v0 + 10.0).unwrap();
    }
    let target = 3.0 + 0.5 * (v0 + 10.0);
    let v1 = agent.value(&s).unwrap();
    assert!((v1 - target).abs() < (v0 - target).abs() * 0.5, "v0 {v0} v1 {v1} target {target}");
}

#[test]
fn rollout_capacity_is_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let net = Network::policy_value(&tiny_arch(), 2, &mut rng).unwrap();
    let mut agent = A2cAgent::new(
        net,
        A2cConfig {
            rollout_horizon: 2,
            ..A2cConfig::default()
        },
    )
    .unwrap();
    let step = RolloutStep {
        s: tiny_obs(0),
        a: Phase::Nsg,
        r: 0.0,
        log_prob: 0.0,
        value: 0.0,
    };
    agent.record(step.clone()).unwrap();
    assert!(!agent.rollout_full());
    agent.record(step.clone()).unwrap();
    assert!(agent.rollout_full());
    assert!(agent.record(step).is_err());
}

#[test]
fn fixed_plan_rewards_telescope() {
    let cfg = SimConfig::default();
    for half in [5, 10, 20] {
        let plan = FixedTimeAgent::new(half).unwrap();
        let mut s = IntersectionState::new(half as u64, &cfg).unwrap();
        let mut total = 0.0;
        for step in 0..cfg.episode_length_steps as u64 {
            total += s.apply_action(plan.action(step), cfg.green_duration_ticks).unwrap();
        }
        assert_eq!(total, -(s.cumulative_delay as f64));
    }
    assert!(FixedTimeAgent::new(0).is_err());
}

#[test]
fn gradient_suites_pass_for_several_seeds() {
    for seed in [1, 17, 99] {
        for r in gradcheck::run_all(seed).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }
}

#[test]
fn checkpoint_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let agent = dqn(21, QConfig::default());
    checkpoint::save(agent.online(), &path).unwrap();
    let loaded = checkpoint::load_matching(&path, agent.online()).unwrap();
    assert_eq!(&loaded, agent.online());
    let mut other = dqn(22, QConfig::default());
    other.load_parameters(&loaded).unwrap();
    let probe = tiny_obs(2);
    assert_eq!(other.q_values(&probe).unwrap(), agent.q_values(&probe).unwrap());
    assert_eq!(other.target_q_values(&probe).unwrap(), agent.q_values(&probe).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let snn = Network::shallow(6, 8, 2, &mut rng).unwrap();
    assert!(checkpoint::load_matching(&path, &snn).is_err());
}

proptest! {
    #[test]
    fn backward_recursion_matches_direct_sum(
        rewards in prop::collection::vec(-100.0f64..10.0, 1..40),
        bootstrap in -500.0f64..500.0,
        gamma in 0.0f64..=1.0,
    ) {
        let returns = n_step_returns(&rewards, bootstrap, gamma);
        let n = rewards.len();
        for i in 0..n {
            let direct: f64 = (i..n).map(|k| gamma.powi((k - i) as i32) * rewards[k]).sum::<f64>()
                + gamma.powi((n - i) as i32) * bootstrap;
            prop_assert!((returns[i] - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
        }
    }
}
