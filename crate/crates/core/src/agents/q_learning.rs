//! Value-function agent: epsilon-greedy Q-learning with experience replay and
//! a periodically synchronised target network. The same machinery trains the
//! conv-trunk agent on stacked frames and the shallow baseline on queue
//! features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::schedule::EpsilonSchedule;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Grads, Network, Tensor};
use crate::observation::{Observation, SnnFeatures};
use crate::replay::{ReplayMemory, Transition};
use crate::sim::Phase;

/// Anything that can be flattened into a Q-network input.
pub trait QInput: Clone {
    fn write_input(&self, out: &mut Vec<f64>);
}

impl QInput for Observation {
    fn write_input(&self, out: &mut Vec<f64>) {
        Observation::write_input(self, out)
    }
}

impl QInput for SnnFeatures {
    fn write_input(&self, out: &mut Vec<f64>) {
        SnnFeatures::write_input(self, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QConfig {
    pub gamma: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub target_sync_period: u64,
    /// Multiplies rewards before they enter the targets.
    pub reward_scale: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            gamma: 0.99,
            adam: AdamConfig::default(),
            batch_size: 32,
            target_sync_period: 500,
            reward_scale: 1.0,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.1,
                anneal_steps: 80_000,
            },
        }
    }
}

/// Q-learning target: `r` at terminal transitions, else `r + gamma * max q_next`.
pub fn dqn_target(r: f64, q_next: &[f64], terminal: bool, gamma: f64) -> f64 {
    if terminal {
        return r;
    }
    let best = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    r + gamma * best
}

/// Highest-valued action; ties go to NSG.
pub fn greedy_phase(q: &[f64]) -> Phase {
    if q[1] > q[0] {
        Phase::Ewg
    } else {
        Phase::Nsg
    }
}

#[derive(Debug, Clone)]
pub struct QAgent<I> {
    online: Network,
    target: Network,
    adam: Adam,
    pub config: QConfig,
    train_steps: u64,
    action_steps: u64,
    _input: std::marker::PhantomData<fn(&I)>,
}

/// Conv-trunk agent acting on stacked frames.
pub type DqnAgent = QAgent<Observation>;
/// One-hidden-layer agent acting on queue features.
pub type SnnAgent = QAgent<SnnFeatures>;

impl<I: QInput> QAgent<I> {
    pub fn new(network: Network, config: QConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1]", config.gamma)));
        }
        if config.target_sync_period == 0 || config.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "target_sync_period and batch_size must be positive".into(),
            ));
        }
        if network.heads().len() != 1 || network.heads()[0].dense.outputs() != 2 {
            return Err(Error::InvalidConfig(
                "Q-network needs a single two-output head".into(),
            ));
        }
        let adam = Adam::new(config.adam, &network.params());
        Ok(QAgent {
            target: network.clone(),
            online: network,
            adam,
            config,
            train_steps: 0,
            action_steps: 0,
            _input: std::marker::PhantomData,
        })
    }

    pub fn online(&self) -> &Network {
        &self.online
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    /// Mutable access to the online parameters (tests, checkpoint restore).
    pub fn online_mut(&mut self) -> &mut Network {
        &mut self.online
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn action_steps(&self) -> u64 {
        self.action_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon.value(self.action_steps)
    }

    fn input(obs: &I) -> Vec<f64> {
        let mut v = Vec::new();
        obs.write_input(&mut v);
        v
    }

    pub fn q_values(&self, obs: &I) -> Result<Tensor> {
        self.online.forward_q(&Self::input(obs))
    }

    pub fn target_q_values(&self, obs: &I) -> Result<Tensor> {
        self.target.forward_q(&Self::input(obs))
    }

    pub fn greedy_action(&self, obs: &I) -> Result<Phase> {
        Ok(greedy_phase(self.q_values(obs)?.data()))
    }

    /// Epsilon-greedy with an explicit epsilon; does not advance the schedule.
    pub fn act_with_epsilon<R: Rng + ?Sized>(&self, obs: &I, epsilon: f64, rng: &mut R) -> Result<Phase> {
        if rng.random::<f64>() < epsilon {
            return Ok(if rng.random::<bool>() { Phase::Ewg } else { Phase::Nsg });
        }
        self.greedy_action(obs)
    }

    /// Epsilon-greedy action at the current schedule position, then advances it.
    pub fn select_action<R: Rng + ?Sized>(&mut self, obs: &I, rng: &mut R) -> Result<Phase> {
        let eps = self.epsilon();
        let a = self.act_with_epsilon(obs, eps, rng)?;
        self.action_steps += 1;
        Ok(a)
    }

    /// Targets from the frozen network for a batch.
    pub fn targets(&self, batch: &[&Transition<I>]) -> Result<Vec<f64>> {
        let mut next = Vec::new();
        for t in batch {
            t.s_next.write_input(&mut next);
        }
        let q_next = self.target.forward(&next, batch.len())?.heads.swap_remove(0);
        Ok(batch
            .iter()
            .zip(q_next.chunks_exact(2))
            .map(|(t, q)| dqn_target(t.r * self.config.reward_scale, q, t.terminal, self.config.gamma))
            .collect())
    }

    /// Mean squared TD error of the online network against fixed `targets`.
    pub fn batch_loss(&self, batch: &[&Transition<I>], targets: &[f64]) -> Result<f64> {
        Ok(self.loss_and_grads(batch, targets)?.0)
    }

    /// Loss and its gradient w.r.t. the online parameters. Only the taken
    /// action's output receives gradient.
    pub fn loss_and_grads(&self, batch: &[&Transition<I>], targets: &[f64]) -> Result<(f64, Grads)> {
        let n = batch.len();
        let mut x = Vec::new();
        for t in batch {
            t.s.write_input(&mut x);
        }
        let trace = self.online.forward(&x, n)?;
        let q = &trace.heads[0];
        let mut head_grad = vec![0.0; 2 * n];
        let mut loss = 0.0;
        for (j, (t, &y)) in batch.iter().zip(targets).enumerate() {
            let idx = 2 * j + t.a.index();
            let diff = q[idx] - y;
            loss += diff * diff;
            head_grad[idx] = 2.0 * diff / n as f64;
        }
        let grads = self.online.backward(&trace, &[head_grad])?;
        Ok((loss / n as f64, grads))
    }

    /// One replay update. Returns the pre-update minibatch loss.
    pub fn train_step<R: Rng + ?Sized>(&mut self, memory: &ReplayMemory<I>, rng: &mut R) -> Result<f64> {
        let batch = memory.sample(self.config.batch_size, rng)?;
        let targets = self.targets(&batch)?;
        let (loss, grads) = self.loss_and_grads(&batch, &targets)?;
        self.adam.step(self.online.params_mut(), &grads)?;
        self.train_steps += 1;
        if self.train_steps % self.config.target_sync_period == 0 {
            self.target_sync();
        }
        Ok(loss)
    }

    /// Copies the online parameters into the target network.
    pub fn target_sync(&mut self) {
        self.target
            .copy_from(&self.online)
            .expect("online and target share an architecture");
    }

    /// Replaces the online parameters (and the target copy) from a loaded
    /// network of the same architecture.
    pub fn load_parameters(&mut self, net: &Network) -> Result<()> {
        self.online.copy_from(net)?;
        self.target_sync();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::phase_onehot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feat(q: [u32; 4], phase: Phase) -> SnnFeatures {
        SnnFeatures {
            queue_counts: q,
            phase_onehot: phase_onehot(phase),
        }
    }

    fn snn_agent(seed: u64) -> SnnAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::shallow(6, 16, 2, &mut rng).unwrap();
        QAgent::new(net, QConfig::default()).unwrap()
    }

    #[test]
    fn targets_follow_the_bellman_rule() {
        assert_eq!(dqn_target(-3.0, &[10.0, 20.0], true, 0.99), -3.0);
        assert!((dqn_target(1.0, &[2.0, 5.0], false, 0.99) - 5.95).abs() < 1e-12);
        assert_eq!(dqn_target(1.5, &[2.0, 5.0], false, 0.0), 1.5);
    }

    #[test]
    fn greedy_ties_go_north_south() {
        assert_eq!(greedy_phase(&[2.0, 5.0]), Phase::Ewg);
        assert_eq!(greedy_phase(&[3.0, 3.0]), Phase::Nsg);
    }

    #[test]
    fn rejects_bad_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::shallow(6, 4, 2, &mut rng).unwrap();
        let cfg = QConfig {
            gamma: 1.5,
            ..QConfig::default()
        };
        assert!(SnnAgent::new(net, cfg).is_err());
    }

    #[test]
    fn empty_memory_is_an_error() {
        let mut agent = snn_agent(1);
        let memory = ReplayMemory::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            agent.train_step(&memory, &mut rng),
            Err(Error::EmptyMemory)
        ));
    }

    #[test]
    fn zero_epsilon_is_deterministic() {
        let agent = snn_agent(2);
        let obs = feat([3, 1, 0, 2], Phase::Ewg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = agent.act_with_epsilon(&obs, 0.0, &mut rng).unwrap();
        for _ in 0..20 {
            assert_eq!(agent.act_with_epsilon(&obs, 0.0, &mut rng).unwrap(), first);
        }
    }

    #[test]
    fn sync_isolates_target_from_later_updates() {
        let mut agent = snn_agent(3);
        let mut memory = ReplayMemory::new(8).unwrap();
        memory.push(Transition {
            s: feat([1, 0, 2, 0], Phase::Nsg),
            a: Phase::Ewg,
            r: -4.0,
            s_next: feat([1, 0, 1, 0], Phase::Ewg),
            terminal: false,
        });
        let probe = feat([2, 2, 0, 1], Phase::Nsg);
        agent.target_sync();
        assert_eq!(agent.q_values(&probe).unwrap(), agent.target_q_values(&probe).unwrap());
        let frozen = agent.target().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        agent.train_step(&memory, &mut rng).unwrap();
        assert_eq!(agent.target(), &frozen);
        assert_ne!(agent.online(), &frozen);
        agent.target_sync();
        let once = agent.target().clone();
        agent.target_sync();
        assert_eq!(agent.target(), &once);
    }
}
