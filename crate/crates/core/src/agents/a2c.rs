//! Advantage actor-critic agent with n-step returns.
//!
//! Actor and critic share the conv trunk; the policy head produces softmax
//! logits over the two phases and the value head a scalar. Advantages are
//! constants in the policy term.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax, Adam, AdamConfig, Grads, HeadKind, Network};
use crate::observation::Observation;
use crate::sim::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2cConfig {
    pub gamma: f64,
    pub adam: AdamConfig,
    /// Maximum rollout length M between updates.
    pub rollout_horizon: usize,
    /// Weight of the squared value error relative to the policy term.
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub reward_scale: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        A2cConfig {
            gamma: 0.99,
            adam: AdamConfig::default(),
            rollout_horizon: 32,
            value_coef: 1.0,
            entropy_coef: 0.0,
            reward_scale: 1.0,
        }
    }
}

/// One acted step, with the log-probability and value cached at action time.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub s: Observation,
    pub a: Phase,
    pub r: f64,
    pub log_prob: f64,
    pub value: f64,
}

/// Discounted returns by the backward recursion `R <- r_i + gamma R`, seeded
/// with `bootstrap` (zero after a terminal state, else the critic's value of
/// the state following the last step).
pub fn n_step_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut ret = bootstrap;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        ret = r + gamma * ret;
        *o = ret;
    }
    out
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cLosses {
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// `-sum log pi(a|s) A - entropy_coef * sum H(pi) + value_coef * sum (R - V)^2`
/// and its gradient, with `advantages` held constant.
pub fn a2c_objective(
    net: &Network,
    inputs: &[f64],
    actions: &[Phase],
    returns: &[f64],
    advantages: &[f64],
    config: &A2cConfig,
) -> Result<(A2cLosses, Grads)> {
    let n = actions.len();
    if n == 0 {
        return Err(Error::EmptyRollout);
    }
    if returns.len() != n || advantages.len() != n {
        return Err(Error::shape("a2c batch", &[n], &[returns.len(), advantages.len()]));
    }
    let trace = net.forward(inputs, n)?;
    let logits = &trace.heads[0];
    let values = &trace.heads[1];
    let mut g_logits = vec![0.0; 2 * n];
    let mut g_values = vec![0.0; n];
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    for j in 0..n {
        let z = &logits[2 * j..2 * j + 2];
        let p = softmax(z)?;
        let lp = log_softmax(z)?;
        let a = actions[j].index();
        let adv = advantages[j];
        let entropy: f64 = -p.iter().zip(&lp).map(|(pi, li)| pi * li).sum::<f64>();
        policy_loss += -lp[a] * adv - config.entropy_coef * entropy;
        for k in 0..2 {
            let onehot = if k == a { 1.0 } else { 0.0 };
            // d(-log pi_a)/dz_k = pi_k - [k = a];  d(-H)/dz_k = pi_k (log pi_k + H)
            g_logits[2 * j + k] =
                adv * (p[k] - onehot) + config.entropy_coef * p[k] * (lp[k] + entropy);
        }
        let err = returns[j] - values[j];
        value_loss += err * err;
        g_values[j] = -2.0 * config.value_coef * err;
    }
    let grads = net.backward(&trace, &[g_logits, g_values])?;
    Ok((
        A2cLosses {
            policy_loss,
            value_loss,
        },
        grads,
    ))
}

#[derive(Debug, Clone)]
pub struct A2cAgent {
    net: Network,
    adam: Adam,
    pub config: A2cConfig,
    rollout: Vec<RolloutStep>,
    updates: u64,
}

impl A2cAgent {
    pub fn new(network: Network, config: A2cConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1]", config.gamma)));
        }
        if config.rollout_horizon == 0 {
            return Err(Error::InvalidConfig("rollout_horizon must be positive".into()));
        }
        let heads = network.heads();
        if heads.len() != 2
            || heads[0].kind != HeadKind::Softmax
            || heads[0].dense.outputs() != 2
            || heads[1].dense.outputs() != 1
        {
            return Err(Error::InvalidConfig(
                "actor-critic network needs a 2-way softmax head and a scalar value head".into(),
            ));
        }
        let adam = Adam::new(config.adam, &network.params());
        Ok(A2cAgent {
            net: network,
            adam,
            config,
            rollout: Vec::new(),
            updates: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn rollout(&self) -> &[RolloutStep] {
        &self.rollout
    }

    pub fn rollout_full(&self) -> bool {
        self.rollout.len() >= self.config.rollout_horizon
    }

    fn input(obs: &Observation) -> Vec<f64> {
        let mut v = Vec::new();
        obs.write_input(&mut v);
        v
    }

    /// Policy probabilities and state value.
    pub fn evaluate(&self, obs: &Observation) -> Result<(Vec<f64>, f64)> {
        let (p, v) = self.net.forward_policy_value(&Self::input(obs))?;
        Ok((p.into_data(), v))
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        Ok(self.evaluate(obs)?.1)
    }

    /// Samples an action from the policy, returning it with its
    /// log-probability and the critic's value.
    pub fn select_action<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<(Phase, f64, f64)> {
        let (p, v) = self.evaluate(obs)?;
        Ok(sample_phase(&p, v, rng))
    }

    /// Most probable action; ties go to NSG.
    pub fn greedy_action(&self, obs: &Observation) -> Result<Phase> {
        let (p, _) = self.evaluate(obs)?;
        Ok(if p[1] > p[0] { Phase::Ewg } else { Phase::Nsg })
    }

    pub fn record(&mut self, step: RolloutStep) -> Result<()> {
        if self.rollout_full() {
            return Err(Error::InvalidConfig(format!(
                "rollout already holds {} steps",
                self.config.rollout_horizon
            )));
        }
        self.rollout.push(step);
        Ok(())
    }

    /// Updates actor and critic from the stored rollout, then clears it.
    pub fn update(&mut self, bootstrap: f64) -> Result<A2cLosses> {
        if self.rollout.is_empty() {
            return Err(Error::EmptyRollout);
        }
        let scale = self.config.reward_scale;
        let rewards: Vec<f64> = self.rollout.iter().map(|s| s.r * scale).collect();
        let returns = n_step_returns(&rewards, bootstrap, self.config.gamma);
        let advantages: Vec<f64> = returns
            .iter()
            .zip(&self.rollout)
            .map(|(r, s)| r - s.value)
            .collect();
        let actions: Vec<Phase> = self.rollout.iter().map(|s| s.a).collect();
        let mut inputs = Vec::new();
        for s in &self.rollout {
            s.s.write_input(&mut inputs);
        }
        let (losses, grads) = a2c_objective(
            &self.net,
            &inputs,
            &actions,
            &returns,
            &advantages,
            &self.config,
        )?;
        self.adam.step(self.net.params_mut(), &grads)?;
        self.rollout.clear();
        self.updates += 1;
        Ok(losses)
    }

    pub fn load_parameters(&mut self, net: &Network) -> Result<()> {
        self.net.copy_from(net)
    }
}

/// Draws a phase from `probs` (NSG first).
pub fn sample_phase<R: Rng + ?Sized>(probs: &[f64], value: f64, rng: &mut R) -> (Phase, f64, f64) {
    let u: f64 = rng.random();
    let a = if u < probs[0] { Phase::Nsg } else { Phase::Ewg };
    (a, probs[a.index()].ln(), value)
}
