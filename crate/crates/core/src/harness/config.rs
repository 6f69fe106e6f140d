//! Run configuration: a flat `key = value` file (TOML syntax). Every key is
//! optional and falls back to the default documented on its field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{A2cConfig, EpsilonSchedule, QConfig};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, ArchSpec, ConvSpec};
use crate::observation::{RenderConfig, STACK_DEPTH};
use crate::sim::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Dqn,
    A2c,
    Snn,
    Fixed,
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(AgentKind::Dqn),
            "a2c" => Ok(AgentKind::A2c),
            "snn" => Ok(AgentKind::Snn),
            "fixed" => Ok(AgentKind::Fixed),
            other => Err(Error::InvalidConfig(format!("unknown agent kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `dqn`, `a2c`, `snn` or `fixed`.
    pub agent: AgentKind,
    /// Master seed; every episode and network seed derives from it.
    pub seed: u64,

    // simulator
    pub lane_length_cells: usize,
    pub arrival_probability: f64,
    pub green_duration_ticks: u32,
    pub episode_length_steps: u32,

    // rendering
    pub frame_width: usize,
    pub frame_height: usize,
    pub show_signal: bool,

    // networks
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub hidden_units: usize,
    pub snn_hidden_units: usize,

    // optimisation
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub gamma: f64,
    /// Rewards are multiplied by this before entering any learning target.
    pub reward_scale: f64,

    // value-function agents
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync_period: u64,
    /// Replay updates happen every this many agent steps.
    pub train_every: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of all training steps over which epsilon anneals.
    pub eps_anneal_fraction: f64,

    // actor-critic
    pub rollout_horizon: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,

    // fixed-time baseline
    pub fixed_half_period: usize,

    // schedule
    pub total_epochs: u32,
    pub episodes_per_epoch: u32,
    pub eval_every_episodes: u32,
    pub eval_episodes: u32,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every_epochs: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        RunConfig {
            agent: AgentKind::Dqn,
            seed: 0,
            lane_length_cells: sim.lane_length_cells,
            arrival_probability: sim.arrival_probability,
            green_duration_ticks: sim.green_duration_ticks,
            episode_length_steps: sim.episode_length_steps,
            frame_width: 64,
            frame_height: 64,
            show_signal: true,
            conv1_filters: 16,
            conv1_kernel: 8,
            conv1_stride: 4,
            conv2_filters: 32,
            conv2_kernel: 4,
            conv2_stride: 2,
            hidden_units: 256,
            snn_hidden_units: 64,
            learning_rate: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            gamma: 0.99,
            reward_scale: 1.0,
            batch_size: 32,
            replay_capacity: 10_000,
            target_sync_period: 500,
            train_every: 1,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_anneal_fraction: 0.2,
            rollout_horizon: 32,
            value_coef: 1.0,
            entropy_coef: 0.0,
            fixed_half_period: 10,
            total_epochs: 200,
            episodes_per_epoch: 10,
            eval_every_episodes: 10,
            eval_episodes: 5,
            checkpoint_every_epochs: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (when given) and applies `key=value` overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::InvalidConfig(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.clone()));
            table.insert(key.clone(), value);
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim().validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        if !self.reward_scale.is_finite() || self.reward_scale <= 0.0 {
            return bad("reward_scale must be positive");
        }
        for (name, v) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.eps_anneal_fraction) {
            return bad("eps_anneal_fraction must lie in [0, 1]");
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("rollout_horizon", self.rollout_horizon),
            ("fixed_half_period", self.fixed_half_period),
            ("hidden_units", self.hidden_units),
            ("snn_hidden_units", self.snn_hidden_units),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.target_sync_period == 0 || self.train_every == 0 {
            return bad("target_sync_period and train_every must be positive");
        }
        if self.episodes_per_epoch == 0 || self.eval_every_episodes == 0 || self.eval_episodes == 0 {
            return bad("episodes_per_epoch, eval_every_episodes and eval_episodes must be positive");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("value_coef and entropy_coef must be non-negative");
        }
        if matches!(self.agent, AgentKind::Dqn | AgentKind::A2c) {
            crate::observation::Renderer::new(self.render(), self.lane_length_cells)?;
            self.arch().trunk()?;
        }
        Ok(())
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            lane_length_cells: self.lane_length_cells,
            arrival_probability: self.arrival_probability,
            green_duration_ticks: self.green_duration_ticks,
            episode_length_steps: self.episode_length_steps,
        }
    }

    pub fn render(&self) -> RenderConfig {
        RenderConfig {
            frame_width: self.frame_width,
            frame_height: self.frame_height,
            show_signal: self.show_signal,
            cell_px: None,
        }
    }

    pub fn arch(&self) -> ArchSpec {
        let mut convs = vec![ConvSpec {
            filters: self.conv1_filters,
            kernel: self.conv1_kernel,
            stride: self.conv1_stride,
        }];
        if self.conv2_filters > 0 {
            convs.push(ConvSpec {
                filters: self.conv2_filters,
                kernel: self.conv2_kernel,
                stride: self.conv2_stride,
            });
        }
        ArchSpec {
            input: [STACK_DEPTH, self.frame_height, self.frame_width],
            convs,
            hidden: self.hidden_units,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn total_training_steps(&self) -> u64 {
        self.total_epochs as u64 * self.episodes_per_epoch as u64 * self.episode_length_steps as u64
    }

    pub fn q_config(&self) -> QConfig {
        let anneal = (self.total_training_steps() as f64 * self.eps_anneal_fraction).round() as u64;
        QConfig {
            gamma: self.gamma,
            adam: self.adam(),
            batch_size: self.batch_size,
            target_sync_period: self.target_sync_period,
            reward_scale: self.reward_scale,
            epsilon: EpsilonSchedule {
                start: self.eps_start,
                end: self.eps_end,
                anneal_steps: anneal.max(1),
            },
        }
    }

    pub fn a2c_config(&self) -> A2cConfig {
        A2cConfig {
            gamma: self.gamma,
            adam: self.adam(),
            rollout_horizon: self.rollout_horizon,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            reward_scale: self.reward_scale,
        }
    }
}
