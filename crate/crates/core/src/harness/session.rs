use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{A2cAgent, DqnAgent, FixedTimeAgent, QAgent, RolloutStep, SnnAgent};
use crate::error::{Error, Result};
use crate::harness::config::{AgentKind, RunConfig};
use crate::harness::metrics::{episode_row, EpisodeStats, MetricsRecord, EPISODE_HEADER, METRICS_HEADER};
use crate::harness::seeds::{derive_seed, Stream};
use crate::nn::{checkpoint, Network};
use crate::observation::{snn_features, Observation, Renderer, SnnFeatures};
use crate::replay::{ReplayMemory, Transition};
use crate::sim::{is_terminal, IntersectionState, Phase, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub enum Controller {
    Dqn(DqnAgent),
    A2c(A2cAgent),
    Snn(SnnAgent),
    Fixed(FixedTimeAgent),
}

impl Controller {
    /// Builds the configured controller with freshly initialised parameters.
    pub fn build(config: &RunConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, Stream::Init, 0));
        Ok(match config.agent {
            AgentKind::Dqn => {
                let net = Network::q_network(&config.arch(), 2, &mut rng)?;
                Controller::Dqn(QAgent::new(net, config.q_config())?)
            }
            AgentKind::Snn => {
                let net = Network::shallow(SnnFeatures::WIDTH, config.snn_hidden_units, 2, &mut rng)?;
                Controller::Snn(QAgent::new(net, config.q_config())?)
            }
            AgentKind::A2c => {
                let net = Network::policy_value(&config.arch(), 2, &mut rng)?;
                Controller::A2c(A2cAgent::new(net, config.a2c_config())?)
            }
            AgentKind::Fixed => Controller::Fixed(FixedTimeAgent::new(config.fixed_half_period)?),
        })
    }

    pub fn network(&self) -> Option<&Network> {
        match self {
            Controller::Dqn(a) => Some(a.online()),
            Controller::Snn(a) => Some(a.online()),
            Controller::A2c(a) => Some(a.network()),
            Controller::Fixed(_) => None,
        }
    }

    pub fn load_parameters(&mut self, net: &Network) -> Result<()> {
        match self {
            Controller::Dqn(a) => a.load_parameters(net),
            Controller::Snn(a) => a.load_parameters(net),
            Controller::A2c(a) => a.load_parameters(net),
            Controller::Fixed(_) => Ok(()),
        }
    }

    fn uses_frames(&self) -> bool {
        matches!(self, Controller::Dqn(_) | Controller::A2c(_))
    }
}

/// Result of evaluating a controller over several seeded episodes.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub record: MetricsRecord,
    pub episodes: Vec<EpisodeStats>,
}

/// Files written by [`Session::train`].
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub metrics: PathBuf,
    pub eval_episodes: PathBuf,
    pub final_checkpoint: Option<PathBuf>,
}

/// A controller together with everything needed to train and evaluate it.
pub struct Session {
    config: RunConfig,
    sim: SimConfig,
    renderer: Option<Renderer>,
    controller: Controller,
    frame_memory: Option<ReplayMemory<Observation>>,
    feature_memory: Option<ReplayMemory<SnnFeatures>>,
    rng: ChaCha8Rng,
    episodes_trained: u64,
    steps_trained: u64,
}

struct Episode {
    state: IntersectionState,
    obs: Option<Observation>,
}

impl Session {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let controller = Controller::build(&config)?;
        let renderer = if controller.uses_frames() {
            Some(Renderer::new(config.render(), config.lane_length_cells)?)
        } else {
            None
        };
        let frame_memory = match controller {
            Controller::Dqn(_) => Some(ReplayMemory::new(config.replay_capacity)?),
            _ => None,
        };
        let feature_memory = match controller {
            Controller::Snn(_) => Some(ReplayMemory::new(config.replay_capacity)?),
            _ => None,
        };
        Ok(Session {
            sim: config.sim(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, Stream::Agent, 0)),
            config,
            renderer,
            controller,
            frame_memory,
            feature_memory,
            episodes_trained: 0,
            steps_trained: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut Controller {
        &mut self.controller
    }

    pub fn episodes_trained(&self) -> u64 {
        self.episodes_trained
    }

    fn start(&self, seed: u64) -> Result<Episode> {
        let state = IntersectionState::new(seed, &self.sim)?;
        let obs = match &self.renderer {
            Some(r) => Some(Observation::new(r.render(&state)?)),
            None => None,
        };
        Ok(Episode { state, obs })
    }

    fn next_obs(&self, ep: &Episode) -> Result<Option<Observation>> {
        match (&self.renderer, &ep.obs) {
            (Some(r), Some(obs)) => Ok(Some(obs.push_frame(r.render(&ep.state)?)?)),
            _ => Ok(None),
        }
    }

    fn finish(seed: u64, ep: &Episode, total_reward: f64, steps: u32) -> EpisodeStats {
        debug_assert_eq!(total_reward, -(ep.state.cumulative_delay as f64));
        EpisodeStats {
            seed,
            total_reward,
            cumulative_delay: ep.state.cumulative_delay,
            vehicles: ep.state.spawned_total,
            mean_queue: ep.state.mean_queue_length(),
            steps,
        }
    }

    /// Runs one episode. Evaluation acts greedily and leaves the controller
    /// untouched; training acts exploratively and applies the agent's update
    /// rule as it goes.
    pub fn run_episode(&mut self, mode: Mode, seed: u64) -> Result<EpisodeStats> {
        match mode {
            Mode::Eval => self.eval_episode(seed),
            Mode::Train => self.train_episode(seed),
        }
    }

    pub fn eval_episode(&self, seed: u64) -> Result<EpisodeStats> {
        let mut ep = self.start(seed)?;
        let len = self.sim.episode_length_steps;
        let green = self.sim.green_duration_ticks;
        let mut total = 0.0;
        let mut steps = 0;
        while !is_terminal(len, steps) {
            let action = match &self.controller {
                Controller::Dqn(a) => a.greedy_action(ep.obs.as_ref().expect("frames rendered"))?,
                Controller::A2c(a) => a.greedy_action(ep.obs.as_ref().expect("frames rendered"))?,
                Controller::Snn(a) => a.greedy_action(&snn_features(&ep.state))?,
                Controller::Fixed(f) => f.action(steps as u64),
            };
            total += ep.state.apply_action(action, green)?;
            ep.obs = self.next_obs(&ep)?;
            steps += 1;
        }
        Ok(Self::finish(seed, &ep, total, steps))
    }

    pub fn train_episode(&mut self, seed: u64) -> Result<EpisodeStats> {
        let mut ep = self.start(seed)?;
        let len = self.sim.episode_length_steps;
        let green = self.sim.green_duration_ticks;
        let train_every = self.config.train_every;
        let mut total = 0.0;
        let mut steps = 0;
        while !is_terminal(len, steps) {
            let step_index = steps as u64;
            steps += 1;
            let terminal = is_terminal(len, steps);
            match &mut self.controller {
                Controller::Dqn(agent) => {
                    let obs = ep.obs.clone().expect("frames rendered");
                    let a = agent.select_action(&obs, &mut self.rng)?;
                    let r = ep.state.apply_action(a, green)?;
                    total += r;
                    let (r_, obs_) = (&self.renderer, &obs);
                    let next = obs_.push_frame(r_.as_ref().expect("renderer").render(&ep.state)?)?;
                    let memory = self.frame_memory.as_mut().expect("replay memory");
                    memory.push(Transition {
                        s: obs,
                        a,
                        r,
                        s_next: next.clone(),
                        terminal,
                    });
                    self.steps_trained += 1;
                    if self.steps_trained % train_every == 0 {
                        agent.train_step(memory, &mut self.rng)?;
                    }
                    ep.obs = Some(next);
                }
                Controller::Snn(agent) => {
                    let s = snn_features(&ep.state);
                    let a = agent.select_action(&s, &mut self.rng)?;
                    let r = ep.state.apply_action(a, green)?;
                    total += r;
                    let memory = self.feature_memory.as_mut().expect("replay memory");
                    memory.push(Transition {
                        s,
                        a,
                        r,
                        s_next: snn_features(&ep.state),
                        terminal,
                    });
                    self.steps_trained += 1;
                    if self.steps_trained % train_every == 0 {
                        agent.train_step(memory, &mut self.rng)?;
                    }
                }
                Controller::A2c(agent) => {
                    let obs = ep.obs.clone().expect("frames rendered");
                    let (a, log_prob, value) = agent.select_action(&obs, &mut self.rng)?;
                    let r = ep.state.apply_action(a, green)?;
                    total += r;
                    let next = obs.push_frame(
                        self.renderer
                            .as_ref()
                            .expect("renderer")
                            .render(&ep.state)?,
                    )?;
                    agent.record(RolloutStep {
                        s: obs,
                        a,
                        r,
                        log_prob,
                        value,
                    })?;
                    self.steps_trained += 1;
                    if terminal || agent.rollout_full() {
                        let bootstrap = if terminal { 0.0 } else { agent.value(&next)? };
                        agent.update(bootstrap)?;
                    }
                    ep.obs = Some(next);
                }
                Controller::Fixed(f) => {
                    total += ep.state.apply_action(f.action(step_index), green)?;
                    self.steps_trained += 1;
                }
            }
        }
        self.episodes_trained += 1;
        Ok(Self::finish(seed, &ep, total, steps))
    }

    /// Greedy evaluation over `episodes` episodes with seeds derived from the
    /// master seed. The same seeds are used at every evaluation point.
    pub fn evaluate_episodes(&self, episodes: u32, epoch: u32) -> Result<EvalReport> {
        let stats = (0..episodes as u64)
            .map(|j| self.eval_episode(derive_seed(self.config.seed, Stream::EvalEpisode, j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            record: MetricsRecord::aggregate(epoch, &stats),
            episodes: stats,
        })
    }

    pub fn evaluate(&self, epoch: u32) -> Result<EvalReport> {
        self.evaluate_episodes(self.config.eval_episodes, epoch)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<bool> {
        match self.controller.network() {
            Some(net) => {
                checkpoint::save(net, path)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let template = match self.controller.network() {
            Some(net) => net.clone(),
            None => return Ok(()),
        };
        let net = checkpoint::load_matching(path, &template)?;
        self.controller.load_parameters(&net)
    }

    /// Runs the whole training schedule, evaluating every
    /// `eval_every_episodes` episodes. With `out_dir`, writes the metrics CSV,
    /// per-episode evaluation log, resolved config and checkpoints there.
    pub fn train(&mut self, out_dir: Option<&Path>) -> Result<(Vec<MetricsRecord>, Option<TrainOutputs>)> {
        struct Sinks {
            metrics: BufWriter<File>,
            episodes: BufWriter<File>,
            dir: PathBuf,
        }
        let mut sinks = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join("checkpoints")).map_err(io(dir))?;
                std::fs::write(dir.join("config.toml"), self.config.to_toml()).map_err(io(dir))?;
                let mp = dir.join("metrics.csv");
                let ep = dir.join("eval_episodes.csv");
                let mut metrics = BufWriter::new(File::create(&mp).map_err(io(&mp))?);
                let mut episodes = BufWriter::new(File::create(&ep).map_err(io(&ep))?);
                writeln!(metrics, "{METRICS_HEADER}").map_err(io(&mp))?;
                writeln!(episodes, "{EPISODE_HEADER}").map_err(io(&ep))?;
                Some(Sinks {
                    metrics,
                    episodes,
                    dir: dir.to_path_buf(),
                })
            }
            None => None,
        };

        let cfg = self.config.clone();
        let mut records = Vec::new();
        for epoch in 0..cfg.total_epochs {
            for e in 0..cfg.episodes_per_epoch {
                let index = epoch as u64 * cfg.episodes_per_epoch as u64 + e as u64;
                let stats = self.train_episode(derive_seed(cfg.seed, Stream::TrainEpisode, index))?;
                log::debug!(
                    "episode {} reward {:.1} delay/veh {:.2}",
                    index,
                    stats.total_reward,
                    stats.delay_per_vehicle()
                );
                let done = index + 1;
                if done % cfg.eval_every_episodes as u64 == 0 {
                    let point = records.len();
                    let report = self.evaluate((done / cfg.episodes_per_epoch as u64) as u32)?;
                    log::info!(
                        "epoch {} eval reward {:.2} delay/veh {:.3} queue {:.3}",
                        report.record.epoch,
                        report.record.avg_reward,
                        report.record.avg_cum_delay,
                        report.record.avg_queue
                    );
                    if let Some(s) = sinks.as_mut() {
                        let mp = s.dir.join("metrics.csv");
                        writeln!(s.metrics, "{}", report.record.csv_row()).map_err(io(&mp))?;
                        s.metrics.flush().map_err(io(&mp))?;
                        for (j, ep) in report.episodes.iter().enumerate() {
                            writeln!(s.episodes, "{}", episode_row(point, j, ep))
                                .map_err(io(&s.dir.join("eval_episodes.csv")))?;
                        }
                    }
                    records.push(report.record);
                }
            }
            if let Some(s) = sinks.as_ref() {
                let every = cfg.checkpoint_every_epochs;
                if every > 0 && (epoch + 1) % every == 0 {
                    let path = s.dir.join("checkpoints").join(format!("epoch_{:04}.ckpt", epoch + 1));
                    self.save_checkpoint(&path)?;
                }
            }
        }

        let outputs = match sinks {
            Some(mut s) => {
                let ep = s.dir.join("eval_episodes.csv");
                s.episodes.flush().map_err(io(&ep))?;
                let final_path = s.dir.join("final.ckpt");
                let saved = self.save_checkpoint(&final_path)?;
                Some(TrainOutputs {
                    metrics: s.dir.join("metrics.csv"),
                    eval_episodes: ep,
                    final_checkpoint: saved.then_some(final_path),
                })
            }
            None => None,
        };
        Ok((records, outputs))
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Evaluates a saved controller (or the fixed-time plan, which needs none).
pub fn evaluate_checkpoint(config: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let mut session = Session::new(config.clone())?;
    match (checkpoint, session.controller().network().is_some()) {
        (Some(path), true) => session.load_checkpoint(path)?,
        (None, true) => {
            return Err(Error::InvalidConfig(format!(
                "agent {:?} needs a checkpoint to evaluate",
                config.agent
            )))
        }
        _ => {}
    }
    session.evaluate(0)
}

/// Phase chosen by the fixed-time plan; re-exported for callers that drive
/// the simulator themselves.
pub fn fixed_phase(step: u64, half_period: usize) -> Result<Phase> {
    crate::agents::fixed_time_action(step, half_period)
}

/// Half periods searched when tuning the fixed-time baseline.
pub const FIXED_HALF_PERIODS: [usize; 3] = [5, 10, 20];

/// Outcome of tuning the fixed-time plan.
#[derive(Debug, Clone)]
pub struct FixedTuning {
    /// Mean per-vehicle delay on the tuning episodes for each candidate.
    pub candidates: Vec<(usize, f64)>,
    pub best_half_period: usize,
    /// The chosen plan on the evaluation episodes.
    pub report: EvalReport,
}

/// Picks the half period with the lowest mean per-vehicle delay over
/// `tuning_episodes` training-stream episodes, then evaluates that plan on
/// `eval_episodes` evaluation episodes.
pub fn tune_fixed(config: &RunConfig, periods: &[usize], tuning_episodes: u32, eval_episodes: u32) -> Result<FixedTuning> {
    let mut candidates = Vec::with_capacity(periods.len());
    for &half in periods {
        let cfg = RunConfig {
            agent: AgentKind::Fixed,
            fixed_half_period: half,
            ..config.clone()
        };
        let session = Session::new(cfg)?;
        let mut total = 0.0;
        for j in 0..tuning_episodes as u64 {
            let ep = session.eval_episode(derive_seed(config.seed, Stream::TrainEpisode, j))?;
            total += ep.delay_per_vehicle();
        }
        candidates.push((half, total / tuning_episodes.max(1) as f64));
    }
    let best_half_period = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|c| c.0)
        .ok_or_else(|| Error::InvalidConfig("no fixed-time periods to tune".into()))?;
    let session = Session::new(RunConfig {
        agent: AgentKind::Fixed,
        fixed_half_period: best_half_period,
        ..config.clone()
    })?;
    Ok(FixedTuning {
        candidates,
        best_half_period,
        report: session.evaluate_episodes(eval_episodes, 0)?,
    })
}
