//! Signal controllers: the frame-based value-function agent, the
//! actor-critic agent, the shallow queue-feature baseline and the fixed-time
//! plan.

pub mod a2c;
pub mod fixed;
pub mod q_learning;
pub mod schedule;

pub use a2c::{a2c_objective, n_step_returns, sample_phase, A2cAgent, A2cConfig, A2cLosses, RolloutStep};
pub use fixed::{fixed_time_action, FixedTimeAgent};
pub use q_learning::{dqn_target, greedy_phase, DqnAgent, QAgent, QConfig, QInput, SnnAgent};
pub use schedule::EpsilonSchedule;
