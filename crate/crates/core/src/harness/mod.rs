//! Configuration, training and evaluation driver, metrics and the gradient
//! verification suites.

pub mod config;
pub mod gradcheck;
pub mod metrics;
pub mod seeds;
pub mod session;

pub use config::{AgentKind, RunConfig};
pub use metrics::{EpisodeStats, MetricsRecord};
pub use seeds::{derive_seed, Stream};
pub use session::{
    evaluate_checkpoint, tune_fixed, Controller, EvalReport, FixedTuning, Mode, Session, TrainOutputs, FIXED_HALF_PERIODS,
};

/// Process exit codes used by the command-line front end.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
}
