//! Slotted-ALOHA LPWA network simulator where IoT devices pick their
//! transmission channel with UCB bandit learners, plus closed-form
//! approximations of collision probabilities at the first retransmission.

pub mod analytic;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod scenario;
pub mod seed;

pub use engine::{run_replication, ReplicationResult, World};
pub use model::{ConfigError, DeviceState, Phase, ScenarioConfig, Strategy};
pub use policy::{StrategyState, UcbLearner};
