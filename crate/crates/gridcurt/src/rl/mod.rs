//! Partially observable grid environment, reward, replay buffer, and the
//! DDPG training loop.

mod agent;
mod env;
mod replay;
mod reward;
mod train;

pub use agent::{AgentConfig, DdpgAgent, DdpgLosses};
pub use env::{observation_vector, EnvConfig, GridEnv, Step, StepInfo};
pub use replay::{Experience, ReplayBuffer};
pub use reward::{compute_reward, reward_from_terms, RewardTerms};
pub use train::{
    train, train_with_observer, AgentCheckpoint, MetricsRow, TrainConfig, TrainEvent, TrainOutput,
};
