//! Multi-agent DDPG with centralized critics and decentralized actors, plus
//! an independent-learner mode.
//!
//! Checkpoints are JSON dumps of [`PolicySet`] carrying `format_version`,
//! the training mode, the action head, the observation width and, per agent,
//! the four networks as `{layers: [{weight, bias}]}` with ndarray's serde
//! layout.

mod action;
mod agent;
mod replay;
mod trainer;

pub use action::{ActionHead, DEFAULT_FLOOR, NUM_SCALARS};
pub use agent::{
    actor_act, actor_grad_from_action_grad, actor_objective_and_grad, actor_update,
    critic_loss_and_grad, critic_update, td_targets, ActorChoice, AgentNets,
};
pub use replay::{Experience, ReplayBuffer};
pub use trainer::{
    train, EpisodeMetrics, Mode, PolicySet, TrainConfig, Trainer, CHECKPOINT_VERSION,
    DEFAULT_REWARD_CLIP,
};
