use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::ActionHead;
use super::agent::{actor_act, actor_update, critic_update, td_targets, AgentNets};
use super::replay::{Experience, ReplayBuffer};
use crate::comms::OffloadAction;
use crate::env::{Env, EnvState};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::scalar::Scalar;

/// Checkpoint format version written into every [`PolicySet`] dump.
pub const CHECKPOINT_VERSION: u32 = 1;
/// Default training-reward clip. A per-agent reward never exceeds
/// `1 + (e - 1) = e`, so only the unbounded negative tail is cut.
pub const DEFAULT_REWARD_CLIP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Centralized critics over the joint observation and action, all agents
    /// trained on the system reward.
    Cooperative,
    /// Each critic sees only its own observation and action and its own reward.
    Independent,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Cooperative => "cooperative",
            Mode::Independent => "independent",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cooperative" => Ok(Mode::Cooperative),
            "independent" => Ok(Mode::Independent),
            other => Err(Error::Validation(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub gamma: f64,
    pub zeta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Updates start once the buffer holds this many transitions.
    pub warmup: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub hidden: Vec<usize>,
    /// Symmetric clip applied to rewards before they enter the replay buffer.
    /// Metrics always report the unclipped rewards.
    pub reward_clip: Option<f64>,
    /// Cooperative mode only: train every agent on the mean per-agent reward
    /// instead of its own.
    pub shared_reward: bool,
    /// Weight of the penalty on raw actor outputs.
    pub actor_preact_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            steps_per_episode: 100,
            gamma: 0.85,
            zeta: 0.8,
            lr: 0.01,
            batch_size: 128,
            replay_capacity: 100_000,
            warmup: 128,
            epsilon_start: 0.9,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            hidden: vec![64, 32, 32],
            reward_clip: Some(DEFAULT_REWARD_CLIP),
            shared_reward: false,
            actor_preact_reg: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        let bad = |m: &str| Err(Error::Validation(m.into()));
        if !open(self.gamma) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return bad("zeta must lie in (0, 1]");
        }
        if !open(self.epsilon_start)
            || !open(self.epsilon_end)
            || self.epsilon_end > self.epsilon_start
        {
            return bad("epsilon must satisfy 0 < end <= start < 1");
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return bad("epsilon_decay_fraction must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.episodes == 0
            || self.steps_per_episode == 0
            || self.batch_size == 0
            || self.warmup == 0
        {
            return bad("episodes, steps_per_episode, batch_size and warmup must be positive");
        }
        if self.replay_capacity < self.warmup {
            return bad("replay_capacity must be at least warmup");
        }
        if !(self.actor_preact_reg >= 0.0 && self.actor_preact_reg.is_finite()) {
            return bad("actor_preact_reg must be non-negative");
        }
        if self.reward_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("reward_clip must be positive");
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }

    /// Exploration probability during episode `episode` (0-based).
    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = (self.epsilon_decay_fraction * self.episodes as f64).max(1.0);
        let t = episode as f64 / span;
        if t >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Per-slot system reward averaged over the episode.
    pub mean_system_reward: f64,
    /// Per-slot sum of offloading utilities averaged over the episode.
    pub mean_offload_utility: f64,
    /// Per-slot sum of mining utilities averaged over the episode.
    pub mean_mining_utility: f64,
    pub epsilon: f64,
    /// Mean pre-step critic loss over the episode's updates; empty if none ran.
    pub critic_loss: Option<f64>,
}

/// Trained networks plus what is needed to act with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySet<T> {
    pub format_version: u32,
    pub mode: Mode,
    pub head: ActionHead,
    pub obs_dim: usize,
    pub agents: Vec<AgentNets<T>>,
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> PolicySet<T> {
    pub fn check_compatible(&self, env: &Env) -> Result<()> {
        if self.agents.len() != env.num_agents() {
            return Err(Error::Dimension {
                expected: env.num_agents(),
                actual: self.agents.len(),
            });
        }
        if self.obs_dim != env.observation_dim() || self.head.num_channels != env.num_subbands() {
            return Err(Error::Contract(
                "policy was trained for a different number of sub-bands".into(),
            ));
        }
        Ok(())
    }

    /// Greedy joint action: each actor sees only its own observation.
    pub fn act(&self, env: &Env, state: &EnvState) -> Result<Vec<OffloadAction>> {
        self.check_compatible(env)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..env.num_agents())
            .map(|n| {
                let o: Vec<T> = env.observe(state, n)?.into_iter().map(T::lit).collect();
                let dev = &env.scenario().devices[n];
                Ok(actor_act(&self.agents[n].actor, &self.head, dev, &o, 0.0, &mut rng)?.action)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        if p.format_version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {}",
                p.format_version
            )));
        }
        if p.agents
            .iter()
            .any(|a| a.actor.input_dim() != p.obs_dim || a.actor.output_dim() != p.head.dim())
        {
            return Err(Error::Validation(
                "checkpoint actor shapes disagree with its header".into(),
            ));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Sampled minibatch laid out as matrices.
struct Batch<T> {
    obs: Array2<T>,
    actions: Array2<T>,
    rewards: Array2<T>,
    next_obs: Array2<T>,
}

/// Stepwise MA-DDPG trainer. Everything random flows from one seeded stream,
/// so a run is a pure function of the environment, config, mode and seed.
pub struct Trainer<T> {
    env: Env,
    config: TrainConfig,
    mode: Mode,
    head: ActionHead,
    agents: Vec<AgentNets<T>>,
    actor_opts: Vec<Adam<T>>,
    critic_opts: Vec<Adam<T>>,
    replay: ReplayBuffer<T>,
    /// Exploration draws; consumed identically whatever the policy outputs.
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    reset_rng: ChaCha8Rng,
    episode: usize,
    update_rounds: u64,
    metrics: Vec<EpisodeMetrics>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(env: Env, config: TrainConfig, mode: Mode, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = env.num_agents();
        let od = env.observation_dim();
        let head = ActionHead::new(env.num_subbands());
        let critic_in = match mode {
            Mode::Cooperative => n * (od + head.dim()),
            Mode::Independent => od + head.dim(),
        };
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        let mut rng = stream(0);
        let agents: Vec<AgentNets<T>> = (0..n)
            .map(|_| AgentNets::new(od, head.dim(), critic_in, &config.hidden, &mut rng))
            .collect();
        let adam = AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        };
        let actor_opts = agents.iter().map(|a| Adam::new(&a.actor, adam)).collect();
        let critic_opts = agents.iter().map(|a| Adam::new(&a.critic, adam)).collect();
        let replay = ReplayBuffer::new(config.replay_capacity);
        Ok(Self {
            env,
            config,
            mode,
            head,
            agents,
            actor_opts,
            critic_opts,
            replay,
            explore_rng: stream(1),
            replay_rng: stream(2),
            reset_rng: stream(3),
            episode: 0,
            update_rounds: 0,
            metrics: Vec::new(),
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn agents(&self) -> &[AgentNets<T>] {
        &self.agents
    }

    pub fn replay(&self) -> &ReplayBuffer<T> {
        &self.replay
    }

    pub fn update_rounds(&self) -> u64 {
        self.update_rounds
    }

    pub fn metrics(&self) -> &[EpisodeMetrics] {
        &self.metrics
    }

    pub fn policy_set(&self) -> PolicySet<T> {
        PolicySet {
            format_version: CHECKPOINT_VERSION,
            mode: self.mode,
            head: self.head,
            obs_dim: self.env.observation_dim(),
            agents: self.agents.clone(),
        }
    }

    /// Runs all remaining episodes.
    pub fn train(&mut self) -> Result<&[EpisodeMetrics]> {
        while self.episode < self.config.episodes {
            self.run_episode()?;
        }
        Ok(&self.metrics)
    }

    fn observe(&self, state: &EnvState) -> Vec<T> {
        self.env
            .observe_all(state)
            .into_iter()
            .flatten()
            .map(T::lit)
            .collect()
    }

    pub fn run_episode(&mut self) -> Result<EpisodeMetrics> {
        let episode = self.episode;
        let epsilon = self.config.epsilon(episode);
        let reset_seed = self.reset_rng.gen::<u64>();
        let mut state = self.env.reset(reset_seed);
        let n = self.env.num_agents();
        let od = self.env.observation_dim();
        let steps = self.config.steps_per_episode;
        let (mut sys, mut off, mut mine) = (0.0, 0.0, 0.0);
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);

        let mut obs = self.observe(&state);
        for step in 0..steps {
            let mut squashed = Vec::with_capacity(n * self.head.dim());
            let mut actions = Vec::with_capacity(n);
            for i in 0..n {
                let dev = &self.env.scenario().devices[i];
                let choice = actor_act(
                    &self.agents[i].actor,
                    &self.head,
                    dev,
                    &obs[i * od..(i + 1) * od],
                    epsilon,
                    &mut self.explore_rng,
                )?;
                squashed.extend(choice.squashed);
                actions.push(choice.action);
            }
            let outcome = self.env.step(&state, &actions)?;
            sys += outcome.system_reward;
            off += outcome.total_offload_utility();
            mine += outcome.total_mining_utility();
            let rewards = self.training_rewards(&outcome.per_agent_reward);
            let next_obs = self.observe(&outcome.next_state);
            self.replay.push(Experience {
                obs,
                actions: squashed,
                rewards,
                next_obs: next_obs.clone(),
            });
            obs = next_obs;
            state = outcome.next_state;

            if self.replay.len() >= self.config.warmup {
                let loss = self.update_round(episode, step)?;
                loss_sum += loss;
                loss_count += 1;
            }
        }
        let t = steps as f64;
        let m = EpisodeMetrics {
            episode,
            mean_system_reward: sys / t,
            mean_offload_utility: off / t,
            mean_mining_utility: mine / t,
            epsilon,
            critic_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
        };
        self.metrics.push(m.clone());
        self.episode += 1;
        Ok(m)
    }

    /// Rewards stored for learning: each agent's reward clipped to
    /// `[-reward_clip, reward_clip]`, replaced by their mean when shared.
    fn training_rewards(&self, per_agent: &[f64]) -> Vec<T> {
        let c = self.config.reward_clip.unwrap_or(f64::INFINITY);
        let own: Vec<f64> = per_agent.iter().map(|r| r.clamp(-c, c)).collect();
        if self.mode == Mode::Cooperative && self.config.shared_reward {
            let mean = own.iter().sum::<f64>() / own.len() as f64;
            vec![T::lit(mean); own.len()]
        } else {
            own.into_iter().map(T::lit).collect()
        }
    }

    fn sample_batch(&mut self) -> Batch<T> {
        let picked = self
            .replay
            .sample_indices(self.config.batch_size, &mut self.replay_rng);
        let rows = |f: &dyn Fn(&Experience<T>) -> &Vec<T>| -> Array2<T> {
            let width = f(self.replay.get(picked[0]).expect("sampled index")).len();
            let mut m = Array2::zeros((picked.len(), width));
            for (r, &i) in picked.iter().enumerate() {
                let e = self.replay.get(i).expect("sampled index");
                m.row_mut(r).assign(&ndarray::aview1(f(e)));
            }
            m
        };
        Batch {
            obs: rows(&|e| &e.obs),
            actions: rows(&|e| &e.actions),
            rewards: rows(&|e| &e.rewards),
            next_obs: rows(&|e| &e.next_obs),
        }
    }

    /// One critic and actor update per agent on a shared minibatch, then a
    /// soft update of every target. Returns the mean critic loss.
    fn update_round(&mut self, episode: usize, step: usize) -> Result<f64> {
        let b = self.sample_batch();
        let n = self.env.num_agents();
        let od = self.env.observation_dim();
        let ad = self.head.dim();
        let gamma = T::lit(self.config.gamma);
        let obs_of = |m: &Array2<T>, i: usize| m.slice(s![.., i * od..(i + 1) * od]).to_owned();
        let act_of = |m: &Array2<T>, i: usize| m.slice(s![.., i * ad..(i + 1) * ad]).to_owned();

        let next_actions: Vec<Array2<T>> = (0..n)
            .map(|i| {
                let raw = self.agents[i]
                    .actor_target
                    .predict(obs_of(&b.next_obs, i).view())?;
                Ok(self.head.squash(raw.view()))
            })
            .collect::<Result<_>>()?;
        let joint = |o: &Array2<T>, a: &Array2<T>| {
            concatenate(Axis(1), &[o.view(), a.view()]).expect("same rows")
        };
        let (x_joint, next_x_joint) = match self.mode {
            Mode::Cooperative => {
                let views: Vec<ArrayView2<T>> = next_actions.iter().map(|a| a.view()).collect();
                let next_a = concatenate(Axis(1), &views).expect("same rows");
                (
                    Some(joint(&b.obs, &b.actions)),
                    Some(joint(&b.next_obs, &next_a)),
                )
            }
            Mode::Independent => (None, None),
        };
        let inputs = |i: usize| -> (Array2<T>, Array2<T>, std::ops::Range<usize>) {
            match (&x_joint, &next_x_joint) {
                (Some(x), Some(nx)) => (
                    x.clone(),
                    nx.clone(),
                    n * od + i * ad..n * od + (i + 1) * ad,
                ),
                _ => (
                    joint(&obs_of(&b.obs, i), &act_of(&b.actions, i)),
                    joint(&obs_of(&b.next_obs, i), &next_actions[i]),
                    od..od + ad,
                ),
            }
        };

        let mut loss_total = 0.0;
        let mut slots = Vec::with_capacity(n);
        for i in 0..n {
            let (x, next_x, slot) = inputs(i);
            let rewards: Array1<T> = b.rewards.column(i).to_owned();
            let y = td_targets(
                &self.agents[i].critic_target,
                next_x.view(),
                rewards.view(),
                gamma,
            )?;
            let loss = critic_update(
                &mut self.agents[i].critic,
                &mut self.critic_opts[i],
                x.view(),
                y.view(),
            )?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    episode,
                    step,
                    what: format!("critic loss of agent {i} is {loss}"),
                });
            }
            loss_total += loss;
            slots.push((x, slot));
        }
        for (i, (x, slot)) in slots.into_iter().enumerate() {
            let agent = &mut self.agents[i];
            actor_update(
                &mut agent.actor,
                &mut self.actor_opts[i],
                &agent.critic,
                &self.head,
                obs_of(&b.obs, i).view(),
                x.view(),
                slot,
                T::lit(self.config.actor_preact_reg),
            )?;
        }
        let zeta = T::lit(self.config.zeta);
        for (i, agent) in self.agents.iter_mut().enumerate() {
            agent.soft_update(zeta)?;
            if !agent.is_finite() {
                return Err(Error::Diverged {
                    episode,
                    step,
                    what: format!("non-finite parameters in agent {i}"),
                });
            }
        }
        self.update_rounds += 1;
        Ok(loss_total / n as f64)
    }
}

/// Trains from scratch and returns the final policies with the reward curve.
pub fn train<T: Scalar>(
    env: Env,
    config: TrainConfig,
    mode: Mode,
    seed: u64,
) -> Result<(PolicySet<T>, Vec<EpisodeMetrics>)> {
    let mut t = Trainer::new(env, config, mode, seed)?;
    t.train()?;
    Ok((t.policy_set(), t.metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::model::{generate_scenario, GeneratorParams};

    fn env(n: usize, k: usize) -> Env {
        Env::new(
            generate_scenario(&GeneratorParams::sample(n, k, 3)).unwrap(),
            EnvConfig::default(),
        )
        .unwrap()
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            episodes: 4,
            steps_per_episode: 5,
            batch_size: 8,
            warmup: 8,
            hidden: vec![8, 8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epsilon_schedule_endpoints() {
        let c = TrainConfig {
            episodes: 100,
            ..TrainConfig::default()
        };
        assert_eq!(c.epsilon(0), 0.9);
        assert!((c.epsilon(25) - 0.475).abs() < 1e-12);
        assert_eq!(c.epsilon(50), 0.05);
        assert_eq!(c.epsilon(99), 0.05);
    }

    #[test]
    fn invalid_configs_rejected() {
        for c in [
            TrainConfig {
                gamma: 1.0,
                ..tiny()
            },
            TrainConfig {
                zeta: 0.0,
                ..tiny()
            },
            TrainConfig {
                epsilon_start: 0.01,
                epsilon_end: 0.5,
                ..tiny()
            },
            TrainConfig {
                batch_size: 0,
                ..tiny()
            },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn single_step_single_episode_runs_one_update() {
        let cfg = TrainConfig {
            episodes: 1,
            steps_per_episode: 1,
            warmup: 1,
            ..tiny()
        };
        let mut t: Trainer<f64> = Trainer::new(env(2, 2), cfg, Mode::Cooperative, 0).unwrap();
        t.train().unwrap();
        assert_eq!(t.replay().len(), 1);
        assert_eq!(t.update_rounds(), 1);
        assert_eq!(t.metrics().len(), 1);
        assert!(t.metrics()[0].critic_loss.is_some());
    }

    #[test]
    fn same_seed_same_curve() {
        for mode in [Mode::Cooperative, Mode::Independent] {
            let (_, a) = train::<f32>(env(3, 2), tiny(), mode, 11).unwrap();
            let (_, b) = train::<f32>(env(3, 2), tiny(), mode, 11).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn actor_input_is_local_observation() {
        let e = env(3, 2);
        let od = e.observation_dim();
        let t: Trainer<f64> = Trainer::new(e, tiny(), Mode::Cooperative, 0).unwrap();
        assert!(t.agents().iter().all(|a| a.actor.input_dim() == od));
        assert!(t
            .agents()
            .iter()
            .all(|a| a.critic.input_dim() == 3 * (od + 6)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (p, _) = train::<f64>(env(2, 1), tiny(), Mode::Independent, 5).unwrap();
        let back = PolicySet::<f64>::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        let e = env(2, 1);
        let s = e.reset(0);
        assert_eq!(back.act(&e, &s).unwrap(), p.act(&e, &s).unwrap());
        assert!(p.act(&env(3, 1), &env(3, 1).reset(0)).is_err());
    }
}
