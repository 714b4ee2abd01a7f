//! Training loop: model-based actor-critic over blended experiences.
//!
//! Per slot: act with decaying exploration noise, step the environment,
//! store the real transition, take one critic+actor update on a real
//! batch, refresh the twin (predictor update + artificial regeneration),
//! then take `N` more critic+actor updates on artificial batches.
//!
//! The model-free ablation runs the identical loop with the twin disabled.
//! All twin-side randomness draws from its own stream, so an `N = 0`
//! model-based run and a model-free run consume the action-noise,
//! sampling, and environment streams identically and produce bit-identical
//! logs.

use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig};
use crate::twin::{
    generate_artificial, store_real, train_predictor, EmulationContext, Experience,
    ExperienceKind, Predictor, ReplayBuffer, TwinError,
};

use super::nets::{act, actor_update, critic_update, decode_action, Actor, Critic, UpdateContext};
use super::AgentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmmConfig {
    /// Artificial updates per slot (N). Zero degenerates to model-free.
    pub artificial_updates: usize,
    /// Minibatch size |I|.
    pub batch_size: usize,
    pub episodes: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Initial exploration noise scale, decayed linearly...
    pub noise_sigma: f64,
    /// ...to this value...
    pub noise_sigma_final: f64,
    /// ...by this fraction of the run (late training explores at the
    /// final level only).
    pub noise_decay_fraction: f64,
    /// Soft target-network tracking rate.
    pub target_rate: f64,
    /// Graph-convolution widths of both networks.
    pub gcn_hidden: (usize, usize),
    /// Critic head width.
    pub head_hidden: usize,
    pub predictor_hidden: usize,
    /// Predictor optimizer steps per slot.
    pub predictor_epochs: usize,
    pub predictor_lr: f64,
    /// Recent real experiences the predictor trains on per slot.
    pub predictor_recent: usize,
    /// Artificial experiences generated per slot.
    pub artificial_per_slot: usize,
    pub real_buffer: usize,
    pub artificial_buffer: usize,
    /// Seed for parameter init, exploration noise, and batch sampling.
    pub seed: u64,
}

impl AmmConfig {
    pub fn desk(seed: u64) -> Self {
        AmmConfig {
            artificial_updates: 5,
            batch_size: 6,
            episodes: 30,
            actor_lr: 5e-3,
            critic_lr: 1e-2,
            noise_sigma: 0.2,
            noise_sigma_final: 0.0,
            noise_decay_fraction: 0.6,
            target_rate: 0.01,
            gcn_hidden: (16, 8),
            head_hidden: 16,
            predictor_hidden: 8,
            predictor_epochs: 1,
            predictor_lr: 1e-2,
            predictor_recent: 24,
            artificial_per_slot: 8,
            real_buffer: 2_000,
            artificial_buffer: 1_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.batch_size == 0 {
            return Err(AgentError::EmptyBatch);
        }
        Ok(())
    }
}

/// One log line per environment slot. `source` names the buffer behind
/// the slot's last network update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub episode: usize,
    pub slot: usize,
    pub reward: f64,
    pub critic_loss: Option<f64>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Mean training reward per episode (exploration noise included).
    pub episode_rewards: Vec<f64>,
    /// Mean reward of a noise-free rollout of the policy as it stood at
    /// the end of each episode.
    pub eval_rewards: Vec<f64>,
}

/// Mean reward of one noise-free episode played by the actor.
fn deterministic_episode_reward(env_cfg: &EnvConfig, actor: &Actor) -> Result<f64, AgentError> {
    let mut env = Env::reset(env_cfg.clone())?;
    let mut rng = crate::seeded_rng(0, 0); // sigma = 0 draws nothing
    let mut sum = 0.0;
    let mut slots = 0usize;
    while !env.is_done() {
        let enc = env.encode();
        let scores = act(actor, &enc, 0.0, &mut rng);
        let action = decode_action(env.state(), &scores, env.budget(), env.cfg().capacity);
        let out = env.step(&action)?;
        sum += out.reward;
        slots += 1;
    }
    Ok(sum / slots.max(1) as f64)
}

const INIT_STREAM: u64 = 0xa1;
const NOISE_STREAM: u64 = 0xa2;
const SAMPLE_STREAM: u64 = 0xa3;
const TWIN_STREAM: u64 = 0xa4;
const PREDICTOR_INIT_STREAM: u64 = 0xa5;

/// Model-based training (Algorithm AMM). Returns the trained actor —
/// the parameter snapshot from the best-scoring training episode — and
/// the per-slot log.
pub fn amm_train(env_cfg: &EnvConfig, cfg: &AmmConfig) -> Result<(Actor, TrainLog), AgentError> {
    train_loop(env_cfg, cfg, true)
}

/// The ablation: the same loop with the twin disabled entirely.
pub fn model_free_train(
    env_cfg: &EnvConfig,
    cfg: &AmmConfig,
) -> Result<(Actor, TrainLog), AgentError> {
    train_loop(env_cfg, cfg, false)
}

fn train_loop(
    env_cfg: &EnvConfig,
    cfg: &AmmConfig,
    use_twin: bool,
) -> Result<(Actor, TrainLog), AgentError> {
    cfg.validate()?;
    let mut init_rng = crate::seeded_rng(cfg.seed, INIT_STREAM);
    let mut noise_rng = crate::seeded_rng(cfg.seed, NOISE_STREAM);
    let mut sample_rng = crate::seeded_rng(cfg.seed, SAMPLE_STREAM);
    let mut twin_rng = crate::seeded_rng(cfg.seed, TWIN_STREAM);

    let mut actor = Actor::new(cfg.gcn_hidden, &mut init_rng);
    let mut critic = Critic::new(cfg.gcn_hidden, cfg.head_hidden, &mut init_rng);
    let mut real = ReplayBuffer::new(ExperienceKind::Real, cfg.real_buffer);
    let mut artificial = ReplayBuffer::new(ExperienceKind::Artificial, cfg.artificial_buffer);
    let mut predictor = if use_twin {
        let mut rng = crate::seeded_rng(cfg.seed, PREDICTOR_INIT_STREAM);
        Some(Predictor::new(
            env_cfg.n_points,
            env_cfg.history_window,
            cfg.predictor_hidden,
            &mut rng,
        ))
    } else {
        None
    };
    let mut next_artificial_id = 0u64;

    let total_slots = (cfg.episodes * env_cfg.episode_len).max(1);
    let mut slot_counter = 0usize;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, crate::nn::Params)> = None;

    for episode in 0..cfg.episodes {
        let mut env = Env::reset(env_cfg.clone())?;
        let ctx = EmulationContext {
            capacity: env_cfg.capacity,
            model: env_cfg.channel,
            params: *env.params(),
            penalty: env.penalty(),
            history_window: env_cfg.history_window,
            slot_gen: env_cfg.slot_gen,
        };
        let update_ctx = UpdateContext {
            env_cfg,
            gamma: env_cfg.discount,
            critic_lr: cfg.critic_lr,
            actor_lr: cfg.actor_lr,
            target_rate: cfg.target_rate,
            reward_scale: (env.penalty() / 10.0).max(1.0),
        };
        let mut reward_sum = 0.0;
        let mut slots_this_episode = 0usize;

        while !env.is_done() {
            let progress = slot_counter as f64 / (total_slots - 1).max(1) as f64;
            let frac = cfg.noise_decay_fraction.clamp(f64::MIN_POSITIVE, 1.0);
            let sigma = if progress >= frac {
                cfg.noise_sigma_final
            } else {
                cfg.noise_sigma_final.max(cfg.noise_sigma * (1.0 - progress / frac))
            };

            let enc = env.encode();
            let scores = act(&actor, &enc, sigma, &mut noise_rng);
            let action = decode_action(env.state(), &scores, env.budget(), env_cfg.capacity);
            let state_before = env.state().clone();
            let out = env.step(&action)?;
            let slot = state_before.slot;
            store_real(
                &mut real,
                Experience::new(
                    state_before,
                    action,
                    out.reward,
                    env.state().clone(),
                    ExperienceKind::Real,
                )
                .with_baseline(out.baseline)
                .with_scores(scores.flatten()),
            )
            .expect("real buffer accepts real tuples");

            let mut critic_loss = None;
            let mut source = "real";
            if real.len() >= cfg.batch_size {
                let batch = real.sample(cfg.batch_size, &mut sample_rng);
                critic_loss = Some(critic_update(&mut critic, &actor, &batch, &update_ctx)?);
                actor_update(&mut actor, &critic, &batch, &update_ctx)?;
            }

            if let Some(predictor) = predictor.as_mut() {
                match train_predictor(
                    predictor,
                    &real,
                    cfg.predictor_epochs,
                    cfg.predictor_lr,
                    cfg.predictor_recent,
                    env_cfg.frames_per_slot(),
                ) {
                    Ok(_) | Err(TwinError::InsufficientHistory { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
                generate_artificial(
                    &mut artificial,
                    &real,
                    predictor,
                    &ctx,
                    cfg.artificial_per_slot,
                    &mut next_artificial_id,
                    &mut twin_rng,
                )?;
                for _ in 0..cfg.artificial_updates {
                    if artificial.len() < cfg.batch_size {
                        break;
                    }
                    let batch = artificial.sample(cfg.batch_size, &mut twin_rng);
                    critic_loss = Some(critic_update(&mut critic, &actor, &batch, &update_ctx)?);
                    actor_update(&mut actor, &critic, &batch, &update_ctx)?;
                    source = "artificial";
                }
            }

            log.records.push(TrainRecord {
                episode,
                slot,
                reward: out.reward,
                critic_loss,
                source: source.to_string(),
            });
            reward_sum += out.reward;
            slots_this_episode += 1;
            slot_counter += 1;
        }
        let episode_mean = reward_sum / slots_this_episode.max(1) as f64;
        log.episode_rewards.push(episode_mean);

        // Noise-free probe of the policy as it now stands; the best
        // evaluated snapshot becomes the returned actor.
        let eval_mean = deterministic_episode_reward(env_cfg, &actor)?;
        log.eval_rewards.push(eval_mean);
        if best.as_ref().is_none_or(|(b, _)| eval_mean > *b) {
            best = Some((eval_mean, actor.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        actor.params = params;
    }
    Ok((actor, log))
}
