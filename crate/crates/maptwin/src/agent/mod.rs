//! Policies over the map-management action space.
//!
//! The learned agent is a deterministic-policy actor-critic: the actor
//! scores every stored frame and every candidate frame of the current slot
//! (graph convolutions over the union co-visibility graph), and
//! [`decode_action`] turns the score vector into a feasible upload/evict
//! pair. The critic estimates the discounted return of a (state, score)
//! pair; training blends real experience with the twin's artificial
//! experience, with the model-free ablation falling out as the twin-less
//! special case.
//!
//! The myopic baselines (latest-keyframes-first, periodic uploading,
//! random, greedy marginal gain) and the exhaustive one-slot search used
//! to judge them live here too.

mod baselines;
mod nets;
mod search;
mod train;

pub use baselines::{baseline_lff, baseline_pu, build_action};
pub use nets::{
    act, action_encoding, actor_objective, actor_objective_and_grad, actor_update, critic_update,
    critic_value, critic_value_with_score_grad, decode_action, Actor, Critic, UpdateContext,
};
pub use search::{bruteforce_one_slot, greedy_one_slot, BRUTE_FORCE_BATCH_CAP, BRUTE_FORCE_CAPACITY_CAP};
pub use train::{amm_train, model_free_train, AmmConfig, TrainLog, TrainRecord};

use thiserror::Error;

/// Continuous action: one score per stored frame (eviction preference,
/// low goes first) and one per candidate frame (upload preference, high
/// goes first). Scores live in (-1, 1) before exploration noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreAction {
    pub upload_scores: Vec<f64>,
    pub evict_scores: Vec<f64>,
}

impl ScoreAction {
    /// Scores in encoding row order: stored frames, then candidates.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.evict_scores.clone();
        v.extend_from_slice(&self.upload_scores);
        v
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Twin(#[from] crate::twin::TwinError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("instance too large for exhaustive search: {what} {got} > {cap}")]
    EnumerationCap { what: &'static str, got: usize, cap: usize },
    #[error("update called with an empty batch")]
    EmptyBatch,
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::channel::ChannelModel;
    use crate::env::{Env, EnvConfig};
    use crate::scene::{Aabb, SlotGenConfig, VisibilityModel, WalkParams};

    pub fn small_cfg(seed: u64) -> EnvConfig {
        EnvConfig {
            capacity: 5,
            history_window: 2,
            discount: 0.9,
            episode_len: 8,
            n_points: 80,
            bounds: Aabb::new([0.0, 0.0, 0.0], [10.0, 10.0, 3.0]).unwrap(),
            slot_gen: SlotGenConfig {
                frames_per_slot: 6,
                walk: WalkParams { step: 0.3, turn: 0.4 },
                visibility: VisibilityModel { fov: 1.0, max_range: 7.0, detect_prob: 0.9 },
                jaccard_threshold: 0.7,
            },
            channel: ChannelModel::new(20e6, 8e6, 0.2, 0.2, 8e6, 2.0).unwrap(),
            pi_scale: 1.0,
            seed,
        }
    }

    /// An env advanced a few slots by random feasible actions, so states
    /// carry history and a partially filled map.
    pub fn warmed_env(seed: u64, steps: usize) -> Env {
        let mut env = Env::reset(small_cfg(seed)).unwrap();
        let mut rng = crate::seeded_rng(seed, 0xbeef);
        for _ in 0..steps {
            let a = crate::env::random_feasible_action(
                env.state(),
                env.cfg().capacity,
                &env.cfg().channel,
                &mut rng,
                200,
            )
            .unwrap();
            env.step(&a).unwrap();
        }
        env
    }
}
