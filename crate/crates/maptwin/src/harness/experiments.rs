//! Scheme rollouts, the uplink-ratio sweep, and the convergence study.

use serde::{Deserialize, Serialize};

use crate::agent::{
    act, amm_train, baseline_lff, baseline_pu, decode_action, greedy_one_slot, model_free_train,
    Actor, AmmConfig, TrainLog,
};
use crate::channel::stationary_high_fraction;
use crate::covis::Frame;
use crate::env::{random_feasible_action, Env, EnvConfig, MapAction};

use super::config::ExperimentConfig;
use super::metrics::MetricsRow;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Model-based actor-critic over blended experiences.
    Amm,
    /// The same trainer with the twin disabled.
    ModelFree,
    /// Latest keyframes first.
    Lff,
    /// Evenly spaced uploads, oldest-first eviction.
    Pu,
    /// Uniformly random feasible actions.
    Random,
    /// Greedy marginal-gain search against the current slot's keyframes.
    Greedy,
}

impl Scheme {
    pub const ALL: [Scheme; 6] =
        [Scheme::Amm, Scheme::ModelFree, Scheme::Lff, Scheme::Pu, Scheme::Random, Scheme::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Amm => "amm",
            Scheme::ModelFree => "model-free",
            Scheme::Lff => "lff",
            Scheme::Pu => "pu",
            Scheme::Random => "random",
            Scheme::Greedy => "greedy",
        }
    }

    pub fn is_trained(self) -> bool {
        matches!(self, Scheme::Amm | Scheme::ModelFree)
    }
}

impl std::str::FromStr for Scheme {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| HarnessError::UnknownScheme(s.to_string()))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-episode aggregate of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub mean_uncertainty: f64,
    pub mean_reward: f64,
    pub violations: u64,
}

/// Rolls a fixed policy for `episodes` fresh episodes of `env_cfg`,
/// optionally streaming one JSON line per slot into `log`.
fn rollout_policy_logged(
    env_cfg: &EnvConfig,
    episodes: usize,
    mut policy: impl FnMut(&Env) -> MapAction,
    mut log: Option<&mut String>,
) -> Result<Vec<EpisodeStats>, HarnessError> {
    let mut stats = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut env = Env::reset(env_cfg.clone())?;
        let mut reward_sum = 0.0;
        let mut slots = 0usize;
        while !env.is_done() {
            let action = policy(&env);
            let out = env.step(&action)?;
            if let Some(log) = log.as_deref_mut() {
                let record = env.rollout_record(&action, &out);
                log.push_str(&serde_json::to_string(&record)?);
                log.push('\n');
            }
            reward_sum += out.reward;
            slots += 1;
        }
        let mean_reward = reward_sum / slots.max(1) as f64;
        stats.push(EpisodeStats {
            episode,
            mean_uncertainty: -mean_reward,
            mean_reward,
            violations: env.violations(),
        });
    }
    Ok(stats)
}

fn rollout_policy(
    env_cfg: &EnvConfig,
    episodes: usize,
    policy: impl FnMut(&Env) -> MapAction,
) -> Result<Vec<EpisodeStats>, HarnessError> {
    rollout_policy_logged(env_cfg, episodes, policy, None)
}

/// The policy closure for a fixed (non-trained) scheme.
fn fixed_policy(
    scheme: Scheme,
    seed: u64,
) -> impl FnMut(&Env) -> MapAction {
    let mut rng = crate::seeded_rng(seed, 0xf1e1d);
    move |env: &Env| match scheme {
        Scheme::Lff => baseline_lff(env.state(), env.budget(), env.cfg().capacity),
        Scheme::Pu => baseline_pu(env.state(), env.budget(), env.cfg().capacity),
        Scheme::Random => random_feasible_action(
            env.state(),
            env.cfg().capacity,
            &env.cfg().channel,
            &mut rng,
            200,
        )
        .expect("a feasible action always exists"),
        Scheme::Greedy => {
            let keyframes: Vec<&Frame> = env.state().batch().keyframes().collect();
            greedy_one_slot(
                env.state(),
                &keyframes,
                env.budget(),
                env.cfg().capacity,
                env.params(),
                env.penalty(),
            )
        }
        Scheme::Amm | Scheme::ModelFree => unreachable!("trained schemes use actor_policy"),
    }
}

fn actor_policy(actor: Actor) -> impl FnMut(&Env) -> MapAction {
    let mut dummy = crate::seeded_rng(0, 0);
    move |env: &Env| {
        let enc = env.encode();
        let scores = act(&actor, &enc, 0.0, &mut dummy);
        decode_action(env.state(), &scores, env.budget(), env.cfg().capacity)
    }
}

/// Trains the scheme if it learns, then rolls it out for
/// `eval_episodes` and reports per-episode stats of the evaluation.
pub fn evaluate_scheme(
    scheme: Scheme,
    env_cfg: &EnvConfig,
    amm: &AmmConfig,
    eval_episodes: usize,
) -> Result<Vec<EpisodeStats>, HarnessError> {
    match scheme {
        Scheme::Amm => {
            let (actor, _) = amm_train(env_cfg, amm)?;
            rollout_policy(env_cfg, eval_episodes, actor_policy(actor))
        }
        Scheme::ModelFree => {
            let (actor, _) = model_free_train(env_cfg, amm)?;
            rollout_policy(env_cfg, eval_episodes, actor_policy(actor))
        }
        fixed => rollout_policy(env_cfg, eval_episodes, fixed_policy(fixed, amm.seed)),
    }
}

fn training_stats(log: &TrainLog) -> Vec<EpisodeStats> {
    log.episode_rewards
        .iter()
        .enumerate()
        .map(|(episode, &mean_reward)| EpisodeStats {
            episode,
            mean_uncertainty: -mean_reward,
            mean_reward,
            violations: 0,
        })
        .collect()
}

/// Bounded-worker deterministic map: results come back in input order.
pub fn parallel_map<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let workers = workers.max(1);
    let mut slots: Vec<Option<R>> = Vec::new();
    slots.resize_with(items.len(), || None);
    let queue: std::sync::Mutex<Vec<(usize, T)>> =
        std::sync::Mutex::new(items.into_iter().enumerate().rev().collect());
    let out = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some((idx, item)) = queue.lock().expect("queue lock").pop() else {
                    return;
                };
                let r = f(item);
                out.lock().expect("out lock")[idx] = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Per-seed JSON-lines logs emitted alongside metrics rows.
pub type SeedLogs = Vec<(u64, String)>;

/// Runs one scheme across all configured seeds. Trained schemes report
/// their per-episode training means; fixed schemes report rollout means
/// over the same number of episodes. Also returns one JSON-lines log per
/// seed: per-slot training records for trained schemes, per-slot rollout
/// records for fixed ones.
pub fn run_experiment_logged(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    workers: usize,
) -> Result<(Vec<MetricsRow>, SeedLogs), HarnessError> {
    cfg.validate()?;
    let ratio = stationary_high_fraction(&cfg.env.channel);
    let jobs: Vec<u64> = cfg.seeds.clone();
    type SeedResult = Result<(Vec<MetricsRow>, String), HarnessError>;
    let results = parallel_map(jobs.clone(), workers, |seed| -> SeedResult {
        let mut env_cfg = cfg.env.clone();
        env_cfg.seed = seed;
        let amm = AmmConfig { seed, ..cfg.amm.clone() };
        let mut log = String::new();
        let stats = match scheme {
            Scheme::Amm | Scheme::ModelFree => {
                let (_, train_log) = if scheme == Scheme::Amm {
                    amm_train(&env_cfg, &amm)?
                } else {
                    model_free_train(&env_cfg, &amm)?
                };
                for record in &train_log.records {
                    log.push_str(&serde_json::to_string(record)?);
                    log.push('\n');
                }
                training_stats(&train_log)
            }
            fixed => rollout_policy_logged(
                &env_cfg,
                amm.episodes,
                fixed_policy(fixed, seed),
                Some(&mut log),
            )?,
        };
        let rows = stats
            .into_iter()
            .map(|s| MetricsRow {
                scheme: scheme.name().to_string(),
                high_rate_ratio: ratio,
                seed,
                episode: s.episode,
                mean_uncertainty: s.mean_uncertainty,
                mean_reward: s.mean_reward,
                violations: s.violations,
            })
            .collect();
        Ok((rows, log))
    });
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for (seed, r) in jobs.into_iter().zip(results) {
        let (seed_rows, log) = r?;
        rows.extend(seed_rows);
        logs.push((seed, log));
    }
    Ok((rows, logs))
}

/// [`run_experiment_logged`] without the logs.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    workers: usize,
) -> Result<Vec<MetricsRow>, HarnessError> {
    Ok(run_experiment_logged(cfg, scheme, workers)?.0)
}

/// One (ratio, scheme) cell of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub ratio: f64,
    pub scheme: String,
    /// Mean over seeds of the per-seed evaluation uncertainty.
    pub mean_uncertainty: f64,
    pub per_seed: Vec<f64>,
}

/// Evaluates every scheme at every high-rate ratio: the channel is
/// reparameterized per ratio, trained schemes are retrained per
/// (ratio, seed), and each cell aggregates the evaluation rollouts.
pub fn sweep_high_rate_ratio(
    cfg: &ExperimentConfig,
    schemes: &[Scheme],
    workers: usize,
) -> Result<Vec<SweepCell>, HarnessError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &ratio in &cfg.sweep.ratios {
        for &scheme in schemes {
            for &seed in &cfg.seeds {
                jobs.push((ratio, scheme, seed));
            }
        }
    }
    let results = parallel_map(jobs, workers, |(ratio, scheme, seed)| -> Result<_, HarnessError> {
        let mut env_cfg = cfg.env.clone();
        env_cfg.seed = seed;
        env_cfg.channel = env_cfg.channel.with_high_rate_ratio(ratio, cfg.sweep.mixing)?;
        let amm = AmmConfig { seed, ..cfg.amm.clone() };
        let stats = evaluate_scheme(scheme, &env_cfg, &amm, cfg.eval_episodes)?;
        let mean =
            stats.iter().map(|s| s.mean_uncertainty).sum::<f64>() / stats.len().max(1) as f64;
        Ok((ratio, scheme, seed, mean))
    });

    let mut cells: Vec<SweepCell> = Vec::new();
    for r in results {
        let (ratio, scheme, _seed, mean) = r?;
        match cells
            .iter_mut()
            .find(|c| c.ratio == ratio && c.scheme == scheme.name())
        {
            Some(cell) => cell.per_seed.push(mean),
            None => cells.push(SweepCell {
                ratio,
                scheme: scheme.name().to_string(),
                mean_uncertainty: 0.0,
                per_seed: vec![mean],
            }),
        }
    }
    for c in &mut cells {
        c.mean_uncertainty = c.per_seed.iter().sum::<f64>() / c.per_seed.len() as f64;
    }
    Ok(cells)
}

/// Per-episode training reward curve for one (N, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub artificial_updates: usize,
    pub seed: u64,
    pub episode_rewards: Vec<f64>,
}

impl ConvergenceCurve {
    /// First episode whose 3-episode smoothed reward reaches 95% of the
    /// final plateau (the mean of the last 5 episodes), measured from the
    /// curve's own starting level.
    pub fn convergence_episode(&self) -> usize {
        let n = self.episode_rewards.len();
        if n == 0 {
            return 0;
        }
        let tail = 5.min(n);
        let plateau =
            self.episode_rewards[n - tail..].iter().sum::<f64>() / tail as f64;
        let start = self.episode_rewards[0];
        let threshold = start + 0.95 * (plateau - start);
        let reached = |e: usize| {
            let lo = e.saturating_sub(1);
            let hi = (e + 2).min(n);
            let window = &self.episode_rewards[lo..hi];
            let smoothed = window.iter().sum::<f64>() / window.len() as f64;
            if plateau >= start {
                smoothed >= threshold
            } else {
                smoothed <= threshold
            }
        };
        (0..n).find(|&e| reached(e)).unwrap_or(n - 1)
    }
}

/// Trains the model-based agent at each artificial-update count across
/// all seeds and reports the per-episode reward curves.
pub fn convergence_study(
    cfg: &ExperimentConfig,
    n_values: &[usize],
    workers: usize,
) -> Result<Vec<ConvergenceCurve>, HarnessError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &n in n_values {
        for &seed in &cfg.seeds {
            jobs.push((n, seed));
        }
    }
    let results = parallel_map(jobs, workers, |(n, seed)| -> Result<_, HarnessError> {
        let mut env_cfg = cfg.env.clone();
        env_cfg.seed = seed;
        let amm = AmmConfig { seed, artificial_updates: n, ..cfg.amm.clone() };
        let (_, log) = amm_train(&env_cfg, &amm)?;
        Ok(ConvergenceCurve { artificial_updates: n, seed, episode_rewards: log.eval_rewards })
    });
    results.into_iter().collect()
}

/// The twin-channel helper for tests: the empirical high-rate share of a
/// long simulated run.
pub fn empirical_high_fraction(model: &crate::channel::ChannelModel, slots: usize, seed: u64) -> f64 {
    let mut rng = crate::seeded_rng(seed, 0xc4a);
    let mut state = model.initial;
    let mut highs = 0u64;
    for _ in 0..slots {
        state = crate::channel::next_state(state, model, &mut rng);
        highs += u64::from(state.is_high());
    }
    highs as f64 / slots.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        cfg.env.capacity = 5;
        cfg.env.episode_len = 6;
        cfg.env.n_points = 80;
        cfg.env.slot_gen.frames_per_slot = 6;
        cfg.env.slot_gen.visibility.fov = 1.0;
        cfg.env.slot_gen.visibility.max_range = 7.0;
        cfg.env.channel.frame_bits = 8e6;
        cfg.amm.episodes = 2;
        cfg.amm.batch_size = 4;
        cfg.amm.artificial_per_slot = 6;
        cfg.amm.artificial_updates = 1;
        cfg.amm.predictor_recent = 8;
        cfg.seeds = vec![0, 1];
        cfg.eval_episodes = 1;
        cfg
    }

    #[test]
    fn run_experiment_cardinality_and_determinism() {
        let cfg = tiny_cfg();
        let rows = run_experiment(&cfg, Scheme::Lff, 2).unwrap();
        assert_eq!(rows.len(), 2 * cfg.amm.episodes);
        assert!(rows.iter().all(|r| r.violations == 0));
        assert!(rows.iter().all(|r| r.scheme == "lff"));

        let again = run_experiment(&cfg, Scheme::Lff, 1).unwrap();
        assert_eq!(super::super::metrics::metrics_csv(&rows), super::super::metrics::metrics_csv(&again));
    }

    #[test]
    fn trained_scheme_produces_training_rows() {
        let cfg = tiny_cfg();
        let rows = run_experiment(&cfg, Scheme::Amm, 2).unwrap();
        assert_eq!(rows.len(), 2 * cfg.amm.episodes);
        assert!(rows.iter().all(|r| r.mean_reward.is_finite()));
    }

    #[test]
    fn sweep_shapes_and_budget_monotonicity_for_pu() {
        let mut cfg = tiny_cfg();
        cfg.sweep.ratios = vec![0.2, 0.8];
        cfg.seeds = (0..16).collect();
        cfg.eval_episodes = 1;
        let cells = sweep_high_rate_ratio(&cfg, &[Scheme::Pu, Scheme::Lff], 2).unwrap();
        assert_eq!(cells.len(), 4);
        for c in &cells {
            assert_eq!(c.per_seed.len(), 16);
        }
        // More budget never hurts a fixed policy, in expectation.
        let pu_low = cells.iter().find(|c| c.scheme == "pu" && c.ratio == 0.2).unwrap();
        let pu_high = cells.iter().find(|c| c.scheme == "pu" && c.ratio == 0.8).unwrap();
        assert!(
            pu_high.mean_uncertainty <= pu_low.mean_uncertainty + 1e-9,
            "high-rate {} vs low-rate {}",
            pu_high.mean_uncertainty,
            pu_low.mean_uncertainty
        );
    }

    #[test]
    fn convergence_curves_have_configured_length() {
        let cfg = tiny_cfg();
        let curves = convergence_study(&cfg, &[0, 1], 2).unwrap();
        assert_eq!(curves.len(), 4);
        assert!(curves.iter().all(|c| c.episode_rewards.len() == cfg.amm.episodes));

        // The N = 0 curve equals the standalone model-free trainer's.
        let mut env_cfg = cfg.env.clone();
        env_cfg.seed = cfg.seeds[0];
        let amm = AmmConfig { seed: cfg.seeds[0], artificial_updates: 0, ..cfg.amm.clone() };
        let (_, log) = model_free_train(&env_cfg, &amm).unwrap();
        let n0 = curves
            .iter()
            .find(|c| c.artificial_updates == 0 && c.seed == cfg.seeds[0])
            .unwrap();
        assert_eq!(n0.episode_rewards, log.eval_rewards);
    }

    #[test]
    fn convergence_episode_detection() {
        let fast = ConvergenceCurve {
            artificial_updates: 5,
            seed: 0,
            episode_rewards: vec![0.0, 9.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0],
        };
        let slow = ConvergenceCurve {
            artificial_updates: 0,
            seed: 0,
            episode_rewards: vec![0.0, 2.0, 4.0, 6.0, 8.0, 9.0, 10.0, 10.0],
        };
        assert!(fast.convergence_episode() < slow.convergence_episode());
    }

    #[test]
    fn parallel_map_preserves_order() {
        let out = parallel_map((0..32).collect::<Vec<_>>(), 4, |x| x * 2);
        assert_eq!(out, (0..32).map(|x| x * 2).collect::<Vec<_>>());
    }
}
