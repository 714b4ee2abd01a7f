//! The map-management decision process.
//!
//! Each slot the agent picks an action `(upload, evict)`: which of the
//! slot's captured frames to upload and which stored frames to drop. The
//! environment enforces the uplink budget, the storage capacity `D`, the
//! fixed-cardinality rule (once enough frames exist the map holds exactly
//! `D`), and connectivity of the co-visibility graph. The reward is the
//! negative mean pose-estimation uncertainty of the updated map measured
//! against the next slot's keyframes.
//!
//! States carry a sliding window of the last `T+1` slot records so learned
//! policies and the twin's predictor can condition on recent history.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelModel, ChannelState};
use crate::covis::{CovisibilityGraph, Frame, FrameId, UncertaintyParams};
use crate::scene::{self, Aabb, FrameBatch, Pose, Scene, SlotGenConfig};

/// One slot's decision: frames of the current batch to upload and frames
/// of the post-upload pool to evict.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MapAction {
    pub upload: BTreeSet<FrameId>,
    pub evict: BTreeSet<FrameId>,
}

/// Everything recorded about one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    /// Map at the beginning of the slot.
    pub graph: CovisibilityGraph,
    /// Frames captured during the slot.
    pub batch: FrameBatch,
    /// Uplink state during the slot.
    pub channel: ChannelState,
}

/// Sliding window of slot records; the newest entry is the current slot.
/// Records are shared so consecutive states cost one record, not a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub history: VecDeque<Arc<SlotRecord>>,
    pub slot: usize,
}

impl EnvState {
    pub fn current(&self) -> &SlotRecord {
        self.history.back().expect("history is never empty")
    }

    pub fn graph(&self) -> &CovisibilityGraph {
        &self.current().graph
    }

    pub fn batch(&self) -> &FrameBatch {
        &self.current().batch
    }

    pub fn channel(&self) -> ChannelState {
        self.current().channel
    }

    /// Appends a new slot record and drops anything older than `window + 1`
    /// entries.
    pub fn advanced(&self, record: SlotRecord, window: usize) -> EnvState {
        let mut history = self.history.clone();
        history.push_back(Arc::new(record));
        while history.len() > window + 1 {
            history.pop_front();
        }
        EnvState { history, slot: self.slot + 1 }
    }
}

/// First constraint an action violates, in check order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("upload {0:?} is not part of the current batch")]
    UploadNotInBatch(FrameId),
    #[error("upload of {got} frames exceeds the slot budget {budget}")]
    Budget { got: usize, budget: usize },
    #[error("eviction {0:?} is neither stored nor being uploaded")]
    EvictNotInPool(FrameId),
    #[error("resulting map holds {got} frames, the fixed-cardinality rule requires {want}")]
    Cardinality { got: usize, want: usize },
    #[error("resulting map is disconnected")]
    Disconnected,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("infeasible action: {0}")]
    Infeasible(#[from] Violation),
    #[error("episode is over after {0} steps")]
    EpisodeOver(usize),
    #[error("no connected bootstrap of >= 2 keyframes after {attempts} trajectory attempts")]
    BootstrapFailed { attempts: usize },
    #[error(transparent)]
    Scene(#[from] scene::SceneError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Covis(#[from] crate::covis::CovisError),
    #[error("config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Maximum stored frames D.
    pub capacity: usize,
    /// History window T: states carry the last T+1 slot records.
    pub history_window: usize,
    /// Discount factor, in (0, 1).
    pub discount: f64,
    /// Decision slots per episode.
    pub episode_len: usize,
    /// Map-point universe size.
    pub n_points: usize,
    pub bounds: Aabb,
    pub slot_gen: SlotGenConfig,
    pub channel: ChannelModel,
    /// Π = pi_scale * I.
    pub pi_scale: f64,
    pub seed: u64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.capacity < 2 {
            return Err(EnvError::BadConfig("capacity must be at least 2".into()));
        }
        if self.discount.is_nan() || self.discount <= 0.0 || self.discount >= 1.0 {
            return Err(EnvError::BadConfig("discount must lie in (0, 1)".into()));
        }
        if self.n_points == 0 {
            return Err(EnvError::BadConfig("n_points must be positive".into()));
        }
        if self.pi_scale.is_nan() || self.pi_scale <= 0.0 {
            return Err(EnvError::BadConfig("pi_scale must be positive".into()));
        }
        self.slot_gen.validate()?;
        self.channel.validate()?;
        Ok(())
    }

    pub fn frames_per_slot(&self) -> usize {
        self.slot_gen.frames_per_slot
    }
}

/// Checks the action against the current state, in order: uploads belong
/// to the batch, the budget, evictions belong to the pool, the resulting
/// fixed cardinality, and connectivity.
pub fn feasible(
    state: &EnvState,
    capacity: usize,
    model: &ChannelModel,
    action: &MapAction,
) -> Result<(), Violation> {
    let record = state.current();
    for &id in &action.upload {
        if record.batch.frame(id).is_none() {
            return Err(Violation::UploadNotInBatch(id));
        }
    }
    let budget = channel::budget(record.channel, model);
    if action.upload.len() > budget {
        return Err(Violation::Budget { got: action.upload.len(), budget });
    }
    for &id in &action.evict {
        if !record.graph.contains(id) && !action.upload.contains(&id) {
            return Err(Violation::EvictNotInPool(id));
        }
    }
    let pool = record.graph.len() + action.upload.len();
    let want = capacity.min(pool);
    let got = pool - action.evict.len();
    if got != want {
        return Err(Violation::Cardinality { got, want });
    }
    let next = apply_action_unchecked(state, action);
    if !next.is_connected() {
        return Err(Violation::Disconnected);
    }
    Ok(())
}

fn apply_action_unchecked(state: &EnvState, action: &MapAction) -> CovisibilityGraph {
    let record = state.current();
    let mut g = record.graph.clone();
    for &id in &action.upload {
        let frame = record.batch.frame(id).expect("checked by feasible");
        g = g.add_frame(frame.clone()).expect("fresh frame ids");
    }
    g.remove_frames(&action.evict).expect("evictions checked against the pool")
}

/// Applies the map update `D_{t+1} = (upload ∪ D_t) \ evict`. The action
/// must be feasible.
pub fn apply_action(
    state: &EnvState,
    capacity: usize,
    model: &ChannelModel,
    action: &MapAction,
) -> Result<CovisibilityGraph, Violation> {
    feasible(state, capacity, model, action)?;
    Ok(apply_action_unchecked(state, action))
}

/// Negative mean uncertainty of `g_next` extended by each keyframe of the
/// next slot. Unbounded (disconnected) terms are clamped to `penalty`; an
/// empty keyframe set is the fully-degenerate case and scores `-penalty`.
/// A keyframe already stored in the map leaves the union unchanged.
pub fn reward(
    g_next: &CovisibilityGraph,
    keyframes: &[&Frame],
    params: &UncertaintyParams,
    penalty: f64,
) -> f64 {
    if keyframes.is_empty() {
        return -penalty;
    }
    let mut acc = 0.0;
    for f in keyframes {
        let u = if g_next.contains(f.frame_id) {
            g_next.uncertainty(params)
        } else {
            let extended = g_next.add_frame((*f).clone()).expect("checked for membership");
            extended.uncertainty(params)
        };
        acc += u.min(penalty);
    }
    -(acc / keyframes.len() as f64)
}

/// Per-node and global feature encoding of a state, plus the union-graph
/// adjacency over stored nodes and the current batch's candidate frames.
///
/// Row order: stored frames in ascending id, then candidates in batch
/// order. Columns: weighted degree, plain degree, point count, slots since
/// capture, keyframe flag, candidate flag, then the four state globals
/// broadcast onto every row so node-wise policies can condition on the
/// channel and slot phase. All scaled to O(1) by fixed constants derived
/// from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub ids: Vec<FrameId>,
    pub n_stored: usize,
    pub n_candidates: usize,
    /// Row-major `(n_stored + n_candidates) x NODE_FEATURES`.
    pub node_features: Vec<f64>,
    /// Row-major raw union-graph weights, no self-loops.
    pub adjacency: Vec<f64>,
    /// Channel level, budget fraction, fill fraction, slot phase.
    pub globals: [f64; 4],
}

pub const NODE_FEATURES: usize = 10;

pub fn encode_features(state: &EnvState, cfg: &EnvConfig) -> EncodedState {
    let record = state.current();
    let graph = &record.graph;
    let stored: Vec<&Frame> = graph.frames().collect();
    let candidates: Vec<&Frame> = record.batch.frames.iter().collect();
    let n = stored.len() + candidates.len();

    let mut ids = Vec::with_capacity(n);
    let mut all: Vec<&Frame> = Vec::with_capacity(n);
    all.extend(stored.iter().copied());
    all.extend(candidates.iter().copied());
    for f in &all {
        ids.push(f.frame_id);
    }

    // Union-graph weights: stored-stored from the graph, the rest from
    // point-set intersections.
    let mut adjacency = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = if i < stored.len() && j < stored.len() {
                graph.edge(all[i].frame_id, all[j].frame_id) as f64
            } else {
                crate::covis::edge_weight(all[i], all[j]) as f64
            };
            adjacency[i * n + j] = w;
            adjacency[j * n + i] = w;
        }
    }

    let point_scale = (cfg.n_points as f64).max(1.0);
    // Fixed age scale: typical retention spans a handful of slots.
    let age_scale = 10.0;
    let budget = channel::budget(record.channel, &cfg.channel);
    let phase_scale = (cfg.episode_len as f64).max(1.0);
    let globals = [
        f64::from(record.channel.is_high()),
        budget as f64 / cfg.frames_per_slot() as f64,
        graph.len() as f64 / cfg.capacity as f64,
        state.slot as f64 / phase_scale,
    ];
    // Capture ranks of the current batch, by frame id (ids are assigned in
    // capture order), so within-slot recency is visible and independent of
    // list order.
    let mut candidate_ranks: BTreeMap<FrameId, usize> = BTreeMap::new();
    {
        let mut by_id: Vec<FrameId> = candidates.iter().map(|f| f.frame_id).collect();
        by_id.sort();
        for (rank, id) in by_id.into_iter().enumerate() {
            candidate_ranks.insert(id, rank);
        }
    }
    let mut node_features = Vec::with_capacity(n * NODE_FEATURES);
    for (i, f) in all.iter().enumerate() {
        let weighted_degree: f64 = (0..n).map(|j| adjacency[i * n + j]).sum();
        let plain_degree = (0..n).filter(|&j| adjacency[i * n + j] > 0.0).count();
        // Slots since capture. Candidates were captured during the current
        // slot, spread across it: the k-th of m captures is (m-1-k)/m slots
        // old at decision time, so recency within the slot stays visible.
        let age = if i < stored.len() {
            state.slot.saturating_sub(f.slot) as f64
        } else {
            let rank = candidate_ranks[&f.frame_id];
            let m = candidates.len().max(1);
            (m - 1 - rank) as f64 / m as f64
        };
        node_features.extend_from_slice(&[
            weighted_degree / point_scale,
            plain_degree as f64 / cfg.capacity as f64,
            f.points.len() as f64 / point_scale,
            age / age_scale,
            f64::from(f.is_keyframe),
            f64::from(i >= stored.len()),
        ]);
        node_features.extend_from_slice(&globals);
    }

    EncodedState {
        ids,
        n_stored: stored.len(),
        n_candidates: candidates.len(),
        node_features,
        adjacency,
        globals,
    }
}

/// One rollout log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub slot: usize,
    pub channel: ChannelState,
    pub budget: usize,
    pub upload: usize,
    pub evict: usize,
    pub map_size: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Reward the unchanged map would have earned against the same next
    /// keyframes; an action-independent baseline for learners.
    pub baseline: f64,
    pub done: bool,
}

/// The live environment: owns the scene, the trajectory and channel
/// generators, and the current state.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    scene: Scene,
    state: EnvState,
    pose: Pose,
    next_frame_id: u64,
    traj_rng: rand_chacha::ChaCha8Rng,
    chan_rng: rand_chacha::ChaCha8Rng,
    params: UncertaintyParams,
    penalty: f64,
    steps_taken: usize,
    violations: u64,
}

const TRAJ_STREAM: u64 = 0x7247;
const CHAN_STREAM: u64 = 0xc4a7;
const BOOTSTRAP_ATTEMPTS: usize = 10;

/// Floor for the uncertainty clamp so a near-zero bootstrap uncertainty
/// cannot collapse the penalty scale.
const MIN_PENALTY: f64 = 100.0;

impl Env {
    /// Builds the scene, bootstraps the map from the first slot's
    /// keyframes (skipping frames that share no points, so the map stays
    /// connected), and advances to slot 1. Trajectories that cannot seed a
    /// connected 2-frame map are re-rolled up to 10 times.
    pub fn reset(cfg: EnvConfig) -> Result<Env, EnvError> {
        cfg.validate()?;
        let scene = scene::generate_scene(cfg.n_points, cfg.bounds, cfg.seed)?;
        let params = UncertaintyParams::new(cfg.pi_scale)?;

        for attempt in 0..BOOTSTRAP_ATTEMPTS {
            let mut traj_rng = crate::seeded_rng(cfg.seed.wrapping_add(attempt as u64), TRAJ_STREAM);
            let mut next_frame_id = 0u64;
            let start = Pose {
                position: [
                    cfg.bounds.min[0] + traj_rng.gen::<f64>() * (cfg.bounds.max[0] - cfg.bounds.min[0]),
                    cfg.bounds.min[1] + traj_rng.gen::<f64>() * (cfg.bounds.max[1] - cfg.bounds.min[1]),
                    cfg.bounds.min[2] + traj_rng.gen::<f64>() * (cfg.bounds.max[2] - cfg.bounds.min[2]),
                ],
                yaw: (2.0 * traj_rng.gen::<f64>() - 1.0) * std::f64::consts::PI,
            };
            let (bootstrap_batch, pose) =
                scene::make_slot_frames(&scene, &start, &cfg.slot_gen, 0, &mut next_frame_id, &mut traj_rng);

            let mut graph = CovisibilityGraph::new();
            for kf in bootstrap_batch.keyframes() {
                if graph.len() >= cfg.capacity {
                    break;
                }
                if kf.points.is_empty() {
                    continue;
                }
                let connects = graph.is_empty()
                    || graph.frames().any(|f| crate::covis::edge_weight(f, kf) > 0);
                if connects {
                    graph = graph.add_frame(kf.clone())?;
                }
            }
            if graph.len() < 2 {
                continue;
            }

            let u_typical = graph.uncertainty(&params);
            debug_assert!(u_typical.is_finite(), "bootstrap map is connected");
            let penalty = (10.0 * u_typical.abs()).max(MIN_PENALTY);

            let mut chan_rng = crate::seeded_rng(cfg.seed, CHAN_STREAM);
            let channel = crate::channel::next_state(cfg.channel.initial, &cfg.channel, &mut chan_rng);
            let mut pose = pose;
            let (batch, end_pose) =
                scene::make_slot_frames(&scene, &pose, &cfg.slot_gen, 1, &mut next_frame_id, &mut traj_rng);
            pose = end_pose;

            let mut history = VecDeque::new();
            history.push_back(Arc::new(SlotRecord { graph, batch, channel }));
            return Ok(Env {
                cfg,
                scene,
                state: EnvState { history, slot: 1 },
                pose,
                next_frame_id,
                traj_rng,
                chan_rng,
                params,
                penalty,
                steps_taken: 0,
                violations: 0,
            });
        }
        Err(EnvError::BootstrapFailed { attempts: BOOTSTRAP_ATTEMPTS })
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn params(&self) -> &UncertaintyParams {
        &self.params
    }

    /// The uncertainty clamp calibrated at reset.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn budget(&self) -> usize {
        channel::budget(self.state.channel(), &self.cfg.channel)
    }

    pub fn is_done(&self) -> bool {
        self.steps_taken >= self.cfg.episode_len
    }

    /// Post-condition violations observed on applied actions. Stays zero
    /// unless the feasibility gate and the update disagree, which would be
    /// a bug.
    pub fn violations(&self) -> u64 {
        self.violations
    }

    pub fn feasible(&self, action: &MapAction) -> Result<(), Violation> {
        feasible(&self.state, self.cfg.capacity, &self.cfg.channel, action)
    }

    pub fn encode(&self) -> EncodedState {
        encode_features(&self.state, &self.cfg)
    }

    /// Applies the action, advances the trajectory and the channel by one
    /// slot, and scores the updated map against the new slot's keyframes.
    pub fn step(&mut self, action: &MapAction) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeOver(self.steps_taken));
        }
        self.feasible(action)?;
        let g_next = apply_action_unchecked(&self.state, action);

        // Assertion layer: the applied update must satisfy the cardinality
        // rule and stay connected.
        let pool = self.state.graph().len() + action.upload.len();
        let want = self.cfg.capacity.min(pool);
        if g_next.len() != want || !g_next.is_connected() {
            self.violations += 1;
            return Err(EnvError::Infeasible(Violation::Cardinality {
                got: g_next.len(),
                want,
            }));
        }

        let slot = self.state.slot + 1;
        let (batch, end_pose) = scene::make_slot_frames(
            &self.scene,
            &self.pose,
            &self.cfg.slot_gen,
            slot,
            &mut self.next_frame_id,
            &mut self.traj_rng,
        );
        self.pose = end_pose;
        let channel = channel::next_state(self.state.channel(), &self.cfg.channel, &mut self.chan_rng);

        let keyframes: Vec<&Frame> = batch.keyframes().collect();
        let r = reward(&g_next, &keyframes, &self.params, self.penalty);
        let baseline = reward(self.state.graph(), &keyframes, &self.params, self.penalty);

        self.state = self.state.advanced(
            SlotRecord { graph: g_next, batch, channel },
            self.cfg.history_window,
        );
        self.steps_taken += 1;
        Ok(StepOutcome { reward: r, baseline, done: self.is_done() })
    }

    /// Log line for the action that produced `outcome` from the previous
    /// state.
    pub fn rollout_record(&self, action: &MapAction, outcome: &StepOutcome) -> RolloutRecord {
        RolloutRecord {
            slot: self.state.slot,
            channel: self.state.channel(),
            budget: self.budget(),
            upload: action.upload.len(),
            evict: action.evict.len(),
            map_size: self.state.graph().len(),
            reward: outcome.reward,
        }
    }
}

/// Draws a uniformly random feasible action: an upload count in
/// `0..=budget`, that many distinct batch frames, then uniformly chosen
/// safe evictions until the cardinality rule holds. Returns `None` when
/// `max_attempts` draws in a row stay infeasible.
pub fn random_feasible_action(
    state: &EnvState,
    capacity: usize,
    model: &ChannelModel,
    rng: &mut impl Rng,
    max_attempts: usize,
) -> Option<MapAction> {
    let record = state.current();
    let budget = channel::budget(record.channel, model);
    let batch_ids: Vec<FrameId> = record.batch.frames.iter().map(|f| f.frame_id).collect();

    for _ in 0..max_attempts {
        let k = rng.gen_range(0..=budget.min(batch_ids.len()));
        let mut pool_ids = batch_ids.clone();
        // Partial Fisher-Yates: the first k entries become the upload set.
        for i in 0..k {
            let j = rng.gen_range(i..pool_ids.len());
            pool_ids.swap(i, j);
        }
        let upload: BTreeSet<FrameId> = pool_ids[..k].iter().copied().collect();

        let mut g = record.graph.clone();
        let mut ok = true;
        for &id in &upload {
            let frame = record.batch.frame(id).expect("id from batch");
            match g.add_frame(frame.clone()) {
                Ok(next) => g = next,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }

        let mut evict = BTreeSet::new();
        let target = capacity.min(g.len());
        while g.len() > target {
            let removable: Vec<FrameId> =
                g.frame_ids().filter(|&id| !g.is_cut_vertex(id)).collect();
            if removable.is_empty() {
                ok = false;
                break;
            }
            let pick = removable[rng.gen_range(0..removable.len())];
            g = g.remove_frames(&[pick].into()).expect("member");
            evict.insert(pick);
        }
        if !ok {
            continue;
        }

        let action = MapAction { upload, evict };
        if feasible(state, capacity, model, &action).is_ok() {
            return Some(action);
        }
    }
    None
}
