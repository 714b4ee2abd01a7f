//! The digital twin: experience buffers, the learned visibility predictor,
//! and emulated map-management rollouts.
//!
//! The twin stores real transitions, trains a recurrent model that maps the
//! last `T` slots' visibility summaries to the next slot's per-point
//! visibility probabilities, and replays the exact environment update rule
//! against *predicted* frames to generate artificial experiences. With a
//! perfect predictor the emulated reward equals the real one, which the
//! tests pin down by injecting ground-truth visibility.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use thiserror::Error;

use crate::channel::{self, ChannelModel, ChannelState};
use crate::covis::{Frame, FrameId, MapPointId, UncertaintyParams};
use crate::env::{self, EnvState, MapAction, SlotRecord, Violation};
use crate::nn::{
    adam_update, AdamState, Activation, LayerSpec, NetSpec, ParamGrads, Params, Tape, Tensor,
};
use crate::scene::{select_keyframes, FrameBatch, SlotGenConfig};

/// Artificial frames get ids far above any real allocation so the two
/// spaces cannot collide inside a mixed buffer.
pub const ARTIFICIAL_ID_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ExperienceKind {
    Real,
    Artificial,
}

/// One transition, tagged by origin.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Experience {
    pub state: EnvState,
    pub action: MapAction,
    pub reward: f64,
    pub next_state: EnvState,
    pub kind: ExperienceKind,
    /// Reward of the do-nothing counterfactual (the pre-action map scored
    /// against the same next keyframes). Action-independent, so critics
    /// may subtract it from the reward as a variance baseline without
    /// changing the per-state action ordering.
    pub baseline: f64,
    /// The continuous score vector the policy actually emitted (encoding
    /// row order), when the action came from a score policy. Critics
    /// train on these; absent scores fall back to the +/-1 encoding of
    /// the discrete action.
    pub scores: Option<Vec<f64>>,
    /// Feature encodings are pure functions of the states and the config;
    /// updates sample experiences repeatedly, so both are computed once.
    #[serde(skip)]
    enc_state: std::sync::OnceLock<crate::env::EncodedState>,
    #[serde(skip)]
    enc_next: std::sync::OnceLock<crate::env::EncodedState>,
}

impl Experience {
    pub fn new(
        state: EnvState,
        action: MapAction,
        reward: f64,
        next_state: EnvState,
        kind: ExperienceKind,
    ) -> Self {
        Experience {
            state,
            action,
            reward,
            next_state,
            kind,
            baseline: 0.0,
            scores: None,
            enc_state: std::sync::OnceLock::new(),
            enc_next: std::sync::OnceLock::new(),
        }
    }

    pub fn with_baseline(mut self, baseline: f64) -> Self {
        self.baseline = baseline;
        self
    }

    pub fn with_scores(mut self, scores: Vec<f64>) -> Self {
        self.scores = Some(scores);
        self
    }

    pub fn encoded_state(&self, cfg: &crate::env::EnvConfig) -> &crate::env::EncodedState {
        self.enc_state.get_or_init(|| crate::env::encode_features(&self.state, cfg))
    }

    pub fn encoded_next(&self, cfg: &crate::env::EnvConfig) -> &crate::env::EncodedState {
        self.enc_next.get_or_init(|| crate::env::encode_features(&self.next_state, cfg))
    }
}

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("buffer holds {expected:?} experiences, rejected a {got:?} tuple")]
    WrongKind { expected: ExperienceKind, got: ExperienceKind },
    #[error("need {need} consecutive slot records, state carries {have}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("emulated action is infeasible: {0}")]
    Infeasible(#[from] Violation),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("snapshot: {0}")]
    Snapshot(#[source] serde_json::Error),
    #[error("snapshot i/o: {0}")]
    SnapshotIo(#[source] std::io::Error),
    #[error("unsupported snapshot version {0}")]
    SnapshotVersion(u32),
}

/// FIFO ring of experiences of a single kind.
#[derive(Debug)]
pub struct ReplayBuffer {
    kind: ExperienceKind,
    items: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(kind: ExperienceKind, capacity: usize) -> Self {
        ReplayBuffer { kind, items: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn kind(&self) -> ExperienceKind {
        self.kind
    }

    /// Appends, evicting the oldest entry at capacity. Tuples of the wrong
    /// kind are rejected.
    pub fn push(&mut self, e: Experience) -> Result<(), TwinError> {
        if e.kind != self.kind {
            return Err(TwinError::WrongKind { expected: self.kind, got: e.kind });
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
        Ok(())
    }

    pub fn get(&self, idx: usize) -> &Experience {
        &self.items[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// The most recent `n` experiences, oldest first.
    pub fn recent(&self, n: usize) -> impl Iterator<Item = &Experience> {
        let skip = self.items.len().saturating_sub(n);
        self.items.iter().skip(skip)
    }

    /// `n` uniform independent draws (with replacement).
    pub fn sample<'a>(&'a self, n: usize, rng: &mut impl Rng) -> Vec<&'a Experience> {
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }

    /// Writes a versioned snapshot for experiment resumption.
    pub fn save_snapshot(&self, path: impl AsRef<std::path::Path>) -> Result<(), TwinError> {
        let snapshot = BufferSnapshot {
            version: BUFFER_SNAPSHOT_VERSION,
            kind: self.kind,
            capacity: self.capacity,
            items: self.items.iter().cloned().collect(),
        };
        let text = serde_json::to_string(&snapshot).map_err(TwinError::Snapshot)?;
        std::fs::write(path, text).map_err(TwinError::SnapshotIo)?;
        Ok(())
    }

    /// Restores a snapshot written by [`Self::save_snapshot`].
    pub fn load_snapshot(path: impl AsRef<std::path::Path>) -> Result<ReplayBuffer, TwinError> {
        let text = std::fs::read_to_string(path).map_err(TwinError::SnapshotIo)?;
        let snapshot: BufferSnapshot =
            serde_json::from_str(&text).map_err(TwinError::Snapshot)?;
        if snapshot.version != BUFFER_SNAPSHOT_VERSION {
            return Err(TwinError::SnapshotVersion(snapshot.version));
        }
        let mut buffer = ReplayBuffer::new(snapshot.kind, snapshot.capacity);
        for e in snapshot.items {
            buffer.push(e)?;
        }
        Ok(buffer)
    }
}

const BUFFER_SNAPSHOT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct BufferSnapshot {
    version: u32,
    kind: ExperienceKind,
    capacity: usize,
    items: Vec<Experience>,
}

/// Stores a real transition; the twin's entry point for actual rollouts.
pub fn store_real(buffer: &mut ReplayBuffer, e: Experience) -> Result<(), TwinError> {
    if buffer.kind() != ExperienceKind::Real {
        return Err(TwinError::WrongKind { expected: buffer.kind(), got: ExperienceKind::Real });
    }
    buffer.push(e)
}

/// Recurrent next-slot visibility model.
///
/// Input per slot: the mean point-indicator vector over the slot's frames,
/// the keyframe count (scaled by frames-per-slot), and the channel level.
/// Output: a per-point visibility probability for the next slot, trained
/// against the indicator of the points actually seen.
#[derive(Debug, Clone)]
pub struct Predictor {
    spec: NetSpec,
    params: Params,
    adam: AdamState,
    n_points: usize,
    window: usize,
}

impl Predictor {
    pub fn new(n_points: usize, window: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let spec = NetSpec::new(vec![
            LayerSpec::Recurrent { input: n_points + 2, hidden },
            LayerSpec::Dense { input: hidden, output: n_points, activation: Activation::Sigmoid },
        ])
        .expect("static spec");
        let params = spec.init_params(rng);
        let adam = AdamState::new(&params);
        Predictor { spec, params, adam, n_points, window }
    }

    /// Zero-weight predictor: every output sits exactly on the 0.5
    /// sigmoid boundary, so the strict threshold yields empty sets.
    pub fn zeroed(n_points: usize, window: usize, hidden: usize) -> Self {
        let mut rng = crate::seeded_rng(0, 0);
        let mut p = Predictor::new(n_points, window, hidden, &mut rng);
        for t in p.params.tensors_mut() {
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
        p
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    fn slot_input(&self, record: &SlotRecord, frames_per_slot: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_points + 2];
        let frames = &record.batch.frames;
        if !frames.is_empty() {
            let unit = 1.0 / frames.len() as f64;
            for f in frames {
                for p in &f.points {
                    row[p.0 as usize] += unit;
                }
            }
        }
        row[self.n_points] =
            record.batch.keyframes().count() as f64 / frames_per_slot.max(1) as f64;
        row[self.n_points + 1] = f64::from(record.channel.is_high());
        row
    }

    fn sequence_input(
        &self,
        state: &EnvState,
        frames_per_slot: usize,
    ) -> Result<Tensor, TwinError> {
        if state.history.len() < self.window {
            return Err(TwinError::InsufficientHistory {
                have: state.history.len(),
                need: self.window,
            });
        }
        let records = state.history.iter().skip(state.history.len() - self.window);
        let mut values = Vec::with_capacity(self.window * (self.n_points + 2));
        for r in records {
            values.extend(self.slot_input(r, frames_per_slot));
        }
        Ok(Tensor::new(vec![self.window, self.n_points + 2], values)?)
    }

    /// Per-point visibility probabilities for the next slot.
    pub fn predict_probs(
        &self,
        state: &EnvState,
        frames_per_slot: usize,
    ) -> Result<Vec<f64>, TwinError> {
        let input = self.sequence_input(state, frames_per_slot)?;
        let (out, _, _, _) = self.spec.forward(&self.params, &input, None)?;
        Ok(out.values().to_vec())
    }

    /// The predicted slot-level point set: ids with probability strictly
    /// above 0.5.
    pub fn predict_slot_set(
        &self,
        state: &EnvState,
        frames_per_slot: usize,
    ) -> Result<BTreeSet<MapPointId>, TwinError> {
        Ok(self
            .predict_probs(state, frames_per_slot)?
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > 0.5)
            .map(|(i, _)| MapPointId(i as u32))
            .collect())
    }
}

/// Trains the predictor on pairs drawn from the most recent `recent_limit`
/// real experiences: inputs are each experience's state window, the target
/// is the indicator of points seen in its next state's slot. One full-batch
/// optimizer step per epoch; returns the per-epoch loss.
pub fn train_predictor(
    p: &mut Predictor,
    buffer: &ReplayBuffer,
    epochs: usize,
    lr: f64,
    recent_limit: usize,
    frames_per_slot: usize,
) -> Result<Vec<f64>, TwinError> {
    let mut pairs: Vec<(Tensor, Vec<f64>)> = Vec::new();
    for e in buffer.recent(recent_limit) {
        if e.state.history.len() < p.window {
            continue;
        }
        let input = p.sequence_input(&e.state, frames_per_slot)?;
        let mut target = vec![0.0; p.n_points];
        for f in &e.next_state.current().batch.frames {
            for pt in &f.points {
                target[pt.0 as usize] = 1.0;
            }
        }
        pairs.push((input, target));
    }
    if pairs.is_empty() {
        return Err(TwinError::InsufficientHistory { have: 0, need: p.window });
    }

    let scale = 1.0 / (pairs.len() * p.n_points) as f64;
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut total = ParamGrads::zeros_like(&p.params);
        let mut loss = 0.0;
        for (input, target) in &pairs {
            let mut tape = Tape::new();
            let input_id = tape.leaf(input.clone());
            let binding = p.spec.bind(&mut tape, &p.params);
            let out = p.spec.forward_bound(&mut tape, &binding, input_id, None)?;
            let target_id = tape.leaf(Tensor::row(target.clone()));
            let resid = tape.sub(out, target_id)?;
            let sq = tape.sum_squares(resid);
            loss += tape.value(sq).item();
            let grads = tape.backward(sq, Tensor::scalar(1.0))?;
            total.add_in_place(&ParamGrads::from_backward(&grads, &binding, &p.params));
        }
        total.scale_in_place(scale);
        trace.push(loss * scale);
        if lr > 0.0 {
            adam_update(&mut p.params, &total, &mut p.adam, lr, (0.9, 0.999), 1e-8);
        }
    }
    Ok(trace)
}

/// Where emulated batches come from: the learned predictor, or injected
/// ground truth for verification.
pub enum VisibilitySource<'a> {
    Predictor(&'a Predictor),
    /// The exact batch the real environment produced; makes emulation
    /// reproduce real rewards bit for bit.
    Oracle(&'a FrameBatch),
}

/// Static context shared by all emulation calls.
#[derive(Debug, Clone)]
pub struct EmulationContext {
    pub capacity: usize,
    pub model: ChannelModel,
    pub params: UncertaintyParams,
    pub penalty: f64,
    pub history_window: usize,
    pub slot_gen: SlotGenConfig,
}

/// Core emulated transition with the next batch and channel already
/// resolved. Mirrors the environment's update exactly: map update, reward
/// against the batch's keyframes, history roll.
pub fn emulate_step_with(
    state: &EnvState,
    action: &MapAction,
    next_batch: FrameBatch,
    next_channel: ChannelState,
    ctx: &EmulationContext,
) -> Result<Experience, TwinError> {
    env::feasible(state, ctx.capacity, &ctx.model, action)?;
    let g_next = env::apply_action(state, ctx.capacity, &ctx.model, action)?;
    let keyframes: Vec<&Frame> = next_batch.keyframes().collect();
    let reward = env::reward(&g_next, &keyframes, &ctx.params, ctx.penalty);
    let baseline = env::reward(state.graph(), &keyframes, &ctx.params, ctx.penalty);
    let next_state = state.advanced(
        SlotRecord { graph: g_next, batch: next_batch, channel: next_channel },
        ctx.history_window,
    );
    Ok(Experience::new(
        state.clone(),
        action.clone(),
        reward,
        next_state,
        ExperienceKind::Artificial,
    )
    .with_baseline(baseline))
}

/// Emulates one step: predicts (or receives) the next slot's frames,
/// samples the next channel state, and scores the action. Draw order:
/// channel transition, then per-frame point thinning.
pub fn emulate_step(
    state: &EnvState,
    action: &MapAction,
    source: &VisibilitySource,
    ctx: &EmulationContext,
    next_artificial_id: &mut u64,
    rng: &mut impl Rng,
) -> Result<Experience, TwinError> {
    let next_channel = channel::next_state(state.channel(), &ctx.model, rng);
    let next_batch = match source {
        VisibilitySource::Oracle(batch) => (*batch).clone(),
        VisibilitySource::Predictor(p) => {
            let slot_set = p.predict_slot_set(state, ctx.slot_gen.frames_per_slot)?;
            predicted_batch(&slot_set, state.slot + 1, ctx, next_artificial_id, rng)
        }
    };
    emulate_step_with(state, action, next_batch, next_channel, ctx)
}

/// Decodes a slot-level predicted point set into per-frame sets by
/// independent thinning at the detection probability, then tags keyframes
/// with the standard novelty rule.
fn predicted_batch(
    slot_set: &BTreeSet<MapPointId>,
    slot: usize,
    ctx: &EmulationContext,
    next_artificial_id: &mut u64,
    rng: &mut impl Rng,
) -> FrameBatch {
    let mut frames = Vec::with_capacity(ctx.slot_gen.frames_per_slot);
    for _ in 0..ctx.slot_gen.frames_per_slot {
        let points: BTreeSet<MapPointId> = slot_set
            .iter()
            .filter(|_| rng.gen::<f64>() < ctx.slot_gen.visibility.detect_prob)
            .copied()
            .collect();
        frames.push(Frame {
            frame_id: FrameId(ARTIFICIAL_ID_BASE + *next_artificial_id),
            slot,
            points,
            is_keyframe: false,
        });
        *next_artificial_id += 1;
    }
    for idx in select_keyframes(&frames, ctx.slot_gen.jaccard_threshold) {
        frames[idx].is_keyframe = true;
    }
    FrameBatch { slot, frames }
}

/// How many recent real experiences seed artificial rollouts.
pub const ARTIFICIAL_SEED_WINDOW: usize = 200;

/// Maximum feasibility resampling attempts per artificial experience.
pub const EMULATION_ATTEMPTS: usize = 100;

/// Generates up to `count` artificial experiences: each seeds from a
/// recent real state, draws a random feasible action, and emulates one
/// step. Infeasible draws are resampled; a seed that stays infeasible
/// after the attempt cap is skipped.
pub fn generate_artificial(
    artificial: &mut ReplayBuffer,
    real: &ReplayBuffer,
    predictor: &Predictor,
    ctx: &EmulationContext,
    count: usize,
    next_artificial_id: &mut u64,
    rng: &mut impl Rng,
) -> Result<usize, TwinError> {
    if real.is_empty() {
        return Ok(0);
    }
    let seeds: Vec<&Experience> = real.recent(ARTIFICIAL_SEED_WINDOW).collect();
    let mut produced = 0;
    for _ in 0..count {
        let seed = seeds[rng.gen_range(0..seeds.len())];
        if seed.state.history.len() < predictor.window() {
            continue;
        }
        let Some(action) = env::random_feasible_action(
            &seed.state,
            ctx.capacity,
            &ctx.model,
            rng,
            EMULATION_ATTEMPTS,
        ) else {
            continue;
        };
        let source = VisibilitySource::Predictor(predictor);
        let exp = emulate_step(&seed.state, &action, &source, ctx, next_artificial_id, rng)?;
        debug_assert!(exp.reward.is_finite());
        artificial.push(exp)?;
        produced += 1;
    }
    Ok(produced)
}


#[cfg(test)]
mod snapshot_tests {
    use super::*;
    use crate::env::Env;

    #[test]
    fn buffer_snapshot_round_trips() {
        let cfg = tests::cfg(77);
        let mut env = Env::reset(cfg).unwrap();
        let mut rng = crate::seeded_rng(77, 7);
        let mut buf = ReplayBuffer::new(ExperienceKind::Real, 100);
        for _ in 0..4 {
            let state = env.state().clone();
            let action = crate::env::random_feasible_action(
                &state,
                env.cfg().capacity,
                &env.cfg().channel,
                &mut rng,
                200,
            )
            .unwrap();
            let out = env.step(&action).unwrap();
            buf.push(
                Experience::new(state, action, out.reward, env.state().clone(), ExperienceKind::Real)
                    .with_baseline(out.baseline)
                    .with_scores(vec![0.25; 3]),
            )
            .unwrap();
        }
        let dir = std::env::temp_dir().join("maptwin-buffer-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("real.snapshot.json");
        buf.save_snapshot(&path).unwrap();
        let restored = ReplayBuffer::load_snapshot(&path).unwrap();
        assert_eq!(restored.len(), buf.len());
        assert_eq!(restored.kind(), ExperienceKind::Real);
        assert_eq!(restored.capacity(), 100);
        for (a, b) in restored.iter().zip(buf.iter()) {
            assert_eq!(a.reward, b.reward);
            assert_eq!(a.baseline, b.baseline);
            assert_eq!(a.scores, b.scores);
            assert_eq!(a.action, b.action);
            assert_eq!(a.state, b.state);
            assert_eq!(a.next_state.graph(), b.next_state.graph());
        }
    }
}
