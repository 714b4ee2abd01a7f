//! Actor and critic networks plus score decoding.
//!
//! Both networks embed the union graph (stored frames + current
//! candidates) with graph convolutions. The actor emits one tanh score per
//! node. The critic consumes the node features with the score column
//! appended, mean-pools the embedding, concatenates the state globals and
//! pooled score statistics, and regresses the Q-value through a dense
//! head. A stored experience's discrete action enters the critic as its
//! +/-1 score encoding, which lives on the same (-1, 1) scale as actor
//! outputs.

use std::collections::BTreeSet;

use rand::Rng;

use crate::covis::FrameId;
use crate::env::{EncodedState, EnvState, MapAction, NODE_FEATURES};
use crate::nn::{
    adam_update, normalize_adjacency, Activation, AdamState, LayerSpec, NetSpec, ParamBinding,
    ParamGrads, Params, Tape, Tensor, VarId,
};
use crate::twin::Experience;

use super::{AgentError, ScoreAction};

/// Pooled score statistics fed to the critic head: mean and second
/// moment per half, plus the score-weighted feature means of each half,
/// which make selection-quality terms (for example "total overlap of the
/// uploaded frames") a linear readout.
const SCORE_STATS: usize = 4 + 2 * crate::env::NODE_FEATURES;
const GLOBALS: usize = 4;

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; the clamp keeps ln() finite.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn features_tensor(enc: &EncodedState) -> Tensor {
    let n = enc.n_stored + enc.n_candidates;
    Tensor::new(vec![n, NODE_FEATURES], enc.node_features.clone()).expect("encoded row-major")
}

fn adjacency_tensor(enc: &EncodedState) -> Tensor {
    let n = enc.n_stored + enc.n_candidates;
    let raw = Tensor::new(vec![n, n], enc.adjacency.clone()).expect("encoded square");
    normalize_adjacency(&raw).expect("square by construction")
}

/// Deterministic score-vector policy with a slowly-tracking target copy.
#[derive(Debug, Clone)]
pub struct Actor {
    spec: NetSpec,
    pub params: Params,
    pub target: Params,
    adam: AdamState,
}

impl Actor {
    pub fn new(gcn_hidden: (usize, usize), rng: &mut impl Rng) -> Self {
        let (g1, g2) = gcn_hidden;
        let spec = NetSpec::new(vec![
            LayerSpec::GraphConv { input: NODE_FEATURES, output: g1, activation: Activation::Tanh },
            LayerSpec::GraphConv { input: g1, output: g2, activation: Activation::Tanh },
            LayerSpec::Dense { input: g2, output: 1, activation: Activation::Tanh },
        ])
        .expect("static spec");
        let params = spec.init_params(rng);
        let target = params.clone();
        let adam = AdamState::new(&params);
        Actor { spec, params, target, adam }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    fn forward_scores(&self, params: &Params, enc: &EncodedState) -> Vec<f64> {
        let (out, _, _, _) = self
            .spec
            .forward(params, &features_tensor(enc), Some(&adjacency_tensor(enc)))
            .expect("encoded state always matches the actor spec");
        out.values().to_vec()
    }
}

/// Actor forward pass plus optional Gaussian exploration noise. Row order
/// follows the encoding: stored frames first (eviction scores), then
/// candidates (upload scores).
pub fn act(actor: &Actor, enc: &EncodedState, sigma: f64, rng: &mut impl Rng) -> ScoreAction {
    let mut scores = actor.forward_scores(&actor.params, enc);
    if sigma > 0.0 {
        for s in &mut scores {
            *s += sigma * gaussian(rng);
        }
    }
    let upload_scores = scores.split_off(enc.n_stored);
    ScoreAction { evict_scores: scores, upload_scores }
}

/// Turns scores into a feasible action.
///
/// Uploads: candidates in descending score order (ties: lower frame id),
/// taking each only if it shares points with the map or an already-taken
/// candidate, until the budget is spent. Evictions: lowest-scored stored
/// frames whose removal keeps the graph connected, until the
/// fixed-cardinality rule holds; if no stored frame can go, the
/// lowest-scored uploaded frame goes instead.
pub fn decode_action(
    state: &EnvState,
    sc: &ScoreAction,
    budget: usize,
    capacity: usize,
) -> MapAction {
    let record = state.current();
    let graph = &record.graph;
    let batch = &record.batch;
    debug_assert_eq!(sc.upload_scores.len(), batch.frames.len());
    debug_assert_eq!(sc.evict_scores.len(), graph.len());

    let mut candidate_order: Vec<usize> = (0..batch.frames.len()).collect();
    candidate_order.sort_by(|&a, &b| {
        sc.upload_scores[b]
            .partial_cmp(&sc.upload_scores[a])
            .expect("scores are finite")
            .then(batch.frames[a].frame_id.cmp(&batch.frames[b].frame_id))
    });

    let mut pool = graph.clone();
    let mut upload = BTreeSet::new();
    for idx in candidate_order {
        if upload.len() >= budget {
            break;
        }
        let frame = &batch.frames[idx];
        let connects = pool.frames().any(|f| crate::covis::edge_weight(f, frame) > 0);
        if !connects {
            continue;
        }
        pool = pool.add_frame(frame.clone()).expect("fresh ids");
        upload.insert(frame.frame_id);
    }

    // Eviction preference: stored frames by ascending score, then uploaded
    // frames by ascending upload score as a last resort.
    let stored_ids: Vec<FrameId> = graph.frame_ids().collect();
    let mut stored_order: Vec<usize> = (0..stored_ids.len()).collect();
    stored_order.sort_by(|&a, &b| {
        sc.evict_scores[a]
            .partial_cmp(&sc.evict_scores[b])
            .expect("scores are finite")
            .then(stored_ids[a].cmp(&stored_ids[b]))
    });
    let stored_pref: Vec<FrameId> = stored_order.into_iter().map(|i| stored_ids[i]).collect();

    let mut upload_pref: Vec<FrameId> = {
        let mut v: Vec<(f64, FrameId)> = batch
            .frames
            .iter()
            .enumerate()
            .filter(|(_, f)| upload.contains(&f.frame_id))
            .map(|(i, f)| (sc.upload_scores[i], f.frame_id))
            .collect();
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
        v.into_iter().map(|(_, id)| id).collect()
    };

    let target = capacity.min(pool.len());
    let mut evict = BTreeSet::new();
    while pool.len() > target {
        let pick = stored_pref
            .iter()
            .chain(upload_pref.iter())
            .copied()
            .find(|&id| pool.contains(id) && !evict.contains(&id) && !pool.is_cut_vertex(id));
        let Some(id) = pick else {
            // Connected graphs always keep at least two non-cut vertices,
            // so this cannot trigger; bail out rather than loop.
            break;
        };
        pool = pool.remove_frames(&[id].into()).expect("member");
        evict.insert(id);
    }
    upload_pref.retain(|id| !evict.contains(id));

    MapAction { upload, evict }
}

/// The discrete action as critic input: stored frames score -1 when
/// evicted and +1 when kept; candidates +1 when uploaded and -1 when not.
pub fn action_encoding(enc: &EncodedState, action: &MapAction) -> Vec<f64> {
    enc.ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            if i < enc.n_stored {
                if action.evict.contains(id) {
                    -1.0
                } else {
                    1.0
                }
            } else if action.upload.contains(id) {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Q-value network: graph embedding over features + score column,
/// mean-pooled, joined with globals and pooled score statistics, dense
/// head to a scalar. Carries target copies like the actor.
#[derive(Debug, Clone)]
pub struct Critic {
    embed: NetSpec,
    head: NetSpec,
    pub embed_params: Params,
    pub head_params: Params,
    pub embed_target: Params,
    pub head_target: Params,
    adam_embed: AdamState,
    adam_head: AdamState,
}

impl Critic {
    pub fn new(gcn_hidden: (usize, usize), head_hidden: usize, rng: &mut impl Rng) -> Self {
        let (g1, g2) = gcn_hidden;
        let embed = NetSpec::new(vec![
            LayerSpec::GraphConv {
                input: NODE_FEATURES + 1,
                output: g1,
                activation: Activation::Tanh,
            },
            LayerSpec::GraphConv { input: g1, output: g2, activation: Activation::Tanh },
        ])
        .expect("static spec");
        let head = NetSpec::new(vec![
            LayerSpec::Dense {
                input: g2 + GLOBALS + SCORE_STATS,
                output: head_hidden,
                activation: Activation::Tanh,
            },
            LayerSpec::Dense { input: head_hidden, output: 1, activation: Activation::Linear },
        ])
        .expect("static spec");
        let embed_params = embed.init_params(rng);
        let head_params = head.init_params(rng);
        Critic {
            adam_embed: AdamState::new(&embed_params),
            adam_head: AdamState::new(&head_params),
            embed_target: embed_params.clone(),
            head_target: head_params.clone(),
            embed,
            head,
            embed_params,
            head_params,
        }
    }

    /// Records the critic on `tape` with `scores` as a live tape node, so
    /// gradients flow back into whatever produced the scores.
    #[allow(clippy::too_many_arguments)]
    fn forward_on(
        &self,
        tape: &mut Tape,
        embed_binding: &ParamBinding,
        head_binding: &ParamBinding,
        features: VarId,
        adjacency: VarId,
        globals: VarId,
        scores: VarId,
        n_stored: usize,
        n_candidates: usize,
    ) -> Result<VarId, AgentError> {
        let with_scores = tape.concat_cols(features, scores)?;
        let emb = self.embed.forward_bound(tape, embed_binding, with_scores, Some(adjacency))?;
        let pooled = tape.mean_rows(emb);

        let ev = tape.slice_rows(scores, 0, n_stored)?;
        let ev_mean = tape.mean_rows(ev);
        let ev_sq = tape.mul(ev, ev)?;
        let ev_moment = tape.mean_rows(ev_sq);
        let up = tape.slice_rows(scores, n_stored, n_candidates)?;
        let up_mean = tape.mean_rows(up);
        let up_sq = tape.mul(up, up)?;
        let up_moment = tape.mean_rows(up_sq);

        let ev_feats = tape.slice_rows(features, 0, n_stored)?;
        let ev_weighted = tape.mul_col(ev_feats, ev)?;
        let ev_feat_mean = tape.mean_rows(ev_weighted);
        let up_feats = tape.slice_rows(features, n_stored, n_candidates)?;
        let up_weighted = tape.mul_col(up_feats, up)?;
        let up_feat_mean = tape.mean_rows(up_weighted);

        let mut joined = tape.concat_cols(pooled, globals)?;
        for stat in [up_mean, up_moment, ev_mean, ev_moment, up_feat_mean, ev_feat_mean] {
            joined = tape.concat_cols(joined, stat)?;
        }
        Ok(self.head.forward_bound(tape, head_binding, joined, None)?)
    }

    fn value_with(
        &self,
        embed_params: &Params,
        head_params: &Params,
        enc: &EncodedState,
        scores: &[f64],
    ) -> f64 {
        let mut tape = Tape::new();
        let features = tape.leaf(features_tensor(enc));
        let adjacency = tape.leaf(adjacency_tensor(enc));
        let globals = tape.leaf(Tensor::row(enc.globals.to_vec()));
        let score_leaf = tape.leaf(Tensor::column(scores.to_vec()));
        let eb = self.embed.bind(&mut tape, embed_params);
        let hb = self.head.bind(&mut tape, head_params);
        let q = self
            .forward_on(
                &mut tape,
                &eb,
                &hb,
                features,
                adjacency,
                globals,
                score_leaf,
                enc.n_stored,
                enc.n_candidates,
            )
            .expect("encoded state matches the critic spec");
        tape.value(q).item()
    }

    /// Q estimate of the target copies; used to build bootstrap targets.
    pub fn target_value(&self, enc: &EncodedState, scores: &[f64]) -> f64 {
        self.value_with(&self.embed_target, &self.head_target, enc, scores)
    }

    pub fn track_targets(&mut self, rate: f64) {
        self.embed_target.track(&self.embed_params, rate);
        self.head_target.track(&self.head_params, rate);
    }
}

/// Q estimate for a state/score pair.
pub fn critic_value(critic: &Critic, enc: &EncodedState, scores: &[f64]) -> f64 {
    critic.value_with(&critic.embed_params, &critic.head_params, enc, scores)
}

/// Q estimate together with its gradient with respect to the scores;
/// exposed for finite-difference verification.
pub fn critic_value_with_score_grad(
    critic: &Critic,
    enc: &EncodedState,
    scores: &[f64],
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let features = tape.leaf(features_tensor(enc));
    let adjacency = tape.leaf(adjacency_tensor(enc));
    let globals = tape.leaf(Tensor::row(enc.globals.to_vec()));
    let score_leaf = tape.leaf(Tensor::column(scores.to_vec()));
    let eb = critic.embed.bind(&mut tape, &critic.embed_params);
    let hb = critic.head.bind(&mut tape, &critic.head_params);
    let q = critic
        .forward_on(
            &mut tape,
            &eb,
            &hb,
            features,
            adjacency,
            globals,
            score_leaf,
            enc.n_stored,
            enc.n_candidates,
        )
        .expect("encoded state matches the critic spec");
    let value = tape.value(q).item();
    let grads = tape.backward(q, Tensor::scalar(1.0)).expect("seed matches");
    let g = grads
        .get(score_leaf)
        .map(|t| t.values().to_vec())
        .unwrap_or_else(|| vec![0.0; scores.len()]);
    (value, g)
}

/// Everything the updates need to know about the surrounding task.
pub struct UpdateContext<'a> {
    pub env_cfg: &'a crate::env::EnvConfig,
    pub gamma: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub target_rate: f64,
    /// Rewards are divided by this before entering TD targets, keeping the
    /// regression range compatible with the tanh feature scale. Positive;
    /// 1.0 disables normalization.
    pub reward_scale: f64,
}

/// One TD step on the critic: targets from the target networks and the
/// target actor's next-state scores, squared-error loss on the live
/// critic, then a soft target update. Returns the batch loss.
pub fn critic_update(
    critic: &mut Critic,
    actor: &Actor,
    batch: &[&Experience],
    ctx: &UpdateContext,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let mut grads_embed = ParamGrads::zeros_like(&critic.embed_params);
    let mut grads_head = ParamGrads::zeros_like(&critic.head_params);
    let mut loss_sum = 0.0;
    for e in batch {
        let enc_next = e.encoded_next(ctx.env_cfg);
        let next_scores = actor.forward_scores(&actor.target, enc_next);
        let target = (e.reward - e.baseline) / ctx.reward_scale
            + ctx.gamma * critic.target_value(enc_next, &next_scores);

        let enc = e.encoded_state(ctx.env_cfg);
        let action_scores = match &e.scores {
            Some(s) => s.clone(),
            None => action_encoding(enc, &e.action),
        };

        let mut tape = Tape::new();
        let features = tape.leaf(features_tensor(enc));
        let adjacency = tape.leaf(adjacency_tensor(enc));
        let globals = tape.leaf(Tensor::row(enc.globals.to_vec()));
        let score_leaf = tape.leaf(Tensor::column(action_scores));
        let eb = critic.embed.bind(&mut tape, &critic.embed_params);
        let hb = critic.head.bind(&mut tape, &critic.head_params);
        let q = critic.forward_on(
            &mut tape,
            &eb,
            &hb,
            features,
            adjacency,
            globals,
            score_leaf,
            enc.n_stored,
            enc.n_candidates,
        )?;
        let y = tape.leaf(Tensor::scalar(target));
        let resid = tape.sub(q, y)?;
        let sq = tape.sum_squares(resid);
        loss_sum += tape.value(sq).item();
        let back = tape.backward(sq, Tensor::scalar(1.0))?;
        grads_embed.add_in_place(&ParamGrads::from_backward(&back, &eb, &critic.embed_params));
        grads_head.add_in_place(&ParamGrads::from_backward(&back, &hb, &critic.head_params));
    }
    let scale = 1.0 / batch.len() as f64;
    grads_embed.scale_in_place(scale);
    grads_head.scale_in_place(scale);
    adam_update(
        &mut critic.embed_params,
        &grads_embed,
        &mut critic.adam_embed,
        ctx.critic_lr,
        (0.9, 0.999),
        1e-8,
    );
    adam_update(
        &mut critic.head_params,
        &grads_head,
        &mut critic.adam_head,
        ctx.critic_lr,
        (0.9, 0.999),
        1e-8,
    );
    critic.track_targets(ctx.target_rate);
    Ok(loss_sum * scale)
}

/// One deterministic-policy-gradient step: ascend the critic's value of
/// the actor's own scores, averaged over the batch's states, then a soft
/// target update.
pub fn actor_update(
    actor: &mut Actor,
    critic: &Critic,
    batch: &[&Experience],
    ctx: &UpdateContext,
) -> Result<(), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let mut grads = ParamGrads::zeros_like(&actor.params);
    for e in batch {
        let enc = e.encoded_state(ctx.env_cfg);
        let mut tape = Tape::new();
        let features = tape.leaf(features_tensor(enc));
        let adjacency = tape.leaf(adjacency_tensor(enc));
        let globals = tape.leaf(Tensor::row(enc.globals.to_vec()));
        let ab = actor.spec.bind(&mut tape, &actor.params);
        let scores = actor.spec.forward_bound(&mut tape, &ab, features, Some(adjacency))?;
        let eb = critic.embed.bind(&mut tape, &critic.embed_params);
        let hb = critic.head.bind(&mut tape, &critic.head_params);
        let q = critic.forward_on(
            &mut tape,
            &eb,
            &hb,
            features,
            adjacency,
            globals,
            scores,
            enc.n_stored,
            enc.n_candidates,
        )?;
        let objective = tape.scale(q, -1.0);
        let back = tape.backward(objective, Tensor::scalar(1.0))?;
        grads.add_in_place(&ParamGrads::from_backward(&back, &ab, &actor.params));
    }
    grads.scale_in_place(1.0 / batch.len() as f64);
    adam_update(&mut actor.params, &grads, &mut actor.adam, ctx.actor_lr, (0.9, 0.999), 1e-8);
    actor.target.track(&actor.params, ctx.target_rate);
    Ok(())
}

/// Composite gradient of Q(o, pi(o)) with respect to the actor parameters,
/// exposed for finite-difference verification.
pub fn actor_objective_and_grad(
    actor: &Actor,
    critic: &Critic,
    state: &EnvState,
    env_cfg: &crate::env::EnvConfig,
) -> Result<(f64, ParamGrads), AgentError> {
    let enc = crate::env::encode_features(state, env_cfg);
    let mut tape = Tape::new();
    let features = tape.leaf(features_tensor(&enc));
    let adjacency = tape.leaf(adjacency_tensor(&enc));
    let globals = tape.leaf(Tensor::row(enc.globals.to_vec()));
    let ab = actor.spec.bind(&mut tape, &actor.params);
    let scores = actor.spec.forward_bound(&mut tape, &ab, features, Some(adjacency))?;
    let eb = critic.embed.bind(&mut tape, &critic.embed_params);
    let hb = critic.head.bind(&mut tape, &critic.head_params);
    let q = critic.forward_on(
        &mut tape,
        &eb,
        &hb,
        features,
        adjacency,
        globals,
        scores,
        enc.n_stored,
        enc.n_candidates,
    )?;
    let value = tape.value(q).item();
    let back = tape.backward(q, Tensor::scalar(1.0))?;
    Ok((value, ParamGrads::from_backward(&back, &ab, &actor.params)))
}

/// Evaluates Q(o, pi(o)) without building gradients; finite-difference
/// probes use this.
pub fn actor_objective(
    actor: &Actor,
    params: &Params,
    critic: &Critic,
    state: &EnvState,
    env_cfg: &crate::env::EnvConfig,
) -> f64 {
    let enc = crate::env::encode_features(state, env_cfg);
    let scores = actor.forward_scores(params, &enc);
    critic_value(critic, &enc, &scores)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::test_support::{small_cfg, warmed_env};
    use crate::covis::Frame;
    use crate::channel::ChannelState;
    use crate::env::{encode_features, EnvState, SlotRecord};
    use crate::scene::FrameBatch;
    use std::collections::VecDeque;
    use std::sync::Arc;

    use crate::covis::CovisibilityGraph;

    fn state_of(graph: CovisibilityGraph, batch: FrameBatch) -> EnvState {
        let mut history = VecDeque::new();
        history.push_back(Arc::new(SlotRecord { graph, batch, channel: ChannelState::High }));
        EnvState { history, slot: 1 }
    }

    #[test]
    fn act_is_deterministic_without_noise_and_shapes_match() {
        let env = warmed_env(1, 3);
        let enc = env.encode();
        let mut rng = crate::seeded_rng(0, 0);
        let actor = Actor::new((8, 4), &mut rng);
        let a = act(&actor, &enc, 0.0, &mut rng);
        let b = act(&actor, &enc, 0.0, &mut rng);
        assert_eq!(a, b);
        assert_eq!(a.evict_scores.len(), enc.n_stored);
        assert_eq!(a.upload_scores.len(), enc.n_candidates);
        assert!(a.upload_scores.iter().all(|s| s.abs() < 1.0));

        let noisy = act(&actor, &enc, 0.1, &mut rng);
        assert_ne!(noisy, a);
    }

    #[test]
    fn act_is_permutation_equivariant_over_candidates() {
        // Two hand-built states whose candidate lists are permutations of
        // each other must score identically up to the same permutation.
        let g = CovisibilityGraph::from_edge_weights(3, &[(0, 1, 2), (1, 2, 1)]);
        let c1 = Frame::new(10, 1, [0, 1]).keyframe();
        let c2 = Frame::new(11, 1, [1, 2, 3]);
        let c3 = Frame::new(12, 1, [4]);
        let batch_a = FrameBatch { slot: 1, frames: vec![c1.clone(), c2.clone(), c3.clone()] };
        let batch_b = FrameBatch { slot: 1, frames: vec![c3, c1, c2] };
        let cfg = small_cfg(0);
        let enc_a = encode_features(&state_of(g.clone(), batch_a), &cfg);
        let enc_b = encode_features(&state_of(g, batch_b), &cfg);
        let mut rng = crate::seeded_rng(5, 0);
        let actor = Actor::new((8, 4), &mut rng);
        let sa = act(&actor, &enc_a, 0.0, &mut rng);
        let sb = act(&actor, &enc_b, 0.0, &mut rng);
        // batch_b = [c3, c1, c2] relative to batch_a = [c1, c2, c3].
        for (i_b, i_a) in [(0usize, 2usize), (1, 0), (2, 1)] {
            assert!((sb.upload_scores[i_b] - sa.upload_scores[i_a]).abs() < 1e-12);
        }
        assert_eq!(sa.evict_scores.len(), sb.evict_scores.len());
        for (a, b) in sa.evict_scores.iter().zip(&sb.evict_scores) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_tie_rule_and_budget() {
        let env = warmed_env(2, 3);
        let enc = env.encode();
        let flat = ScoreAction {
            upload_scores: vec![0.5; enc.n_candidates],
            evict_scores: vec![0.0; enc.n_stored],
        };
        let budget = env.budget().min(2);
        let action = decode_action(env.state(), &flat, budget, env.cfg().capacity);
        // Equal scores: lowest frame ids among connectable candidates win.
        let connectable: Vec<crate::covis::FrameId> = env
            .state()
            .batch()
            .frames
            .iter()
            .filter(|f| env.state().graph().frames().any(|g| crate::covis::edge_weight(g, f) > 0))
            .map(|f| f.frame_id)
            .collect();
        let expect: std::collections::BTreeSet<_> =
            connectable.iter().copied().take(budget).collect();
        assert_eq!(action.upload, expect);
        assert!(env.feasible(&action).is_ok());

        let none = decode_action(env.state(), &flat, 0, env.cfg().capacity);
        assert!(none.upload.is_empty());
    }

    #[test]
    fn decode_skips_cut_vertex_evictions() {
        // Stored path 0-1-2 at capacity 2 forces one eviction; scores make
        // the cut vertex (1) most evictable, so decode must skip it.
        let g = CovisibilityGraph::from_edge_weights(3, &[(0, 1, 1), (1, 2, 1)]);
        let state = state_of(g, FrameBatch { slot: 1, frames: vec![] });
        let sc = ScoreAction {
            upload_scores: vec![],
            evict_scores: vec![0.9, -1.0, 0.8], // stored ids 0, 1, 2
        };
        let action = decode_action(&state, &sc, 0, 2);
        assert!(action.upload.is_empty());
        // 1 is skipped; next-lowest is 2 (0.8 < 0.9).
        assert_eq!(action.evict, [crate::covis::FrameId(2)].into());
    }

    #[test]
    fn decoded_actions_always_feasible_under_random_scores() {
        let env = warmed_env(3, 4);
        let enc = env.encode();
        let mut rng = crate::seeded_rng(9, 9);
        let actor = Actor::new((8, 4), &mut rng);
        for _ in 0..50 {
            let sc = act(&actor, &enc, 0.5, &mut rng);
            let action = decode_action(env.state(), &sc, env.budget(), env.cfg().capacity);
            assert!(env.feasible(&action).is_ok(), "action {action:?}");
        }
    }

    #[test]
    fn critic_value_deterministic_finite_and_score_grad_matches_fd() {
        let env = warmed_env(4, 3);
        let enc = env.encode();
        let mut rng = crate::seeded_rng(11, 0);
        let critic = Critic::new((8, 4), 8, &mut rng);
        let n = enc.n_stored + enc.n_candidates;
        let scores: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin() * 0.8).collect();

        let q1 = critic_value(&critic, &enc, &scores);
        let q2 = critic_value(&critic, &enc, &scores);
        assert_eq!(q1, q2);
        assert!(q1.is_finite());

        let (q, grad) = critic_value_with_score_grad(&critic, &enc, &scores);
        assert_eq!(q, q1);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let mut up = scores.clone();
            up[k] += eps;
            let mut down = scores.clone();
            down[k] -= eps;
            let numeric =
                (critic_value(&critic, &enc, &up) - critic_value(&critic, &enc, &down)) / (2.0 * eps);
            let denom = grad[k].abs().max(numeric.abs());
            let err = if denom < 1e-7 {
                (grad[k] - numeric).abs()
            } else {
                (grad[k] - numeric).abs() / denom
            };
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "max rel err {worst}");
    }

    #[test]
    fn critic_update_gamma_zero_regresses_to_reward() {
        let env = warmed_env(5, 2);
        let cfg = small_cfg(5);
        let mut rng = crate::seeded_rng(12, 0);
        let actor = Actor::new((8, 4), &mut rng);
        let mut critic = Critic::new((8, 4), 8, &mut rng);

        let state = env.state().clone();
        let mut env2 = env;
        let action = crate::env::random_feasible_action(
            &state,
            cfg.capacity,
            &cfg.channel,
            &mut rng,
            200,
        )
        .unwrap();
        let out = env2.step(&action).unwrap();
        let exp = crate::twin::Experience::new(
            state,
            action,
            out.reward,
            env2.state().clone(),
            crate::twin::ExperienceKind::Real,
        );

        let ctx = UpdateContext {
            env_cfg: &cfg,
            gamma: 0.0,
            critic_lr: 0.02,
            actor_lr: 0.0,
            target_rate: 0.0,
            reward_scale: 1.0,
        };
        // gamma = 0: the first loss is exactly (r - Q)^2.
        let enc = crate::env::encode_features(&exp.state, &cfg);
        let q0 = critic_value(&critic, &enc, &action_encoding(&enc, &exp.action));
        let first_loss = critic_update(&mut critic, &actor, &[&exp], &ctx).unwrap();
        assert!((first_loss - (out.reward - q0).powi(2)).abs() < 1e-9);

        // Repeated regression on the fixed tuple converges toward r.
        let mut last_loss = first_loss;
        for _ in 0..400 {
            last_loss = critic_update(&mut critic, &actor, &[&exp], &ctx).unwrap();
        }
        assert!(last_loss < first_loss.max(1e-6) / 100.0, "{first_loss} -> {last_loss}");
        let q_end = critic_value(&critic, &enc, &action_encoding(&enc, &exp.action));
        assert!((q_end - out.reward).abs() < 0.3 * out.reward.abs().max(1.0));

        assert!(matches!(
            critic_update(&mut critic, &actor, &[], &ctx),
            Err(AgentError::EmptyBatch)
        ));
    }

    #[test]
    fn actor_composite_gradient_matches_fd_and_ascends() {
        let env = warmed_env(6, 3);
        let cfg = small_cfg(6);
        let mut rng = crate::seeded_rng(13, 0);
        let mut actor = Actor::new((6, 3), &mut rng);
        let critic = Critic::new((6, 3), 6, &mut rng);
        let state = env.state().clone();

        let (_, analytic) = actor_objective_and_grad(&actor, &critic, &state, &cfg).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = actor.params.clone();
        for t_idx in 0..probe.tensors().len() {
            for k in 0..probe.tensors()[t_idx].values().len() {
                let orig = probe.tensors()[t_idx].values()[k];
                probe.tensors_mut()[t_idx].values_mut()[k] = orig + eps;
                let up = actor_objective(&actor, &probe, &critic, &state, &cfg);
                probe.tensors_mut()[t_idx].values_mut()[k] = orig - eps;
                let down = actor_objective(&actor, &probe, &critic, &state, &cfg);
                probe.tensors_mut()[t_idx].values_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic.tensor(t_idx).values()[k];
                let denom = a.abs().max(numeric.abs());
                let err = if denom < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / denom };
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-3, "max rel err {worst}");

        // lr = 0 leaves parameters untouched.
        let frozen = UpdateContext {
            env_cfg: &cfg,
            gamma: 0.9,
            critic_lr: 0.0,
            actor_lr: 0.0,
            target_rate: 0.0,
            reward_scale: 1.0,
        };
        let before = actor.params.clone();
        let holder = crate::twin::Experience::new(
            state.clone(),
            crate::env::MapAction::default(),
            0.0,
            state.clone(),
            crate::twin::ExperienceKind::Real,
        );
        actor_update(&mut actor, &critic, &[&holder], &frozen).unwrap();
        assert_eq!(actor.params, before);

        // Ascent: Q(o, pi(o)) trends upward over updates on a fixed state.
        let ctx = UpdateContext {
            env_cfg: &cfg,
            gamma: 0.9,
            critic_lr: 0.0,
            actor_lr: 5e-3,
            target_rate: 0.0,
            reward_scale: 1.0,
        };
        let q_start = actor_objective(&actor, &actor.params, &critic, &state, &cfg);
        for _ in 0..50 {
            actor_update(&mut actor, &critic, &[&holder], &ctx).unwrap();
        }
        let q_end = actor_objective(&actor, &actor.params, &critic, &state, &cfg);
        assert!(q_end >= q_start - 1e-6, "{q_start} -> {q_end}");
    }

    #[test]
    fn action_encoding_marks_sets() {
        let env = warmed_env(7, 3);
        let enc = env.encode();
        let mut rng = crate::seeded_rng(14, 0);
        let action = crate::env::random_feasible_action(
            env.state(),
            env.cfg().capacity,
            &env.cfg().channel,
            &mut rng,
            200,
        )
        .unwrap();
        let encoded = action_encoding(&enc, &action);
        for (i, id) in enc.ids.iter().enumerate() {
            let expect = if i < enc.n_stored {
                if action.evict.contains(id) { -1.0 } else { 1.0 }
            } else if action.upload.contains(id) {
                1.0
            } else {
                -1.0
            };
            assert_eq!(encoded[i], expect);
        }
    }
}
