//! Runtime verification suites.
//!
//! Each check pits an implementation path against an independent route:
//! the Laplacian log-determinant against explicit spanning-tree
//! enumeration, the factored uncertainty against the direct Kronecker
//! product, tape gradients against finite differences, the greedy search
//! against exhaustive enumeration, simulated channel statistics against
//! the balance equation, and emulated rewards against real ones.

use std::fmt::Write as _;

use rand::Rng;

use crate::agent::{
    actor_objective, actor_objective_and_grad, bruteforce_one_slot, greedy_one_slot, Actor, Critic,
};
use crate::channel::{stationary_high_fraction, ChannelModel};
use crate::covis::{log_det_spd, CovisibilityGraph, Frame, LogDet, MapPointId, UncertaintyParams};
use crate::env::{random_feasible_action, Env, EnvConfig};
use crate::nn::{grad_check, normalize_adjacency, Activation, LayerSpec, NetSpec, Tensor};
use crate::twin::emulate_step_with;

#[derive(Debug, Clone)]
pub struct OracleSection {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub sections: Vec<OracleSection>,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.sections.iter().all(|s| s.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            writeln!(out, "[{}] {}: {}", if s.pass { "PASS" } else { "FAIL" }, s.name, s.detail)
                .expect("write to string");
        }
        out
    }
}

/// Sizes of the oracle suites; defaults match the verification protocol.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub matrix_tree_graphs: usize,
    pub monotonicity_graphs: usize,
    pub kronecker_graphs: usize,
    pub gradient_instances: usize,
    pub search_instances: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            matrix_tree_graphs: 500,
            monotonicity_graphs: 1000,
            kronecker_graphs: 100,
            gradient_instances: 10,
            search_instances: 100,
            seed: 0,
        }
    }
}

/// Random connected co-visibility graph: a spanning tree over `2..=max_n`
/// nodes plus extra edges, integer weights in `1..=w_max`, realized
/// through actual shared map points.
pub fn random_connected_graph(
    rng: &mut impl Rng,
    max_n: usize,
    w_max: usize,
) -> CovisibilityGraph {
    let n = rng.gen_range(2..=max_n);
    let mut edges = Vec::new();
    for child in 1..n {
        let parent = rng.gen_range(0..child);
        edges.push((parent, child, rng.gen_range(1..=w_max)));
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if edges.iter().any(|&(x, y, _)| (x, y) == (a, b)) {
                continue;
            }
            if rng.gen::<f64>() < 0.3 {
                edges.push((a, b, rng.gen_range(1..=w_max)));
            }
        }
    }
    CovisibilityGraph::from_edge_weights(n, &edges)
}

/// Matrix-tree equivalence: `exp(logdet(reduced Laplacian))` equals the
/// enumerated weighted spanning-tree sum for every anchor.
pub fn matrix_tree_check(graphs: usize, seed: u64) -> OracleSection {
    let mut rng = crate::seeded_rng(seed, 0x311);
    let mut worst: f64 = 0.0;
    for _ in 0..graphs {
        let g = random_connected_graph(&mut rng, 6, 9);
        let trees = g.spanning_tree_weight().expect("within cap");
        for anchor in g.frame_ids().collect::<Vec<_>>() {
            let lap = g.reduced_laplacian(anchor).expect("connected");
            let det = match log_det_spd(&lap).expect("symmetric") {
                LogDet::Value(v) => v.exp(),
                LogDet::NotPositiveDefinite => 0.0,
            };
            worst = worst.max((det - trees).abs() / trees.max(1.0));
        }
    }
    OracleSection {
        name: "matrix-tree",
        pass: worst < 1e-9,
        detail: format!("{graphs} graphs, max rel err {worst:.3e}"),
    }
}

/// Monotonicity: adding a node of weighted degree >= 2, or any positive
/// edge, strictly lowers the uncertainty.
pub fn monotonicity_check(graphs: usize, seed: u64) -> OracleSection {
    let mut rng = crate::seeded_rng(seed, 0x1e1);
    let params = UncertaintyParams::default();
    let mut counterexamples = 0usize;
    for _ in 0..graphs {
        let g = random_connected_graph(&mut rng, 6, 9);
        let before = g.uncertainty(&params);

        // Node addition: fresh points shared with two existing frames.
        let ids: Vec<_> = g.frame_ids().collect();
        let (a, b) = (ids[0], ids[rng.gen_range(1..ids.len())]);
        let w = rng.gen_range(1..=9u32);
        let base = 5_000_000u32;
        let mut fa = g.frame(a).expect("member").clone();
        let mut fb = g.frame(b).expect("member").clone();
        let mut new_points = std::collections::BTreeSet::new();
        for i in 0..w {
            fa.points.insert(MapPointId(base + i));
            new_points.insert(MapPointId(base + i));
        }
        fb.points.insert(MapPointId(base + w));
        new_points.insert(MapPointId(base + w));
        let mut remove = std::collections::BTreeSet::new();
        remove.insert(a);
        remove.insert(b);
        let grown = g
            .remove_frames(&remove)
            .expect("members")
            .add_frame(fa.clone())
            .expect("fresh")
            .add_frame(fb.clone())
            .expect("fresh")
            .add_frame(Frame {
                frame_id: crate::covis::FrameId(990_000),
                slot: 0,
                points: new_points,
                is_keyframe: false,
            })
            .expect("fresh");
        let strictly_lower = grown.uncertainty(&params) < before - 1e-12;
        counterexamples += usize::from(!strictly_lower);

        // Edge addition between two existing frames.
        let mut ea = g.frame(a).expect("member").clone();
        let mut eb = g.frame(b).expect("member").clone();
        for i in 0..rng.gen_range(1..=9u32) {
            ea.points.insert(MapPointId(base + 100 + i));
            eb.points.insert(MapPointId(base + 100 + i));
        }
        let denser = g
            .remove_frames(&remove)
            .expect("members")
            .add_frame(ea)
            .expect("fresh")
            .add_frame(eb)
            .expect("fresh");
        let strictly_lower = denser.uncertainty(&params) < before - 1e-12;
        counterexamples += usize::from(!strictly_lower);
    }
    OracleSection {
        name: "monotonicity",
        pass: counterexamples == 0,
        detail: format!("{graphs} graphs, {counterexamples} counterexamples"),
    }
}

/// The factored uncertainty equals the direct log-determinant of the full
/// Kronecker product, for several information-block scales.
pub fn kronecker_check(graphs: usize, seed: u64) -> OracleSection {
    let mut rng = crate::seeded_rng(seed, 0x2b0);
    let mut worst: f64 = 0.0;
    for _ in 0..graphs {
        let g = random_connected_graph(&mut rng, 6, 9);
        for kappa in [0.5, 1.0, 2.0] {
            let params = UncertaintyParams::new(kappa).expect("positive");
            let direct = g.uncertainty_kronecker_direct(&params);
            let factored = g.uncertainty(&params);
            worst = worst.max((direct - factored).abs());
        }
    }
    OracleSection {
        name: "kronecker-expansion",
        pass: worst < 1e-8,
        detail: format!("{graphs} graphs x 3 scales, max abs err {worst:.3e}"),
    }
}

fn desk_env(seed: u64) -> EnvConfig {
    EnvConfig {
        capacity: 5,
        history_window: 2,
        discount: 0.9,
        episode_len: 8,
        n_points: 80,
        bounds: crate::scene::Aabb::new([0.0, 0.0, 0.0], [10.0, 10.0, 3.0]).expect("static"),
        slot_gen: crate::scene::SlotGenConfig {
            frames_per_slot: 6,
            walk: crate::scene::WalkParams { step: 0.3, turn: 0.4 },
            visibility: crate::scene::VisibilityModel { fov: 1.0, max_range: 7.0, detect_prob: 0.9 },
            jaccard_threshold: 0.7,
        },
        channel: ChannelModel::new(20e6, 8e6, 0.2, 0.2, 8e6, 2.0).expect("static"),
        pi_scale: 1.0,
        seed,
    }
}

fn warmed_env(seed: u64, steps: usize) -> Env {
    let mut env = Env::reset(desk_env(seed)).expect("bootstrap");
    let mut rng = crate::seeded_rng(seed, 0xacc);
    for _ in 0..steps {
        let a = random_feasible_action(env.state(), env.cfg().capacity, &env.cfg().channel, &mut rng, 200)
            .expect("feasible action");
        env.step(&a).expect("feasible step");
    }
    env
}

/// Finite-difference checks of every layer type and of the composed
/// actor-critic objective.
pub fn gradient_check_suite(instances: usize, seed: u64) -> OracleSection {
    let mut rng = crate::seeded_rng(seed, 0x94d);
    let mut worst_layer: f64 = 0.0;
    for case in 0..instances {
        let input_dim = 1 + case % 4;
        let hidden = 1 + case % 5;
        let rows = 1 + case % 3;
        let spec = match case % 3 {
            0 => NetSpec::new(vec![
                LayerSpec::Dense { input: input_dim, output: hidden, activation: Activation::Tanh },
                LayerSpec::Dense { input: hidden, output: 1, activation: Activation::Linear },
            ]),
            1 => NetSpec::new(vec![
                LayerSpec::GraphConv { input: input_dim, output: hidden, activation: Activation::Tanh },
                LayerSpec::Dense { input: hidden, output: 2, activation: Activation::Sigmoid },
            ]),
            _ => NetSpec::new(vec![LayerSpec::Recurrent { input: input_dim, hidden }]),
        }
        .expect("valid spec");
        let params = spec.init_params(&mut rng);
        let input = Tensor::new(
            vec![rows, input_dim],
            (0..rows * input_dim).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect(),
        )
        .expect("counted");
        let adjacency = if case % 3 == 1 {
            let mut w = Tensor::zeros(rows, rows);
            for i in 0..rows {
                for j in (i + 1)..rows {
                    let weight = rng.gen_range(0..4) as f64;
                    w.set(i, j, weight);
                    w.set(j, i, weight);
                }
            }
            Some(normalize_adjacency(&w).expect("square"))
        } else {
            None
        };
        let err = grad_check(&spec, &params, &input, adjacency.as_ref(), 1e-5).expect("well-formed");
        worst_layer = worst_layer.max(err);
    }

    // End-to-end: d/dparams of Q(o, pi(o)) against central differences.
    let mut worst_e2e: f64 = 0.0;
    for case in 0..instances.min(4) {
        let env = warmed_env(1000 + case as u64, 2 + case % 3);
        let cfg = env.cfg().clone();
        let actor = Actor::new((6, 3), &mut rng);
        let critic = Critic::new((6, 3), 6, &mut rng);
        let state = env.state().clone();
        let (_, analytic) = actor_objective_and_grad(&actor, &critic, &state, &cfg)
            .expect("well-formed networks");
        let eps = 1e-5;
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
                worst_e2e = worst_e2e.max(err);
            }
        }
    }
    OracleSection {
        name: "gradients",
        pass: worst_layer < 1e-4 && worst_e2e < 1e-3,
        detail: format!("layer max {worst_layer:.3e}, end-to-end max {worst_e2e:.3e}"),
    }
}

/// Greedy against exhaustive search on tiny instances. `wins` counts
/// instances where greedy reaches 95% of the optimal reward.
///
/// The multiplicative margin presumes a positive optimum (for a negative
/// optimum even the optimal action fails `r >= 0.95 r*`), so draws whose
/// exhaustive optimum is non-positive are redrawn and reported.
pub fn search_quality_check(instances: usize, seed: u64) -> OracleSection {
    let mut rng = crate::seeded_rng(seed, 0x9c);
    let mut wins = 0usize;
    let mut redraws = 0usize;
    let mut done = 0usize;
    let mut draw = 0u64;
    while done < instances && redraws < instances * 10 + 10 {
        draw += 1;
        let env = warmed_env(2000 + seed + draw, 2 + (rng.gen_range(0..4)));
        let mut probe = env.clone();
        probe.step(&crate::env::MapAction::default()).expect("noop is feasible");
        let next_keyframes: Vec<Frame> = probe.state().batch().keyframes().cloned().collect();
        let refs: Vec<&Frame> = next_keyframes.iter().collect();
        let budget = env.budget().min(4);

        let (_, best) = bruteforce_one_slot(
            env.state(),
            &refs,
            budget,
            env.cfg().capacity,
            env.params(),
            env.penalty(),
        )
        .expect("within caps");
        if best <= 0.0 {
            redraws += 1;
            continue;
        }

        let action = greedy_one_slot(
            env.state(),
            &refs,
            budget,
            env.cfg().capacity,
            env.params(),
            env.penalty(),
        );
        let g_next = crate::env::apply_action(env.state(), env.cfg().capacity, &env.cfg().channel, &action)
            .expect("greedy emits feasible actions");
        let greedy_reward = crate::env::reward(&g_next, &refs, env.params(), env.penalty());
        debug_assert!(greedy_reward <= best + 1e-9, "greedy cannot beat the optimum");

        if greedy_reward >= 0.95 * best - 1e-9 {
            wins += 1;
        }
        done += 1;
    }
    OracleSection {
        name: "greedy-vs-brute-force",
        pass: done == instances && wins * 100 >= instances * 95,
        detail: format!(
            "{wins}/{done} within 5% of a positive optimum ({redraws} non-positive draws skipped)"
        ),
    }
}

/// Empirical channel frequencies against the stationary balance equation.
pub fn channel_statistics_check(seed: u64) -> OracleSection {
    let settings = [(0.1, 0.3), (0.3, 0.1), (0.2, 0.2), (0.05, 0.9), (0.6, 0.45)];
    let mut worst: f64 = 0.0;
    for (i, (p_hl, p_lh)) in settings.into_iter().enumerate() {
        let mut m = ChannelModel::table1();
        m.p_hl = p_hl;
        m.p_lh = p_lh;
        let frac =
            super::experiments::empirical_high_fraction(&m, 100_000, seed + i as u64);
        worst = worst.max((frac - stationary_high_fraction(&m)).abs());
    }
    OracleSection {
        name: "channel-statistics",
        pass: worst < 0.02,
        detail: format!("5 settings x 1e5 slots, max deviation {worst:.4}"),
    }
}

/// With ground-truth visibility injected in place of the predictor,
/// emulated rewards must equal real rewards exactly.
pub fn oracle_predictor_check(samples: usize, seed: u64) -> OracleSection {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    let mut rng = crate::seeded_rng(seed, 0xfac);
    let mut env_seed = seed;
    while checked < samples {
        env_seed += 1;
        let mut env = match Env::reset(desk_env(env_seed)) {
            Ok(e) => e,
            Err(_) => continue,
        };
        let ctx = crate::twin::EmulationContext {
            capacity: env.cfg().capacity,
            model: env.cfg().channel,
            params: *env.params(),
            penalty: env.penalty(),
            history_window: env.cfg().history_window,
            slot_gen: env.cfg().slot_gen,
        };
        while !env.is_done() && checked < samples {
            let state = env.state().clone();
            let action = random_feasible_action(&state, ctx.capacity, &ctx.model, &mut rng, 200)
                .expect("feasible action");
            let out = env.step(&action).expect("feasible step");
            let emulated = emulate_step_with(
                &state,
                &action,
                env.state().batch().clone(),
                env.state().channel(),
                &ctx,
            )
            .expect("feasible emulation");
            if emulated.reward.to_bits() != out.reward.to_bits() {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    OracleSection {
        name: "oracle-predictor-equivalence",
        pass: mismatches == 0,
        detail: format!("{checked} paired samples, {mismatches} mismatches"),
    }
}

/// The full verification battery.
pub fn oracle_check(cfg: &OracleConfig) -> OracleReport {
    let mut report = OracleReport::default();
    report.sections.push(matrix_tree_check(cfg.matrix_tree_graphs, cfg.seed));
    report.sections.push(monotonicity_check(cfg.monotonicity_graphs, cfg.seed));
    report.sections.push(kronecker_check(cfg.kronecker_graphs, cfg.seed));
    report.sections.push(gradient_check_suite(cfg.gradient_instances, cfg.seed));
    report.sections.push(search_quality_check(cfg.search_instances, cfg.seed));
    report.sections.push(channel_statistics_check(cfg.seed));
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_oracle_battery_passes() {
        let cfg = OracleConfig {
            matrix_tree_graphs: 40,
            monotonicity_graphs: 60,
            kronecker_graphs: 12,
            gradient_instances: 4,
            search_instances: 20,
            seed: 2,
        };
        let report = oracle_check(&cfg);
        assert!(report.pass(), "{}", report.render());
        assert_eq!(report.sections.len(), 6);
        assert!(report.render().lines().all(|l| l.starts_with("[PASS]")));
    }

    #[test]
    fn empty_battery_is_trivially_green() {
        let report = oracle_check(&OracleConfig {
            matrix_tree_graphs: 0,
            monotonicity_graphs: 0,
            kronecker_graphs: 0,
            gradient_instances: 0,
            search_instances: 0,
            seed: 0,
        });
        assert!(report.pass());
    }
}
