//! Acceptance suite: one test per verification criterion, each printing a
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture`
//! to see them). Tolerances and runtime limits are pinned in code.

use std::time::Instant;

use maptwin::agent::{
    act, amm_train, decode_action, model_free_train, Actor, AmmConfig,
};
use maptwin::channel::ChannelModel;
use maptwin::env::{random_feasible_action, Env, EnvConfig, MapAction};
use maptwin::harness::oracle::{
    channel_statistics_check, gradient_check_suite, kronecker_check, matrix_tree_check,
    monotonicity_check, oracle_predictor_check, search_quality_check,
};
use maptwin::harness::{evaluate_scheme, ExperimentConfig, Scheme};

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!("criterion {criterion:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

#[test]
fn criterion_01_matrix_tree_oracle() {
    let t0 = Instant::now();
    let section = matrix_tree_check(500, 11);
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        1,
        "matrix-tree oracle",
        section.pass && elapsed < 10.0,
        &format!("{} in {elapsed:.2}s (limit 10s)", section.detail),
    );
}

#[test]
fn criterion_02_monotonicity() {
    let t0 = Instant::now();
    let section = monotonicity_check(1000, 12);
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        2,
        "uncertainty monotonicity",
        section.pass && elapsed < 10.0,
        &format!("{} in {elapsed:.2}s (limit 10s)", section.detail),
    );
}

#[test]
fn criterion_03_kronecker_consistency() {
    let section = kronecker_check(100, 13);
    report(3, "kronecker expansion", section.pass, &section.detail);
}

#[test]
fn criterion_04_gradient_fidelity() {
    let t0 = Instant::now();
    let section = gradient_check_suite(10, 14);
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        4,
        "gradient fidelity",
        section.pass && elapsed < 30.0,
        &format!("{} in {elapsed:.2}s (limit 30s)", section.detail),
    );
}

/// Mid-size scenario for the long rollouts: large enough to exercise all
/// constraints, small enough that five 10^4-step rollouts stay quick.
fn rollout_cfg(seed: u64) -> EnvConfig {
    let mut cfg = ExperimentConfig::desk().env;
    cfg.capacity = 8;
    cfg.n_points = 200;
    cfg.slot_gen.frames_per_slot = 12;
    cfg.slot_gen.visibility.fov = 0.9;
    cfg.slot_gen.visibility.max_range = 7.0;
    cfg.episode_len = 50;
    cfg.channel = ChannelModel::new(20e6, 8e6, 0.2, 0.2, 8e6, 2.0).expect("static");
    cfg.seed = seed;
    cfg
}

#[test]
fn criterion_05_constraint_safety() {
    const STEPS: usize = 10_000;
    let schemes = [Scheme::Amm, Scheme::Lff, Scheme::Pu, Scheme::Random, Scheme::Greedy];
    let mut detail = String::new();
    let mut all_pass = true;
    for scheme in schemes {
        let mut rng = maptwin::seeded_rng(5, 0x5afe);
        let actor = Actor::new((8, 4), &mut rng);
        let mut steps = 0usize;
        let mut violations = 0u64;
        let mut episode = 0u64;
        while steps < STEPS {
            let mut env = Env::reset(rollout_cfg(500 + episode)).expect("bootstrap");
            episode += 1;
            while !env.is_done() && steps < STEPS {
                let action: MapAction = match scheme {
                    Scheme::Amm => {
                        let enc = env.encode();
                        let scores = act(&actor, &enc, 0.2, &mut rng);
                        decode_action(env.state(), &scores, env.budget(), env.cfg().capacity)
                    }
                    Scheme::Lff => {
                        maptwin::agent::baseline_lff(env.state(), env.budget(), env.cfg().capacity)
                    }
                    Scheme::Pu => {
                        maptwin::agent::baseline_pu(env.state(), env.budget(), env.cfg().capacity)
                    }
                    Scheme::Random => random_feasible_action(
                        env.state(),
                        env.cfg().capacity,
                        &env.cfg().channel,
                        &mut rng,
                        200,
                    )
                    .expect("feasible action"),
                    Scheme::Greedy => {
                        let keyframes: Vec<&maptwin::covis::Frame> =
                            env.state().batch().keyframes().collect();
                        maptwin::agent::greedy_one_slot(
                            env.state(),
                            &keyframes,
                            env.budget(),
                            env.cfg().capacity,
                            env.params(),
                            env.penalty(),
                        )
                    }
                    Scheme::ModelFree => unreachable!(),
                };
                // The environment re-checks the budget, cardinality, and
                // connectivity on every applied action.
                violations += u64::from(env.feasible(&action).is_err());
                env.step(&action).expect("policy action is feasible");
                steps += 1;
            }
            violations += env.violations();
        }
        let pass = violations == 0;
        all_pass &= pass;
        detail.push_str(&format!("{}={} ", scheme.name(), violations));
    }
    report(5, "constraint safety (1e4 steps/scheme)", all_pass, detail.trim());
}

#[test]
fn criterion_06_channel_statistics() {
    let section = channel_statistics_check(16);
    report(6, "channel statistics", section.pass, &section.detail);
}

#[test]
fn criterion_07_greedy_vs_brute_force() {
    let t0 = Instant::now();
    let section = search_quality_check(100, 17);
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        7,
        "greedy vs brute force",
        section.pass && elapsed < 120.0,
        &format!("{} in {elapsed:.2}s (limit 120s)", section.detail),
    );
}

#[test]
fn criterion_08_high_rate_ratio_ordering() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::desk();
    let ratios = [0.2, 0.5, 0.8];
    let seeds: Vec<u64> = (0..10).collect();

    let jobs: Vec<(f64, u64)> = ratios
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results = maptwin::harness::parallel_map(jobs, 2, |(ratio, seed)| {
        let mut env_cfg = cfg.env.clone();
        env_cfg.seed = seed;
        env_cfg.channel = env_cfg
            .channel
            .with_high_rate_ratio(ratio, cfg.sweep.mixing)
            .expect("ratio within bounds");
        let amm = AmmConfig { seed, ..cfg.amm.clone() };
        let eval = |scheme| -> f64 {
            let stats = evaluate_scheme(scheme, &env_cfg, &amm, cfg.eval_episodes)
                .expect("evaluation runs");
            stats.iter().map(|s| s.mean_uncertainty).sum::<f64>() / stats.len() as f64
        };
        (ratio, seed, eval(Scheme::Amm), eval(Scheme::Lff), eval(Scheme::Pu))
    });

    let mut detail = String::new();
    let mut all_ratios_pass = true;
    for &ratio in &ratios {
        let per_seed: Vec<_> = results.iter().filter(|r| r.0 == ratio).collect();
        let wins = per_seed
            .iter()
            .filter(|(_, _, amm, lff, pu)| *amm <= lff.min(*pu) + 1e-9)
            .count();
        let pass = wins >= 8;
        all_ratios_pass &= pass;
        detail.push_str(&format!("ratio {ratio}: {wins}/10 "));
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        8,
        "uplink-ratio ordering (amm <= min(lff, pu))",
        all_ratios_pass && elapsed < 600.0,
        &format!("{detail}in {elapsed:.1}s (limit 600s)"),
    );
}

#[test]
fn criterion_09_convergence_speed() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::desk();
    let seeds: Vec<u64> = (0..10).collect();

    let results = maptwin::harness::parallel_map(seeds.clone(), 2, |seed| {
        let mut env_cfg = cfg.env.clone();
        env_cfg.seed = seed;
        let amm5 = AmmConfig { seed, artificial_updates: 5, ..cfg.amm.clone() };
        let amm0 = AmmConfig { seed, artificial_updates: 0, ..cfg.amm.clone() };
        let (_, log5) = amm_train(&env_cfg, &amm5).expect("training runs");
        let (_, log0) = amm_train(&env_cfg, &amm0).expect("training runs");
        let (_, log_mf) = model_free_train(&env_cfg, &amm0).expect("training runs");
        (seed, log5, log0, log_mf)
    });

    let mut faster = 0usize;
    let mut identical = true;
    for (_, log5, log0, log_mf) in &results {
        identical &= log0 == log_mf;
        let curve5 = maptwin::harness::ConvergenceCurve {
            artificial_updates: 5,
            seed: 0,
            episode_rewards: log5.eval_rewards.clone(),
        };
        let curve0 = maptwin::harness::ConvergenceCurve {
            artificial_updates: 0,
            seed: 0,
            episode_rewards: log0.eval_rewards.clone(),
        };
        faster += usize::from(curve5.convergence_episode() < curve0.convergence_episode());
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        9,
        "convergence speed (N=5 vs N=0) + ablation identity",
        faster >= 7 && identical && elapsed < 600.0,
        &format!(
            "N=5 faster in {faster}/10 seeds, N=0 bit-identical to model-free: {identical}, in {elapsed:.1}s (limit 600s)"
        ),
    );
}

#[test]
fn criterion_10_oracle_predictor_equivalence() {
    let section = oracle_predictor_check(1000, 20);
    report(10, "oracle-predictor equivalence", section.pass, &section.detail);
}
