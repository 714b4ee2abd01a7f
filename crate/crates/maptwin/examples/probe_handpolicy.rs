use maptwin::agent::{decode_action, ScoreAction};
use maptwin::env::{Env, NODE_FEATURES};
use maptwin::harness::ExperimentConfig;

fn rollout(label: &str, weights: [f64; NODE_FEATURES], evict_weights: [f64; NODE_FEATURES]) {
    let mut uncertainties = Vec::new();
    for seed in 0..4u64 {
        let mut cfg = ExperimentConfig::desk().env;
        cfg.seed = seed;
        let mut env = Env::reset(cfg).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        while !env.is_done() {
            let enc = env.encode();
            let score_of = |row: usize, w: &[f64; NODE_FEATURES]| -> f64 {
                (0..NODE_FEATURES)
                    .map(|c| w[c] * enc.node_features[row * NODE_FEATURES + c])
                    .sum()
            };
            let sc = ScoreAction {
                evict_scores: (0..enc.n_stored).map(|r| score_of(r, &evict_weights)).collect(),
                upload_scores: (enc.n_stored..enc.n_stored + enc.n_candidates)
                    .map(|r| score_of(r, &weights))
                    .collect(),
            };
            let action = decode_action(env.state(), &sc, env.budget(), env.cfg().capacity);
            let out = env.step(&action).unwrap();
            sum += out.reward;
            n += 1;
        }
        uncertainties.push(-(sum / n as f64));
    }
    let mean = uncertainties.iter().sum::<f64>() / uncertainties.len() as f64;
    println!("{label:<24} mean_uncertainty {mean:>10.3}  per-seed {uncertainties:?}");
}

fn main() {
    // features: [weighted_degree, plain_degree, n_points, age, kf, candidate]
    rollout("wd-only", [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    rollout("wd+kf", [1.0, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    rollout("kf-only", [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    rollout("points+kf, evict-old", [0.0, 0.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    rollout("wd+kf, evict-old", [1.0, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    rollout("wd+kf, evict old+wd", [1.0, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    rollout("fresh-kf (lff-like)", [0.0, 0.0, 0.0, -10.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    rollout("fresh+wd+kf", [1.0, 0.0, 0.0, -10.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    rollout("fresh+wd+kf v2", [2.0, 0.0, 0.0, -5.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

    // Reference baselines on the same seeds.
    for scheme in [maptwin::harness::Scheme::Lff, maptwin::harness::Scheme::Pu] {
        let mut us = Vec::new();
        for seed in 0..4u64 {
            let mut cfg = ExperimentConfig::desk();
            cfg.env.seed = seed;
            cfg.seeds = vec![seed];
            let stats = maptwin::harness::evaluate_scheme(scheme, &cfg.env, &maptwin::agent::AmmConfig::desk(seed), 1).unwrap();
            us.push(stats[0].mean_uncertainty);
        }
        let mean = us.iter().sum::<f64>() / us.len() as f64;
        println!("{:<24} mean_uncertainty {mean:>10.3}  per-seed {us:?}", scheme.name());
    }
}
