use maptwin::agent::AmmConfig;
use maptwin::harness::{evaluate_scheme, ExperimentConfig, Scheme};

fn main() {
    let cfg = ExperimentConfig::desk();
    let mut wins = 0;
    for seed in 0..3u64 {
        let mut env_cfg = cfg.env.clone();
        env_cfg.seed = seed;
        env_cfg.channel = env_cfg.channel.with_high_rate_ratio(0.5, 0.2).unwrap();
        let amm = AmmConfig { seed, ..cfg.amm.clone() };

        let t0 = std::time::Instant::now();
        let (_, log) = maptwin::agent::amm_train(&env_cfg, &amm).unwrap();
        let train_s = t0.elapsed().as_secs_f64();
        let ep = &log.episode_rewards;

        let mut us = std::collections::BTreeMap::new();
        for scheme in [Scheme::Amm, Scheme::Lff, Scheme::Pu] {
            let t = std::time::Instant::now();
            let stats = evaluate_scheme(scheme, &env_cfg, &amm, cfg.eval_episodes).unwrap();
            let mu: f64 = stats.iter().map(|s| s.mean_uncertainty).sum::<f64>() / stats.len() as f64;
            us.insert(scheme.name(), (mu, t.elapsed().as_secs_f64()));
        }
        let amm_u = us["amm"].0;
        let best_base = us["lff"].0.min(us["pu"].0);
        wins += i32::from(amm_u <= best_base);
        println!(
            "seed {seed}: train {train_s:.0}s rewards {:.0}->{:.0} | amm {:.1} lff {:.1} pu {:.1} win={}",
            ep[0], ep[ep.len()-1], amm_u, us["lff"].0, us["pu"].0, amm_u <= best_base
        );
    }
    println!("wins {wins}/3");
}
