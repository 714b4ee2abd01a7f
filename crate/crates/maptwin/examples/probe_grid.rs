use maptwin::agent::AmmConfig;
use maptwin::harness::{evaluate_scheme, parallel_map, ExperimentConfig, Scheme};

fn run(label: &str, gamma: f64, make: impl Fn(u64) -> AmmConfig + Sync) {
    let base = ExperimentConfig::desk();
    let seeds: Vec<u64> = (0..5).collect();
    let t0 = std::time::Instant::now();
    let results = parallel_map(seeds, 2, |seed| {
        let mut env_cfg = base.env.clone();
        env_cfg.seed = seed;
        env_cfg.discount = gamma;
        env_cfg.channel = env_cfg.channel.with_high_rate_ratio(0.5, 0.2).unwrap();
        let amm = make(seed);
        let eval = |scheme| -> f64 {
            let stats = evaluate_scheme(scheme, &env_cfg, &amm, 1).unwrap();
            stats.iter().map(|s| s.mean_uncertainty).sum::<f64>() / stats.len() as f64
        };
        let (amm_u, lff, pu) = (eval(Scheme::Amm), eval(Scheme::Lff), eval(Scheme::Pu));
        (seed, amm_u, lff, pu)
    });
    let wins = results.iter().filter(|(_, a, l, p)| a <= &l.min(*p)).count();
    let detail: Vec<String> = results
        .iter()
        .map(|(s, a, l, p)| format!("s{s}:{:.0}/{:.0}", a, l.min(*p)))
        .collect();
    println!(
        "{label:<22} wins {wins}/5  [{}]  {:.0}s",
        detail.join(" "),
        t0.elapsed().as_secs_f64()
    );
}

fn main() {
    run("C sf.01 f.5 b8", 0.9, |seed| AmmConfig {
        noise_sigma_final: 0.01,
        noise_decay_fraction: 0.5,
        ..AmmConfig::desk(seed)
    });
    run("D sf0 f.6 b6", 0.9, |seed| AmmConfig {
        batch_size: 6,
        ..AmmConfig::desk(seed)
    });
}
