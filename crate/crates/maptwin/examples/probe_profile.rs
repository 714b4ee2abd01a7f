use maptwin::agent::AmmConfig;
use maptwin::harness::ExperimentConfig;

fn time_it(label: &str, cfg: &AmmConfig, env_cfg: &maptwin::env::EnvConfig, model_free: bool) {
    let t0 = std::time::Instant::now();
    if model_free {
        maptwin::agent::model_free_train(env_cfg, cfg).unwrap();
    } else {
        maptwin::agent::amm_train(env_cfg, cfg).unwrap();
    }
    println!("{label:<34} {:.1}s", t0.elapsed().as_secs_f64());
}

fn main() {
    let base = ExperimentConfig::desk();
    let mut env_cfg = base.env.clone();
    env_cfg.seed = 1;
    let amm = AmmConfig { seed: 1, ..base.amm.clone() };

    time_it("model-free (1 update/slot)", &amm, &env_cfg, true);
    let no_gen = AmmConfig { artificial_per_slot: 0, ..amm.clone() };
    time_it("amm, predictor only (no gen)", &no_gen, &env_cfg, false);
    let no_updates = AmmConfig { artificial_updates: 0, ..amm.clone() };
    time_it("amm, N=0 (gen but no art updates)", &no_updates, &env_cfg, false);
    time_it("amm, full N=5", &amm, &env_cfg, false);
}
