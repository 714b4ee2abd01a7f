//! Command-line experiment harness.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use maptwin::harness::{
    convergence_jsonl, convergence_study, metrics_csv, oracle, plot_data_columns,
    run_experiment_logged, sweep_csv, sweep_high_rate_ratio, ExperimentConfig, Preset, Scheme,
};
use maptwin::scene::{generate_scene, make_slot_frames, Pose, Trace};

#[derive(Parser)]
#[command(
    name = "maptwin",
    about = "Digital-twin 3D map management: experiments, sweeps, and verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config file (JSON). Defaults to the chosen preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named parameter preset when no config file is given.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel seed-level workers.
    #[arg(long, default_value_t = 2)]
    workers: usize,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::preset(self.preset.parse::<Preset>()?),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn emit(&self, name: &str, content: &str) -> Result<()> {
        match &self.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(name);
                std::fs::write(&path, content)?;
                eprintln!("wrote {}", path.display());
            }
            None => print!("{content}"),
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme across the configured seeds and emit per-episode metrics.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// amm | model-free | lff | pu | random | greedy
        #[arg(long)]
        scheme: String,
    },
    /// Sweep the stationary high-rate ratio and compare schemes.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated ratios overriding the config.
        #[arg(long)]
        ratios: Option<String>,
        /// Comma-separated schemes (default: amm,lff,pu).
        #[arg(long, default_value = "amm,lff,pu")]
        schemes: String,
        /// Also emit gnuplot-ready columns.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Train at several artificial-update counts and emit reward curves.
    Converge {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated N values.
        #[arg(long, default_value = "0,5")]
        n_values: String,
    },
    /// Run the verification battery; exits nonzero on any failure.
    Oracle {
        /// Graphs for the matrix-tree suite.
        #[arg(long, default_value_t = 500)]
        graphs: usize,
        /// Graphs for the monotonicity suite.
        #[arg(long, default_value_t = 1000)]
        monotonicity: usize,
        /// Instances for the greedy-vs-brute-force comparison.
        #[arg(long, default_value_t = 100)]
        search_instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic trace file.
    GenTrace {
        #[command(flatten)]
        common: CommonArgs,
        /// Slots to generate.
        #[arg(long, default_value_t = 10)]
        slots: usize,
        /// Output file.
        #[arg(long, default_value = "trace.txt")]
        file: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("bad {what} entry `{tok}`"))
        })
        .collect()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, scheme } => {
            let cfg = common.load()?;
            let scheme: Scheme = scheme.parse()?;
            let (rows, logs) = run_experiment_logged(&cfg, scheme, common.workers)?;
            let violations: u64 = rows.iter().map(|r| r.violations).sum();
            common.emit(&format!("run-{scheme}.csv"), &metrics_csv(&rows))?;
            if common.out.is_some() {
                for (seed, log) in &logs {
                    common.emit(&format!("run-{scheme}-seed{seed}.jsonl"), log)?;
                }
            }
            if violations > 0 {
                bail!("{violations} constraint violations recorded");
            }
        }
        Command::Sweep { common, ratios, schemes, emit_plot_data } => {
            let mut cfg = common.load()?;
            if let Some(r) = ratios {
                cfg.sweep.ratios = parse_list(&r, "ratio")?;
                cfg.validate()?;
            }
            let schemes: Vec<Scheme> = parse_list::<String>(&schemes, "scheme")?
                .iter()
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()?;
            let cells = sweep_high_rate_ratio(&cfg, &schemes, common.workers)?;
            common.emit("sweep.csv", &sweep_csv(&cells))?;
            if emit_plot_data {
                common.emit("sweep.dat", &plot_data_columns(&cells))?;
            }
        }
        Command::Converge { common, n_values } => {
            let cfg = common.load()?;
            let n_values: Vec<usize> = parse_list(&n_values, "N")?;
            let curves = convergence_study(&cfg, &n_values, common.workers)?;
            common.emit("converge.jsonl", &convergence_jsonl(&curves))?;
        }
        Command::Oracle { graphs, monotonicity, search_instances, seed } => {
            let report = oracle::oracle_check(&oracle::OracleConfig {
                matrix_tree_graphs: graphs,
                monotonicity_graphs: monotonicity,
                search_instances,
                seed,
                ..oracle::OracleConfig::default()
            });
            print!("{}", report.render());
            if !report.pass() {
                bail!("oracle checks failed");
            }
        }
        Command::GenTrace { common, slots, file } => {
            let cfg = common.load()?;
            let env = &cfg.env;
            let scene = generate_scene(env.n_points, env.bounds, env.seed)?;
            let mut rng = maptwin::seeded_rng(env.seed, 0x7e);
            let mut pose = Pose { position: env.bounds.center(), yaw: 0.0 };
            let mut next_id = 0;
            let mut batches = Vec::with_capacity(slots);
            for slot in 0..slots {
                let (batch, end) =
                    make_slot_frames(&scene, &pose, &env.slot_gen, slot, &mut next_id, &mut rng);
                pose = end;
                batches.push(batch);
            }
            let trace = Trace { n_points: env.n_points, batches };
            trace.save(&file)?;
            eprintln!("wrote {} ({} slots)", file.display(), slots);
        }
    }
    Ok(())
}
