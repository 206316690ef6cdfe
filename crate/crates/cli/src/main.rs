use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use treeman::harness::{
    generate_synthetic, run_ablation, run_eval, run_featurize, run_repeats, run_sweep, run_train,
    run_train_trees, EvalSplit, ExperimentConfig, SweepAxis, SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "treeman", version, about = "Tree-enhanced multimodal attention for multi-label coding")]
struct Cli {
    /// Flat TOML experiment config; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Data directory; overrides the config file.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Number of seeds (seed, seed+1, ...) for train, ablate and sweep.
    #[arg(long, global = true, default_value_t = 1)]
    repeats: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to the output directory.
    Generate {
        /// default, memorize or lift
        #[arg(long, default_value = "default")]
        preset: String,
        /// JSON synthetic spec; replaces the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the preset's document count.
        #[arg(long)]
        n_docs: Option<usize>,
    },
    /// Split the data and build the feature schema and table.
    Featurize,
    /// Featurize, then train one tree per label and assign leaves.
    TrainTrees,
    /// Full pipeline: trees, network, test metrics.
    Train,
    /// Score a finished run directory.
    Eval {
        /// Run directory holding config.toml and checkpoint.json.
        #[arg(long)]
        run: PathBuf,
        /// train, val, test or all
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train every fusion mode and tabulate test metrics.
    Ablate,
    /// One run per value of tree_depth or leaf_dim.
    Sweep {
        axis: String,
        #[arg(required = true)]
        values: Vec<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { preset, spec, n_docs } => {
            let mut spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<SyntheticSpec>(&text)?
                }
                None => SyntheticSpec::preset(preset)?,
            };
            if let Some(n) = n_docs {
                spec.n_docs = *n;
            }
            let seed = cli.seed.context("generate needs --seed")?;
            let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("data"));
            generate_synthetic(&spec, seed, &dir)?;
            println!("wrote {} admissions to {}", spec.n_docs, dir.display());
        }
        Command::Featurize => {
            let dir = run_featurize(&load_config(&cli)?)?;
            println!("features written to {}", dir.display());
        }
        Command::TrainTrees => {
            let dir = run_train_trees(&load_config(&cli)?)?;
            println!("trees written to {}", dir.display());
        }
        Command::Train => {
            let config = load_config(&cli)?;
            if cli.repeats > 1 {
                let summary = run_repeats(&config, cli.repeats)?;
                print!("{}", summary.to_csv());
            } else {
                let result = run_train(&config)?;
                println!("run directory: {}", result.dir.display());
                println!("best_epoch={}", result.best_epoch);
                print!("{}", result.test.to_kv_text());
            }
        }
        Command::Eval { run, split } => {
            let part: EvalSplit = split.parse()?;
            let report = run_eval(run, cli.data_dir.as_deref(), part)?;
            print!("{}", report.to_kv_text());
        }
        Command::Ablate => {
            let table = run_ablation(&load_config(&cli)?, cli.repeats)?;
            print!("{}", table.to_csv());
        }
        Command::Sweep { axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let table = run_sweep(&load_config(&cli)?, axis, values, cli.repeats)?;
            print!("{}", table.to_csv());
            println!("plot data: {}", table.plot_path.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
