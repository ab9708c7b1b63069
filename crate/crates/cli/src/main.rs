//! `divkit` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use divkit::harness::config::{DatasetSource, Experiment, ExperimentConfig};
use divkit::harness::{execute, exit_code, gen_data, load_csv, save_csv, shipped_config, to_canonical_string, GeneratorSpec, RunOptions};
use divkit::scorer::{self, DEFAULT_THRESHOLD};
use divkit::{Error, Result, ScoreRange, TrainConfig};

#[derive(Parser)]
#[command(name = "divkit", version, about = "Diversity and ensemble experiments for binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Output directory.
    #[arg(long, env = "DIVKIT_OUT", default_value = "divkit-out")]
    out: PathBuf,
}

#[derive(Args)]
struct Common {
    /// Experiment config; defaults to the built-in config for the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct WithData {
    /// CSV dataset replacing the config's dataset source.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    TwoBlob,
    HardRegion,
}

#[derive(Subcommand)]
enum Command {
    /// Run any experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Write a synthetic dataset to `<out>/dataset.csv`.
    GenData {
        /// Generator spec as JSON; overrides --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "two-blob")]
        preset: Preset,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Train a scorer on a CSV dataset and write `<out>/scorer.json`.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the initialisation seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Build and evaluate confidence cascades.
    Cascade {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: WithData,
        #[arg(long)]
        depth: Option<usize>,
        /// Lower bound of the uncertain score range.
        #[arg(long)]
        range_a: Option<f64>,
        /// Upper bound of the uncertain score range.
        #[arg(long)]
        range_b: Option<f64>,
    },
    /// Retrain on more data and diff predictions before and after.
    RetrainDiff {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: WithData,
    },
    /// Population experiment under a demand-difficulty profile.
    Diversity {
        #[command(flatten)]
        common: Common,
    },
    /// Redundant channel and trusted-checker simulations.
    Channels {
        #[command(flatten)]
        common: Common,
    },
    /// Router with two specialist scorers.
    Router {
        #[command(flatten)]
        common: Common,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(serde_json::from_str(&text)?)
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn load_config(path: Option<&Path>, builtin: &str, kind: &str) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => shipped_config(builtin)?,
    };
    if cfg.experiment.kind() != kind {
        return Err(Error::Config(format!(
            "config describes a {} experiment, expected {kind}",
            cfg.experiment.kind()
        )));
    }
    Ok(cfg)
}

fn run_experiment(mut cfg: ExperimentConfig, seed: Option<u64>, trials: Option<usize>, jobs: Option<usize>, out: &Path) -> Result<()> {
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    let output = execute(&cfg, &RunOptions { jobs })?;
    for path in output.write_to(out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn replace_dataset(cfg: &mut ExperimentConfig, data: Option<&Path>) -> Result<()> {
    let Some(path) = data else { return Ok(()) };
    let source = DatasetSource::Csv(absolute(path)?);
    match &mut cfg.experiment {
        Experiment::Cascade(c) => c.dataset = source,
        Experiment::Retraining(r) => r.dataset = source,
        _ => unreachable!("only dataset experiments take --data"),
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, trials, jobs, output } => {
            run_experiment(ExperimentConfig::from_file(&config)?, seed, trials, jobs, &output.out)
        }
        Command::GenData { config, preset, n, seed, output } => {
            let mut spec = match config {
                Some(p) => read_json::<GeneratorSpec>(&p)?,
                None => match preset {
                    Preset::TwoBlob => GeneratorSpec::two_blob(1000, 0),
                    Preset::HardRegion => GeneratorSpec::hard_region(4000, 0),
                },
            };
            if let Some(n) = n {
                spec.n = n;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let ds = gen_data(&spec)?;
            std::fs::create_dir_all(&output.out).map_err(|e| Error::Io { path: output.out.clone(), source: e })?;
            let path = output.out.join("dataset.csv");
            save_csv(&ds, &path)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Train { data, config, seed, output } => {
            let mut cfg = match config {
                Some(p) => read_json::<TrainConfig>(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.init_seed = s;
            }
            cfg.validate()?;
            let ds = load_csv(&data)?;
            let params = scorer::train(&ds, &cfg)?;
            let accuracy = params.accuracy(&ds, DEFAULT_THRESHOLD)?;
            std::fs::create_dir_all(&output.out).map_err(|e| Error::Io { path: output.out.clone(), source: e })?;
            let path = output.out.join("scorer.json");
            let body = to_canonical_string(&params)? + "\n";
            std::fs::write(&path, body).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            println!("{}", path.display());
            println!("training accuracy {accuracy:.4}");
            Ok(())
        }
        Command::Cascade { common, data, depth, range_a, range_b } => {
            let mut cfg = load_config(common.config.as_deref(), "cascade", "cascade")?;
            replace_dataset(&mut cfg, data.data.as_deref())?;
            if let Experiment::Cascade(c) = &mut cfg.experiment {
                if let Some(d) = depth {
                    c.depth = d;
                }
                if range_a.is_some() || range_b.is_some() {
                    c.range = ScoreRange::new(range_a.unwrap_or(c.range.a()), range_b.unwrap_or(c.range.b()))?;
                }
            }
            run_experiment(cfg, common.seed, common.trials, common.jobs, &common.output.out)
        }
        Command::RetrainDiff { common, data } => {
            let mut cfg = load_config(common.config.as_deref(), "retraining", "retraining")?;
            replace_dataset(&mut cfg, data.data.as_deref())?;
            run_experiment(cfg, common.seed, common.trials, common.jobs, &common.output.out)
        }
        Command::Diversity { common } => {
            let cfg = load_config(common.config.as_deref(), "fig2-profile", "diversity")?;
            run_experiment(cfg, common.seed, common.trials, common.jobs, &common.output.out)
        }
        Command::Channels { common } => {
            let cfg = load_config(common.config.as_deref(), "channels", "channels")?;
            run_experiment(cfg, common.seed, common.trials, common.jobs, &common.output.out)
        }
        Command::Router { common } => {
            let cfg = load_config(common.config.as_deref(), "router", "router")?;
            run_experiment(cfg, common.seed, common.trials, common.jobs, &common.output.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = dispatch(cli.command);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code(&result) as u8)
}
