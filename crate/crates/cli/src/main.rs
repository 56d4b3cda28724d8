use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use exoc_core::experiment::{self, ExperimentConfig, Preset, RunManifest};

/// Counterfactually fair prediction experiments.
#[derive(Parser, Debug)]
#[command(name = "exoc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; overrides the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Comma-separated seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seed: Option<Vec<u64>>,

    /// Control-loss weight.
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Training epochs for every model.
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Generator distribution-matching weight.
    #[arg(long, global = true)]
    tau: Option<f64>,

    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load the source data and write split indices.
    Prepare,
    /// Train the counterfactual generator on the training split.
    TrainGenerator,
    /// Write a synthetic dataset and its counterfactual arms per seed.
    Synthesize,
    /// Fit every method on every seed and emit the comparison table.
    Run,
    /// EXOC over a grid of control-loss weights.
    AblateGamma {
        /// Comma-separated weights; defaults to the config grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// EXOC with each control target.
    AblateControl,
    /// Analytic bounds with Monte Carlo coverage.
    Bounds {
        #[arg(long, default_value_t = 20)]
        sets: usize,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Collect emitted tables into report.md.
    Report,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

impl From<exoc_core::Error> for Failure {
    fn from(e: exoc_core::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.into())
        } else {
            Failure::Run(e.into())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_json_file(p)
            .with_context(|| format!("reading config {}", p.display()))
            .map_err(Failure::Input)?,
        None => ExperimentConfig::preset(match cli.preset {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }),
    };
    if let Some(s) = &cli.seed {
        cfg.seeds = s.clone();
    }
    if let Some(g) = cli.gamma {
        cfg.gamma = g;
    }
    if let Some(e) = cli.epochs {
        cfg.epochs = e;
        cfg.generator_epochs = e;
    }
    if let Some(t) = cli.tau {
        cfg.generator.tau = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(p) = &cfg.dataset.path {
        if !p.exists() {
            return Err(Failure::Input(anyhow::anyhow!("data file not found: {}", p.display())));
        }
    }
    cfg.validate().map_err(|e| Failure::Input(e.into()))?;
    Ok(cfg)
}

fn report_failures(failures: &[(u64, String)]) -> u8 {
    for (seed, msg) in failures {
        eprintln!("seed {seed} failed: {msg}");
    }
    u8::from(!failures.is_empty())
}

fn execute(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Prepare => {
            let mut m = RunManifest::open(&cfg);
            let b = experiment::prepare(&cfg, &mut m)?;
            m.save(&cfg.out)?;
            let r = &b.train.report;
            println!(
                "source rows: {} (dropped {} missing, {} sensitive); split {}/{}/{}",
                r.source_rows,
                r.dropped_missing,
                r.dropped_sensitive,
                b.train.len(),
                b.val.len(),
                b.test.len()
            );
            Ok(0)
        }
        Command::TrainGenerator => {
            let mut m = RunManifest::open(&cfg);
            let b = experiment::prepare(&cfg, &mut m)?;
            let g = experiment::train_generator(&cfg, &b, &mut m)?;
            m.save(&cfg.out)?;
            println!("generator trained; latent group MMD {:.6}", g.latent_group_mmd(&b.train)?);
            Ok(0)
        }
        Command::Synthesize => {
            let mut m = RunManifest::open(&cfg);
            let p = experiment::prepare_all(&cfg, &mut m)?;
            m.save(&cfg.out)?;
            for d in &p.seeds {
                println!(
                    "seed {}: {} train rows, {} test individuals x {} arms",
                    d.seed,
                    d.train.len(),
                    d.arms.len(),
                    d.arms.n_arms()
                );
            }
            Ok(0)
        }
        Command::Run => {
            let s = experiment::run(&cfg)?;
            print!("{}", s.table.to_markdown());
            Ok(report_failures(&s.failures))
        }
        Command::AblateGamma { grid } => {
            let grid = grid.clone().unwrap_or_else(|| cfg.gamma_grid.clone());
            let a = experiment::ablate_gamma(&cfg, &grid)?;
            print!("{}", a.table.to_markdown());
            for v in &a.verdicts {
                println!(
                    "{}: spearman {} ({}), {} inversions",
                    v.metric,
                    v.spearman.map(|r| format!("{r:.3}")).unwrap_or_else(|| "n/a".into()),
                    v.verdict,
                    v.inversions
                );
            }
            Ok(report_failures(&a.failures))
        }
        Command::AblateControl => {
            let a = experiment::ablate_control(&cfg)?;
            print!("{}", a.table.to_markdown());
            Ok(report_failures(&a.failures))
        }
        Command::Bounds { sets, draws } => {
            let seed = cfg.seeds[0];
            let params = experiment::bound_parameter_sets(*sets, seed);
            let rows = experiment::bounds_table(&params, *draws, seed)?;
            let path = cfg.out.join("bounds.csv");
            experiment::write_bounds_csv(&rows, &path)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
            Ok(0)
        }
        Command::Report => {
            print!("{}", experiment::report(&cfg.out)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
