use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use drmtl::cli::{run, AlgorithmChoice, Command, ExperimentConfig};
use drmtl::solver::ParamMode;

#[derive(Parser)]
#[command(name = "drmtl", version, about = "Decentralized regularized multi-task learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON config or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true, value_enum)]
    algorithm: Option<Alg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// ADMM convergence traces against a centralized reference.
    Convergence,
    /// Preference prediction errors.
    Preference,
    /// Cache hit-ratio sweep.
    Caching,
    /// Check proximal weights against the sufficient conditions.
    ValidateParams,
    /// Discretize GPS trajectories into sojourn sequences.
    IngestTraces,
}

#[derive(ValueEnum, Clone, Copy)]
enum Mode {
    PaperDefaults,
    TheoremSafe,
}

#[derive(ValueEnum, Clone, Copy)]
enum Alg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Convergence => Command::Convergence,
        Cmd::Preference => Command::Preference,
        Cmd::Caching => Command::Caching,
        Cmd::ValidateParams => Command::ValidateParams,
        Cmd::IngestTraces => Command::IngestTraces,
    };
    let mut config = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(mode) = cli.mode {
        config.mode = Some(match mode {
            Mode::PaperDefaults => ParamMode::PaperDefaults,
            Mode::TheoremSafe => ParamMode::TheoremSafe,
        });
    }
    if let Some(alg) = cli.algorithm {
        config.algorithm = Some(match alg {
            Alg::One => AlgorithmChoice::One,
            Alg::Two => AlgorithmChoice::Two,
            Alg::Both => AlgorithmChoice::Both,
        });
    }
    match run(command, config, &cli.out) {
        Ok(manifest) => {
            log::info!("wrote {} (seed {:?})", cli.out.display(), manifest.config.seed);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
