//! `diffsim` command-line driver.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, Run};
use config::Config;
use diffsim::error::ErrorClass;
use diffsim::Exec;

const EXIT_REJECTED: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "diffsim", version, about = "Diffusion-map simulation and validation of trajectory data")]
struct Cli {
    /// Configuration file.
    #[arg(long, global = true, default_value = "diffsim.toml")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit with status 1 when `validate` rejects.
    #[arg(long, global = true)]
    fail_on_reject: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write a commented configuration template to the --config path.
    Init,
    /// Write a synthetic track set with years and a condition series.
    Synth,
    /// Embed the input tracks.
    Embed,
    /// Cross-validate the kernel scale and step count.
    Cv,
    /// Select the embedding dimension.
    Dim,
    /// Fit the diffusion map and density; write a density grid.
    Fit,
    /// Simulate tracks from the fitted model.
    Simulate,
    /// Test simulated tracks against the input.
    Validate,
    /// Hot/cold conditional densities and the discrepancy-region query.
    Cde,
}

fn load_config(path: &Path) -> Result<Config, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = Config::parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    config.rebase(base);
    Ok(config)
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    if cli.command == Command::Init {
        commands::init(&cli.config)?;
        return Ok(false);
    }
    let mut config = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    let exec = match cli.jobs {
        Some(0) => return Err(Failure::Input("--jobs must be at least 1".into())),
        Some(1) => Exec::Sequential,
        Some(j) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build_global()
                .map_err(|e| Failure::Input(e.to_string()))?;
            Exec::Parallel
        }
        None => Exec::Parallel,
    };
    let run = Run::new(config, exec);
    let manifest = match cli.command {
        Command::Init => unreachable!(),
        Command::Synth => commands::synth(run)?,
        Command::Embed => commands::embed(run)?,
        Command::Cv => commands::cv(run)?,
        Command::Dim => commands::dim(run)?,
        Command::Fit => commands::fit(run)?,
        Command::Simulate => commands::simulate(run)?,
        Command::Validate => commands::validate(run)?,
        Command::Cde => commands::cde(run)?,
    };
    for f in &manifest.outputs {
        log::info!("wrote {}", f.file);
    }
    Ok(manifest.rejected == Some(true))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) if cli.fail_on_reject => {
            eprintln!("validation rejected the simulated tracks");
            ExitCode::from(EXIT_REJECTED)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Input => ExitCode::from(EXIT_INPUT),
                ErrorClass::Numerical => ExitCode::from(EXIT_NUMERICAL),
            }
        }
    }
}
