use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aelab_cli::commands;
use aelab_cli::config::{self, ExperimentConfig, GnormSection, ShapesSection};
use aelab_cli::CliError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aelab", version, about = "Autoencoder risk experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Override every seed in the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one autoencoder and write its run, checkpoint and figure data
    Train(Common),
    /// Train every cell of the config's sweep grid
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (default: all cores)
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a critical-point finder on a test function
    Gnorm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        function: Option<String>,
        /// Starting point, comma separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// gnorm, newton or gd
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Evaluate a checkpoint against the config's dataset
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file (overrides the config's [diagnose] entry)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Tabulate the one-dimensional penalty shapes
    Shapes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn load(path: Option<&Path>) -> Result<config::Loaded, CliError> {
    match path {
        Some(p) => Ok(config::load(p)?),
        None => Ok(config::Loaded {
            config: ExperimentConfig::minimal(),
            dir: PathBuf::new(),
        }),
    }
}

fn required(common: &Common) -> Result<config::Loaded, CliError> {
    if common.config.is_none() {
        return Err(CliError::Usage("--config is required for this command".into()));
    }
    let mut loaded = load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        loaded.config.override_seed(s);
    }
    Ok(loaded)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => {
            let mut loaded = required(&common)?;
            loaded.config.sweep = None;
            commands::train(&loaded.config, &common.out).map(|_| ())
        }
        Command::Sweep { common, threads } => {
            if threads == Some(0) {
                return Err(CliError::Usage("--threads must be at least 1".into()));
            }
            let loaded = load(common.config.as_deref())?;
            if common.config.is_none() {
                return Err(CliError::Usage("--config is required for this command".into()));
            }
            commands::sweep(&loaded, &common.out, common.seed, threads)
        }
        Command::Gnorm {
            common,
            function,
            x0,
            method,
            step,
            max_iters,
            tol,
        } => {
            let mut loaded = load(common.config.as_deref())?;
            let mut section: GnormSection = loaded.config.gnorm();
            if let Some(v) = function {
                section.function = v;
            }
            if let Some(v) = x0 {
                section.x0 = v;
            }
            if let Some(v) = method {
                section.method = v;
            }
            if let Some(v) = step {
                section.step = v;
            }
            if let Some(v) = max_iters {
                section.max_iters = v;
            }
            if let Some(v) = tol {
                section.tol = v;
            }
            loaded.config.gnorm = Some(section);
            commands::gnorm(&loaded.config, &common.out)
        }
        Command::Diagnose {
            common,
            checkpoint,
            bins,
        } => {
            let mut loaded = required(&common)?;
            let path = match checkpoint {
                Some(p) => {
                    let section = loaded.config.diagnose.get_or_insert(config::DiagnoseSection {
                        checkpoint: String::new(),
                        bins: aelab_core::diagnostics::DEFAULT_BINS,
                    });
                    section.checkpoint = p.display().to_string();
                    p
                }
                None => commands::checkpoint_path(&loaded)?,
            };
            if let Some(b) = bins {
                if let Some(section) = loaded.config.diagnose.as_mut() {
                    section.bins = b;
                }
            }
            commands::diagnose(&loaded.config, &path, &common.out)
        }
        Command::Shapes { common, alpha, samples } => {
            let mut loaded = load(common.config.as_deref())?;
            let mut section: ShapesSection = loaded.config.shapes();
            if let Some(v) = alpha {
                section.alpha = v;
            }
            if let Some(v) = samples {
                section.samples = v;
            }
            loaded.config.shapes = Some(section);
            commands::shapes(&loaded.config, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
