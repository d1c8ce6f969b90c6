use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hbmsim::harness::{self, ExperimentConfig, RunError};

#[derive(Parser)]
#[command(name = "hbmsim", version, about = "HBM / DDR4 memory benchmark simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (default: out/<name>)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a throughput sweep from a JSON config.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in preset.
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets.
    ListPresets,
}

fn load(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|source| RunError::Io { path: path.display().to_string(), source })?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn out_dir(out: Option<PathBuf>, configured: Option<&str>, name: &str) -> PathBuf {
    out.or_else(|| configured.map(PathBuf::from)).unwrap_or_else(|| Path::new("out").join(name))
}

fn dispatch(cmd: Command) -> Result<(), RunError> {
    let (artifact, dir) = match cmd {
        Command::ListPresets => {
            for p in harness::list_presets() {
                println!("{:<24} {}", p.name, p.description);
            }
            return Ok(());
        }
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let result = harness::run_experiment(&cfg)?;
            (harness::run::render(&result), out_dir(out, cfg.output_dir.as_deref(), &cfg.name))
        }
        Command::Sweep { config, out } => {
            let cfg = load(&config)?;
            let result = harness::sweep(&cfg)?;
            (harness::run::render(&result), out_dir(out, cfg.output_dir.as_deref(), &cfg.name))
        }
        Command::Preset { name, out } => {
            let outcome = harness::run_preset(&name)?;
            (outcome.artifact(), out_dir(out, None, &name))
        }
    };
    artifact.write_to(&dir)?;
    if let Some(summary) = artifact.summary() {
        print!("{summary}");
    }
    eprintln!("wrote {} files to {}", artifact.files.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
