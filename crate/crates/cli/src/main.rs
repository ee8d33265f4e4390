mod cloud;
mod fractal;
mod output;
mod tunnel;
mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

/// Hybrid classical/quantum simulations: toy-model validation, detector
/// media, tunneling times and the tetrahedral spin fractal.
#[derive(Parser, Debug)]
#[command(name = "eeqt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trajectory ensemble against the master equation for a finite model.
    Validate(Common),
    /// Particle tracks through a detector medium.
    Cloud(Common),
    /// Traversal and reflection times over a parameter scan.
    Tunnel(Common),
    /// Point cloud, invariant measure and dimensions of the spin fractal.
    Fractal(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Raw text and parsed form of a TOML config.
pub struct Loaded<T> {
    pub text: String,
    pub value: T,
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Loaded<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Loaded { text, value })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Validate(c) => ("validate", c),
        Command::Cloud(c) => ("cloud", c),
        Command::Tunnel(c) => ("tunnel", c),
        Command::Fractal(c) => ("fractal", c),
    };
    if let Some(w) = common.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let result = match &cli.command {
        Command::Validate(c) => validate::run(c),
        Command::Cloud(c) => cloud::run(c),
        Command::Tunnel(c) => tunnel::run(c),
        Command::Fractal(c) => fractal::run(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{name}: error: {e:#}");
            ExitCode::from(2)
        }
    }
}
