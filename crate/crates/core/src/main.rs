use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ethbath::config::{ExperimentConfig, ExperimentKind};
use ethbath::runner::run;
use ethbath::Error;

/// Runs one experiment and writes CSV tables, `summary.json` and
/// `manifest.json` to the output directory.
#[derive(Parser, Debug)]
#[command(name = "ethbath", version)]
struct Cli {
    /// eth-stats, thermo, rates, bcf, dynamics, scaling, levelstats,
    /// typicality or multi-op-rates.
    kind: String,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Eigensystem cache; falls back to the config, then `ETHBATH_CACHE`.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for dense linear algebra (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn prepare(cli: &Cli) -> Result<(ExperimentConfig, ExperimentKind), Error> {
    let requested = ExperimentKind::parse(&cli.kind)?;
    let mut config = ExperimentConfig::load(&cli.config)?;
    let kind = config.resolve_kind(Some(requested))?;
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.cache_dir = cli
        .cache_dir
        .clone()
        .or(config.cache_dir.take())
        .or_else(|| std::env::var_os("ETHBATH_CACHE").map(PathBuf::from));
    Ok((config, kind))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let par = if n <= 1 {
            faer::Par::Seq
        } else {
            faer::Par::rayon(n)
        };
        faer::set_global_parallelism(par);
    }
    let outcome = prepare(&cli).and_then(|(config, kind)| run(&config, kind));
    match outcome {
        Ok(manifest) => {
            for w in &manifest.warnings {
                eprintln!("{w}");
            }
            for f in &manifest.files {
                println!("{}  {}", f.sha256, f.name);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
    }
}
