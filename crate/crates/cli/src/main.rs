//! `bdls run | validate | preset`

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use bdls::experiment::{run, validate, ExperimentConfig};
use bdls::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdls", version, about = "Stochastic Becker-Döring / Lifshitz-Slyozov experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Ceiling on the predicted number of events
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory; defaults to the config's output_dir, then
        /// $BDLS_OUTPUT_DIR/<experiment>
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print or save an embedded configuration
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, o: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = o.seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(workers) = o.workers {
        cfg.ensemble.workers = workers;
    }
    if let Some(budget) = o.budget {
        cfg.budget.ceiling = budget;
    }
    Ok(cfg)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn output_dir(cfg: &ExperimentConfig, config_path: &Path, flag: Option<PathBuf>) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Some(dir) = &cfg.output_dir {
        return base_dir(config_path).join(dir);
    }
    let root = std::env::var_os("BDLS_OUTPUT_DIR").map_or_else(|| PathBuf::from("bdls-output"), PathBuf::from);
    root.join(cfg.experiment.to_string())
}

fn execute(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run { config, overrides, out } => {
            let started = Instant::now();
            let cfg = load(&config, &overrides)?;
            let result = run(&cfg, &base_dir(&config))?;
            let dir = output_dir(&cfg, &config, out);
            for w in &result.report.warnings {
                eprintln!("warning: {w}");
            }
            result.artifacts.write_to(&dir)?;
            let timing = serde_json::json!({
                "wall_seconds": started.elapsed().as_secs_f64(),
                "finished_unix": SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            });
            std::fs::write(dir.join("run_timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
            for c in &result.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for f in &result.flags {
                println!("FLAG {f}");
            }
            println!("artifacts written to {}", dir.display());
            Ok(true)
        }
        Command::Validate { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let report = validate(&cfg, &base_dir(&config));
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.is_ok())
        }
        Command::Preset { name, out } => {
            let text = ExperimentConfig::preset(&name)?.to_json()?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join(format!("{name}.json"));
                    std::fs::write(&path, text)?;
                    println!("{}", path.display());
                }
                None => print!("{text}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}
