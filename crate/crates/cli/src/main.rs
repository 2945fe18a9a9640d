use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use slr_core::experiment::{self, Preset, RunConfig};
use slr_core::par::{self, Exec};
use slr_core::validate::{self, Level};

#[derive(Parser)]
#[command(
    name = "slr",
    version,
    about = "Single-location regression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSVs under the output directory.
    Run(RunArgs),
    /// Write the 25x25 projected-gradient vector field on the manifold.
    Field(RunArgs),
    /// Cross-check closed forms against Monte Carlo and finite differences.
    Validate {
        #[arg(long, default_value = "fast")]
        level: Level,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// List the built-in presets and their resolved parameters.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// key=value config file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_path`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct ExecArgs {
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Disable the data-parallel path.
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let text = match &args.config {
        Some(path) => {
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => String::new(),
    };
    let mut cfg = RunConfig::from_config_text(&text, args.preset)?;
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("override `{kv}` is not key=value"))?;
        cfg.set(k.trim(), v.trim()).map_err(anyhow::Error::msg)?;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    } else if cfg.seed.is_none() {
        cfg.seed = experiment::seed_from_env()?;
    }
    if let Some(out) = &args.out {
        cfg.output_path = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_output(out: &experiment::RunOutput) {
    for line in &out.summary {
        println!("{line}");
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let cfg = resolve(&args)?;
            let exec = args.exec.exec();
            let out = par::with_workers(args.exec.workers, || experiment::run(&cfg, exec))?;
            print_output(&out);
        }
        Command::Field(args) => {
            let cfg = resolve(&args)?;
            print_output(&experiment::run_field(&cfg)?);
        }
        Command::Validate { level, seed, exec } => {
            let seed = match seed {
                Some(s) => s,
                None => experiment::seed_from_env()?.unwrap_or(experiment::DEFAULT_SEED),
            };
            let mode = exec.exec();
            let results = par::with_workers(exec.workers, || validate::run_all(level, seed, mode));
            let mut failed = 0;
            for r in &results {
                println!("{}", r.line());
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                println!("{failed} of {} suites failed", results.len());
                return Ok(ExitCode::FAILURE);
            }
            println!("all {} suites passed", results.len());
        }
        Command::Presets => {
            for p in Preset::ALL {
                println!("[{}]", p.name());
                print!("{}", p.config().to_config_string());
                println!();
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
