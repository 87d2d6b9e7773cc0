use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qbsde_cli::config::Config;
use qbsde_cli::error::CliError;
use qbsde_cli::report::report;
use qbsde_cli::run::{run, RunOptions};

#[derive(Parser)]
#[command(name = "qbsde", version, about = "Quadratic BSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `runs/<config stem>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Summarize a finished run directory as markdown.
    Report { dir: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
            plots,
        } => {
            let mut cfg = Config::load(&config)?;
            if seed.is_some() {
                cfg.seed = seed;
            }
            cfg.validate()?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| CliError::Threads(e.to_string()))?;
            let out = out.unwrap_or_else(|| {
                let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                PathBuf::from("runs").join(stem)
            });
            let opts = RunOptions {
                out: out.clone(),
                plots,
                threads: rayon::current_num_threads(),
            };
            let manifest = run(&cfg, &opts)?;
            let failed = manifest.verdicts.iter().filter(|v| v.pass == Some(false)).count();
            eprintln!(
                "{} finished in {:.2} s: {} outputs, {} failed checks, written to {}",
                manifest.experiment,
                manifest.wall_time_s,
                manifest.outputs.len(),
                failed,
                out.display()
            );
            Ok(())
        }
        Command::Report { dir } => {
            print!("{}", report(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
