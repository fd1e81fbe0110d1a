use clap::{Parser, Subcommand};
use infdelay_cli::{exit_code, run, Command, Overrides, Pipeline};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "infdelay", version, about = "Spectra, invariant manifolds and stability for integral equations with infinite delay")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Problem configuration (INI-style).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for JSON and CSV reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `[grid] h`.
    #[arg(long = "grid-h", global = true)]
    grid_h: Option<f64>,
    /// Only errors on stderr, nothing on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Characteristic roots and their classification.
    Spectrum,
    /// Finite-dimensional blocks, projections and the constants C, C1.
    Decompose,
    /// Cutoff radius, manifold constants and an F_* lattice.
    Manifold,
    /// Cubic coefficient and the central-equation ensemble verdict.
    Central,
    /// One full-equation trajectory.
    Simulate,
    /// Reduced and full verdicts, attractivity, and the `[verify] expect` check.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "info" }))
        .format_timestamp(None)
        .init();
    let command = match cli.command {
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Decompose => Command::Decompose,
        Cmd::Manifold => Command::Manifold,
        Cmd::Central => Command::Central,
        Cmd::Simulate => Command::Simulate,
        Cmd::Verify => Command::Verify,
    };
    let Some(config) = cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(1);
    };
    let overrides = Overrides { seed: cli.seed, grid_h: cli.grid_h };
    let result = Pipeline::load_file(&config, &overrides).and_then(|pipe| {
        log::info!("{}: {} roots in the search region", config.display(), pipe.summary.roots.len());
        run(command, &pipe, &cli.out)
    });
    match result {
        Ok(outcome) => {
            if !cli.quiet {
                for f in &outcome.files {
                    println!("wrote {}", f.display());
                }
                if outcome.code != 0 {
                    println!("verdict disagreement or unmet expectation (exit {})", outcome.code);
                }
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
