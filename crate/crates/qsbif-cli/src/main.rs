use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use qsbif_cli::presets;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Simulate,
    Equilibria,
    Continue,
    FoldCurve,
    HopfCurve,
    Cycles,
    Lyap,
    Scan,
    Sweep,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Simulate => "simulate",
            Cmd::Equilibria => "equilibria",
            Cmd::Continue => "continue",
            Cmd::FoldCurve => "fold-curve",
            Cmd::HopfCurve => "hopf-curve",
            Cmd::Cycles => "cycles",
            Cmd::Lyap => "lyap",
            Cmd::Scan => "scan",
            Cmd::Sweep => "sweep",
        }
    }
}

/// Bifurcation analysis of quorum-sensing population models.
#[derive(Debug, Parser)]
#[command(name = "qsbif", version)]
struct Args {
    command: Cmd,
    /// Configuration file.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (fig3a, fig3b, fig4, fig5-regions, fig5-sweeps,
    /// fig6, fig7-topology, fig8-topology).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; overrides [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match (&args.config, &args.preset) {
        (Some(path), _) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                let err = qsbif_cli::CliError::Io { path: path.display().to_string(), message: e.to_string() };
                eprintln!("{}", err.to_json());
                return ExitCode::from(err.exit_code() as u8);
            }
        },
        (None, Some(name)) => match presets::preset(name) {
            Some(t) => t.to_string(),
            None => {
                let err = qsbif_cli::CliError::Config(qsbif_cli::ConfigError::invalid("preset", format!("unknown preset '{name}'")));
                eprintln!("{}", err.to_json());
                return ExitCode::from(err.exit_code() as u8);
            }
        },
        (None, None) => unreachable!("clap requires --config or --preset"),
    };
    let code = qsbif_cli::run_text(args.command.name(), &text, args.seed, args.out.as_deref(), args.verbose);
    ExitCode::from(code as u8)
}
