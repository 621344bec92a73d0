//! Command-line driver: configuration, experiment orchestration and
//! plot-ready artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;

use std::path::{Path, PathBuf};

pub use commands::{Registry, Status};
pub use config::{parse_config, parse_config_with, RunConfig};
pub use error::{CliError, ConfigError};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub status: Status,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Complete => 0,
            Status::Partial(_) => 4,
        }
    }
}

/// Worker count for scans: the configured value, capped by QSBIF_THREADS.
pub fn thread_count(configured: usize, env: Option<&str>) -> usize {
    let cap = env.and_then(|s| s.trim().parse::<usize>().ok()).filter(|n| *n > 0);
    match cap {
        Some(c) => configured.min(c),
        None => configured,
    }
    .max(1)
}

/// Run one configured command and write its artifacts into `opts.out_dir`.
/// Nothing is written when the command fails.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    let registry = Registry::builtin();
    let cmd = registry
        .get(&cfg.command)
        .ok_or_else(|| ConfigError::invalid("command", format!("unknown command '{}'", cfg.command)))?;
    let field = commands::model(cfg)?;
    let threads = thread_count(cfg.threads, std::env::var("QSBIF_THREADS").ok().as_deref());
    let ctx = commands::Context { cfg, field, verbose: opts.verbose, threads };
    let mut artifacts = output::Artifacts::new(output::Meta::new(&cfg.command, &cfg.model, &cfg.to_text(), cfg.seed));
    let status = cmd.run(&ctx, &mut artifacts)?;
    let files = artifacts.commit(&opts.out_dir)?;
    Ok(RunReport { status, files })
}

/// Parse a configuration file (or preset) and run it, returning the exit
/// code. Errors are printed to stderr as JSON.
pub fn run_text(command: &str, text: &str, seed: Option<u64>, out_dir: Option<&Path>, verbose: bool) -> i32 {
    let result = (|| {
        let cfg = parse_config_with(text, seed)?;
        if cfg.command != command {
            return Err(CliError::Config(ConfigError::invalid(
                "command",
                format!("configuration is for '{}' but '{command}' was requested", cfg.command),
            )));
        }
        let out_dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        run(&cfg, &RunOptions { out_dir, verbose })
    })();
    match result {
        Ok(report) => {
            for f in &report.files {
                if verbose {
                    eprintln!("qsbif: wrote {}", f.display());
                }
            }
            if let Status::Partial(msgs) = &report.status {
                let body = serde_json::json!({ "partial": { "exit_code": 4, "messages": msgs } });
                eprintln!("{body}");
            }
            report.exit_code()
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_cap() {
        assert_eq!(thread_count(8, None), 8);
        assert_eq!(thread_count(8, Some("2")), 2);
        assert_eq!(thread_count(1, Some("4")), 1);
        assert_eq!(thread_count(3, Some("zero")), 3);
        assert_eq!(thread_count(3, Some("0")), 3);
    }
}
