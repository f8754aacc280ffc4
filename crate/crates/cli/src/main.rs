use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dotphase_cli::{
    bench_csv, estimate_csv, estimate_file, run_bench, write_layout, write_render, CheckStatus,
    CliError, GuidelineReport, JobConfig, OutputFormat,
};

#[derive(Parser)]
#[command(name = "dotphase", version, about = "Render, lay out and measure pseudo-periodic dot markers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Job configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Worker threads for bench sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Skips the Hann window before the Megarena transform.
    #[arg(long, global = true)]
    no_apodize: bool,
    /// Silences diagnostics on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Renders a synthetic scene plus a ground-truth sidecar.
    Render,
    /// Estimates marker poses in an image.
    Estimate {
        /// Image to analyze; falls back to `image` in the config.
        image: Option<PathBuf>,
    },
    /// Runs a resolution sweep and writes CSV.
    Bench,
    /// Writes the marker layout as SVG (or PNG for a `.png` output).
    Layout,
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| {
            dotphase::Error::Io {
                path: p.to_path_buf(),
                source: e,
            }
            .into()
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("records serialize") + "\n"
}

fn report_guidelines(cli: &Cli, report: &GuidelineReport) {
    if cli.quiet {
        return;
    }
    for c in &report.checks {
        match c.status {
            CheckStatus::Pass => {}
            CheckStatus::Warn => eprintln!("warn: {}: {}", c.name, c.message),
            CheckStatus::Fail => eprintln!("fail: {}: {}", c.name, c.message),
        }
    }
}

fn load_config(cli: &Cli) -> Result<JobConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = JobConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.output = Some(out.clone());
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if cli.no_apodize {
        cfg.analysis.apodize = false;
    }
    if cli.threads == Some(0) {
        return Err(CliError::Config("--threads must be >= 1".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Render => {
            let out = cfg
                .output
                .clone()
                .ok_or_else(|| CliError::Config("render needs --output".into()))?;
            let (sidecar, path) = write_render(&cfg, &out)?;
            report_guidelines(cli, &sidecar.guidelines);
            if !cli.quiet {
                eprintln!("wrote {} and {}", out.display(), path.display());
            }
        }
        Command::Estimate { image } => {
            let path = image
                .clone()
                .or_else(|| cfg.image.clone())
                .ok_or_else(|| CliError::Config("estimate needs an image path".into()))?;
            let record = estimate_file(&cfg, &path)?;
            report_guidelines(cli, &record.guidelines);
            let text = match cfg.format {
                OutputFormat::Json => json(&record),
                OutputFormat::Csv => estimate_csv(&record),
            };
            emit(cfg.output.as_deref(), &text)?;
        }
        Command::Bench => {
            let rows = run_bench(&cfg, cli.threads)?;
            let text = match cfg.format {
                OutputFormat::Csv => bench_csv(&rows),
                OutputFormat::Json => json(&serde_json::json!({
                    "schema_version": dotphase_cli::SCHEMA_VERSION,
                    "rows": rows,
                })),
            };
            emit(cfg.output.as_deref(), &text)?;
        }
        Command::Layout => {
            let out = cfg
                .output
                .clone()
                .ok_or_else(|| CliError::Config("layout needs --output".into()))?;
            let record = write_layout(&cfg, &out)?;
            if !cli.quiet {
                print!("{}", json(&record));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            print!("{}", json(&e.record()));
            if !cli.quiet {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
