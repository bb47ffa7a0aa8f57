use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featreplay_core::experiment::{
    dump_samples, load_config, run_experiment, run_sweep, summary_table, write_error_file,
    ExperimentConfig,
};
use featreplay_core::Error;

/// Continual training of conditional generators with feature-space replay.
#[derive(Parser)]
#[command(name = "featreplay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the configured one, then `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stream and write metrics, ledger, report and checkpoints.
    Run(Common),
    /// Run every value of the configured sweep axis and compare them.
    Sweep(Common),
    /// Write generated samples from a checkpoint as per-condition CSV.
    Dump {
        /// Checkpoint written by `run`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// If given, the checkpoint must come from this configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated zero-based conditions (default: all).
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<usize>>,
        /// Samples per condition.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples")]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Parse a configuration and print it with all defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = load_config(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output_dir = Some(out.clone());
    cfg.validate()?;
    Ok((cfg, out))
}

fn fail(e: &Error, dir: Option<&Path>, hash: Option<&str>) -> ExitCode {
    eprintln!("error: {e}");
    if let Some(d) = dir {
        if let Err(w) = write_error_file(d, e, hash) {
            eprintln!("error: could not write error.json: {w}");
        }
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            let (cfg, out) = match prepare(&common) {
                Ok(v) => v,
                Err(e) => return fail(&e, common.out.as_deref(), None),
            };
            let hash = cfg.hash();
            match run_experiment(&cfg, &out, !common.quiet) {
                Ok(report) => {
                    if !common.quiet {
                        print!("{}", summary_table(&report));
                        println!("outputs in {}", out.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e, Some(&out), Some(&hash)),
            }
        }
        Command::Sweep(common) => {
            let (cfg, out) = match prepare(&common) {
                Ok(v) => v,
                Err(e) => return fail(&e, common.out.as_deref(), None),
            };
            let hash = cfg.hash();
            match run_sweep(&cfg, &out, !common.quiet) {
                Ok(summary) => {
                    if !common.quiet {
                        println!("{:<24} {:>8} {:>10} {:>10} {:>10}", "setting", "status", "accuracy", "FS", "k(FS)");
                        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                        for r in &summary.rows {
                            println!(
                                "{:<24} {:>8} {:>10} {:>10} {:>10}",
                                r.setting,
                                r.status,
                                cell(r.accuracy_final),
                                cell(r.overall_fs),
                                cell(r.slope_fs)
                            );
                        }
                        println!("comparison in {}", out.join("comparison.csv").display());
                    }
                    if summary.failed() {
                        eprintln!("error: some sweep settings failed; see comparison.json");
                        ExitCode::from(1)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(&e, Some(&out), Some(&hash)),
            }
        }
        Command::Dump {
            checkpoint,
            config,
            conditions,
            n,
            seed,
            out,
            quiet,
        } => {
            let expected = match config.as_deref().map(load_config).transpose() {
                Ok(c) => c.map(|c| c.hash()),
                Err(e) => return fail(&e, Some(&out), None),
            };
            match dump_samples(&checkpoint, expected.as_deref(), conditions.as_deref(), n, seed, &out) {
                Ok(paths) => {
                    if !quiet {
                        for p in paths {
                            println!("{}", p.display());
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e, Some(&out), expected.as_deref()),
            }
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
                eprintln!("config_hash {}", cfg.hash());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, None, None),
        },
    }
}
