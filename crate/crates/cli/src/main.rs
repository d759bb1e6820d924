//! `ctxnorm`: generate benchmarks, calibrate a delimiter, run permutation
//! experiments and print reports.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

mod config;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use ctxnorm_core::harness::{read_report, write_report, ReportFile};
use ctxnorm_core::{
    calibrate, generate_kv_dataset, run_cnorm_pipeline, run_permutation_experiment,
    run_tokenization_study, save_dataset, sweep_sample_counts, CalibrationMode,
    CalibrationOptions, KvGenConfig,
};
use serde::Serialize;

use config::Settings;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(name = "ctxnorm", version, about = "Context-format normalization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic key-value extraction dataset.
    GenKv {
        /// Key-value pairs per sample.
        #[arg(long)]
        pairs: usize,
        /// Hex characters per key and per value.
        #[arg(long)]
        chars: usize,
        /// Number of samples.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(short, long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score candidate delimiters by attention balance and pick one.
    Calibrate {
        #[command(flatten)]
        settings: Settings,
        /// Calibrate once per sample count and report selection stability.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<usize>>,
    },
    /// Gold-position permutation run with one format.
    RunPerm {
        #[command(flatten)]
        settings: Settings,
    },
    /// Calibrate, then run with the selected format and a `none` baseline.
    Pipeline {
        #[command(flatten)]
        settings: Settings,
    },
    /// Token counts and accuracy per delimiter, with their correlation.
    TokStudy {
        #[command(flatten)]
        settings: Settings,
    },
    /// Print a report; with two experiment files, a baseline-vs-treated delta.
    Report {
        #[arg(long = "in", value_name = "PATH", required = true, num_args = 1..=2)]
        inputs: Vec<PathBuf>,
    },
}

fn timestamp() -> Option<String> {
    Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

fn save<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<(), CliError> {
    write_report(path, value, force).map_err(|e| CliError::Runtime(e.into()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn calibration_options<'a>(
    s: &Settings,
    held_out: Option<&'a ctxnorm_core::Dataset>,
) -> Result<CalibrationOptions<'a>, CliError> {
    let sample_count = s.samples();
    if sample_count == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    Ok(CalibrationOptions {
        sample_count,
        seed: s.calib_seed.unwrap_or(0),
        mode: held_out.map_or(CalibrationMode::EvalSet, CalibrationMode::HeldOut),
    })
}

fn gen_kv(pairs: usize, chars: usize, n: usize, seed: u64, out: &Path, force: bool) -> Result<(), CliError> {
    let config = KvGenConfig {
        num_pairs: pairs,
        char_len: chars,
        num_samples: n,
        seed,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if out.exists() && !force {
        return Err(CliError::Runtime(anyhow!(
            "{} exists (use --force to overwrite)",
            out.display()
        )));
    }
    let dataset = generate_kv_dataset(&config).map_err(|e| CliError::Runtime(e.into()))?;
    save_dataset(&dataset, out).map_err(|e| CliError::Runtime(e.into()))?;
    eprintln!("wrote {} samples to {}", dataset.len(), out.display());
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenKv {
            pairs,
            chars,
            n,
            seed,
            out,
            force,
        } => gen_kv(pairs, chars, n, seed, &out, force),
        Command::Calibrate { settings, sweep } => {
            let s = settings.resolve()?;
            let out = s.out()?.to_owned();
            let dataset = s.dataset()?;
            let held_out = s.held_out()?;
            let calib = calibration_options(&s, held_out.as_ref())?;
            let candidates = s.candidates()?;
            let opts = s.run_options()?;
            let live = s.backend()?;
            match sweep {
                Some(counts) => {
                    let mut report = sweep_sample_counts(&dataset, live.get(), &candidates, &counts, &calib, &opts)
                        .context("calibration sweep failed")?;
                    report.created_at = timestamp();
                    print!("{}", render::sweep(&report));
                    live.finish()?;
                    save(&out, &report, s.force())
                }
                None => {
                    let mut report =
                        calibrate(&dataset, live.get(), &candidates, &calib, &opts).context("calibration failed")?;
                    report.created_at = timestamp();
                    print!("{}", render::calibration(&report));
                    live.finish()?;
                    save(&out, &report, s.force())
                }
            }
        }
        Command::RunPerm { settings } => {
            let s = settings.resolve()?;
            let out = s.out()?.to_owned();
            let dataset = s.dataset()?;
            let format = s.format()?;
            let opts = s.run_options()?;
            let live = s.backend()?;
            let mut result = run_permutation_experiment(&dataset, live.get(), &format, &s.plan(&dataset), &opts)
                .context("permutation run failed")?;
            result.created_at = timestamp();
            print!("{}", render::experiment(&result));
            live.finish()?;
            save(&out, &result, s.force())
        }
        Command::Pipeline { settings } => {
            let s = settings.resolve()?;
            let out = s.out()?.to_owned();
            let dataset = s.dataset()?;
            let held_out = s.held_out()?;
            let calib = calibration_options(&s, held_out.as_ref())?;
            let candidates = s.candidates()?;
            let opts = s.run_options()?;
            let live = s.backend()?;
            let mut outcome =
                run_cnorm_pipeline(&dataset, live.get(), &candidates, &calib, &s.plan(&dataset), &opts)
                    .context("pipeline failed")?;
            outcome.created_at = timestamp();
            print!("{}", render::pipeline(&outcome));
            live.finish()?;
            save(&out, &outcome, s.force())
        }
        Command::TokStudy { settings } => {
            let s = settings.resolve()?;
            let out = s.out()?.to_owned();
            let dataset = s.dataset()?;
            let delimiters = s.delimiters()?;
            let opts = s.run_options()?;
            let live = s.backend()?;
            let mut report =
                run_tokenization_study(&dataset, live.get(), &delimiters, s.ratio(), &s.plan(&dataset), &opts)
                    .context("tokenization study failed")?;
            report.created_at = timestamp();
            print!("{}", render::tokenization(&report));
            live.finish()?;
            save(&out, &report, s.force())
        }
        Command::Report { inputs } => {
            let reports = inputs
                .iter()
                .map(|p| read_report(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>, _>>()?;
            match reports.as_slice() {
                [one] => print!("{}", render::any(one)),
                [a, b] => {
                    let as_run = |r: &ReportFile| match r {
                        ReportFile::Experiment(e) => Some(e.clone()),
                        ReportFile::Pipeline(p) => Some(p.result.clone()),
                        _ => None,
                    };
                    let (Some(base), Some(treated)) = (as_run(a), as_run(b)) else {
                        return Err(CliError::Usage(
                            "comparing two files needs experiment or pipeline reports".into(),
                        ));
                    };
                    print!("{}", render::delta(&base, &treated).map_err(|e| CliError::Runtime(anyhow!(e)))?);
                }
                _ => unreachable!("clap limits --in to two files"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
