use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use floss_core::checkpoint::Checkpoint;
use floss_core::spectral::SpectralTransform;
use floss_core::timeseries::{load_csv, synthesize, SynthSpec};
use floss_core::train::Scheme;

use floss_cli::commands::{detect, run_ablate, run_evaluate, run_train, EvalTrace, Sweep};
use floss_cli::config::{ExperimentConfig, TaskKind};
use floss_cli::data::write_stream_csv;
use floss_cli::report::{write_json, write_table};
use floss_cli::{plot, CliError};

#[derive(Parser)]
#[command(name = "floss", version, about = "Periodic-invariance experiments for time-series representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the canonical form of a configuration (defaults when omitted).
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a sum-of-sinusoids CSV fixture.
    Synth {
        #[arg(long, value_delimiter = ',', default_value = "24")]
        periods: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        amplitudes: Option<Vec<f64>>,
        #[arg(long, default_value_t = 2000)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        features: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        /// Overrides --noise-std with the level giving this signal-to-noise ratio.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long, env = "FLOSS_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of detected periods over randomly placed windows.
    DetectPeriod {
        #[arg(long)]
        input: PathBuf,
        /// The CSV has no leading timestamp column.
        #[arg(long)]
        no_timestamp: bool,
        #[arg(long, default_value_t = 168)]
        window: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value = "dft")]
        transform: SpectralTransform,
        #[arg(long, env = "FLOSS_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train an encoder and save a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long, env = "FLOSS_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out_checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a downstream task.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train and evaluate one model per setting of a sweep.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: Sweep,
        #[arg(long, env = "FLOSS_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn out_dir(dir: &Path) -> Result<&Path, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Config { config } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            print!("{}", cfg.to_toml());
        }
        Command::Synth {
            periods,
            amplitudes,
            length,
            features,
            noise_std,
            snr_db,
            seed,
            out,
        } => {
            let mut spec = SynthSpec {
                n_features: features,
                noise_std,
                seed,
                ..SynthSpec::periodic(&periods, length)
            };
            if let Some(a) = amplitudes {
                spec.amplitudes = a;
            }
            if let Some(db) = snr_db {
                spec = spec.with_snr_db(db);
            }
            write_stream_csv(&synthesize(&spec)?, &out)?;
        }
        Command::DetectPeriod {
            input,
            no_timestamp,
            window,
            samples,
            transform,
            seed,
            out,
        } => {
            let series = load_csv(&input, !no_timestamp)?;
            let report = detect(&series, window, samples, transform, seed)?;
            let dir = out_dir(&out)?;
            print!("{}", write_json(&dir.join("report.json"), &report)?);
            let mut bars: Vec<(String, f64)> = series_histogram(&report.histogram);
            bars.retain(|(_, c)| *c > 0.0);
            plot::bars(
                &dir.join("histogram.svg"),
                &format!("Detected periods ({} windows of {})", samples, window),
                "period",
                "windows",
                &bars,
            )?;
        }
        Command::Train {
            config,
            scheme,
            seed,
            out_checkpoint,
            out,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(s) = scheme {
                cfg.training.scheme = s;
            }
            let (ckpt, report) = run_train(&cfg)?;
            if let Some(path) = out_checkpoint {
                ckpt.save(&path)?;
            }
            let dir = out_dir(&out)?;
            print!("{}", write_json(&dir.join("report.json"), &report)?);
            let mut curves = vec![
                ("total".to_string(), report.epochs.iter().map(|e| (e.epoch as f64, e.total)).collect()),
                ("companion".to_string(), report.epochs.iter().map(|e| (e.epoch as f64, e.companion)).collect()),
            ];
            let fl: Vec<(f64, f64)> = report.epochs.iter().filter_map(|e| e.floss.map(|f| (e.epoch as f64, f))).collect();
            if !fl.is_empty() {
                curves.push(("floss".to_string(), fl));
            }
            plot::lines(&dir.join("loss.svg"), "Training losses", "epoch", "loss", &curves)?;
        }
        Command::Evaluate {
            checkpoint,
            task,
            config,
            out,
        } => {
            let cfg = load_config(&config, None)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let task = task.unwrap_or(cfg.task.kind);
            let (report, trace) = run_evaluate(&ckpt, &cfg, task)?;
            let dir = out_dir(&out)?;
            print!("{}", write_json(&dir.join("report.json"), &report)?);
            match trace {
                EvalTrace::Forecast { predicted, actual } => {
                    let idx = |v: &[f64]| v.iter().enumerate().map(|(i, y)| ((i + 1) as f64, *y)).collect();
                    plot::lines(
                        &dir.join("forecast.svg"),
                        "First test forecast",
                        "steps ahead",
                        "value",
                        &[("actual".into(), idx(&actual)), ("predicted".into(), idx(&predicted))],
                    )?;
                }
                EvalTrace::Anomaly { first_time, scores, labels, threshold } => {
                    let t = |i: usize| (first_time + i) as f64;
                    let top = scores.iter().copied().fold(0.0, f64::max);
                    plot::lines(
                        &dir.join("anomaly.svg"),
                        "Anomaly scores",
                        "time",
                        "score",
                        &[
                            ("score".into(), scores.iter().enumerate().map(|(i, s)| (t(i), *s)).collect()),
                            ("threshold".into(), vec![(t(0), threshold), (t(scores.len() - 1), threshold)]),
                            (
                                "label".into(),
                                labels.iter().enumerate().map(|(i, l)| (t(i), if *l { top } else { 0.0 })).collect(),
                            ),
                        ],
                    )?;
                }
                EvalTrace::Classify => {}
            }
        }
        Command::Ablate { config, sweep, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let rows = run_ablate(&cfg, sweep)?;
            let dir = out_dir(&out)?;
            write_table(&dir.join("table.csv"), &rows)?;
            print!("{}", write_json(&dir.join("report.json"), &rows)?);
            let metric = |r: &floss_cli::report::AblationRow| {
                r.mse.or(r.accuracy).or(r.f1).unwrap_or(f64::NAN)
            };
            let name = match cfg.task.kind {
                TaskKind::Forecast => "test MSE",
                TaskKind::Classify => "accuracy",
                TaskKind::Anomaly => "F1",
            };
            let bars: Vec<(String, f64)> = rows.iter().map(|r| (r.setting.clone(), metric(r))).collect();
            plot::bars(&dir.join("ablation.svg"), &format!("{} sweep", sweep.as_str()), sweep.as_str(), name, &bars)?;
        }
    }
    Ok(())
}

/// Histogram buckets in numeric order, `none` last.
fn series_histogram(h: &std::collections::BTreeMap<String, usize>) -> Vec<(String, f64)> {
    let mut numeric: Vec<(u64, usize)> = h.iter().filter_map(|(k, c)| k.parse().ok().map(|p| (p, *c))).collect();
    numeric.sort();
    let mut out: Vec<(String, f64)> = numeric.into_iter().map(|(p, c)| (p.to_string(), c as f64)).collect();
    if let Some(n) = h.get("none") {
        out.push(("none".into(), *n as f64));
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
