use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rglab_cli::{all_checks_pass, parse_range, run, sweep, ExperimentConfig, HarnessError, EXPERIMENTS};

/// Reproducible experiments on random fields and their zero sets.
///
/// Experiment parameters are given as `--param key=value` or, equivalently,
/// `--key value`. Records are written as JSON lines; `sweep` writes CSV.
#[derive(Parser, Debug)]
#[command(name = "rglab", version, after_help = after_help())]
struct Cli {
    /// Experiment to run, or `sweep`.
    experiment: Option<String>,
    /// With `sweep`: the experiment to sweep.
    target: Option<String>,
    /// Experiment parameter as key=value (repeatable).
    #[arg(long = "param", short = 'p', value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// With `sweep`: parameter range as name=v1,v2,...
    #[arg(long, value_name = "NAME=V1,V2,...")]
    range: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output file (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 1 unless every record meets its tolerance.
    #[arg(long)]
    check: bool,
    /// JSON config mirroring the flags; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn after_help() -> String {
    format!(
        "Experiments: {}\nSweep CSV header: {}\nRGLAB_THREADS caps the worker threads.",
        EXPERIMENTS.join(", "),
        rglab_cli::SWEEP_HEADER
    )
}

const KNOWN_FLAGS: [&str; 9] = ["param", "range", "seed", "trials", "out", "check", "config", "help", "version"];

/// Rewrites `--key value` for unknown keys into `--param key=value`.
fn normalize_args(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter().peekable();
    while let Some(a) = it.next() {
        let name = a.strip_prefix("--").map(|n| n.split('=').next().unwrap_or(n).to_string());
        match name {
            Some(n) if !n.is_empty() && !KNOWN_FLAGS.contains(&n.as_str()) => {
                out.push("--param".into());
                match a[2..].split_once('=') {
                    Some((k, v)) => out.push(format!("{k}={v}")),
                    None => {
                        let v = it.next().unwrap_or_default();
                        out.push(format!("{n}={v}"));
                    }
                }
            }
            _ => out.push(a),
        }
    }
    out
}

fn build_config(cli: &Cli, experiment: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => serde_json::from_str::<ExperimentConfig>(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::new(experiment),
    };
    if cli.config.is_none() || !experiment.is_empty() {
        cfg.experiment = experiment.to_string();
    }
    for kv in &cli.params {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| HarnessError::InvalidParams(format!("parameter '{kv}' must look like key=value")))?;
        cfg.params.insert(k.to_string(), v.to_string());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.trials.is_some() {
        cfg.trials = cli.trials;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.display().to_string());
    }
    cfg.check |= cli.check;
    Ok(cfg)
}

fn emit(out: &Option<String>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main_inner() -> Result<bool, HarnessError> {
    let cli = Cli::parse_from(normalize_args(std::env::args().collect()));
    if let Ok(n) = std::env::var("RGLAB_THREADS") {
        let n: usize = n
            .parse()
            .map_err(|_| HarnessError::InvalidParams(format!("RGLAB_THREADS='{n}' is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::InvalidParams(e.to_string()))?;
    }
    let first = cli.experiment.clone().unwrap_or_default();
    if first == "sweep" {
        let target = cli
            .target
            .clone()
            .ok_or_else(|| HarnessError::InvalidParams("usage: rglab sweep <experiment> --range name=v1,v2,...".into()))?;
        let range = cli
            .range
            .as_deref()
            .ok_or_else(|| HarnessError::InvalidParams("sweep needs --range name=v1,v2,...".into()))?;
        let (name, values) = parse_range(range)?;
        let cfg = build_config(&cli, &target)?;
        let (csv, records) = sweep(&cfg, &name, &values)?;
        emit(&cfg.out, &csv)?;
        return Ok(!cfg.check || all_checks_pass(&records));
    }
    if cli.target.is_some() {
        return Err(HarnessError::InvalidParams("only `sweep` takes a second positional argument".into()));
    }
    if first.is_empty() && cli.config.is_none() {
        return Err(HarnessError::InvalidParams(format!(
            "no experiment given; expected one of: {}",
            EXPERIMENTS.join(", ")
        )));
    }
    let cfg = build_config(&cli, &first)?;
    let records = run(&cfg)?;
    let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
    emit(&cfg.out, &text)?;
    Ok(!cfg.check || all_checks_pass(&records))
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("rglab: tolerance check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("rglab: {e}");
            ExitCode::from(2)
        }
    }
}
