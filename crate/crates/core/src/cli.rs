//! Command-line front end. Every command writes its artifacts under `--out`
//! and logs one JSON object per line on stdout.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::data::{augment, generate_synthetic, load_csv, save_csv, AugmentSpec};
use crate::error::{PadError, Result};
use crate::gradcheck::{self, GradcheckConfig, GradcheckReport};
use crate::metrics::{render_table, EvalReport, MetricSummary};
use crate::pipeline::{self, evaluate_samples, RunConfig};
use crate::train::EpochLog;

/// Exit code for a failed built-in check (gradcheck).
pub const EXIT_CHECK_FAILED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "pad", version, about = "Anomaly and precursor-of-anomaly detection")]
pub struct Cli {
    /// Worker threads for window-parallel work (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark as CSV.
    Synth(Common),
    /// Implant labeled anomalies into an unlabeled CSV.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train and write a checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Fraction of observations removed from every window; overrides
        /// `data.drop`.
        #[arg(long, value_parser = parse_drop)]
        drop: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare tape gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PoA F1 as a function of the output length.
    Sweep(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn parse_drop(s: &str) -> std::result::Result<f64, String> {
    match s {
        "0" | "0.0" => Ok(0.0),
        "0.3" => Ok(0.3),
        "0.5" => Ok(0.5),
        "0.7" => Ok(0.7),
        _ => Err(format!("drop must be one of 0, 0.3, 0.5, 0.7 (got {s})")),
    }
}

/// One JSON object per line on stdout.
pub fn log_line(event: &str, fields: Value) {
    let mut obj = json!({ "event": event });
    if let (Some(o), Value::Object(f)) = (obj.as_object_mut(), fields) {
        o.extend(f);
    }
    println!("{obj}");
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PadError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PadError::Contract(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| PadError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| PadError::io(path, e))
}

/// `synthetic.csv` plus `synthetic.json` (segments and config).
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let syn = cfg
        .data
        .synthetic
        .clone()
        .ok_or_else(|| PadError::Config("synth needs a [data.synthetic] section".into()))?;
    ensure_dir(out)?;
    let generated = generate_synthetic(&crate::data::SyntheticConfig {
        seed: crate::data::derive_seed(cfg.seed, "synthetic"),
        ..syn
    })?;
    let csv = out.join("synthetic.csv");
    let meta = out.join("synthetic.json");
    save_csv(&generated.sequence, &csv)?;
    write_json(
        &meta,
        &json!({
            "config": cfg.snapshot(),
            "anomalies": generated.anomalies,
            "ramps": generated.ramps,
            "anomaly_ratio": generated.sequence.anomaly_ratio(),
        }),
    )?;
    Ok(vec![csv, meta])
}

/// `augmented.csv` plus `augmented.json` (config and implant summary).
pub fn cmd_augment(input: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let seq = load_csv(input)?;
    let spec = AugmentSpec {
        seed: crate::data::derive_seed(cfg.seed, "augment"),
        ..cfg.augment.clone().unwrap_or_default()
    };
    let augmented = augment(&seq, &spec)?;
    ensure_dir(out)?;
    let csv = out.join("augmented.csv");
    let meta = out.join("augmented.json");
    save_csv(&augmented, &csv)?;
    write_json(
        &meta,
        &json!({
            "config": cfg.snapshot(),
            "input": input,
            "original_len": seq.len(),
            "augmented_len": augmented.len(),
            "implanted_ratio": (augmented.len() - seq.len()) as f64 / seq.len() as f64,
        }),
    )?;
    Ok(vec![csv, meta])
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub config: Value,
    pub best_epoch: usize,
    pub best_val_f1_sum: Option<f64>,
    pub epochs_run: usize,
    pub parameter_count: usize,
}

/// `checkpoint.json`, `train_log.jsonl` and `train_summary.json`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainSummary> {
    ensure_dir(out)?;
    let data = pipeline::prepare(cfg)?;
    let mut lines = String::new();
    let fit = pipeline::train(cfg, &data, |log| {
        lines.push_str(&serde_json::to_string(log).expect("log serializes"));
        lines.push('\n');
        on_epoch(log);
    })?;
    write_text(&out.join("train_log.jsonl"), &lines)?;
    Checkpoint::new(&fit.best_params, &cfg.model, &cfg.solver, Some(data.norm), cfg.snapshot())
        .save(&out.join("checkpoint.json"))?;
    let summary = TrainSummary {
        config: cfg.snapshot(),
        best_epoch: fit.best_epoch,
        best_val_f1_sum: fit.best_score.is_finite().then_some(fit.best_score),
        epochs_run: fit.history.len(),
        parameter_count: fit.best_params.parameter_count(),
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub config: Value,
    pub drop: f64,
    pub threshold: f64,
    pub anomaly: MetricSummary,
    pub poa: MetricSummary,
}

/// `metrics.json`, `report.txt` and `predictions.csv`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    out: &Path,
    drop: Option<f64>,
    threshold: Option<f64>,
) -> Result<EvalMetrics> {
    let mut cfg = cfg.clone();
    if let Some(d) = drop {
        cfg.data.drop = d;
    }
    let drop = cfg.data.drop;
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.params()?;
    if ck.model.n_channels != cfg.model.n_channels {
        return Err(PadError::Config(format!(
            "checkpoint expects {} channels, config has {}",
            ck.model.n_channels, cfg.model.n_channels
        )));
    }
    let threshold = threshold.unwrap_or(cfg.train.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PadError::Config(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let data = pipeline::prepare_with(&cfg, ck.norm.as_ref())?;
    let (a, p) = evaluate_samples(&data.test, &params, &ck.model, &ck.solver, threshold)?;

    ensure_dir(out)?;
    let metrics = EvalMetrics {
        config: cfg.snapshot(),
        drop,
        threshold,
        anomaly: a.summary(),
        poa: p.summary(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    let title = format!("test windows: {}  drop: {drop}  threshold: {threshold}", a.labels.len());
    write_text(&out.join("report.txt"), &render_table(&title, &[&a, &p]))?;
    write_predictions(&out.join("predictions.csv"), &data.test, &a, &p)?;
    Ok(metrics)
}

fn write_predictions(
    path: &Path,
    samples: &[crate::data::BatchSample],
    a: &EvalReport,
    p: &EvalReport,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PadError::Input(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| PadError::Input(format!("{}: {e}", path.display()));
    w.write_record(["window", "p_anomaly", "label_anomaly", "p_poa", "label_poa"])
        .map_err(err)?;
    for (i, s) in samples.iter().enumerate() {
        w.write_record([
            s.input.window_index().to_string(),
            a.probabilities[i].to_string(),
            a.labels[i].to_string(),
            p.probabilities[i].to_string(),
            p.labels[i].to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| PadError::io(path, e))
}

/// Runs the check and writes `gradcheck.json` when `out` is given.
pub fn cmd_gradcheck(cfg: &GradcheckConfig, out: Option<&Path>) -> Result<GradcheckReport> {
    let report = gradcheck::run(cfg)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &json!({ "config": cfg, "report": report }))?;
    }
    Ok(report)
}

pub fn gradcheck_verdict(report: &GradcheckReport) -> String {
    let status = if report.passed { "PASS" } else { "FAIL" };
    format!("{status} max_rel_err ≤ {:e}", report.tolerance)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: usize,
    pub poa_f1: f64,
}

/// `sweep.csv` with one `(p, poa_f1)` row per horizon, and `sweep.json`.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path, mut on_row: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    if cfg.sweep_horizons.is_empty() {
        return Err(PadError::Config("sweep_horizons is empty".into()));
    }
    ensure_dir(out)?;
    let mut rows = Vec::new();
    for &p in &cfg.sweep_horizons {
        let mut run = cfg.clone();
        run.train.poa_horizon = p;
        let data = pipeline::prepare(&run)?;
        let fit = pipeline::train(&run, &data, |_| {})?;
        let (_, poa) = pipeline::evaluate_test(&run, &data, &fit.best_params)?;
        let row = SweepRow { p, poa_f1: poa.f1 };
        on_row(&row);
        rows.push(row);
    }
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| PadError::Input(format!("{}: {e}", path.display())))?;
    for r in &rows {
        w.serialize(r).map_err(|e| PadError::Input(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| PadError::io(&path, e))?;
    write_json(&out.join("sweep.json"), &json!({ "config": cfg.snapshot(), "rows": rows }))?;
    Ok(rows)
}

/// Parse arguments, run the command, and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&PadError::Config(format!("--threads: {e}")));
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}

fn fail(e: &PadError) -> i32 {
    let code = e.exit_code();
    eprintln!("{}", json!({ "event": "error", "kind": e.kind(), "exit_code": code, "message": e.to_string() }));
    code
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth(common) => {
            let cfg = load_config(&common)?;
            let files = cmd_synth(&cfg, &common.out)?;
            log_line("synth", json!({ "files": files }));
        }
        Command::Augment { input, common } => {
            let cfg = load_config(&common)?;
            let files = cmd_augment(&input, &cfg, &common.out)?;
            log_line("augment", json!({ "files": files }));
        }
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let summary = cmd_train(&cfg, &common.out, |log| log_line("epoch", json!(log)))?;
            log_line(
                "train",
                json!({
                    "best_epoch": summary.best_epoch,
                    "best_val_f1_sum": summary.best_val_f1_sum,
                    "checkpoint": common.out.join("checkpoint.json"),
                }),
            );
        }
        Command::Eval {
            common,
            checkpoint,
            drop,
            threshold,
        } => {
            let cfg = load_config(&common)?;
            let ck = checkpoint.unwrap_or_else(|| common.out.join("checkpoint.json"));
            let m = cmd_eval(&cfg, &ck, &common.out, drop, threshold)?;
            log_line("eval", json!({ "drop": m.drop, "anomaly": m.anomaly, "poa": m.poa }));
        }
        Command::Gradcheck { config, seed, out } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| PadError::Config(format!("{}: {e}", path.display())))?;
                    if path.extension().is_some_and(|e| e == "toml") {
                        toml::from_str(&text).map_err(|e| PadError::Config(format!("config: {e}")))?
                    } else {
                        serde_json::from_str(&text).map_err(|e| PadError::Config(format!("config: {e}")))?
                    }
                }
                None => GradcheckConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.model.validate()?;
            cfg.solver.validate()?;
            let report = cmd_gradcheck(&cfg, out.as_deref())?;
            log_line(
                "gradcheck",
                json!({ "verdict": gradcheck_verdict(&report), "max_rel_err": report.max_rel_err, "groups": report.groups }),
            );
            if !report.passed {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Command::Sweep(common) => {
            let cfg = load_config(&common)?;
            let rows = cmd_sweep(&cfg, &common.out, |row| log_line("sweep", json!(row)))?;
            log_line("sweep_done", json!({ "rows": rows.len(), "csv": common.out.join("sweep.csv") }));
        }
    }
    Ok(0)
}
