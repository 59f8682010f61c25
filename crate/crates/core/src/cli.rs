//! Command-line driver.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{load_config, ConfigError, ConfigIssue, ScenarioConfig};
use crate::engine::Metrics;
use crate::error::Error;
use crate::scenario::{plan, run_scenario, train, ScenarioError};
use crate::trace::Trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tddsim", version, about = "Slot-level simulator for TDD mmWave distribution networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// JSON-lines trace output.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    /// Per-flow metrics CSV output.
    #[arg(long, global = true)]
    pub metrics: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long = "duration-ms", global = true, allow_negative_numbers = true)]
    pub duration_ms: Option<f64>,
    /// Check the configuration and exit without writing anything.
    #[arg(long = "validate-only", global = true)]
    pub validate_only: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Check a scenario file.
    Validate,
    /// Train, plan and simulate (default).
    Run,
    /// Train and plan; print the global schedule.
    Plan,
    /// Run beamforming only; print trained links.
    Bf,
}

/// One row of the metrics CSV.
#[derive(Debug, Serialize)]
struct FlowRow {
    ap: String,
    sta: String,
    direction: String,
    distance_m: f64,
    offered_bits: u64,
    delivered_bits: u64,
    dropped_bits: u64,
    queued_bits: u64,
    delivered_mpdus: u64,
    goodput_bps: f64,
    mean_latency_us: Option<f64>,
    max_latency_us: Option<u64>,
    max_ack_delay_us: Option<u64>,
    mean_snr_db: Option<f64>,
    assigned_data_slots: u64,
    used_data_slots: u64,
    utilization: f64,
    hop_ok: bool,
    dl_rate_ok: bool,
    latency_ok: bool,
}

pub fn write_metrics_csv<W: Write>(metrics: &Metrics, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for f in &metrics.flows {
        let req = metrics.requirements(f);
        out.serialize(FlowRow {
            ap: f.ap.to_string(),
            sta: f.sta.to_string(),
            direction: f.direction.to_string(),
            distance_m: f.distance_m,
            offered_bits: f.offered_bits,
            delivered_bits: f.delivered_bits,
            dropped_bits: f.dropped_bits,
            queued_bits: f.queued_bits,
            delivered_mpdus: f.delivered_mpdus,
            goodput_bps: f.goodput_bps(metrics.duration_us),
            mean_latency_us: f.mean_latency_us(),
            max_latency_us: f.max_latency_us(),
            max_ack_delay_us: f.max_ack_delay_us(),
            mean_snr_db: (!f.snr_db.is_empty()).then(|| f.snr_db.iter().sum::<f64>() / f.snr_db.len() as f64),
            assigned_data_slots: f.assigned_data_slots,
            used_data_slots: f.used_data_slots,
            utilization: f.utilization(),
            hop_ok: req.hop_ok,
            dl_rate_ok: req.dl_rate_ok,
            latency_ok: req.latency_ok,
        })?;
    }
    out.flush()?;
    Ok(())
}

fn report(code: i32, body: serde_json::Value) -> i32 {
    eprintln!("{}", serde_json::to_string_pretty(&body).expect("json values serialize"));
    code
}

fn config_error(issues: Vec<ConfigIssue>) -> i32 {
    report(EXIT_CONFIG, json!({ "status": "config_error", "errors": issues }))
}

fn model_error(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Structure(_) => report(
            EXIT_CONFIG,
            json!({ "status": "config_error", "errors": [{ "path": "", "message": e.to_string() }] }),
        ),
        _ => report(EXIT_RUNTIME, json!({ "status": "runtime_error", "message": e.to_string() })),
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> i32 {
    report(EXIT_RUNTIME, json!({ "status": "io_error", "path": path.display().to_string(), "message": e.to_string() }))
}

fn write_trace(path: &Path, trace: &Trace) -> std::result::Result<(), i32> {
    let f = File::create(path).map_err(|e| io_error(path, e))?;
    trace.write_jsonl(BufWriter::new(f)).map_err(|e| io_error(path, e))
}

fn write_metrics(path: &Path, m: &Metrics) -> std::result::Result<(), i32> {
    let f = File::create(path).map_err(|e| io_error(path, e))?;
    write_metrics_csv(m, BufWriter::new(f)).map_err(|e| io_error(path, e))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("outputs serialize"));
}

fn load(cli: &Cli) -> std::result::Result<ScenarioConfig, i32> {
    let Some(path) = &cli.config else {
        return Err(config_error(vec![ConfigIssue {
            path: "--config".into(),
            message: "a scenario file is required".into(),
        }]));
    };
    let mut cfg = match load_config(path) {
        Ok(c) => c,
        Err(e @ (ConfigError::Parse(_) | ConfigError::Io { .. })) => {
            return Err(report(EXIT_CONFIG, json!({ "status": "config_error", "errors": e.issues() })));
        }
        Err(e) => return Err(config_error(e.issues())),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.duration_ms {
        cfg.duration_ms = d;
    }
    if let Some(p) = &cli.trace {
        cfg.output.trace = Some(p.clone());
    }
    if let Some(p) = &cli.metrics {
        cfg.output.metrics = Some(p.clone());
    }
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(config_error(issues));
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> i32 {
    let cfg = match load(cli) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let command = cli.command.unwrap_or(Command::Run);
    if cli.validate_only || matches!(command, Command::Validate) {
        println!("{}", json!({ "status": "ok", "nodes": cfg.nodes.len(), "demands": cfg.demands.len() }));
        return EXIT_OK;
    }
    let nodes = match cfg.node_models() {
        Ok(n) => n,
        Err(e) => return model_error(&e),
    };
    match command {
        Command::Bf => {
            let mut trace = Trace::new();
            let training = match train(&cfg, &nodes, &mut trace) {
                Ok(t) => t,
                Err(e) => return model_error(&e),
            };
            if let Some(p) = &cfg.output.trace {
                if let Err(code) = write_trace(p, &trace) {
                    return code;
                }
            }
            print_json(&training);
            EXIT_OK
        }
        Command::Plan => {
            let mut trace = Trace::new();
            let result = train(&cfg, &nodes, &mut trace).and_then(|t| plan(&cfg, &nodes, &t, &mut trace));
            let p = match result {
                Ok(p) => p,
                Err(e) => return model_error(&e),
            };
            print_json(&p.schedule);
            if p.infeasibility.is_empty() {
                EXIT_OK
            } else {
                report(EXIT_INFEASIBLE, json!({ "status": "infeasible", "report": p.infeasibility }))
            }
        }
        Command::Run | Command::Validate => match run_scenario(&cfg) {
            Ok(out) => {
                if let Some(p) = &cfg.output.trace {
                    if let Err(code) = write_trace(p, &out.trace) {
                        return code;
                    }
                }
                if let Some(p) = &cfg.output.metrics {
                    if let Err(code) = write_metrics(p, &out.metrics) {
                        return code;
                    }
                }
                let flows: Vec<_> = out
                    .metrics
                    .flows
                    .iter()
                    .map(|f| {
                        json!({
                            "ap": f.ap, "sta": f.sta, "direction": f.direction,
                            "goodput_bps": f.goodput_bps(out.metrics.duration_us),
                            "max_latency_us": f.max_latency_us(),
                        })
                    })
                    .collect();
                println!("{}", json!({ "status": "ok", "duration_us": out.metrics.duration_us, "flows": flows }));
                EXIT_OK
            }
            Err(ScenarioError::Infeasible(r)) => {
                report(EXIT_INFEASIBLE, json!({ "status": "infeasible", "report": r }))
            }
            Err(ScenarioError::Model(e)) => model_error(&e),
        },
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
