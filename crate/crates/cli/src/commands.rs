//! Subcommands of the `rtcshim` binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use rtcshim_core::engine::ManifestEntry;
use rtcshim_core::sdp::{parse_sdp, serialize_sdp, SdpType};
use rtcshim_core::stats::{compute_mos, derive_metrics, StatsReport};
use rtcshim_core::{CategoryId, DispatchOutcome, Engine, InterceptContext, Payload, Scalar, TransformSpec};

use crate::config::{ConfigError, EngineConfig};
use crate::cpu::{run_monitor, ProcStatSampler};
use crate::service::{RunError, Service};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, config or input; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Exit code 1.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(format!("config: {e}"))
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "rtcshim", version, about = "WebRTC signaling interception engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start the engine, the proxy (when configured) and the admin API.
    Run {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Simulated endpoint scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioCommand,
    },
    /// Apply one Session rewrite to the SDP on standard input.
    Munge {
        /// Session builtin, e.g. prefer_codec.
        rewrite: String,
        /// Parameters as key=value.
        params: Vec<String>,
        /// Treat the input as an answer instead of an offer.
        #[arg(long)]
        answer: bool,
    },
    /// Derived metrics and MOS per window of a stats report file.
    Stats {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// List builtins with their parameter schemas.
    Catalog {
        category: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Check a config file and exit.
    Validate { config: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Run a scenario file and write its transcript.
    Run {
        file: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Transcript path; defaults to `<file stem>.transcript.ndjson`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

pub fn load_config(path: Option<&Path>) -> Result<EngineConfig, CliError> {
    let mut config = match path {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    config.validate()?;
    Ok(config)
}

/// `true`/`false` become booleans, numbers become numbers, anything else
/// stays text.
pub fn parse_param(arg: &str) -> Result<(String, Scalar), CliError> {
    let (k, v) = arg
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| usage(format!("parameter `{arg}` is not key=value")))?;
    let value = match v {
        "true" => Scalar::Bool(true),
        "false" => Scalar::Bool(false),
        _ => match v.parse::<f64>() {
            Ok(n) if n.is_finite() => Scalar::Num(n),
            _ => Scalar::Str(v.to_string()),
        },
    };
    Ok((k.to_string(), value))
}

pub fn munge(rewrite: &str, params: &[String], answer: bool, input: &str) -> Result<String, CliError> {
    let mut spec = TransformSpec::new(CategoryId::Session, rewrite);
    for p in params {
        let (k, v) = parse_param(p)?;
        spec.params.insert(k, v);
    }
    let engine = Engine::default();
    engine.install_transform(CategoryId::Session, spec).map_err(usage)?;
    let (sdp_type, method) = if answer {
        (SdpType::Answer, "createAnswer")
    } else {
        (SdpType::Offer, "createOffer")
    };
    let sd = parse_sdp(input, sdp_type).map_err(|e| usage(format!("sdp: {e}")))?;
    let mut ctx = InterceptContext::method("cli", method);
    match engine.dispatch(CategoryId::Session, &mut ctx, Payload::Session(sd)) {
        DispatchOutcome::PassThrough(Payload::Session(sd)) | DispatchOutcome::Modified(Payload::Session(sd)) => {
            Ok(serialize_sdp(&sd))
        }
        DispatchOutcome::Fail { error, .. } => Err(usage(error)),
        other => Err(internal(format!("unexpected {} outcome", other.label()))),
    }
}

fn read_reports(text: &str) -> Result<Vec<StatsReport>, CliError> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| usage(format!("stats file: {e}")));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| usage(format!("stats file line {}: {e}", i + 1))))
        .collect()
}

fn fmt_opt(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map(|v| format!("{:.*}", digits, v * scale)).unwrap_or_else(|| "-".into())
}

/// One row per consecutive pair of reports of each session.
pub fn stats(text: &str, as_json: bool) -> Result<String, CliError> {
    let reports = read_reports(text)?;
    let mut sessions: Vec<(String, Vec<StatsReport>)> = Vec::new();
    for r in reports {
        r.validate().map_err(|e| usage(format!("report {}@{}: {e}", r.session_id, r.taken_at_ms)))?;
        match sessions.iter_mut().find(|(id, _)| *id == r.session_id) {
            Some((_, list)) => list.push(r),
            None => sessions.push((r.session_id.clone(), vec![r])),
        }
    }
    let mut out = String::new();
    if !as_json {
        out.push_str("session\tt_ms\tsend_kbps\trecv_kbps\tloss_pct\tjitter_ms\trtt_ms\tmos\n");
    }
    for (id, list) in &sessions {
        for pair in list.windows(2) {
            let m = derive_metrics(&pair[0], &pair[1]).map_err(|e| usage(format!("{id}: {e}")))?;
            let q = match (m.packet_loss_rate, m.rtt_ms) {
                (Some(loss), Some(rtt)) => compute_mos(loss, rtt, m.jitter_ms.unwrap_or(0.0)).ok(),
                _ => None,
            };
            if as_json {
                let row = serde_json::json!({
                    "session": id,
                    "metrics": m,
                    "r_factor": q.map(|q| q.r_factor),
                    "mos": q.map(|q| q.mos),
                });
                out.push_str(&row.to_string());
                out.push('\n');
            } else {
                out.push_str(&format!(
                    "{id}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    m.t_ms,
                    fmt_opt(m.send_bitrate_bps, 1e-3, 1),
                    fmt_opt(m.recv_bitrate_bps, 1e-3, 1),
                    fmt_opt(m.packet_loss_rate, 100.0, 2),
                    fmt_opt(m.jitter_ms, 1.0, 1),
                    fmt_opt(m.rtt_ms, 1.0, 1),
                    fmt_opt(q.map(|q| q.mos), 1.0, 3),
                ));
            }
        }
    }
    Ok(out)
}

fn describe_param(p: &rtcshim_core::engine::ParamSpec) -> String {
    let mut s = format!("    {}: {}", p.name, serde_json::to_value(p.ty).unwrap().as_str().unwrap_or("?"));
    if p.required {
        s.push_str(", required");
    }
    if let Some(d) = &p.default {
        s.push_str(&format!(", default {}", serde_json::to_string(d).unwrap()));
    }
    match (p.min, p.max) {
        (Some(a), Some(b)) => s.push_str(&format!(", {a}..={b}")),
        (Some(a), None) => s.push_str(&format!(", >= {a}")),
        (None, Some(b)) => s.push_str(&format!(", <= {b}")),
        _ => {}
    }
    if !p.choices.is_empty() {
        s.push_str(&format!(", one of {}", p.choices.join("|")));
    }
    if !p.description.is_empty() {
        s.push_str(&format!("  ({})", p.description));
    }
    s
}

pub fn catalog(category: Option<&str>, as_json: bool) -> Result<String, CliError> {
    let filter = category
        .map(|c| c.parse::<CategoryId>().map_err(usage))
        .transpose()?;
    let entries: Vec<ManifestEntry> = Engine::default()
        .catalog_manifest()
        .into_iter()
        .filter(|e| filter.is_none_or(|c| e.category == c))
        .collect();
    if as_json {
        return Ok(serde_json::to_string_pretty(&entries).unwrap() + "\n");
    }
    let mut out = String::new();
    for e in &entries {
        let strict = if e.strict_safe { "" } else { " [not strict-safe]" };
        out.push_str(&format!("{}/{}{strict}\n  {}\n", e.category, e.name, e.description));
        for p in &e.params {
            out.push_str(&describe_param(p));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn transcript_path(file: &Path, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        PathBuf::from(format!("{stem}.transcript.ndjson"))
    })
}

pub fn scenario_run(file: &Path, config: Option<&Path>, out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let text = std::fs::read_to_string(file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    let service = Service::build(load_config(config)?)?;
    let summary = service.run_scenario(doc).map_err(|e| match e {
        RunError::Invalid(m) => usage(format!("{}: {m}", file.display())),
    })?;
    let path = transcript_path(file, out);
    let mut body = String::new();
    for e in &summary.transcript {
        body.push_str(&serde_json::to_string(e).unwrap());
        body.push('\n');
    }
    std::fs::write(&path, body).map_err(|e| internal(format!("{}: {e}", path.display())))?;
    match summary.error {
        Some(e) => Err(internal(format!("{e}; partial transcript at {}", path.display()))),
        None => Ok(path),
    }
}

/// Serves until ctrl-c. A proxy that cannot bind stops the service.
pub async fn serve(service: Arc<Service>) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(&service.config.admin.listen)
        .await
        .map_err(|e| internal(format!("admin listen {}: {e}", service.config.admin.listen)))?;
    tracing::info!(addr = %listener.local_addr().map_err(internal)?, "admin API listening");

    if service.config.cpu_monitor.enabled {
        let period = Duration::from_millis(service.config.cpu_monitor.period_ms);
        tokio::spawn(run_monitor(service.engine.clone(), Box::new(ProcStatSampler::new()), period));
    }
    let proxy = service.proxy.clone();
    let admin = axum::serve(listener, crate::admin::router(service))
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
            tracing::info!("shutting down");
        });
    match proxy {
        Some(proxy) => tokio::select! {
            r = admin => r.map_err(internal),
            r = proxy.bind_and_serve() => r.map_err(|e| internal(format!("proxy: {e}"))),
        },
        None => admin.await.map_err(internal),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut stdout = stdout.lock();
    let print = |s: &str, w: &mut dyn Write| w.write_all(s.as_bytes()).map_err(internal);
    match cli.command {
        Command::Run { config } => {
            let service = Service::build(load_config(config.as_deref())?)?;
            let rt = tokio::runtime::Runtime::new().map_err(internal)?;
            rt.block_on(serve(service))
        }
        Command::Scenario {
            action: ScenarioCommand::Run { file, config, out },
        } => {
            let path = scenario_run(&file, config.as_deref(), out)?;
            print(&format!("{}\n", path.display()), &mut stdout)
        }
        Command::Munge { rewrite, params, answer } => {
            let mut input = String::new();
            std::io::Read::read_to_string(&mut std::io::stdin(), &mut input).map_err(internal)?;
            print(&munge(&rewrite, &params, answer, &input)?, &mut stdout)
        }
        Command::Stats { file, json } => {
            let text = std::fs::read_to_string(&file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
            print(&stats(&text, json)?, &mut stdout)
        }
        Command::Catalog { category, json } => print(&catalog(category.as_deref(), json)?, &mut stdout),
        Command::Validate { config } => {
            load_config(Some(&config))?;
            print(&format!("{}: ok\n", config.display()), &mut stdout)
        }
    }
}
