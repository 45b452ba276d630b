//! `facilitator`: operator entry point for the chat service and agents.
//!
//! Machine-readable output goes to stdout as newline-delimited JSON; logs
//! and human-oriented tables go to stderr.

mod http_adapter;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use facilitator_core::metrics::session_report;
use facilitator_core::{
    load_agent_config, run_agent, AdapterError, ChatAdapter, Clock, Engine, FeatureRegistry,
    Message, PollSettings, ReplayAdapter, ReplayScript, StopCondition, StopSignal, SystemClock,
    Transcript, VirtualClock,
};
use facilitator_service::{ChatStore, StoreError, StoreOptions};
use thiserror::Error;
use tracing_subscriber::EnvFilter;

use crate::http_adapter::HttpAdapter;

#[derive(Parser)]
#[command(
    name = "facilitator",
    version,
    about = "Automated facilitator agents for group text discussions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the chat service.
    Serve {
        #[arg(long, env = "DIPLOMAT_PORT", default_value_t = 8437)]
        port: u16,
        #[arg(long, env = "DIPLOMAT_DATA_DIR", default_value = "./data")]
        data_dir: PathBuf,
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of web client assets served under /app.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Run an agent against a room until interrupted or the session ends.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        room: String,
        #[arg(long, default_value = "http://127.0.0.1:8437")]
        service: String,
        #[arg(long, default_value_t = PollSettings::DEFAULT_SECONDS_PER_POLL)]
        poll_seconds: f64,
    },
    /// Replay a scripted session on a virtual clock and print the agent's messages.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = PollSettings::DEFAULT_SECONDS_PER_POLL)]
        poll_seconds: f64,
    },
    /// Compute session metrics from a transcript of canonical records.
    Report {
        #[arg(long)]
        transcript: PathBuf,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Environment(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Network(String),
    #[error("{0}")]
    InputData(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Environment(_) => 2,
            CliError::Config(_) => 3,
            CliError::Network(_) => 4,
            CliError::InputData(_) => 5,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .init();
    let result = match cli.command {
        Command::Serve {
            port,
            data_dir,
            host,
            static_dir,
        } => serve(&host, port, &data_dir, static_dir),
        Command::Run {
            config,
            room,
            service,
            poll_seconds,
        } => run(&config, &room, &service, poll_seconds),
        Command::Replay {
            config,
            script,
            poll_seconds,
        } => replay(&config, &script, poll_seconds),
        Command::Report { transcript } => report(&transcript),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn print_line(line: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    writeln!(out, "{line}")
        .and_then(|()| out.flush())
        .map_err(|e| CliError::Environment(format!("writing to stdout: {e}")))
}

fn load_engine(path: &Path) -> Result<Engine, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading config {}: {e}", path.display())))?;
    let config = load_agent_config(&text, &FeatureRegistry::with_builtins())
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    Engine::new(config, &FeatureRegistry::with_builtins())
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

fn poll_settings(seconds: f64, stop: StopCondition) -> Result<PollSettings, CliError> {
    PollSettings::new(seconds, stop).map_err(|e| CliError::Config(e.to_string()))
}

fn serve(
    host: &str,
    port: u16,
    data_dir: &Path,
    static_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let store = ChatStore::recover(data_dir, Arc::new(SystemClock), StoreOptions::default())
        .map_err(|e| match e {
            StoreError::CorruptLog { .. } => CliError::InputData(e.to_string()),
            other => CliError::Environment(other.to_string()),
        })?;
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::Environment(format!("starting runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::Environment(format!("cannot listen on {host}:{port}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Environment(e.to_string()))?;
        print_line(&serde_json::json!({ "listening": addr.to_string() }).to_string())?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("interrupted, shutting down");
        };
        facilitator_service::serve(listener, Arc::new(store), static_dir, shutdown)
            .await
            .map_err(|e| CliError::Environment(e.to_string()))
    })
}

fn run(config: &Path, room: &str, service: &str, poll_seconds: f64) -> Result<(), CliError> {
    let engine = load_engine(config)?;
    let clock = SystemClock;
    let signal = StopSignal::new();
    let handler_signal = signal.clone();
    ctrlc::set_handler(move || handler_signal.raise())
        .map_err(|e| CliError::Environment(format!("installing interrupt handler: {e}")))?;
    let mut stop = vec![StopCondition::OnSignal(signal)];
    let session = &engine.config().session;
    if let Some(duration) = session.duration_ms() {
        // A configured start is a server timestamp; otherwise the session is
        // taken to begin when the agent starts.
        let remaining = match session.start_ms {
            Some(start) => start + duration - clock.now_ms(),
            None => duration,
        };
        stop.push(StopCondition::AfterDuration(remaining));
    }
    let settings = poll_settings(poll_seconds, StopCondition::Any(stop))?;

    let mut adapter = HttpAdapter::new(service, room, engine.agent_author().clone());
    match adapter.fetch_transcript() {
        Ok(_) => {}
        Err(AdapterError::Transport(e)) => {
            return Err(CliError::Network(format!(
                "chat service unreachable at {service}: {e}"
            )))
        }
        Err(e) => return Err(CliError::Config(format!("room `{room}`: {e}"))),
    }
    let summary = run_agent(&mut adapter, &engine, &settings, &clock)
        .map_err(|e| CliError::Network(e.to_string()))?;
    print_line(&serde_json::to_string(&summary).expect("summary serializes"))
}

fn replay(config: &Path, script: &Path, poll_seconds: f64) -> Result<(), CliError> {
    let engine = load_engine(config)?;
    let text = std::fs::read_to_string(script)
        .map_err(|e| CliError::InputData(format!("reading script {}: {e}", script.display())))?;
    let script =
        ReplayScript::parse(&text).map_err(|e| CliError::InputData(format!("script: {e}")))?;

    let mut settings = poll_settings(poll_seconds, StopCondition::Never)?;
    // Run until the last scripted message has been seen and, when the
    // session has a length, until it is over.
    let mut horizon = script
        .last_at_ms()
        .map_or(0, |last| last + settings.poll_ms());
    let session = &engine.config().session;
    if let Some(duration) = session.duration_ms() {
        if let Some(start) = session
            .start_ms
            .or(script.records().first().map(|r| r.at_ms))
        {
            horizon = horizon.max(start + duration);
        }
    }
    settings.stop = StopCondition::AfterDuration(horizon);

    let clock = VirtualClock::new(0);
    let mut adapter = ReplayAdapter::new(script, engine.agent_author().clone(), clock.clone())
        .map_err(|e| CliError::InputData(format!("script: {e}")))?;
    let summary = run_agent(&mut adapter, &engine, &settings, &clock as &dyn Clock)
        .map_err(|e| CliError::InputData(e.to_string()))?;
    for m in adapter.transcript().agent_messages() {
        print_line(&m.to_canonical_json())?;
    }
    eprintln!(
        "{}",
        serde_json::to_string(&summary).expect("summary serializes")
    );
    Ok(())
}

fn report(path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::InputData(format!("reading {}: {e}", path.display())))?;
    let mut messages = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: Message = serde_json::from_str(line)
            .map_err(|e| CliError::InputData(format!("{}:{}: {e}", path.display(), i + 1)))?;
        messages.push(m);
    }
    let transcript = Transcript::from_records(messages)
        .map_err(|e| CliError::InputData(format!("{}: {e}", path.display())))?;
    let report = session_report(&transcript);
    eprint!("{}", report.render_table());
    print_line(&serde_json::to_string(&report).expect("report serializes"))
}
