use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use groupscope_core::fixture::{generate_fixture, FixtureConfig};
use groupscope_core::gateway::{Gateway, GatewayConfig};
use groupscope_core::model::{parse_event_log, write_event_log, EventBody, EventRecord};
use groupscope_core::session::{
    CreateSession, EngineConfig, PlaybackControl, Replayer, ServiceConfig, SessionDescriptor, SessionEngine, SessionMode,
    SessionService, StreamMessage, SystemTime,
};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "groupscope", version, about = "Live analytics for collaborative programming sessions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the HTTP and WebSocket server.
    Serve {
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Root directory for session logs.
        #[arg(long, env = "DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
        /// Keep sessions in memory only.
        #[arg(long)]
        in_memory: bool,
    },
    /// Replay a recorded session log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Print the stream as JSON lines instead of serving it.
        #[arg(long)]
        headless: bool,
        /// Keep playing past the last event until this session time.
        #[arg(long)]
        until: Option<f64>,
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write a synthetic session log.
    GenFixture {
        #[arg(long, default_value_t = 111)]
        students: usize,
        #[arg(long, default_value_t = 3)]
        group_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        duration: u32,
        #[arg(long, default_value_t = 0.4)]
        pass_fraction: f64,
        /// Leave message categories out so they are tagged on ingestion.
        #[arg(long)]
        untagged: bool,
        /// Log destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the student list with pass marks as JSON.
        #[arg(long)]
        students_out: Option<PathBuf>,
    },
    /// Check a session log and print a summary.
    ValidateLog { file: PathBuf },
}

fn gateway() -> Result<Gateway> {
    let config = GatewayConfig::from_env().context("reading LLM_* settings")?;
    Gateway::from_config(&config).context("starting the model gateway")
}

fn read_log(path: &Path) -> Result<Vec<EventRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_event_log(BufReader::new(file)).with_context(|| format!("{} is not a valid session log", path.display()))
}

async fn serve(service: Arc<SessionService>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    let pump = groupscope::spawn_pump(service.clone());
    axum::serve(listener, groupscope::router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
    pump.abort();
    Ok(())
}

fn addr(host: &str, port: u16) -> Result<SocketAddr> {
    format!("{host}:{port}").parse().with_context(|| format!("invalid address {host}:{port}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Serve { port, host, data_dir, in_memory } => {
            let config = ServiceConfig { data_dir: (!in_memory).then_some(data_dir), ..ServiceConfig::default() };
            let service = SessionService::open(config, gateway()?, Arc::new(SystemTime::default()))?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(Arc::new(service), addr(&host, port)?))
        }
        Cmd::Replay { log, speed, headless, until, port, host } => {
            if !(speed.is_finite() && speed > 0.0) {
                bail!("speed must be positive");
            }
            let events = read_log(&log)?;
            if headless {
                return replay_headless(&log, events, speed, until);
            }
            let service = SessionService::new(ServiceConfig::default(), gateway()?, Arc::new(SystemTime::default()));
            let mode = SessionMode::Replay { log_path: log.canonicalize()? };
            let descriptor = service.create(CreateSession { mode: Some(mode), ..CreateSession::default() })?;
            let id = descriptor.session_id;
            service.control(&id, PlaybackControl::SetSpeed(speed))?;
            service.control(&id, PlaybackControl::Play)?;
            eprintln!("replaying {} as session {id} at {speed}x on http://{host}:{port}", log.display());
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(Arc::new(service), addr(&host, port)?))
        }
        Cmd::GenFixture { students, group_size, seed, duration, pass_fraction, untagged, out, students_out } => {
            let config = FixtureConfig {
                students,
                group_size,
                seed,
                duration_s: duration,
                pass_fraction,
                pre_tag: !untagged,
                ..FixtureConfig::default()
            };
            let fixture = generate_fixture(&config)?;
            let text = write_event_log(&fixture.events);
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().lock().write_all(text.as_bytes())?,
            }
            if let Some(path) = students_out {
                let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
                serde_json::to_writer_pretty(BufWriter::new(file), &fixture.students)?;
            }
            eprintln!("{} students in {} groups, {} events", fixture.students.len(), fixture.groups.len(), fixture.events.len());
            Ok(())
        }
        Cmd::ValidateLog { file } => {
            let events = read_log(&file)?;
            let (mut groups, mut students, mut submissions, mut chats) = (0, 0, 0, 0);
            for event in &events {
                match &event.body {
                    EventBody::SessionStart => {}
                    EventBody::Roster(r) => {
                        groups += r.groups.len();
                        students += r.groups.iter().map(|g| g.member_ids.len()).sum::<usize>();
                    }
                    EventBody::Submission(_) => submissions += 1,
                    EventBody::ChatMessage(_) => chats += 1,
                }
            }
            let duration = events.last().map_or(0.0, |e| e.time_s);
            println!(
                "{}: ok, {} events over {duration}s; {groups} groups, {students} students, {submissions} submissions, {chats} messages",
                file.display(),
                events.len()
            );
            Ok(())
        }
    }
}

fn replay_headless(log: &Path, events: Vec<EventRecord>, speed: f64, until: Option<f64>) -> Result<()> {
    let descriptor = SessionDescriptor {
        mode: SessionMode::Replay { log_path: log.to_path_buf() },
        ..SessionDescriptor::live("replay")
    };
    let engine = SessionEngine::new(descriptor, EngineConfig::default(), gateway()?);
    let mut replayer = Replayer::new(engine, events);
    if let Some(t) = until {
        replayer.extend_to(t);
    }
    let transcript = replayer.run_headless(speed, 0.25)?;
    let mut out = BufWriter::new(std::io::stdout().lock());
    for message in &transcript {
        writeln!(out, "{}", message.encode())?;
    }
    out.flush()?;
    let triggers = transcript.iter().filter(|m| matches!(m, StreamMessage::TriggerEvent(_))).count();
    let engine = replayer.engine();
    eprintln!(
        "replayed {} events to {}s: {} messages, {} suggestions, {} triggers, {} topics",
        engine.events().len(),
        engine.time_s(),
        transcript.len(),
        engine.drafts().len(),
        triggers,
        engine.registry().len()
    );
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
