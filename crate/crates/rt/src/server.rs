//! TCP service: accepts connections, performs the handshake, then pipes tick
//! requests through a per-connection compute thread.
//!
//! Socket reads and writes stay on the async runtime; each connection gets a
//! dedicated compute thread that owns its [`Session`] outright, coupled to
//! the socket tasks by bounded single-producer/single-consumer channels. The
//! tick path touches no locks and no state shared between connections, so a
//! slow or misbehaving client can only ever stall itself.

use std::sync::Arc;

use ankle_msk::{AnkleModel, ModelDocument, PipelineConfig};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;

use crate::error::{Result, RtError};
use crate::plant::PlantConfig;
use crate::protocol::{self, HelloOutcome, TickRequest};
use crate::session::{Session, SessionConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeConfig {
    /// Control rate (Hz). Clients must declare the same rate at handshake;
    /// the controller's filters are designed for exactly this rate.
    pub rate_hz: f64,
    pub plant: PlantConfig,
    /// Depth of each request/response queue between socket and compute.
    pub queue_depth: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { rate_hz: 1000.0, plant: PlantConfig::default(), queue_depth: 64 }
    }
}

struct Shared {
    model: AnkleModel,
    pipeline: PipelineConfig,
    model_hash: String,
    config: ServeConfig,
}

/// Runs the accept loop forever (or until the listener fails). Bind the
/// listener first; port 0 works for tests that need an ephemeral port.
pub async fn serve(listener: TcpListener, doc: &ModelDocument, config: ServeConfig) -> Result<()> {
    doc.validate()?;
    config.plant.validate()?;
    if !(config.rate_hz.is_finite() && config.rate_hz > 0.0) {
        return Err(RtError::Config(format!("rate {} Hz must be positive", config.rate_hz)));
    }
    if config.queue_depth == 0 {
        return Err(RtError::Config("queue depth must be >= 1".into()));
    }
    let shared = Arc::new(Shared {
        model: doc.model(),
        pipeline: doc.pipeline,
        model_hash: doc.canonical_hash(),
        config,
    });
    log::info!(
        "listening on {} at {} Hz, model {}",
        listener.local_addr()?,
        config.rate_hz,
        shared.model_hash
    );
    loop {
        let (stream, peer) = listener.accept().await?;
        let shared = Arc::clone(&shared);
        tokio::spawn(async move {
            log::debug!("client {peer} connected");
            match handle_connection(stream, shared).await {
                Ok(()) => log::debug!("client {peer} disconnected"),
                Err(e) => log::warn!("client {peer}: {e}"),
            }
        });
    }
}

enum Inbound {
    Tick(TickRequest),
    Malformed(String),
}

async fn handle_connection(stream: TcpStream, shared: Arc<Shared>) -> Result<()> {
    stream.set_nodelay(true)?;
    let (read_half, write_half) = stream.into_split();
    let mut lines = BufReader::new(read_half).lines();
    let mut writer = BufWriter::new(write_half);

    // Handshake. Unparseable lines get an error reply and another chance;
    // a version we do not speak ends the connection.
    loop {
        let Some(line) = lines.next_line().await? else {
            return Ok(());
        };
        match protocol::parse_hello(&line) {
            HelloOutcome::Accepted(hello) => {
                if hello.rate_hz != shared.config.rate_hz {
                    let msg = format!(
                        "service runs at {} Hz, client declared {} Hz",
                        shared.config.rate_hz, hello.rate_hz
                    );
                    send_line(&mut writer, &protocol::error_line("rate_mismatch", &msg)).await?;
                    return Ok(());
                }
                break;
            }
            HelloOutcome::VersionMismatch(msg) => {
                send_line(&mut writer, &protocol::error_line("version_mismatch", &msg)).await?;
                return Ok(());
            }
            HelloOutcome::Malformed(msg) => {
                send_line(&mut writer, &protocol::error_line("bad_handshake", &msg)).await?;
            }
        }
    }

    let session_config = SessionConfig { rate_hz: shared.config.rate_hz, plant: shared.config.plant };
    let mut session = Session::new(&shared.model, &shared.pipeline, &session_config)?;
    send_line(&mut writer, &protocol::ok_line(&shared.model_hash)).await?;

    let depth = shared.config.queue_depth;
    let (in_tx, mut in_rx) = mpsc::channel::<Inbound>(depth);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(depth);

    // Compute thread: the only owner of the session. Exits when either
    // channel closes.
    let compute = std::thread::spawn(move || {
        while let Some(inbound) = in_rx.blocking_recv() {
            let reply = match inbound {
                Inbound::Tick(req) => session.tick(&req).to_line(),
                Inbound::Malformed(msg) => protocol::error_line("bad_tick", &msg),
            };
            if out_tx.blocking_send(reply).is_err() {
                break;
            }
        }
        let stats = session.stats();
        log::info!(
            "session closed: ticks={} deadline_misses={} faults={} latency {}",
            stats.ticks,
            stats.deadline_misses,
            stats.faults,
            stats.latency.summary()
        );
    });

    let write_task = tokio::spawn(async move {
        while let Some(line) = out_rx.recv().await {
            if send_line(&mut writer, &line).await.is_err() {
                break;
            }
        }
    });

    // Reader: every line gets exactly one reply, malformed ones included, so
    // responses stay in request order.
    while let Some(line) = lines.next_line().await? {
        let inbound = match serde_json::from_str::<TickRequest>(&line) {
            Ok(req) => Inbound::Tick(req),
            Err(e) => Inbound::Malformed(e.to_string()),
        };
        if in_tx.send(inbound).await.is_err() {
            break;
        }
    }
    drop(in_tx);
    let _ = write_task.await;
    let _ = compute.join();
    Ok(())
}

async fn send_line(writer: &mut BufWriter<OwnedWriteHalf>, line: &str) -> std::io::Result<()> {
    writer.write_all(line.as_bytes()).await?;
    writer.write_all(b"\n").await?;
    writer.flush().await
}
