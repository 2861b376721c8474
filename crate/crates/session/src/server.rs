//! The authoritative tick loop and the connection handling around it.

use std::fs::{self, File};
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::time::{timeout, MissedTickBehavior};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{accept_async, WebSocketStream};

use ringhil_core::advisory::PolicyRegistry;
use ringhil_core::episode::Episode;
use ringhil_core::metrics::{summarize, write_log, write_summaries_csv, CommandSource, RunMeta, RunSummary};
use ringhil_core::ring::IdmParams;

use crate::config::{Segment, SegmentKind, SessionConfig};
use crate::error::SessionError;
use crate::mailbox::Mailbox;
use crate::outbox::Outbox;
use crate::protocol::{ClientMessage, ConfigMessage, ServerMessage, TickMessage, TrialEventKind, PROTOCOL_VERSION};

const HELLO_TIMEOUT: Duration = Duration::from_secs(5);
const CLOSE_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone)]
pub struct SegmentReport {
    pub index: usize,
    pub name: String,
    pub kind: SegmentKind,
    pub summary: RunSummary,
    pub log_path: PathBuf,
    /// False if the client was away for any part of the segment.
    pub complete: bool,
    /// When each paced tick was committed and queued for broadcast.
    pub tick_times: Vec<Instant>,
}

#[derive(Debug, Clone, Default)]
pub struct SessionReport {
    pub segments: Vec<SegmentReport>,
    /// Set when a dropped client did not return in time.
    pub aborted: bool,
    pub summary_path: Option<PathBuf>,
}

impl SessionReport {
    pub fn summaries(&self) -> Vec<RunSummary> {
        self.segments.iter().map(|s| s.summary.clone()).collect()
    }
}

#[derive(Default)]
struct Connections {
    active: Option<(u64, Arc<Outbox>)>,
    next_id: u64,
    /// Frames a newly joined client gets first: the current config and,
    /// mid-segment, that segment's start event.
    intro: Vec<ServerMessage>,
    finished: bool,
}

struct Shared {
    mailbox: Mailbox,
    conns: Mutex<Connections>,
    connected: watch::Sender<bool>,
}

impl Shared {
    fn active(&self) -> Option<Arc<Outbox>> {
        self.conns.lock().expect("connections poisoned").active.as_ref().map(|(_, o)| o.clone())
    }

    fn broadcast(&self, msg: &ServerMessage) {
        if let Some(out) = self.active() {
            out.push(msg);
        }
    }

    fn set_intro(&self, intro: Vec<ServerMessage>) {
        self.conns.lock().expect("connections poisoned").intro = intro;
    }

    /// Register a handshaken client, or say why not.
    fn join(&self) -> Result<(u64, Arc<Outbox>), String> {
        let mut c = self.conns.lock().expect("connections poisoned");
        if c.finished {
            return Err("session is over".into());
        }
        if c.active.is_some() {
            return Err("a client is already connected".into());
        }
        let id = c.next_id;
        c.next_id += 1;
        let out = Arc::new(Outbox::new());
        for msg in &c.intro {
            out.push(msg);
        }
        self.mailbox.reset();
        c.active = Some((id, out.clone()));
        drop(c);
        self.connected.send_replace(true);
        Ok((id, out))
    }

    fn leave(&self, id: u64) {
        let mut c = self.conns.lock().expect("connections poisoned");
        if c.active.as_ref().is_some_and(|(a, _)| *a == id) {
            if let Some((_, out)) = c.active.take() {
                out.close();
            }
            drop(c);
            self.connected.send_replace(false);
        }
    }
}

/// A bound session server; [`SessionServer::run`] drives the whole plan.
pub struct SessionServer {
    config: SessionConfig,
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl SessionServer {
    pub async fn bind(config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let listener = TcpListener::bind((config.host.as_str(), config.port)).await?;
        let (connected, _) = watch::channel(false);
        let shared = Arc::new(Shared { mailbox: Mailbox::new(), conns: Mutex::default(), connected });
        Ok(Self { config, listener, shared })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, SessionError> {
        Ok(self.listener.local_addr()?)
    }

    /// Wait for a client, then run every segment of the plan in order.
    pub async fn run(self) -> Result<SessionReport, SessionError> {
        let Self { config, listener, shared } = self;
        fs::create_dir_all(&config.log_dir)?;
        let acceptor = tokio::spawn(accept_loop(listener, shared.clone()));
        let result = run_plan(&config, &shared).await;

        shared.conns.lock().expect("connections poisoned").finished = true;
        if let Ok(report) = &result {
            shared.broadcast(&ServerMessage::End { summary: report.summaries() });
        }
        if let Some(out) = shared.active() {
            out.close();
        }
        // let the client read the end frame and hang up
        let mut rx = shared.connected.subscribe();
        let _ = timeout(CLOSE_GRACE, rx.wait_for(|c| !*c)).await;
        acceptor.abort();
        result
    }
}

/// Bind and run a session with `config`.
pub async fn run_trials(config: SessionConfig) -> Result<SessionReport, SessionError> {
    SessionServer::bind(config).await?.run().await
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    loop {
        match listener.accept().await {
            Ok((stream, addr)) => {
                tokio::spawn(handle_connection(stream, addr, shared.clone()));
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
}

async fn refuse(ws: &mut WebSocketStream<TcpStream>, reason: String) {
    log::info!("refusing client: {reason}");
    let _ = ws.send(Message::text(ServerMessage::Refused { reason }.encode())).await;
    let _ = ws.close(None).await;
}

async fn next_text(ws: &mut WebSocketStream<TcpStream>) -> Option<String> {
    while let Some(msg) = ws.next().await {
        match msg {
            Ok(Message::Text(t)) => return Some(t.as_str().to_owned()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
    None
}

async fn handle_connection(stream: TcpStream, addr: SocketAddr, shared: Arc<Shared>) {
    let _ = stream.set_nodelay(true);
    let mut ws = match accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("websocket handshake with {addr} failed: {e}");
            return;
        }
    };
    let name = match timeout(HELLO_TIMEOUT, next_text(&mut ws)).await {
        Ok(Some(text)) => match ClientMessage::decode(&text) {
            Ok(ClientMessage::Hello { protocol, name }) if protocol == PROTOCOL_VERSION => name,
            Ok(ClientMessage::Hello { protocol, .. }) => {
                return refuse(&mut ws, format!("protocol {protocol} not supported, server speaks {PROTOCOL_VERSION}")).await
            }
            Ok(_) => return refuse(&mut ws, "expected hello".into()).await,
            Err(e) => return refuse(&mut ws, e.to_string()).await,
        },
        Ok(None) => return,
        Err(_) => return refuse(&mut ws, "no hello received".into()).await,
    };
    let (id, outbox) = match shared.join() {
        Ok(joined) => joined,
        Err(reason) => return refuse(&mut ws, reason).await,
    };
    log::info!("client {name:?} joined from {addr}");

    let (mut sink, mut source) = ws.split();
    let writer = tokio::spawn(async move {
        while let Some(frame) = outbox.next().await {
            if sink.send(Message::text(frame)).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(msg) = source.next().await {
        let text = match msg {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        match ClientMessage::decode(text.as_str()) {
            Ok(ClientMessage::Control(input)) => {
                if !shared.mailbox.deposit(input) {
                    log::debug!("dropped stale input seq {}", input.seq);
                }
            }
            Ok(ClientMessage::Hello { .. }) => log::debug!("ignoring repeated hello"),
            Err(e) => log::warn!("bad frame from {name:?}: {e}"),
        }
    }
    log::info!("client {name:?} disconnected");
    shared.leave(id);
    let _ = writer.await;
}

/// Wait until a client is connected; `None` waits forever.
async fn wait_for_client(shared: &Shared, limit: Option<Duration>) -> bool {
    let mut rx = shared.connected.subscribe();
    let wait = rx.wait_for(|c| *c);
    match limit {
        Some(d) => matches!(timeout(d, wait).await, Ok(Ok(_))),
        None => wait.await.is_ok(),
    }
}

/// Brake at the comfortable rate until stopped.
fn safety_stop(idm: &IdmParams, speed: f64, dt: f64) -> f64 {
    -(idm.b_comf.min(speed / dt))
}

async fn run_plan(config: &SessionConfig, shared: &Shared) -> Result<SessionReport, SessionError> {
    let first = config.connect_timeout_s.map(Duration::from_secs_f64);
    if !wait_for_client(shared, first).await {
        return Err(SessionError::ClientTimeout(config.connect_timeout_s.unwrap_or(0.0)));
    }
    let reconnect = Duration::from_secs_f64(config.reconnect_timeout_s);
    let registry = PolicyRegistry::builtin();
    let mut report = SessionReport::default();
    for (index, segment) in config.plan.iter().enumerate() {
        if index > 0 && !wait_for_client(shared, Some(reconnect)).await {
            report.aborted = true;
            break;
        }
        let (seg, aborted) = run_segment(config, shared, &registry, index, segment).await?;
        report.segments.push(seg);
        let path = config.log_dir.join(format!("{}-summary.csv", config.label));
        write_summaries_csv(BufWriter::new(File::create(&path)?), &report.summaries())?;
        report.summary_path = Some(path);
        if aborted {
            report.aborted = true;
            break;
        }
    }
    Ok(report)
}

async fn run_segment(
    config: &SessionConfig,
    shared: &Shared,
    registry: &PolicyRegistry,
    index: usize,
    segment: &Segment,
) -> Result<(SegmentReport, bool), SessionError> {
    let scenario = segment.scenario(&config.scenario);
    let seed = segment.seed(&config.scenario);
    let policy = scenario.build_policy(registry)?;
    let mut ep = Episode::new(scenario.episode_config(seed), policy, true)?;
    let dt = scenario.ring.dt_s;

    // the ring settles on plain IDM before the client takes over
    while ep.tick() < scenario.ring.warmup_steps {
        ep.advance(ep.idm_command(), CommandSource::Idm)?;
    }

    let config_msg = ServerMessage::Config(Box::new(ConfigMessage {
        protocol: PROTOCOL_VERSION,
        segment: index,
        ring: ep.config().ring.clone(),
        idm: scenario.idm,
        advice: scenario.advice.settings(),
        tick_rate_hz: config.tick_rate_hz,
        pedal_map: config.pedal_map,
        plan: config.plan.clone(),
        display_units: "mph".into(),
    }));
    let event = |kind, complete| ServerMessage::TrialEvent {
        kind,
        trial: index,
        name: segment.name.clone(),
        segment_kind: segment.kind,
        duration_ticks: segment.duration_ticks,
        complete,
    };
    let start = event(TrialEventKind::Start, None);
    shared.set_intro(vec![config_msg.clone(), start.clone()]);
    shared.broadcast(&config_msg);
    shared.broadcast(&start);
    let frame = |ep: &Episode| {
        ServerMessage::Tick(TickMessage::from_record(index, ep.last_record().expect("episodes always record")))
    };
    shared.broadcast(&frame(&ep));
    log::info!("segment {index} ({}) started at tick {}", segment.name, ep.tick());

    let mut interval = tokio::time::interval(config.tick_period());
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    interval.tick().await;
    let mut held = 0.0;
    let mut complete = true;
    let mut away_since: Option<Instant> = None;
    let mut aborted = false;
    let mut tick_times = Vec::with_capacity(segment.duration_ticks as usize);
    while !ep.is_finished() {
        interval.tick().await;
        let (cmd, source) = if shared.active().is_some() {
            away_since = None;
            if let Some(input) = shared.mailbox.take() {
                held = config.pedal_map.accel(input.throttle, input.brake);
            }
            (held, CommandSource::Human)
        } else {
            complete = false;
            held = 0.0;
            let since = *away_since.get_or_insert_with(Instant::now);
            if since.elapsed() > Duration::from_secs_f64(config.reconnect_timeout_s) {
                log::warn!("client did not return; abandoning segment {index} at tick {}", ep.tick());
                aborted = true;
                break;
            }
            (safety_stop(&scenario.idm, ep.state().ego().speed_mps, dt), CommandSource::SafetyStop)
        };
        ep.advance(cmd, source)?;
        shared.broadcast(&frame(&ep));
        tick_times.push(Instant::now());
    }
    shared.set_intro(vec![config_msg]);
    complete &= !aborted;
    shared.broadcast(&event(TrialEventKind::End, Some(complete)));

    let label = format!("{}/{}", config.label, segment.name);
    let header = ep.header(RunMeta { label: label.clone(), ..RunMeta::default() });
    let log_path = config.log_dir.join(format!("{}-{index:02}-{}.jsonl", config.label, segment.name));
    write_log(BufWriter::new(File::create(&log_path)?), &header, ep.records())?;
    let mut summary =
        summarize(ep.records(), scenario.ring.warmup_steps, scenario.wave_threshold())?.with_header(&header);
    summary.label = label;
    summary.seed = seed;
    summary.driver = "human".into();
    summary.complete = complete;
    log::info!(
        "segment {index} ({}) done: mean speed {:.3} m/s, complete {complete}",
        segment.name,
        summary.mean_speed_post_warmup_mps
    );
    let report = SegmentReport {
        index,
        name: segment.name.clone(),
        kind: segment.kind,
        summary,
        log_path,
        complete,
        tick_times,
    };
    Ok((report, aborted))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safety_stop_brakes_then_holds() {
        let idm = IdmParams::default();
        assert_eq!(safety_stop(&idm, 10.0, 0.1), -1.5);
        assert_eq!(safety_stop(&idm, 0.1, 0.1), -1.0);
        assert_eq!(safety_stop(&idm, 0.0, 0.1), 0.0);
    }
}
