//! A headless protocol client that drives the ego with a simulated driver.
//! It is the test harness for the server and a smoke-test tool.

use std::time::Instant;

use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

use ringhil_core::advisory::{ActionBounds, Observation};
use ringhil_core::driver::{AdviceHistory, DriverContext, DriverModel, DriverParams, DriverRegistry};
use ringhil_core::metrics::RunSummary;
use ringhil_core::ring::ring_gap;

use crate::error::SessionError;
use crate::protocol::{ClientMessage, ConfigMessage, ControlInput, ServerMessage, TickMessage, PROTOCOL_VERSION};

#[derive(Debug, Clone)]
pub struct LoopbackOptions {
    pub name: String,
    pub protocol: u32,
    pub driver: DriverParams,
    /// Hang up after this many tick frames.
    pub disconnect_after_ticks: Option<usize>,
}

impl Default for LoopbackOptions {
    fn default() -> Self {
        Self { name: "loopback".into(), protocol: PROTOCOL_VERSION, driver: DriverParams::default(), disconnect_after_ticks: None }
    }
}

#[derive(Debug, Default)]
pub struct LoopbackReport {
    /// From the server's `end` message; empty if the client hung up first.
    pub summaries: Vec<RunSummary>,
    /// Tick number, segment and arrival time of every tick frame.
    pub ticks: Vec<(u64, usize, Instant)>,
    pub trial_events: Vec<ServerMessage>,
    pub configs: usize,
    pub inputs_sent: u64,
}

struct Cockpit {
    config: ConfigMessage,
    driver: Box<dyn DriverModel>,
    history: AdviceHistory,
}

impl Cockpit {
    fn new(config: ConfigMessage, params: &DriverParams) -> Result<Self, SessionError> {
        let ctx = DriverContext { dt_s: config.ring.dt_s, bounds: ActionBounds::for_idm(&config.idm) };
        let driver = DriverRegistry::builtin().build(params, &ctx).map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(Self { config, driver, history: AdviceHistory::new() })
    }

    fn command(&mut self, tick: &TickMessage) -> Result<f64, SessionError> {
        let n = tick.vehicles.len();
        if n < 2 {
            return Err(SessionError::Protocol(format!("tick {} carries {n} vehicles", tick.tick)));
        }
        let (ego, lead) = (&tick.vehicles[0], &tick.vehicles[1]);
        if let Some(a) = &tick.advice {
            self.history.push(a.advice(), ego.speed_mps);
        }
        let ring = &self.config.ring;
        let obs = Observation {
            ego_speed_mps: ego.speed_mps,
            lead_speed_mps: lead.speed_mps,
            lead_gap_m: ring_gap(lead.pos_m, ego.pos_m, ring.vehicle_length_m, ring.circumference_m),
            circumference_m: ring.circumference_m,
        };
        Ok(self.driver.command(&self.history, &obs, tick.tick))
    }
}

/// Connect to `url`, drive until the server ends the session (or the
/// configured hang-up point), and report what was seen.
pub async fn run_loopback_client(url: &str, options: &LoopbackOptions) -> Result<LoopbackReport, SessionError> {
    let (mut ws, _) = connect_async(url).await?;
    let hello = ClientMessage::Hello { protocol: options.protocol, name: options.name.clone() };
    ws.send(Message::text(serde_json::to_string(&hello)?)).await?;

    let mut report = LoopbackReport::default();
    let mut cockpit: Option<Cockpit> = None;
    let mut seq = 0u64;
    while let Some(msg) = ws.next().await {
        let text = match msg? {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let msg: ServerMessage =
            serde_json::from_str(text.as_str()).map_err(|e| SessionError::Protocol(e.to_string()))?;
        match msg {
            ServerMessage::Config(config) => {
                report.configs += 1;
                cockpit = Some(Cockpit::new(*config, &options.driver)?);
            }
            ServerMessage::Tick(tick) => {
                report.ticks.push((tick.tick, tick.segment, Instant::now()));
                let c = cockpit.as_mut().ok_or_else(|| SessionError::Protocol("tick before config".into()))?;
                let accel = c.command(&tick)?;
                let (throttle, brake) = c.config.pedal_map.pedals(accel);
                seq += 1;
                let t_ms = report.ticks.len() as u64;
                let control = ClientMessage::Control(ControlInput { seq, throttle, brake, t_ms });
                ws.send(Message::text(serde_json::to_string(&control)?)).await?;
                report.inputs_sent += 1;
                if options.disconnect_after_ticks.is_some_and(|n| report.ticks.len() >= n) {
                    let _ = ws.close(None).await;
                    return Ok(report);
                }
            }
            ServerMessage::TrialEvent { .. } => {
                if let Some(c) = cockpit.as_mut() {
                    c.history = AdviceHistory::new();
                }
                report.trial_events.push(msg);
            }
            ServerMessage::End { summary } => {
                report.summaries = summary;
                let _ = ws.close(None).await;
                break;
            }
            ServerMessage::Refused { reason } => return Err(SessionError::Refused(reason)),
        }
    }
    Ok(report)
}
