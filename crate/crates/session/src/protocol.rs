//! Wire messages. JSON text frames tagged by `"type"`; unknown fields are
//! ignored and unknown types fail to decode.

use serde::{Deserialize, Serialize};

use ringhil_core::advisory::{ActionMode, Advice, AdviceSettings};
use ringhil_core::metrics::{RunSummary, TickRecord};
use ringhil_core::ring::{IdmParams, RingConfig, Role};
use ringhil_core::units::mps_to_mph;

use crate::config::{PedalMap, Segment, SegmentKind};
use crate::error::SessionError;

pub const PROTOCOL_VERSION: u32 = 1;

/// Pedal positions from the cockpit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub seq: u64,
    pub throttle: f64,
    pub brake: f64,
    /// Client clock, informational only.
    #[serde(default)]
    pub t_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello { protocol: u32, name: String },
    Control(ControlInput),
}

impl ClientMessage {
    /// Parse and range-check a client frame.
    pub fn decode(text: &str) -> Result<Self, SessionError> {
        let msg: Self = serde_json::from_str(text).map_err(|e| SessionError::Protocol(e.to_string()))?;
        if let ClientMessage::Control(c) = &msg {
            for (name, v) in [("throttle", c.throttle), ("brake", c.brake)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(SessionError::Protocol(format!("{name} {v} outside [0, 1]")));
                }
            }
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMessage {
    pub protocol: u32,
    /// Index into `plan` of the segment this ring belongs to.
    pub segment: usize,
    pub ring: RingConfig,
    pub idm: IdmParams,
    pub advice: AdviceSettings,
    pub tick_rate_hz: f64,
    pub pedal_map: PedalMap,
    pub plan: Vec<Segment>,
    pub display_units: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialEventKind {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub speed_mps: f64,
    pub pos_m: f64,
}

/// Values pre-converted for the speedometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdviceDisplay {
    pub speed_mph: f64,
    /// Absent for acceleration advice.
    pub target_mph: Option<f64>,
    pub half_mph: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdviceMessage {
    pub mode: ActionMode,
    pub target: f64,
    pub half: f64,
    pub in_range: bool,
    pub issued_tick: u64,
    pub hold: u64,
    pub display: AdviceDisplay,
}

impl AdviceMessage {
    pub fn new(advice: &Advice, in_range: bool, ego_speed: f64) -> Self {
        let speed = advice.mode == ActionMode::Speed;
        Self {
            mode: advice.mode,
            target: advice.target,
            half: advice.range_halfwidth,
            in_range,
            issued_tick: advice.issued_tick,
            hold: advice.hold_delta,
            display: AdviceDisplay {
                speed_mph: mps_to_mph(ego_speed),
                target_mph: speed.then(|| mps_to_mph(advice.target)),
                half_mph: speed.then(|| mps_to_mph(advice.range_halfwidth)),
            },
        }
    }

    pub fn advice(&self) -> Advice {
        Advice {
            mode: self.mode,
            target: self.target,
            range_halfwidth: self.half,
            issued_tick: self.issued_tick,
            hold_delta: self.hold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleMessage {
    pub id: usize,
    pub pos_m: f64,
    pub speed_mps: f64,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickMessage {
    pub tick: u64,
    pub segment: usize,
    pub ego: EgoState,
    /// `None` while advice is hidden or not yet issued.
    pub advice: Option<AdviceMessage>,
    pub vehicles: Vec<VehicleMessage>,
    pub metrics: Metrics,
}

impl TickMessage {
    pub fn from_record(segment: usize, record: &TickRecord) -> Self {
        let ego = record.ego();
        let vehicles = record
            .vehicles
            .iter()
            .map(|v| VehicleMessage {
                id: v.id,
                pos_m: v.position_m,
                speed_mps: v.speed_mps,
                role: if v.id == 0 { Role::Ego } else { Role::NonEgo },
            })
            .collect();
        Self {
            tick: record.tick,
            segment,
            ego: EgoState { speed_mps: ego.speed_mps, pos_m: ego.position_m },
            advice: record.advice.map(|a| AdviceMessage::new(&a, record.in_range.unwrap_or(false), ego.speed_mps)),
            vehicles,
            metrics: Metrics { mean_speed_mps: record.mean_speed_mps },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Config(Box<ConfigMessage>),
    Tick(TickMessage),
    TrialEvent {
        kind: TrialEventKind,
        trial: usize,
        name: String,
        segment_kind: SegmentKind,
        duration_ticks: u64,
        /// Set on `end`: false when the client dropped during the trial.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        complete: Option<bool>,
    },
    End { summary: Vec<RunSummary> },
    Refused { reason: String },
}

impl ServerMessage {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }

    /// Tick frames may be coalesced; everything else is delivered in order.
    pub fn is_reliable(&self) -> bool {
        !matches!(self, ServerMessage::Tick(_))
    }
}
