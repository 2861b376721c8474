use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{LogHeader, TickRecord};
use crate::advisory::{episode_reward, ActionMode, Advice, AdvisoryError};
use crate::driver::{compliance_latency, Latency};
use crate::units::mps_to_mph;

/// One row of a results table. Flat so it maps onto CSV columns; the
/// column order is part of the file format.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub n_vehicles: usize,
    pub circumference_m: f64,
    pub accel_noise_std: f64,
    pub idm_v0_mps: f64,
    pub idm_t_headway_s: f64,
    pub idm_a_max: f64,
    pub idm_b_comf: f64,
    pub idm_delta: f64,
    pub idm_s0_m: f64,
    pub policy: String,
    pub driver: String,
    pub mode: String,
    pub delta: Option<u64>,
    pub range_halfwidth: Option<f64>,
    pub range_mph: Option<f64>,
    pub ticks: u64,
    pub warmup_steps: u64,
    pub reward: f64,
    pub mean_speed_post_warmup_mps: f64,
    pub mean_speed_all_mps: f64,
    pub speed_std_mps: f64,
    pub wave_threshold_mps: f64,
    pub wave_fraction: f64,
    pub latency_events: u64,
    pub latency_reached: u64,
    pub latency_mean_steps: Option<f64>,
    pub latency_max_steps: Option<u64>,
    pub collisions: u64,
    pub complete: bool,
}

pub const SUMMARY_CSV_COLUMNS: [&str; 31] = [
    "label",
    "seed",
    "n_vehicles",
    "circumference_m",
    "accel_noise_std",
    "idm_v0_mps",
    "idm_t_headway_s",
    "idm_a_max",
    "idm_b_comf",
    "idm_delta",
    "idm_s0_m",
    "policy",
    "driver",
    "mode",
    "delta",
    "range_halfwidth",
    "range_mph",
    "ticks",
    "warmup_steps",
    "reward",
    "mean_speed_post_warmup_mps",
    "mean_speed_all_mps",
    "speed_std_mps",
    "wave_threshold_mps",
    "wave_fraction",
    "latency_events",
    "latency_reached",
    "latency_mean_steps",
    "latency_max_steps",
    "collisions",
    "complete",
];

impl RunSummary {
    /// Copy the run's configuration into the row.
    pub fn with_header(mut self, header: &LogHeader) -> Self {
        let ring = &header.ring;
        let idm = &header.idm;
        let meta = &header.meta;
        self.label = meta.label.clone();
        self.seed = ring.seed;
        self.n_vehicles = ring.n_vehicles;
        self.circumference_m = ring.circumference_m;
        self.accel_noise_std = ring.accel_noise_std;
        self.idm_v0_mps = idm.v0_mps;
        self.idm_t_headway_s = idm.t_headway_s;
        self.idm_a_max = idm.a_max;
        self.idm_b_comf = idm.b_comf;
        self.idm_delta = idm.delta;
        self.idm_s0_m = idm.s0_m;
        self.warmup_steps = ring.warmup_steps;
        self.policy = meta.policy.as_ref().map_or("none", |p| p.name()).to_string();
        self.driver = meta.driver.as_ref().map_or("idm", |d| d.kind.name()).to_string();
        if let Some(advice) = meta.advice.filter(|_| meta.policy.is_some()) {
            self.mode = advice.mode.to_string();
            self.delta = Some(advice.delta);
            self.range_halfwidth = Some(advice.range_halfwidth);
            self.range_mph = (advice.mode == ActionMode::Speed).then(|| mps_to_mph(advice.range_halfwidth));
        }
        self
    }
}

fn sorted_speeds(record: &TickRecord) -> Vec<f64> {
    let mut speeds: Vec<f64> = record.vehicles.iter().map(|v| v.speed_mps).collect();
    speeds.sort_by(f64::total_cmp);
    speeds
}

/// Advice events present in a log, one per distinct issue tick.
fn advice_events(log: &[TickRecord]) -> Vec<Advice> {
    let mut events: Vec<Advice> = Vec::new();
    for advice in log.iter().filter_map(|r| r.advice) {
        if events.last().is_none_or(|e| e.issued_tick < advice.issued_tick) {
            events.push(advice);
        }
    }
    events
}

/// Statistics over the ticks at or after `warmup`. Configuration columns
/// are left default; fill them with [`RunSummary::with_header`].
pub fn summarize(log: &[TickRecord], warmup: u64, wave_threshold_mps: f64) -> Result<RunSummary, AdvisoryError> {
    // per-tick means over sorted speeds, so vehicle order cannot matter
    let tick_means: Vec<f64> = log
        .iter()
        .map(|r| {
            let s = sorted_speeds(r);
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect();
    let reward = episode_reward(&tick_means, warmup)?;
    let window: Vec<&TickRecord> = log.iter().filter(|r| r.tick >= warmup).collect();

    let mut speeds: Vec<f64> = window.iter().flat_map(|r| sorted_speeds(r)).collect();
    speeds.sort_by(f64::total_cmp);
    let n = speeds.len() as f64;
    let mean = speeds.iter().sum::<f64>() / n;
    let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let slow = speeds.iter().filter(|&&s| s < wave_threshold_mps).count() as f64;

    let latencies = compliance_latency(log, &advice_events(log));
    let reached: Vec<u64> = latencies
        .iter()
        .filter_map(|l| match l.latency {
            Latency::Steps(s) => Some(s),
            Latency::NotReached => None,
        })
        .collect();

    Ok(RunSummary {
        ticks: log.last().map_or(0, |r| r.tick),
        reward,
        mean_speed_post_warmup_mps: reward,
        mean_speed_all_mps: tick_means.iter().sum::<f64>() / tick_means.len() as f64,
        speed_std_mps: var.sqrt(),
        wave_threshold_mps,
        wave_fraction: slow / n,
        latency_events: latencies.len() as u64,
        latency_reached: reached.len() as u64,
        latency_mean_steps: (!reached.is_empty())
            .then(|| reached.iter().sum::<u64>() as f64 / reached.len() as f64),
        latency_max_steps: reached.iter().copied().max(),
        collisions: log.iter().filter(|r| r.tick >= warmup).map(|r| r.collision_events as u64).sum(),
        complete: true,
        ..RunSummary::default()
    })
}

/// CSV with a header row; columns follow [`SUMMARY_CSV_COLUMNS`].
pub fn write_summaries_csv<W: Write>(out: W, rows: &[RunSummary]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(SUMMARY_CSV_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
