//! Acceptance gate: every primary criterion at its stated tolerance, one
//! PASS/FAIL line each. Exits non-zero if any criterion fails.

use std::fs::File;
use std::io::BufReader;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ringhil_core::advisory::{
    advise, ActionBounds, ActionMode, AdviceSettings, EquilibriumHeuristic, LinearPolicy, Observation, Policy,
    PolicyContext, PolicyKind,
};
use ringhil_core::driver::{compliance_latency, DriverContext, DriverKind, DriverParams, DriverRegistry, Latency};
use ringhil_core::episode::{run_headless, EpisodeConfig};
use ringhil_core::metrics::{read_log, replay, ReplayError, RunLog, RunMeta, TickRecord};
use ringhil_core::ring::{equilibrium_speed, idm_accel, ring_gap, IdmParams, InitialCondition, RingConfig};
use ringhil_core::scenario::ScenarioFile;
use ringhil_session::{run_loopback_client, LoopbackOptions, Segment, SessionConfig, SessionServer};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Outcome = Result<String, String>;

/// Logs produced along the way; the conservation and replay criteria
/// check all of them.
#[derive(Default)]
struct Runs {
    logs: Vec<(String, RunLog)>,
}

impl Runs {
    fn keep(&mut self, name: impl Into<String>, log: RunLog) {
        self.logs.push((name.into(), log));
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn v_eq() -> f64 {
    equilibrium_speed(&IdmParams::default(), &RingConfig::default()).unwrap()
}

/// Independent IDM evaluation, term by term.
#[allow(clippy::too_many_arguments)]
fn idm_oracle(v0: f64, t: f64, a: f64, b: f64, delta: f64, s0: f64, v: f64, vl: f64, gap: f64) -> f64 {
    let dynamic = v * t + v * (v - vl) / (2.0 * (a * b).sqrt());
    let s_star = s0 + if dynamic > 0.0 { dynamic } else { 0.0 };
    a * (1.0 - (v / v0).powi(delta as i32) - (s_star / gap) * (s_star / gap))
}

/// Equilibrium speed by a plain scan plus secant refinement on the
/// uniform-flow condition, independent of the library's bisection.
fn equilibrium_oracle() -> f64 {
    let p = IdmParams::default();
    let c = RingConfig::default();
    let s = c.circumference_m / c.n_vehicles as f64 - c.vehicle_length_m;
    let f = |v: f64| 1.0 - (v / p.v0_mps).powi(4) - ((p.s0_m + v * p.t_headway_s) / s).powi(2);
    let mut lo = 0.0;
    while f(lo + 0.01) > 0.0 {
        lo += 0.01;
    }
    let (mut x0, mut x1) = (lo, lo + 0.01);
    for _ in 0..60 {
        let (f0, f1) = (f(x0), f(x1));
        if f1 == f0 {
            break;
        }
        (x0, x1) = (x1, x1 - f1 * (x1 - x0) / (f1 - f0));
    }
    x1
}

fn baseline(seed: u64) -> ScenarioFile {
    ScenarioFile { seeds: vec![seed], ..ScenarioFile::default() }
}

fn mitigated(seed: u64) -> ScenarioFile {
    ScenarioFile {
        policy: Some(PolicyKind::EquilibriumHeuristic { margin_mps: EquilibriumHeuristic::DEFAULT_MARGIN_MPS }),
        driver: DriverParams { kind: DriverKind::PerfectCompliance, ..DriverParams::default() },
        ..baseline(seed)
    }
}

/// Target `v_lead + 0.3 gap - 3` m/s: moves with the traffic, so holds and
/// latencies are exercised.
fn gap_follower() -> PolicyKind {
    PolicyKind::Linear { weights: vec![0.0, 1.0, 2.5, 0.0, -0.1], normalization: None }
}

fn constants(runs: &mut Runs) -> Outcome {
    let s = ScenarioFile::default();
    let r = &s.ring;
    let start = Instant::now();
    let out = s.run_seed(0).map_err(|e| e.to_string())?;
    let wall = start.elapsed();
    let records = out.log.records.len();
    runs.keep("constants", out.log);
    check(
        r.n_vehicles == 22
            && r.circumference_m == 250.0
            && r.dt_s == 0.1
            && r.horizon_steps == 8000
            && r.warmup_steps == 1200
            && records == 8001
            && wall < Duration::from_secs(2),
        format!(
            "N={} L={} m dt={} s horizon={} warmup={}; headless run {:.0} ms (< 2000)",
            r.n_vehicles,
            r.circumference_m,
            r.dt_s,
            r.horizon_steps,
            r.warmup_steps,
            wall.as_secs_f64() * 1e3
        ),
    )
}

fn equilibrium(runs: &mut Runs) -> Outcome {
    let oracle = equilibrium_oracle();
    let veq = v_eq();
    let mut s = ScenarioFile::default();
    s.ring.accel_noise_std = 0.0;
    s.initial = InitialCondition::UniformAtEquilibrium;
    let out = s.run_seed(0).map_err(|e| e.to_string())?;
    let worst = out
        .log
        .records
        .iter()
        .flat_map(|r| r.vehicles.iter().map(|v| (v.speed_mps - veq).abs()))
        .fold(0.0, f64::max);
    runs.keep("equilibrium", out.log);
    check(
        (veq - oracle).abs() < 1e-9 && worst <= 1e-6,
        format!("v_eq {veq:.10} m/s (oracle {oracle:.10}); max |v - v_eq| over 8000 steps {worst:.2e} (<= 1e-6)"),
    )
}

fn wave_formation(runs: &mut Runs) -> Outcome {
    let veq = v_eq();
    let mut below = 0;
    let mut speeds = vec![];
    for seed in SEEDS {
        let out = baseline(seed).run_seed(seed).map_err(|e| e.to_string())?;
        let v = out.summary.mean_speed_post_warmup_mps;
        below += (v < 0.9 * veq) as usize;
        speeds.push(format!("{:.3}", v / veq));
        runs.keep(format!("baseline seed {seed}"), out.log);
    }
    check(below >= 4, format!("{below}/5 seeds below 0.9 v_eq (ratios {})", speeds.join(", ")))
}

fn mitigation(runs: &mut Runs) -> Outcome {
    let mut wins = 0;
    let mut pairs = vec![];
    for seed in SEEDS {
        let base = baseline(seed).run_seed(seed).map_err(|e| e.to_string())?.summary.mean_speed_post_warmup_mps;
        let out = mitigated(seed).run_seed(seed).map_err(|e| e.to_string())?;
        let adv = out.summary.mean_speed_post_warmup_mps;
        wins += (adv > base) as usize;
        pairs.push(format!("{base:.3}->{adv:.3}"));
        runs.keep(format!("mitigated seed {seed}"), out.log);
    }
    check(wins >= 4, format!("{wins}/5 seeds improved, mean speed m/s {}", pairs.join(", ")))
}

fn observation_of(record: &TickRecord, ring: &RingConfig) -> Observation {
    let (ego, lead) = (&record.vehicles[0], &record.vehicles[1]);
    Observation {
        ego_speed_mps: ego.speed_mps,
        lead_speed_mps: lead.speed_mps,
        lead_gap_m: ring_gap(lead.position_m, ego.position_m, ring.vehicle_length_m, ring.circumference_m),
        circumference_m: ring.circumference_m,
    }
}

fn piecewise_constancy(runs: &mut Runs) -> Outcome {
    // delta 50 over the full horizon
    let mut s = mitigated(0);
    s.policy = Some(gap_follower());
    let out = s.run_seed(0).map_err(|e| e.to_string())?;
    let mut changes = 0;
    let mut off_grid = 0;
    let mut prev: Option<f64> = None;
    for r in &out.log.records {
        if let Some(a) = r.advice {
            if prev.is_some_and(|p| p.to_bits() != a.target.to_bits()) {
                changes += 1;
                off_grid += (r.tick % 50 != 0) as usize;
            }
            prev = Some(a.target);
        }
    }
    runs.keep("delta 50", out.log);

    // delta 1: each tick's target equals a fresh policy evaluation
    let ring = RingConfig::default();
    let idm = IdmParams::default();
    let ctx = PolicyContext::new(ring.clone(), idm, ActionMode::Speed);
    let settings = AdviceSettings { delta: 1, ..AdviceSettings::default() };
    let bounds = ActionBounds::for_idm(&idm);
    let policies: Vec<Box<dyn Policy>> = vec![
        Box::new(EquilibriumHeuristic::new(0.5, &ctx).unwrap()),
        Box::new(LinearPolicy::new(&[0.05, 0.4, 0.3, 0.2, 0.1], ctx.default_normalization()).unwrap()),
    ];
    let mut mismatches = 0;
    let mut compared = 0;
    for policy in policies {
        let fresh = policy.with_params(&policy.params()).unwrap();
        let d = DriverRegistry::builtin()
            .build(&DriverParams::default(), &DriverContext { dt_s: ring.dt_s, bounds })
            .unwrap();
        let ep = run_headless(
            EpisodeConfig::new(ring.clone(), idm, InitialCondition::default(), settings),
            Some(policy),
            Some(d.as_ref()),
            true,
        )
        .map_err(|e| e.to_string())?;
        for r in ep.records().iter().filter(|r| r.advice.is_some()) {
            let want = advise(fresh.as_ref(), &observation_of(r, &ring), r.tick, &settings, &bounds, None)
                .map_err(|e| e.to_string())?;
            compared += 1;
            mismatches += (want.target.to_bits() != r.advice.unwrap().target.to_bits()) as usize;
        }
        runs.keep("delta 1", ep.into_log(RunMeta::default()));
    }
    check(
        changes > 0 && changes <= 160 && off_grid == 0 && mismatches == 0 && compared > 0,
        format!(
            "delta 50: {changes} changes (<= 160), {off_grid} off the 50-tick grid; delta 1: {compared} ticks, {mismatches} bit mismatches"
        ),
    )
}

fn conservation(runs: &Runs) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut negative_gaps = 0;
    let mut negative_speeds = 0;
    let mut ticks = 0;
    for (_, log) in &runs.logs {
        let ring = &log.header.ring;
        for r in &log.records {
            ticks += 1;
            let n = r.vehicles.len();
            let mut total = 0.0;
            for i in 0..n {
                let g = ring_gap(
                    r.vehicles[(i + 1) % n].position_m,
                    r.vehicles[i].position_m,
                    ring.vehicle_length_m,
                    ring.circumference_m,
                );
                negative_gaps += (g < 0.0) as usize;
                total += g + ring.vehicle_length_m;
            }
            worst = worst.max((total - ring.circumference_m).abs());
            negative_speeds += r.vehicles.iter().filter(|v| v.speed_mps < 0.0).count();
        }
    }
    check(
        worst <= 1e-9 && negative_gaps == 0 && negative_speeds == 0,
        format!(
            "{} runs, {ticks} ticks: max |sum(gap+len) - L| {worst:.2e} (<= 1e-9), {negative_gaps} negative gaps, {negative_speeds} negative speeds",
            runs.logs.len()
        ),
    )
}

fn replay_all(runs: &Runs) -> Outcome {
    let mut failures = vec![];
    for (name, log) in &runs.logs {
        if let Err(e) = replay(log) {
            failures.push(format!("{name}: {e}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut caught = 0;
    let trials = 20;
    for _ in 0..trials {
        let (_, log) = &runs.logs[rng.random_range(0..runs.logs.len())];
        let mut t = log.clone();
        let tick = rng.random_range(1..t.records.len());
        let vehicle = rng.random_range(0..t.records[tick].vehicles.len());
        let v = &mut t.records[tick].vehicles[vehicle];
        if rng.random_bool(0.5) {
            v.speed_mps = f64::from_bits(v.speed_mps.to_bits() ^ 1);
        } else {
            v.position_m = f64::from_bits(v.position_m.to_bits() ^ 1);
        }
        if matches!(replay(&t), Err(ReplayError::Diverged(d)) if d.tick == tick as u64) {
            caught += 1;
        }
    }
    check(
        failures.is_empty() && caught == trials,
        format!(
            "{}/{} logs replay bit-exactly; {caught}/{trials} one-bit tampers caught at the right tick{}",
            runs.logs.len() - failures.len(),
            runs.logs.len(),
            failures.first().map(|f| format!("; first failure {f}")).unwrap_or_default()
        ),
    )
}

fn idm_oracle_check() -> Outcome {
    let p = IdmParams::default();
    let examples = [
        (idm_accel(&p, 30.0, 30.0, 1e12).unwrap(), 0.0, 1e-9),
        (idm_accel(&p, 0.0, 0.0, 2.0).unwrap(), 0.0, 1e-12),
        (idm_accel(&p, 5.0, 5.0, 10.0).unwrap(), 1.0 - (5.0f64 / 30.0).powi(4) - 0.49, 1e-12),
    ];
    let examples_ok = examples.iter().all(|(got, want, tol)| (got - want).abs() <= *tol);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = IdmParams {
            v0_mps: rng.random_range(5.0..40.0),
            t_headway_s: rng.random_range(0.5..2.5),
            a_max: rng.random_range(0.3..3.0),
            b_comf: rng.random_range(0.5..4.0),
            delta: 4.0,
            s0_m: rng.random_range(0.5..4.0),
        };
        let (v, vl, gap) = (rng.random_range(0.0..35.0), rng.random_range(0.0..35.0), rng.random_range(0.5..200.0));
        let got = idm_accel(&q, v, vl, gap).unwrap();
        let want = idm_oracle(q.v0_mps, q.t_headway_s, q.a_max, q.b_comf, q.delta, q.s0_m, v, vl, gap);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    check(
        examples_ok && worst <= 1e-12,
        format!(
            "worked examples {:.4}, {:.4}, {:.4}; 1000 random inputs max scaled error {worst:.1e} (<= 1e-12)",
            examples[0].0, examples[1].0, examples[2].0
        ),
    )
}

fn compliance(runs: &mut Runs) -> Outcome {
    let mut lat_by_width = vec![];
    let mut bound_violations = 0;
    let mut events = 0;
    for width in [2.5, 5.0, 10.0] {
        let mut s = mitigated(0);
        s.policy = Some(gap_follower());
        s.ring.horizon_steps = 4000;
        s.advice.range_mph = width;
        let out = s.run_seed(0).map_err(|e| e.to_string())?;
        let advices: Vec<_> = {
            let mut seen = vec![];
            for r in &out.log.records {
                if let Some(a) = r.advice {
                    if seen.last().is_none_or(|l: &ringhil_core::advisory::Advice| l.issued_tick != a.issued_tick) {
                        seen.push(a);
                    }
                }
            }
            seen
        };
        let results = compliance_latency(&out.log.records, &advices);
        let mut lats = vec![];
        for r in &results {
            let v = out.log.records[r.advice.issued_tick as usize].vehicles[0].speed_mps;
            let outside = ((r.advice.target - v).abs() - r.advice.range_halfwidth).max(0.0);
            let bound = (outside / (ActionBounds::ACCEL_LIMIT * s.ring.dt_s) - 1e-9).ceil().max(0.0) as u64;
            let steps = match r.latency {
                Latency::Steps(k) => k,
                Latency::NotReached => u64::MAX,
            };
            lats.push(steps);
            // an event too close to the horizon cannot be observed in full
            if r.advice.issued_tick + bound <= s.ring.horizon_steps {
                bound_violations += (steps > bound) as usize;
            }
        }
        events += results.len();
        lat_by_width.push(lats);
        runs.keep(format!("compliance {width} mph"), out.log);
    }
    let same_len = lat_by_width.iter().all(|l| l.len() == lat_by_width[0].len());
    let monotone = same_len
        && (0..lat_by_width[0].len()).all(|i| lat_by_width[0][i] >= lat_by_width[1][i] && lat_by_width[1][i] >= lat_by_width[2][i]);
    let moving = lat_by_width[0].iter().filter(|&&k| k > 0).count();
    let mean = |l: &Vec<u64>| {
        let reached: Vec<f64> = l.iter().filter(|&&x| x != u64::MAX).map(|&x| x as f64).collect();
        reached.iter().sum::<f64>() / reached.len().max(1) as f64
    };
    check(
        bound_violations == 0 && monotone && moving > 0,
        format!(
            "{events} advice events ({moving} at 2.5 mph needing > 0 ticks), {bound_violations} over the closed-form bound; mean latency of reached events {:.2} / {:.2} / {:.2} ticks at 2.5 / 5 / 10 mph, monotone {monotone}",
            mean(&lat_by_width[0]),
            mean(&lat_by_width[1]),
            mean(&lat_by_width[2])
        ),
    )
}

fn loopback(runs: &mut Runs) -> Outcome {
    const PACED: u64 = 150;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = SessionConfig {
        port: 0,
        log_dir: dir.path().into(),
        plan: vec![Segment::trial("loopback", PACED, 5.0)],
        ..SessionConfig::default()
    };
    config.scenario.seeds = vec![3];
    let segment_scenario = config.plan[0].scenario(&config.scenario);

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let (report, client) = runtime.block_on(async {
        let server = SessionServer::bind(config).await.map_err(|e| e.to_string())?;
        let url = format!("ws://{}", server.local_addr().map_err(|e| e.to_string())?);
        let handle = tokio::spawn(server.run());
        let client = run_loopback_client(&url, &LoopbackOptions::default()).await.map_err(|e| e.to_string())?;
        let report = handle.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
        Ok::<_, String>((report, client))
    })?;
    let seg = &report.segments[0];
    let log = read_log(BufReader::new(File::open(&seg.log_path).map_err(|e| e.to_string())?)).map_err(|e| e.to_string())?;
    let replays = replay(&log).is_ok();

    let headless = segment_scenario.run_seed(3).map_err(|e| e.to_string())?.summary;
    let live = &seg.summary;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let speed_err = rel(live.mean_speed_post_warmup_mps, headless.mean_speed_post_warmup_mps);
    let all_err = rel(live.mean_speed_all_mps, headless.mean_speed_all_mps);
    let window = (PACED + 1) as f64;
    let wave_err = (live.wave_fraction - headless.wave_fraction).abs();

    let period = 0.1;
    let worst_window = |times: &[Instant]| -> f64 {
        times
            .windows(101)
            .map(|w| ((w[100] - w[0]).as_secs_f64() / 100.0 - period).abs() / period)
            .fold(0.0, f64::max)
    };
    let server_pacing = worst_window(&seg.tick_times);
    let client_times: Vec<Instant> = client.ticks.iter().map(|t| t.2).collect();
    let client_pacing = worst_window(&client_times);
    runs.keep("loopback session", log);
    check(
        replays
            && seg.complete
            && speed_err <= 0.01
            && all_err <= 0.01
            && wave_err <= 1.0 / window
            && server_pacing <= 0.10
            && client_pacing <= 0.10,
        format!(
            "post-warmup mean speed {:.4} vs headless {:.4} m/s (rel {speed_err:.1e} <= 1e-2); wave fraction diff {wave_err:.4} (<= one tick); replay {replays}; worst 100-tick pacing error server {:.1}% client {:.1}% (<= 10%)",
            live.mean_speed_post_warmup_mps,
            headless.mean_speed_post_warmup_mps,
            server_pacing * 100.0,
            client_pacing * 100.0
        ),
    )
}

fn main() -> ExitCode {
    let mut runs = Runs::default();
    let results: Vec<(&str, Outcome)> = vec![
        ("constants", constants(&mut runs)),
        ("equilibrium fixed point", equilibrium(&mut runs)),
        ("wave formation", wave_formation(&mut runs)),
        ("mitigation", mitigation(&mut runs)),
        ("piecewise constancy", piecewise_constancy(&mut runs)),
        ("idm oracle", idm_oracle_check()),
        ("compliance latency", compliance(&mut runs)),
        ("loopback session", loopback(&mut runs)),
        // these two check every log produced above
        ("ring conservation and safety", conservation(&runs)),
        ("determinism and replay", replay_all(&runs)),
    ];

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
