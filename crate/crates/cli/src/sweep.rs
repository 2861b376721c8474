//! Grid sweeps with per-row resume.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Deserialize;

use ringhil_core::metrics::{RunSummary, SUMMARY_CSV_COLUMNS};
use ringhil_core::ring::IdmParams;
use ringhil_core::scenario::ScenarioFile;

use crate::Common;

/// Values to sweep per hyperparameter. Omitted axes keep the scenario's value.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub delta: Option<Vec<u64>>,
    pub range_mph: Option<Vec<f64>>,
    pub n_vehicles: Option<Vec<usize>>,
    pub noise: Option<Vec<f64>>,
    /// Keyed by IDM field name, e.g. `"t_headway_s": [1.0, 1.5]`.
    #[serde(default)]
    pub idm: BTreeMap<String, Vec<f64>>,
}

const IDM_FIELDS: [&str; 6] = ["v0_mps", "t_headway_s", "a_max", "b_comf", "delta", "s0_m"];

fn set_idm(idm: &mut IdmParams, field: &str, v: f64) {
    match field {
        "v0_mps" => idm.v0_mps = v,
        "t_headway_s" => idm.t_headway_s = v,
        "a_max" => idm.a_max = v,
        "b_comf" => idm.b_comf = v,
        "delta" => idm.delta = v,
        "s0_m" => idm.s0_m = v,
        _ => unreachable!("checked when the grid was built"),
    }
}

/// One axis: a name used in row keys and the values as f64.
type Axis = (String, Vec<f64>);

impl GridSpec {
    fn axes(&self) -> Result<Vec<Axis>> {
        let mut axes: Vec<Axis> = Vec::new();
        if let Some(v) = &self.delta {
            axes.push(("delta".into(), v.iter().map(|&x| x as f64).collect()));
        }
        if let Some(v) = &self.range_mph {
            axes.push(("range_mph".into(), v.clone()));
        }
        if let Some(v) = &self.n_vehicles {
            axes.push(("n_vehicles".into(), v.iter().map(|&x| x as f64).collect()));
        }
        if let Some(v) = &self.noise {
            axes.push(("noise".into(), v.clone()));
        }
        for (field, v) in &self.idm {
            if !IDM_FIELDS.contains(&field.as_str()) {
                bail!("unknown IDM field {field:?} in grid");
            }
            axes.push((format!("idm.{field}"), v.clone()));
        }
        if axes.is_empty() {
            bail!("grid lists no hyperparameters");
        }
        if let Some((name, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
            bail!("grid axis {name} has no values");
        }
        Ok(axes)
    }

    /// Every grid point as (key, scenario).
    pub fn points(&self, base: &ScenarioFile) -> Result<Vec<(String, ScenarioFile)>> {
        let axes = self.axes()?;
        let mut points = vec![(Vec::<String>::new(), base.clone())];
        for (name, values) in &axes {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for (key, scenario) in &points {
                for &v in values {
                    let mut s = scenario.clone();
                    apply(&mut s, name, v);
                    let mut k = key.clone();
                    k.push(format!("{name}={v}"));
                    next.push((k, s));
                }
            }
            points = next;
        }
        Ok(points.into_iter().map(|(k, s)| (k.join(","), s)).collect())
    }
}

fn apply(s: &mut ScenarioFile, name: &str, v: f64) {
    match name {
        "delta" => s.advice.delta = v as u64,
        "range_mph" => s.advice.range_mph = v,
        "n_vehicles" => s.ring.n_vehicles = v as usize,
        "noise" => s.ring.accel_noise_std = v,
        idm => set_idm(&mut s.idm, idm.trim_start_matches("idm."), v),
    }
}

/// Labels of rows already in `path`. A trailing partial line left by an
/// interrupted write is cut off.
fn completed_rows(path: &Path) -> Result<HashSet<String>> {
    let mut done = HashSet::new();
    if !path.exists() {
        return Ok(done);
    }
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let mut text = String::new();
    file.read_to_string(&mut text)?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        file.set_len(keep as u64)?;
        file.seek(SeekFrom::Start(keep as u64))?;
        text.truncate(keep);
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if !header.is_empty() && header != SUMMARY_CSV_COLUMNS {
        bail!("{} has a different column layout; refusing to append", path.display());
    }
    for row in reader.deserialize::<RunSummary>() {
        done.insert(row?.label);
    }
    Ok(done)
}

fn row_bytes(row: &RunSummary) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row)?;
    Ok(w.into_inner()?)
}

pub fn cmd_sweep(common: &Common, grid_path: &Path) -> Result<()> {
    let scenario = common.scenario()?;
    let text = fs::read_to_string(grid_path).with_context(|| format!("reading {}", grid_path.display()))?;
    let grid: GridSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", grid_path.display()))?;
    let points = grid.points(&scenario)?;
    for (key, s) in &points {
        s.validate().with_context(|| format!("grid point {key}"))?;
    }

    fs::create_dir_all(&common.out)?;
    let path = common.out.join("sweep.csv");
    let done = completed_rows(&path)?;
    let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
    if file.metadata()?.len() == 0 {
        writeln!(file, "{}", SUMMARY_CSV_COLUMNS.join(","))?;
    }
    let rows: Vec<(String, &ScenarioFile, u64)> = points
        .iter()
        .flat_map(|(key, s)| s.seeds.iter().map(move |&seed| (format!("{key},seed={seed}"), s, seed)))
        .filter(|(key, _, _)| !done.contains(key))
        .collect();
    log::info!("{} rows to run, {} already done", rows.len(), done.len());

    let out = Mutex::new(file);
    common.pool()?.install(|| {
        rows.par_iter().try_for_each(|(key, s, seed)| -> Result<()> {
            let mut summary = s.run_seed(*seed)?.summary;
            summary.label = key.clone();
            let bytes = row_bytes(&summary)?;
            let mut f = out.lock().expect("sweep output poisoned");
            f.write_all(&bytes)?;
            f.flush()?;
            println!("{key}: mean speed {:.4} m/s", summary.mean_speed_post_warmup_mps);
            Ok(())
        })
    })?;
    Ok(())
}
