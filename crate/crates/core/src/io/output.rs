//! Run output documents, atomic file creation and CSV extraction.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::PA_PER_BAR;
use crate::model::{Model, StepBoundary};
use crate::solver::Simulation;

pub const FORMAT: &str = "gridflow-output/1";

/// One quantity over time: `data[j][i]` is column `i` at `time[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub unit: String,
    /// Column labels; grid positions in m for pipe profiles.
    pub columns: Vec<String>,
    pub time: Vec<f64>,
    pub data: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub delta_t: f64,
    /// Wall-clock creation time, the only field that differs between identical runs.
    pub created: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureMarker {
    pub step: usize,
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CflRecord {
    pub step: usize,
    pub pipe: String,
    pub grid_point: usize,
    pub min_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureMarker>,
    pub residual_norms: Vec<Option<f64>>,
    pub newton_iterations: Vec<usize>,
    pub cfl_violations: Vec<CflRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDocument {
    pub format: String,
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
    /// Keyed `<quantity>_<component id>`, e.g. `p_pipe1`.
    pub series: BTreeMap<String, Series>,
}

fn scalar(unit: &str, label: &str, time: &[f64], values: Vec<f64>) -> Series {
    Series {
        unit: unit.into(),
        columns: vec![label.into()],
        time: time.to_vec(),
        data: values.into_iter().map(|v| vec![v]).collect(),
    }
}

/// Series of every component for the completed steps of `sim`.
pub fn collect_series(
    model: &Model,
    sim: &Simulation,
    boundaries: &[StepBoundary],
    controls: &[Vec<f64>],
) -> Result<BTreeMap<String, Series>> {
    let net = &model.network;
    let t = &sim.times;
    let steps = sim.states.len();
    let mut out = BTreeMap::new();
    for (k, node) in net.power_nodes.iter().enumerate() {
        let states: Vec<_> = (0..steps)
            .map(|j| model.power_state(&sim.states[j], &boundaries[j]))
            .collect();
        for (name, unit, f) in [
            (
                "V",
                "pu",
                (|s: &crate::power::PowerState, k: usize| s.v[k]) as fn(&_, usize) -> f64,
            ),
            ("phi", "rad", |s, k| s.phi[k]),
            ("P", "pu", |s, k| s.p[k]),
            ("Q", "pu", |s, k| s.q[k]),
        ] {
            out.insert(
                format!("{name}_{}", node.id),
                scalar(unit, name, t, states.iter().map(|s| f(s, k)).collect()),
            );
        }
    }
    for (i, pipe) in net.pipes.iter().enumerate() {
        let columns: Vec<String> = pipe.grid().iter().map(|x| x.to_string()).collect();
        let mut p = Vec::with_capacity(steps);
        let mut q = Vec::with_capacity(steps);
        for x in &sim.states {
            let s = model.pipe_state(x, i);
            p.push(
                s.rho
                    .iter()
                    .map(|r| crate::gas::pressure_of_density(*r, &model.constants))
                    .collect::<Result<Vec<_>>>()?,
            );
            q.push(s.q);
        }
        out.insert(
            format!("p_{}", pipe.id),
            Series {
                unit: "bar".into(),
                columns: columns.clone(),
                time: t.clone(),
                data: p,
            },
        );
        out.insert(
            format!("q_{}", pipe.id),
            Series {
                unit: "m3/s".into(),
                columns,
                time: t.clone(),
                data: q,
            },
        );
    }
    for (i, arc) in net.controlled.iter().enumerate() {
        let off = model.layout.controlled[i];
        let cols = vec!["in".to_string(), "out".to_string()];
        let p = sim
            .states
            .iter()
            .map(|x| vec![x[off] / PA_PER_BAR, x[off + 2] / PA_PER_BAR])
            .collect();
        let q = sim.states.iter().map(|x| vec![x[off + 1], x[off + 3]]).collect();
        out.insert(
            format!("p_{}", arc.id),
            Series {
                unit: "bar".into(),
                columns: cols.clone(),
                time: t.clone(),
                data: p,
            },
        );
        out.insert(
            format!("q_{}", arc.id),
            Series {
                unit: "m3/s".into(),
                columns: cols,
                time: t.clone(),
                data: q,
            },
        );
        out.insert(
            format!("u_{}", arc.id),
            scalar("bar", "u", t, (0..steps).map(|j| controls[j][i]).collect()),
        );
    }
    for (n, node) in net.gas_nodes.iter().enumerate() {
        let mut p = Vec::with_capacity(steps);
        for x in &sim.states {
            p.push(model.node_pressure(x, n)?.value);
        }
        out.insert(format!("p_{}", node.id), scalar("bar", "p", t, p));
    }
    for (i, conv) in net.conversions.iter().enumerate() {
        let col = model.layout.conversions[i];
        out.insert(
            format!("q_{}", conv.id),
            scalar("m3/s", "q", t, sim.states.iter().map(|x| x[col]).collect()),
        );
        out.insert(
            format!("P_{}", conv.id),
            scalar(
                "MW",
                "P",
                t,
                sim.states.iter().map(|x| model.conversion_output(x)[i]).collect(),
            ),
        );
    }
    Ok(out)
}

pub fn diagnostics(sim: &Simulation) -> Diagnostics {
    Diagnostics {
        complete: sim.failure.is_none(),
        failure: sim.failure.as_ref().map(|f| FailureMarker {
            step: f.step,
            time: f.time,
            reason: f.reason.clone(),
        }),
        residual_norms: sim.residual_norms.clone(),
        newton_iterations: sim.iterations.clone(),
        cfl_violations: sim
            .cfl
            .iter()
            .map(|c| CflRecord {
                step: c.step,
                pipe: c.pipe.clone(),
                grid_point: c.grid_point,
                min_speed: c.min_speed,
            })
            .collect(),
    }
}

pub fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S%.6fZ").to_string()
}

fn random_suffix() -> String {
    format!("{:08x}", rand::random::<u32>())
}

/// Writes `bytes` under a fresh name from `name`, never replacing an existing file.
///
/// The content goes to a private temporary file first and is then hard-linked
/// into place, so readers never see a partial document. A taken name makes
/// the loop ask `name` again.
pub fn write_atomic_with(dir: &Path, bytes: &[u8], mut name: impl FnMut() -> String) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = loop {
        let candidate = dir.join(format!(".{}.tmp", random_suffix()));
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&candidate)
        {
            Ok(mut f) => {
                f.write_all(bytes)
                    .and_then(|_| f.sync_all())
                    .map_err(|e| Error::io(&candidate, e))?;
                break candidate;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&candidate, e)),
        }
    };
    for _ in 0..1000 {
        let target = dir.join(name());
        match std::fs::hard_link(&tmp, &target) {
            Ok(()) => {
                let _ = std::fs::remove_file(&tmp);
                return Ok(target);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => {
                let _ = std::fs::remove_file(&tmp);
                return Err(Error::io(&target, e));
            }
        }
    }
    let _ = std::fs::remove_file(&tmp);
    Err(Error::io(dir, std::io::Error::other("no free output name")))
}

/// Writes `doc` as `<timestamp>_<random>.json` in `dir`.
pub fn write_output<T: Serialize>(dir: &Path, doc: &T) -> Result<PathBuf> {
    let bytes = serde_json::to_vec_pretty(doc).expect("documents serialize");
    write_atomic_with(dir, &bytes, || format!("{}_{}.json", timestamp(), random_suffix()))
}

pub fn read_output(path: &Path) -> Result<OutputDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// CSV table of one series: a `time` column followed by the series columns.
pub fn extract_csv(doc: &OutputDocument, key: &str) -> Result<String> {
    let Some(series) = doc.series.get(key) else {
        let keys: Vec<&str> = doc.series.keys().map(String::as_str).collect();
        return Err(Error::UnknownId(format!("{key} (available: {})", keys.join(", "))));
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("time".to_string()).chain(series.columns.iter().cloned());
    w.write_record(header).map_err(csv_error)?;
    for (t, row) in series.time.iter().zip(&series.data) {
        let record = std::iter::once(t.to_string()).chain(row.iter().map(|v| v.to_string()));
        w.write_record(record).map_err(csv_error)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(Path::new("<csv>"), e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::io(Path::new("<csv>"), std::io::Error::other(e.to_string()))
}
