//! Loading a problem directory and assembling a runnable scenario.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gas::GasConstants;
use crate::io::documents::{
    BoundaryDocument, ControlDocument, InitialDocument, OptimizationSettings, ProblemDataDocument, SolverSettings,
    TopologyDocument,
};
use crate::io::schema::{self, DocumentKind};
use crate::model::Model;
use crate::network::build_network;
use crate::optimization::ControlGrid;
use crate::solver::time_grid;

pub const PROBLEM_DIR: &str = "problem";
pub const OUTPUT_DIR: &str = "output";

/// The documents of `<dir>/problem/`.
///
/// `initial.json` may be absent until a stationary state has been written,
/// and `control.json` is only needed when the network has compressors or valves.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemBundle {
    pub dir: PathBuf,
    pub problem_data: ProblemDataDocument,
    pub topology: TopologyDocument,
    pub boundary: BoundaryDocument,
    pub initial: Option<InitialDocument>,
    pub control: Option<ControlDocument>,
}

fn read_document<T: DeserializeOwned>(path: &Path, kind: DocumentKind, problems: &mut Vec<String>) -> Option<T> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            problems.push(format!("{}: {e}", path.display()));
            return None;
        }
    };
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            problems.push(format!("{}: {e}", path.display()));
            return None;
        }
    };
    if let Err(errors) = schema::validate(kind, &value) {
        problems.extend(errors);
        return None;
    }
    match serde_json::from_value(value) {
        Ok(doc) => Some(doc),
        Err(e) => {
            problems.push(format!("{}: {e}", path.display()));
            None
        }
    }
}

fn read_optional<T: DeserializeOwned>(problem: &Path, kind: DocumentKind, problems: &mut Vec<String>) -> Option<T> {
    let path = problem.join(kind.file_name());
    if path.exists() {
        read_document(&path, kind, problems)
    } else {
        None
    }
}

/// Reads and schema-checks every document, reporting all problems together.
pub fn load_bundle(dir: &Path) -> Result<ProblemBundle> {
    let problem = dir.join(PROBLEM_DIR);
    if !problem.is_dir() {
        return Err(Error::Invalid(vec![format!(
            "{}: missing problem/ subdirectory",
            dir.display()
        )]));
    }
    let mut problems = Vec::new();
    let required = |kind: DocumentKind, problems: &mut Vec<String>| {
        let path = problem.join(kind.file_name());
        if !path.exists() {
            problems.push(format!("{}: missing file", path.display()));
        }
        path
    };
    let pd = required(DocumentKind::ProblemData, &mut problems);
    let topo = required(DocumentKind::Topology, &mut problems);
    let bnd = required(DocumentKind::Boundary, &mut problems);
    if !problems.is_empty() {
        return Err(Error::Invalid(problems));
    }
    let problem_data = read_document(&pd, DocumentKind::ProblemData, &mut problems);
    let topology = read_document(&topo, DocumentKind::Topology, &mut problems);
    let boundary = read_document(&bnd, DocumentKind::Boundary, &mut problems);
    let initial = read_optional(&problem, DocumentKind::Initial, &mut problems);
    let control = read_optional(&problem, DocumentKind::Control, &mut problems);
    match (problem_data, topology, boundary) {
        (Some(problem_data), Some(topology), Some(boundary)) if problems.is_empty() => Ok(ProblemBundle {
            dir: dir.to_path_buf(),
            problem_data,
            topology,
            boundary,
            initial,
            control,
        }),
        _ => Err(Error::Invalid(problems)),
    }
}

fn without_schema<T: Serialize>(doc: &T) -> serde_json::Value {
    let mut v = serde_json::to_value(doc).expect("documents serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("$schema");
    }
    v
}

/// Command-line replacements for bundle settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub delta_t: Option<f64>,
}

impl ProblemBundle {
    pub fn constants(&self) -> GasConstants {
        self.problem_data.gas_constants.unwrap_or_default()
    }

    /// Hex SHA-256 of the documents and overrides; `$schema` keys are ignored.
    pub fn digest(&self, overrides: &Overrides) -> String {
        let mut h = Sha256::new();
        for part in [
            without_schema(&self.problem_data),
            without_schema(&self.topology),
            without_schema(&self.boundary),
            self.initial.as_ref().map(without_schema).unwrap_or_default(),
            self.control.as_ref().map(without_schema).unwrap_or_default(),
        ] {
            h.update(part.to_string().as_bytes());
            h.update([0u8]);
        }
        h.update(format!("{:?}|{:?}|{:?}", overrides.seed, overrides.sigma, overrides.delta_t).as_bytes());
        hex::encode(h.finalize())
    }

    /// Network and boundary data, without the initial state.
    pub fn model(&self, overrides: &Overrides) -> Result<Model> {
        let network = build_network(&self.topology)?;
        let mut model = Model::new(network, self.constants(), &self.boundary)?;
        if let Some(s) = overrides.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid("--sigma", format!("must be non-negative, got {s}")));
            }
        }
        model.set_sigma(overrides.sigma);
        Ok(model)
    }

    pub fn times(&self, overrides: &Overrides) -> Result<Vec<f64>> {
        let te = self.problem_data.time_evolution;
        time_grid(te.start_time, te.end_time, overrides.delta_t.unwrap_or(te.delta_t))
    }

    /// Fully cross-checked scenario.
    pub fn scenario(&self, overrides: &Overrides) -> Result<Scenario> {
        let model = self.model(overrides)?;
        let mut problems = Vec::new();
        let times = self.times(overrides)?;
        let (start, end) = (times[0], times[times.len() - 1]);
        if let Err(Error::Invalid(list)) = model.check_horizon(start, end) {
            problems.extend(list);
        }
        let x0 = match &self.initial {
            None => {
                problems.push(format!(
                    "{}: missing initial.json (write one with init-steady)",
                    self.dir.join(PROBLEM_DIR).display()
                ));
                None
            }
            Some(doc) => match model.initial_state(doc) {
                Ok(x) => Some(x),
                Err(Error::Invalid(list)) => {
                    problems.extend(list);
                    None
                }
                Err(e) => return Err(e),
            },
        };
        let grid = match ControlGrid::from_document(&model, self.control.as_ref()) {
            Ok(g) => {
                if !g.covers(start, end) {
                    problems.push("control: control_times do not cover the horizon".into());
                }
                Some(g)
            }
            Err(Error::Invalid(list)) => {
                problems.extend(list);
                None
            }
            Err(e) => return Err(e),
        };
        if !problems.is_empty() {
            return Err(Error::Invalid(problems));
        }
        Ok(Scenario {
            model,
            x0: x0.expect("checked"),
            times,
            solver: self.problem_data.solver,
            grid: grid.expect("checked"),
            seed: overrides.seed.or(self.boundary.seed).unwrap_or(0),
            optimization: self.problem_data.optimization.clone(),
            digest: self.digest(overrides),
        })
    }
}

/// Everything a run needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: Model,
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    pub solver: SolverSettings,
    pub grid: ControlGrid,
    pub seed: u64,
    pub optimization: Option<OptimizationSettings>,
    pub digest: String,
}

/// Writes `doc` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(doc).expect("documents serialize") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
