use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gridflow_core::io::bundle::{load_bundle, write_json, Overrides, ProblemBundle, Scenario, OUTPUT_DIR, PROBLEM_DIR};
use gridflow_core::io::output::{self, OutputDocument, Provenance, Series};
use gridflow_core::io::schema;
use gridflow_core::model::StepBoundary;
use gridflow_core::optimization::{
    self, pressure_constraints, ControlGrid, ControlProblem, CostSpec, DriverSettings, OuterRecord, Status, Violation,
};
use gridflow_core::solver::{simulate, steady_state, Simulation};
use gridflow_core::Error as CoreError;
use serde::Serialize;

use crate::ensemble::{self, BandTable};
use crate::{CliError, CliResult};

/// A simulated scenario with the inputs of every step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub simulation: Simulation,
    pub boundaries: Vec<StepBoundary>,
    pub controls: Vec<Vec<f64>>,
}

pub fn simulate_scenario(scenario: &Scenario, seed: u64) -> CliResult<Trajectory> {
    let boundaries = scenario.model.step_boundaries(&scenario.times, seed)?;
    let controls = scenario.grid.at_steps(&scenario.times);
    let simulation = simulate(
        &scenario.model,
        &scenario.x0,
        &scenario.times,
        &boundaries,
        &controls,
        &scenario.solver,
    )?;
    Ok(Trajectory {
        simulation,
        boundaries,
        controls,
    })
}

pub fn output_document(scenario: &Scenario, overrides: &Overrides, traj: &Trajectory) -> CliResult<OutputDocument> {
    let series = output::collect_series(&scenario.model, &traj.simulation, &traj.boundaries, &traj.controls)?;
    let dt = scenario.times.get(1).map_or(0.0, |t| t - scenario.times[0]);
    Ok(OutputDocument {
        format: output::FORMAT.into(),
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_digest: scenario.digest.clone(),
            seed: scenario.seed,
            sigma: overrides.sigma,
            delta_t: dt,
            created: output::timestamp(),
        },
        diagnostics: output::diagnostics(&traj.simulation),
        series,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub path: PathBuf,
    pub document: OutputDocument,
}

impl RunOutcome {
    /// Message naming the failed step, if the run stopped early.
    pub fn failure(&self) -> Option<String> {
        self.document.diagnostics.failure.as_ref().map(|f| {
            format!(
                "time step {} (t = {} s) failed: {}; partial output written to {}",
                f.step,
                f.time,
                f.reason,
                self.path.display()
            )
        })
    }
}

/// Loads, simulates and writes `<dir>/output/<timestamp>_<suffix>.json`.
///
/// A run that fails part way still writes the completed steps.
pub fn run(dir: &Path, overrides: &Overrides) -> CliResult<RunOutcome> {
    let bundle = load_bundle(dir)?;
    let scenario = bundle.scenario(overrides)?;
    let traj = simulate_scenario(&scenario, scenario.seed)?;
    let document = output_document(&scenario, overrides, &traj)?;
    let path = output::write_output(&dir.join(OUTPUT_DIR), &document)?;
    log::info!("wrote {}", path.display());
    Ok(RunOutcome { path, document })
}

/// Solves for a stationary state at the start time and writes `problem/initial.json`.
pub fn init_steady(dir: &Path) -> CliResult<PathBuf> {
    let bundle = load_bundle(dir)?;
    let overrides = Overrides::default();
    let model = bundle.model(&overrides)?;
    let times = bundle.times(&overrides)?;
    let grid = ControlGrid::from_document(&model, bundle.control.as_ref())?;
    let boundary = model.mean_boundary(times[0]);
    let guess = match bundle.initial.as_ref().map(|d| model.initial_state(d)) {
        Some(Ok(x)) => x,
        _ => model.flat_guess(&boundary)?,
    };
    let dt = times[1] - times[0];
    let x = steady_state(
        &model,
        &guess,
        &boundary,
        &grid.interpolate(times[0]),
        dt,
        &bundle.problem_data.solver,
    )?;
    let doc = model.initial_document(&x, &boundary)?;
    let path = dir.join(PROBLEM_DIR).join(schema::DocumentKind::Initial.file_name());
    write_json(&path, &doc)?;
    Ok(path)
}

pub fn schema_factory(out: &Path) -> CliResult<Vec<PathBuf>> {
    Ok(schema::write_schemas(out)?)
}

pub fn schema_insert_keys(dir: &Path) -> CliResult<Vec<PathBuf>> {
    Ok(schema::insert_schema_keys(dir)?)
}

pub fn extract(file: &Path, key: &str) -> CliResult<String> {
    let doc = output::read_output(file)?;
    Ok(output::extract_csv(&doc, key)?)
}

/// Largest absolute deviation from `baseline` over time and ensemble, per series column.
pub fn max_deviation(baseline: &OutputDocument, ensemble: &[OutputDocument]) -> CliResult<String> {
    let mut rows: BTreeMap<(String, usize), (String, f64)> = BTreeMap::new();
    for (key, base) in &baseline.series {
        for (c, label) in base.columns.iter().enumerate() {
            rows.insert((key.clone(), c), (label.clone(), 0.0));
        }
    }
    for doc in ensemble {
        for (key, base) in &baseline.series {
            let Some(other) = doc.series.get(key) else {
                return Err(CliError::Input(CoreError::UnknownId(format!(
                    "series {key} missing from an ensemble member"
                ))));
            };
            if other.time.len() != base.time.len() || other.columns.len() != base.columns.len() {
                return Err(CliError::Input(CoreError::Invalid(vec![format!(
                    "series {key}: ensemble member has a different shape than the baseline"
                )])));
            }
            for (row_b, row_o) in base.data.iter().zip(&other.data) {
                for (c, (b, o)) in row_b.iter().zip(row_o).enumerate() {
                    let entry = rows.get_mut(&(key.clone(), c)).expect("columns registered");
                    entry.1 = entry.1.max((o - b).abs());
                }
            }
        }
    }
    let mut out = String::from("series,column,max_abs_deviation\n");
    for ((key, _), (label, dev)) in rows {
        out.push_str(&format!("{key},{label},{dev}\n"));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct McSettings {
    pub runs: usize,
    pub sigmas: Vec<f64>,
    /// Central band probabilities, e.g. 0.5, 0.75, 0.9.
    pub levels: Vec<f64>,
    pub workers: usize,
    pub master_seed: Option<u64>,
    /// Series to aggregate; all when empty.
    pub series: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub sigma: f64,
    pub succeeded: usize,
    pub failed: Vec<(u64, String)>,
    pub tables: Vec<BandTable>,
}

/// Seeded ensembles for every diffusion level.
pub fn monte_carlo(bundle: &ProblemBundle, settings: &McSettings) -> CliResult<Vec<EnsembleSummary>> {
    if settings.runs == 0 || settings.workers == 0 {
        return Err(CliError::Input(CoreError::invalid(
            "mc",
            "runs and workers must be positive",
        )));
    }
    if let Some(l) = settings.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(CliError::Input(CoreError::invalid(
            "mc",
            format!("quantile level {l} must lie in (0, 1)"),
        )));
    }
    let base = bundle.scenario(&Overrides::default())?;
    let master = settings.master_seed.unwrap_or(base.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let mut summaries = Vec::new();
    for &sigma in &settings.sigmas {
        let mut scenario = base.clone();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(CliError::Input(CoreError::invalid(
                "mc",
                format!("sigma must be non-negative, got {sigma}"),
            )));
        }
        scenario.model.set_sigma(Some(sigma));
        let runs = ensemble::run_seeds(&pool, settings.runs, master, |seed| {
            let traj = simulate_scenario(&scenario, seed)?;
            if let Some(f) = &traj.simulation.failure {
                return Err(CliError::Solver(format!("step {}: {}", f.step, f.reason)));
            }
            let mut series =
                output::collect_series(&scenario.model, &traj.simulation, &traj.boundaries, &traj.controls)?;
            if !settings.series.is_empty() {
                series.retain(|k, _| settings.series.contains(k));
            }
            Ok(series)
        });
        let mut ok: Vec<BTreeMap<String, Series>> = Vec::new();
        let mut failed = Vec::new();
        for (seed, r) in runs {
            match r {
                Ok(s) => ok.push(s),
                Err(e) => {
                    log::warn!("run with seed {seed} failed: {e}");
                    failed.push((seed, e.to_string()));
                }
            }
        }
        let tables = ensemble::aggregate(&ok, &settings.levels);
        summaries.push(EnsembleSummary {
            sigma,
            succeeded: ok.len(),
            failed,
            tables,
        });
    }
    Ok(summaries)
}

pub fn mc_csv(summaries: &[EnsembleSummary]) -> String {
    let mut out = String::from("sigma,series,level,time,column,lower,median,upper\n");
    for s in summaries {
        for t in &s.tables {
            for (j, time) in t.time.iter().enumerate() {
                for (c, label) in t.columns.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        s.sigma, t.key, t.level, time, label, t.lower[j][c], t.median[j][c], t.upper[j][c]
                    ));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationReport {
    pub format: String,
    pub config_digest: String,
    pub status: Status,
    /// Integral of the squared costed controls, bar²·s.
    pub cost: f64,
    pub control: gridflow_core::io::documents::ControlDocument,
    pub history: Vec<OuterRecord>,
    /// Violations found when re-checking every time step.
    pub audit: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub path: PathBuf,
    pub report: OptimizationReport,
}

/// Optimizes the compressor and valve controls of a bundle and writes the report.
pub fn optimize(dir: &Path, overrides: &Overrides) -> CliResult<OptimizeOutcome> {
    let bundle = load_bundle(dir)?;
    let scenario = bundle.scenario(overrides)?;
    let settings = scenario
        .optimization
        .clone()
        .ok_or_else(|| CliError::Input(CoreError::invalid("problem_data", "missing optimization section")))?;
    let start = scenario.times[0];
    let end = scenario.times[scenario.times.len() - 1];
    let constraints = pressure_constraints(&scenario.model, &settings, start, end)?;
    let cost = CostSpec::new(&scenario.grid, &settings.costed_controls)?;
    let boundaries = scenario.model.step_boundaries(&scenario.times, scenario.seed)?;
    let problem = ControlProblem::new(
        &scenario.model,
        &scenario.x0,
        &scenario.times,
        &boundaries,
        &scenario.grid,
        &cost,
        &constraints,
        settings.constraint_stride,
        &scenario.solver,
    );
    let outcome = optimization::optimize(&problem, &DriverSettings::from_settings(&settings))?;
    let report = OptimizationReport {
        format: "gridflow-optimization/1".into(),
        config_digest: scenario.digest.clone(),
        status: outcome.status,
        cost: outcome.cost,
        control: outcome.grid.to_document(),
        history: outcome.history,
        audit: outcome.audit,
    };
    let path = output::write_output(&dir.join(OUTPUT_DIR), &report)?;
    log::info!("wrote {}", path.display());
    Ok(OptimizeOutcome { path, report })
}
