//! Damped Newton iteration and implicit time stepping.

use crate::error::{Error, Result};
use crate::gas::{check_inverse_cfl, CflDiagnostic};
use crate::io::documents::SolverSettings;
use crate::linalg::{inf_norm, LuFactor, SparseMatrix};
use crate::model::{Model, StepBoundary};

#[derive(Debug, Clone, PartialEq)]
pub enum NewtonOutcome {
    Converged {
        x: Vec<f64>,
        iterations: usize,
        norm: f64,
    },
    Failed {
        x: Vec<f64>,
        norms: Vec<f64>,
        reason: String,
    },
}

impl NewtonOutcome {
    pub fn is_converged(&self) -> bool {
        matches!(self, NewtonOutcome::Converged { .. })
    }
}

fn norm_or_inf(r: Result<Vec<f64>>) -> (f64, Option<Vec<f64>>) {
    match r {
        Ok(v) => {
            let n = inf_norm(&v);
            if n.is_finite() {
                (n, Some(v))
            } else {
                (f64::INFINITY, None)
            }
        }
        Err(_) => (f64::INFINITY, None),
    }
}

/// Newton's method with step halving on the infinity norm of `residual`.
///
/// A residual evaluation that errors counts as an infinite norm. After
/// `max_halvings` unsuccessful halvings the last finite trial is taken anyway.
pub fn newton_solve<R, J>(x0: &[f64], residual: R, jacobian: J, settings: &SolverSettings) -> NewtonOutcome
where
    R: Fn(&[f64]) -> Result<Vec<f64>>,
    J: Fn(&[f64]) -> Result<SparseMatrix>,
{
    let mut x = x0.to_vec();
    let (mut norm, mut f) = norm_or_inf(residual(&x));
    let mut norms = vec![norm];
    let fail = |x: Vec<f64>, norms: Vec<f64>, reason: String| NewtonOutcome::Failed { x, norms, reason };
    for iteration in 0..=settings.max_iterations {
        let Some(fx) = f.take() else {
            return fail(x, norms, "residual is not finite at the current iterate".into());
        };
        if norm <= settings.tolerance {
            return NewtonOutcome::Converged {
                x,
                iterations: iteration,
                norm,
            };
        }
        if iteration == settings.max_iterations {
            break;
        }
        let step = match jacobian(&x)
            .and_then(|j| LuFactor::new(&j))
            .and_then(|lu| lu.solve(&fx))
        {
            Ok(s) => s,
            Err(e) => return fail(x, norms, e.to_string()),
        };
        let mut t = 1.0;
        let mut accepted = None;
        let mut last_finite = None;
        for _ in 0..=settings.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a - t * d).collect();
            let (n, ft) = norm_or_inf(residual(&trial));
            if n < norm {
                accepted = Some((trial, n, ft));
                break;
            }
            if n.is_finite() {
                last_finite = Some((trial, n, ft));
            }
            t *= 0.5;
        }
        match accepted.or(last_finite) {
            Some((trial, n, ft)) => {
                x = trial;
                norm = n;
                f = ft;
                norms.push(n);
            }
            None => return fail(x, norms, "no finite trial point along the Newton direction".into()),
        }
    }
    let reason = format!(
        "no convergence in {} iterations (residual {:.3e})",
        settings.max_iterations, norm
    );
    fail(x, norms, reason)
}

/// Inverse CFL violation found during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CflViolation {
    pub step: usize,
    pub pipe: String,
    pub grid_point: usize,
    pub min_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub step: usize,
    pub time: f64,
    pub reason: String,
}

/// States at every completed time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `None` for the initial state, which is not solved.
    pub residual_norms: Vec<Option<f64>>,
    pub iterations: Vec<usize>,
    pub cfl: Vec<CflViolation>,
    pub failure: Option<StepFailure>,
}

impl Simulation {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

/// Equally spaced time grid `start, start + dt, ..., end`.
pub fn time_grid(start: f64, end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && end > start && dt.is_finite() && start.is_finite() && end.is_finite()) {
        return Err(Error::invalid("time_evolution", "need start < end and a positive step"));
    }
    let steps = (end - start) / dt;
    let n = steps.round();
    if (steps - n).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::invalid(
            "time_evolution",
            format!("horizon {} is not a multiple of the step {dt}", end - start),
        ));
    }
    Ok((0..=n as usize).map(|j| start + j as f64 * dt).collect())
}

fn record_cfl(model: &Model, x: &[f64], step: usize, dt: f64, out: &mut Vec<CflViolation>) {
    for (i, pipe) in model.network.pipes.iter().enumerate() {
        if let Ok(CflDiagnostic::Violated { grid_point, min_speed }) =
            check_inverse_cfl(&model.pipe_state(x, i), dt, pipe, &model.constants)
        {
            out.push(CflViolation {
                step,
                pipe: pipe.id.clone(),
                grid_point,
                min_speed,
            });
        }
    }
}

/// Implicit time stepping from `x0` at `times[0]`.
///
/// `boundaries[j]` and `controls[j]` apply at `times[j]`. A step that fails to
/// converge ends the run; the states computed so far are returned.
pub fn simulate(
    model: &Model,
    x0: &[f64],
    times: &[f64],
    boundaries: &[StepBoundary],
    controls: &[Vec<f64>],
    settings: &SolverSettings,
) -> Result<Simulation> {
    for (context, found) in [("boundary steps", boundaries.len()), ("control steps", controls.len())] {
        if found != times.len() {
            return Err(Error::DimensionMismatch {
                context,
                expected: times.len(),
                found,
            });
        }
    }
    if x0.len() != model.len() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: model.len(),
            found: x0.len(),
        });
    }
    let mut sim = Simulation {
        times: vec![times[0]],
        states: vec![x0.to_vec()],
        residual_norms: vec![None],
        iterations: vec![0],
        cfl: Vec::new(),
        failure: None,
    };
    for j in 1..times.len() {
        let dt = times[j] - times[j - 1];
        let prev = sim.states[j - 1].clone();
        record_cfl(model, &prev, j, dt, &mut sim.cfl);
        let (b, u) = (&boundaries[j], &controls[j]);
        let outcome = newton_solve(
            &prev,
            |x| model.residual(&prev, x, b, u, dt),
            |x| model.jacobian(x, b, dt),
            settings,
        );
        match outcome {
            NewtonOutcome::Converged { x, iterations, norm } => {
                sim.times.push(times[j]);
                sim.states.push(x);
                sim.residual_norms.push(Some(norm));
                sim.iterations.push(iterations);
            }
            NewtonOutcome::Failed { reason, .. } => {
                log::warn!("step {j} at t = {} failed: {reason}", times[j]);
                sim.failure = Some(StepFailure {
                    step: j,
                    time: times[j],
                    reason,
                });
                break;
            }
        }
    }
    Ok(sim)
}

/// Stationary state: the step residual with `prev = next`.
pub fn steady_state(
    model: &Model,
    guess: &[f64],
    boundary: &StepBoundary,
    controls: &[f64],
    dt: f64,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    let prev_jacobian = model.prev_jacobian()?;
    let outcome = newton_solve(
        guess,
        |x| model.residual(x, x, boundary, controls, dt),
        |x| {
            let mut entries = model.jacobian_entries(x, boundary, dt)?;
            for i in 0..prev_jacobian.nrows() {
                entries.extend(prev_jacobian.row(i).map(|(j, v)| (i, j, v)));
            }
            SparseMatrix::from_triplets(model.len(), model.len(), &entries)
        },
        settings,
    );
    match outcome {
        NewtonOutcome::Converged { x, .. } => Ok(x),
        NewtonOutcome::Failed { reason, .. } => Err(Error::NotConverged(format!("stationary solve: {reason}"))),
    }
}
