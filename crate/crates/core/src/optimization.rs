//! Optimal control of compressors and valves.
//!
//! Controls live on a coarse grid and are interpolated linearly onto the
//! state grid. Gradients come from a discrete adjoint sweep over the time
//! stepping recursion. The built-in driver is an augmented Lagrangian outer
//! loop around a projected L-BFGS inner loop; it talks to the problem only
//! through [`Nlp`].

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::documents::{BoundKind, ControlDocument, ControlRecord, OptimizationSettings, SolverSettings};
use crate::linalg::{inf_norm, LuFactor};
use crate::model::{Model, StepBoundary};
use crate::solver::{simulate, Simulation};
use crate::timeline::Timeline;

/// Piecewise-linear controls of every controlled arc.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    pub times: Vec<f64>,
    /// Arc-major values: `values[arc * times.len() + k]`, bar.
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub arcs: Vec<String>,
}

impl ControlGrid {
    /// Controls from a control document; every controlled arc needs a record.
    pub fn from_document(model: &Model, doc: Option<&ControlDocument>) -> Result<Self> {
        let arcs: Vec<String> = model.network.controlled.iter().map(|a| a.id.clone()).collect();
        let lower: Vec<f64> = model.network.controlled.iter().map(|a| a.lower).collect();
        let upper: Vec<f64> = model.network.controlled.iter().map(|a| a.upper).collect();
        let Some(doc) = doc else {
            if arcs.is_empty() {
                return Ok(Self {
                    times: vec![0.0],
                    values: Vec::new(),
                    lower,
                    upper,
                    arcs,
                });
            }
            return Err(Error::Invalid(vec![
                "control: controlled arcs need a control document".into()
            ]));
        };
        let mut problems = Vec::new();
        let times = doc.control_times.clone();
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            problems.push("control: control_times must be non-empty and strictly increasing".to_string());
        }
        let mut by_id: HashMap<&str, &ControlRecord> = HashMap::new();
        for r in &doc.controls {
            if by_id.insert(r.id.as_str(), r).is_some() {
                problems.push(format!("control: duplicate record for `{}`", r.id));
            }
            if !arcs.contains(&r.id) {
                problems.push(format!("control: `{}` is not a compressor or valve", r.id));
            }
        }
        let mut values = Vec::with_capacity(arcs.len() * times.len());
        for (i, id) in arcs.iter().enumerate() {
            match by_id.get(id.as_str()) {
                None => problems.push(format!("control: missing record for `{id}`")),
                Some(r) if r.values.len() != times.len() => problems.push(format!(
                    "control `{id}`: expected {} values, found {}",
                    times.len(),
                    r.values.len()
                )),
                Some(r) => {
                    if let Some(v) = r.values.iter().find(|v| !(**v >= lower[i] && **v <= upper[i])) {
                        problems.push(format!(
                            "control `{id}`: value {v} outside [{}, {}]",
                            lower[i], upper[i]
                        ));
                    }
                    values.extend_from_slice(&r.values);
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Invalid(problems));
        }
        Ok(Self {
            times,
            values,
            lower,
            upper,
            arcs,
        })
    }

    pub fn to_document(&self) -> ControlDocument {
        let n = self.times.len();
        ControlDocument {
            schema: None,
            control_times: self.times.clone(),
            controls: self
                .arcs
                .iter()
                .enumerate()
                .map(|(i, id)| ControlRecord {
                    id: id.clone(),
                    values: self.values[i * n..(i + 1) * n].to_vec(),
                })
                .collect(),
        }
    }

    pub fn covers(&self, start: f64, end: f64) -> bool {
        self.arcs.is_empty() || (self.times[0] <= start + 1e-9 && self.times[self.times.len() - 1] >= end - 1e-9)
    }

    /// Box bounds of every value, arc-major.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.times.len();
        let lo = self.lower.iter().flat_map(|&l| std::iter::repeat_n(l, n)).collect();
        let hi = self.upper.iter().flat_map(|&u| std::iter::repeat_n(u, n)).collect();
        (lo, hi)
    }

    /// Interpolation weights `(lo, hi, w)` of the control points bracketing `t`.
    pub fn locate(&self, t: f64) -> (usize, usize, f64) {
        let values = vec![vec![0.0]; self.times.len()];
        match Timeline::new("control", self.times.clone(), values) {
            Ok(tl) => tl.locate(t),
            Err(_) => (0, 0, 0.0),
        }
    }

    /// Control of every arc at time `t`.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        interpolate_controls(self, &self.values, t)
    }

    pub fn at_steps(&self, times: &[f64]) -> Vec<Vec<f64>> {
        times.iter().map(|&t| self.interpolate(t)).collect()
    }
}

/// Controls at `t` for the grid layout of `grid` with values `c`.
pub fn interpolate_controls(grid: &ControlGrid, c: &[f64], t: f64) -> Vec<f64> {
    let n = grid.times.len();
    let (lo, hi, w) = grid.locate(t);
    (0..grid.arcs.len())
        .map(|a| (1.0 - w) * c[a * n + lo] + w * c[a * n + hi])
        .collect()
}

/// Which controls enter the cost `sum_a integral u_a(t)^2 dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub costed: Vec<bool>,
}

impl CostSpec {
    pub fn new(grid: &ControlGrid, costed: &[String]) -> Result<Self> {
        let unknown: Vec<String> = costed
            .iter()
            .filter(|id| !grid.arcs.contains(id))
            .map(|id| format!("optimization: costed control `{id}` is not a compressor or valve"))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Invalid(unknown));
        }
        Ok(Self {
            costed: grid.arcs.iter().map(|a| costed.contains(a)).collect(),
        })
    }
}

/// Trapezoidal weights on a time grid.
pub fn quadrature_weights(times: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; times.len()];
    for (j, pair) in times.windows(2).enumerate() {
        let h = pair[1] - pair[0];
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    w
}

/// Trapezoidal integral of the squared costed controls, bar²·s.
pub fn evaluate_cost(controls: &[Vec<f64>], times: &[f64], spec: &CostSpec) -> f64 {
    quadrature_weights(times)
        .iter()
        .zip(controls)
        .map(|(w, u)| {
            w * u
                .iter()
                .zip(&spec.costed)
                .filter(|(_, c)| **c)
                .map(|(v, _)| v * v)
                .sum::<f64>()
        })
        .sum()
}

/// Gradient of [`evaluate_cost`] with respect to the grid values.
pub fn cost_gradient(grid: &ControlGrid, c: &[f64], times: &[f64], spec: &CostSpec) -> Vec<f64> {
    let per_step: Vec<Vec<f64>> = times
        .iter()
        .zip(quadrature_weights(times))
        .map(|(&t, w)| {
            interpolate_controls(grid, c, t)
                .iter()
                .zip(&spec.costed)
                .map(|(u, costed)| if *costed { 2.0 * w * u } else { 0.0 })
                .collect()
        })
        .collect();
    pull_back(grid, times, &per_step)
}

/// Maps per-step sensitivities `d/du_j` onto the grid values.
pub fn pull_back(grid: &ControlGrid, times: &[f64], per_step: &[Vec<f64>]) -> Vec<f64> {
    let n = grid.times.len();
    let mut out = vec![0.0; grid.values.len()];
    for (&t, d) in times.iter().zip(per_step) {
        let (lo, hi, w) = grid.locate(t);
        for (a, v) in d.iter().enumerate() {
            out[a * n + lo] += (1.0 - w) * v;
            out[a * n + hi] += w * v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureConstraint {
    pub node: usize,
    pub node_id: String,
    pub bound: BoundKind,
    pub timeline: Timeline,
}

impl PressureConstraint {
    /// Constraint value `g <= 0` for pressure `p` at time `t`.
    pub fn value(&self, p: f64, t: f64) -> f64 {
        let b = self.timeline.component(0, t);
        match self.bound {
            BoundKind::Lower => b - p,
            BoundKind::Upper => p - b,
        }
    }

    fn sign(&self) -> f64 {
        match self.bound {
            BoundKind::Lower => -1.0,
            BoundKind::Upper => 1.0,
        }
    }
}

/// Pressure path constraints from the optimization settings.
pub fn pressure_constraints(
    model: &Model,
    settings: &OptimizationSettings,
    start: f64,
    end: f64,
) -> Result<Vec<PressureConstraint>> {
    let mut problems = Vec::new();
    let mut out = Vec::new();
    for rec in &settings.constraints {
        let node = match model.gas_node_index(&rec.node) {
            Ok(n) => n,
            Err(_) => {
                problems.push(format!("optimization: constraint on unknown gas node `{}`", rec.node));
                continue;
            }
        };
        let tl = match Timeline::new(
            &rec.node,
            rec.times.clone(),
            rec.values.iter().map(|v| vec![*v]).collect(),
        ) {
            Ok(tl) => tl,
            Err(e) => {
                problems.push(format!("optimization: {e}"));
                continue;
            }
        };
        if !tl.covers(start, end) {
            problems.push(format!(
                "optimization: bound on `{}` does not cover the horizon",
                rec.node
            ));
        }
        out.push(PressureConstraint {
            node,
            node_id: rec.node.clone(),
            bound: rec.bound,
            timeline: tl,
        });
    }
    if settings.constraint_stride == 0 {
        problems.push("optimization: constraint_stride must be at least 1".into());
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Invalid(problems))
    }
}

/// One evaluated `(constraint, step)` inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintPoint {
    pub constraint: usize,
    pub step: usize,
}

/// Inequalities evaluated at steps `j >= 1` with `j % stride == 0`.
pub fn constraint_points(constraints: &[PressureConstraint], steps: usize, stride: usize) -> Vec<ConstraintPoint> {
    let stride = stride.max(1);
    (1..steps)
        .filter(|j| j % stride == 0)
        .flat_map(|step| (0..constraints.len()).map(move |constraint| ConstraintPoint { constraint, step }))
        .collect()
}

pub fn constraint_values(
    model: &Model,
    sim: &Simulation,
    constraints: &[PressureConstraint],
    points: &[ConstraintPoint],
) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|pt| {
            let c = &constraints[pt.constraint];
            let p = model.node_pressure(&sim.states[pt.step], c.node)?;
            Ok(c.value(p.value, sim.times[pt.step]))
        })
        .collect()
}

/// A bound violated by more than the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: String,
    pub bound: BoundKind,
    pub step: usize,
    pub time: f64,
    pub pressure: f64,
    pub amount: f64,
}

/// Checks every constraint at every state step after the first.
pub fn constraint_violation_audit(
    model: &Model,
    sim: &Simulation,
    constraints: &[PressureConstraint],
    tolerance: f64,
) -> Result<Vec<Violation>> {
    let mut out = Vec::new();
    for step in 1..sim.states.len() {
        for c in constraints {
            let p = model.node_pressure(&sim.states[step], c.node)?.value;
            let g = c.value(p, sim.times[step]);
            if g > tolerance {
                out.push(Violation {
                    node: c.node_id.clone(),
                    bound: c.bound,
                    step,
                    time: sim.times[step],
                    pressure: p,
                    amount: g,
                });
            }
        }
    }
    Ok(out)
}

/// Gradient of `sum_j phi_j(x_j)` with respect to the grid values.
///
/// `state_gradient[j]` holds sparse entries of `d phi_j / d x_j`. The
/// simulation must be complete.
pub fn adjoint_gradient(
    model: &Model,
    sim: &Simulation,
    boundaries: &[StepBoundary],
    grid: &ControlGrid,
    state_gradient: &[Vec<(usize, f64)>],
) -> Result<Vec<f64>> {
    if let Some(f) = &sim.failure {
        return Err(Error::NotConverged(format!(
            "adjoint needs a complete run; step {} failed",
            f.step
        )));
    }
    let steps = sim.states.len();
    if state_gradient.len() != steps || boundaries.len() != steps {
        return Err(Error::DimensionMismatch {
            context: "adjoint steps",
            expected: steps,
            found: state_gradient.len().min(boundaries.len()),
        });
    }
    let prev = model.prev_jacobian()?;
    let control = model.control_jacobian();
    let arcs = model.network.controlled.len();
    let mut per_step = vec![vec![0.0; arcs]; steps];
    let mut lambda_next: Option<Vec<f64>> = None;
    for j in (1..steps).rev() {
        let mut rhs = vec![0.0; model.len()];
        for &(col, v) in &state_gradient[j] {
            rhs[col] -= v;
        }
        if let Some(l) = &lambda_next {
            for (r, v) in rhs.iter_mut().zip(prev.transpose_mul_vec(l)) {
                *r -= v;
            }
        }
        let dt = sim.times[j] - sim.times[j - 1];
        let a = model.jacobian(&sim.states[j], &boundaries[j], dt)?;
        let lambda = LuFactor::new(&a)?.solve_transpose(&rhs)?;
        for &(row, arc, v) in &control {
            per_step[j][arc] += lambda[row] * v;
        }
        lambda_next = Some(lambda);
    }
    Ok(pull_back(grid, &sim.times, &per_step))
}

/// Problem seen by the driver: minimize `f(x)` subject to `g(x) <= 0` and box bounds.
pub trait Nlp {
    /// Data kept from an evaluation for the gradient.
    type Cache;

    fn dim(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn constraint_count(&self) -> usize;
    /// Objective and constraint values; an error rejects the point.
    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>, Self::Cache)>;
    /// `w_f grad f + sum_i w_g[i] grad g_i` at an evaluated point.
    fn gradient(&self, x: &[f64], cache: &Self::Cache, w_f: f64, w_g: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverSettings {
    pub feasibility_tolerance: f64,
    pub optimality_tolerance: f64,
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub initial_penalty: f64,
    pub memory: usize,
}

impl DriverSettings {
    pub fn from_settings(s: &OptimizationSettings) -> Self {
        Self {
            feasibility_tolerance: s.feasibility_tolerance,
            optimality_tolerance: s.optimality_tolerance,
            max_outer_iterations: s.max_outer_iterations,
            max_inner_iterations: s.max_inner_iterations,
            ..Self::default()
        }
    }
}

impl Default for DriverSettings {
    fn default() -> Self {
        Self {
            feasibility_tolerance: 1e-6,
            optimality_tolerance: 1e-6,
            max_outer_iterations: 30,
            max_inner_iterations: 200,
            initial_penalty: 10.0,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    /// Feasible and stationary to tolerance.
    Optimal,
    /// Feasible, but the inner loop stopped before reaching the optimality tolerance.
    Feasible,
    /// Constraint violation did not drop below tolerance.
    Infeasible,
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub penalty: f64,
    pub inner_iterations: usize,
    pub stationarity: f64,
    pub rejected_trials: usize,
    /// Augmented Lagrangian after every accepted inner step.
    pub merit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub status: Status,
    pub history: Vec<OuterRecord>,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Point<C> {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    merit: f64,
    cache: C,
}

struct Augmented<'a, N: Nlp> {
    nlp: &'a N,
    mu: Vec<f64>,
    rho: f64,
    rejected: usize,
}

impl<N: Nlp> Augmented<'_, N> {
    fn merit(&self, f: f64, g: &[f64]) -> f64 {
        let penalty: f64 = g
            .iter()
            .zip(&self.mu)
            .map(|(gi, mi)| (mi + self.rho * gi).max(0.0).powi(2) - mi * mi)
            .sum();
        f + penalty / (2.0 * self.rho)
    }

    fn point(&mut self, x: Vec<f64>) -> Option<Point<N::Cache>> {
        match self.nlp.evaluate(&x) {
            Ok((f, g, cache)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let merit = self.merit(f, &g);
                Some(Point { x, f, g, merit, cache })
            }
            Ok(_) | Err(_) => {
                self.rejected += 1;
                None
            }
        }
    }

    fn gradient(&self, p: &Point<N::Cache>) -> Result<Vec<f64>> {
        let w: Vec<f64> =
            p.g.iter()
                .zip(&self.mu)
                .map(|(gi, mi)| (mi + self.rho * gi).max(0.0))
                .collect();
        self.nlp.gradient(&p.x, &p.cache, 1.0, &w)
    }
}

/// Projected-gradient norm `|x - P(x - g)|_inf`.
fn stationarity(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, h))| (xi - (xi - gi).clamp(*l, *h)).abs())
        .fold(0.0, f64::max)
}

struct InnerOutcome<C> {
    point: Point<C>,
    iterations: usize,
    stationarity: f64,
    merit: Vec<f64>,
}

/// Two-metric projected L-BFGS with an Armijo search along the projected path.
fn inner_solve<N: Nlp>(
    al: &mut Augmented<'_, N>,
    start: Point<N::Cache>,
    settings: &DriverSettings,
) -> Result<InnerOutcome<N::Cache>> {
    let (lo, hi) = al.nlp.bounds();
    let mut point = start;
    let mut grad = al.gradient(&point)?;
    let mut memory: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut merit = vec![point.merit];
    let mut iterations = 0;
    let mut pg = stationarity(&point.x, &grad, &lo, &hi);
    while iterations < settings.max_inner_iterations && pg > settings.optimality_tolerance {
        let eps = pg.min(1e-3);
        let active: Vec<bool> = (0..point.x.len())
            .map(|i| (point.x[i] - lo[i] <= eps && grad[i] > 0.0) || (hi[i] - point.x[i] <= eps && grad[i] < 0.0))
            .collect();
        let mut accepted = None;
        for attempt in 0..2 {
            let direction = if attempt == 0 && !memory.is_empty() {
                two_loop(&grad, &active, &memory)
            } else {
                let scale = if memory.is_empty() {
                    1.0 / inf_norm(&grad).max(1.0)
                } else {
                    1.0
                };
                grad.iter().map(|g| -scale * g).collect()
            };
            let free_slope: f64 = (0..grad.len())
                .filter(|&i| !active[i])
                .map(|i| grad[i] * direction[i])
                .sum();
            if attempt == 0 && !memory.is_empty() && free_slope >= 0.0 {
                memory.clear();
                continue;
            }
            let mut t = 1.0;
            for _ in 0..40 {
                let mut trial: Vec<f64> = point.x.iter().zip(&direction).map(|(x, d)| x + t * d).collect();
                project(&mut trial, &lo, &hi);
                let slope = dot(
                    &grad,
                    &trial.iter().zip(&point.x).map(|(a, b)| a - b).collect::<Vec<_>>(),
                );
                if slope >= 0.0 {
                    t *= 0.5;
                    continue;
                }
                if let Some(p) = al.point(trial) {
                    if p.merit <= point.merit + 1e-4 * slope {
                        accepted = Some(p);
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() || memory.is_empty() {
                break;
            }
            memory.clear();
        }
        let Some(next) = accepted else {
            log::debug!("line search stalled at projected gradient {pg:.3e}");
            break;
        };
        let next_grad = al.gradient(&next)?;
        let s: Vec<f64> = next.x.iter().zip(&point.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == settings.memory {
                memory.remove(0);
            }
            memory.push((s, y, 1.0 / sy));
        }
        point = next;
        grad = next_grad;
        merit.push(point.merit);
        iterations += 1;
        pg = stationarity(&point.x, &grad, &lo, &hi);
    }
    Ok(InnerOutcome {
        point,
        iterations,
        stationarity: pg,
        merit,
    })
}

/// L-BFGS direction on the free variables, steepest descent on the active ones.
fn two_loop(grad: &[f64], active: &[bool], memory: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(active).map(|(x, a)| if *a { 0.0 } else { *x }).collect() };
    let mut q = mask(grad);
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, r) in memory.iter().rev() {
        let a = r * dot(&mask(s), &q);
        for (qi, yi) in q.iter_mut().zip(mask(y)) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let (s, y, _) = &memory[memory.len() - 1];
    let (ms, my) = (mask(s), mask(y));
    let yy = dot(&my, &my);
    let gamma = if yy > 0.0 { (dot(&ms, &my) / yy).max(0.0) } else { 1.0 };
    let gamma = if gamma > 0.0 { gamma } else { 1.0 };
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for ((s, y, r), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = r * dot(&mask(y), &q);
        for (qi, si) in q.iter_mut().zip(mask(s)) {
            *qi += (a - b) * si;
        }
    }
    q.iter()
        .zip(grad)
        .zip(active)
        .map(|((d, g), a)| if *a { -g } else { -d })
        .collect()
}

/// Augmented Lagrangian driver with one multiplier per inequality.
pub fn solve_nlp<N: Nlp>(nlp: &N, x0: &[f64], settings: &DriverSettings) -> Result<DriverResult> {
    let (lo, hi) = nlp.bounds();
    if x0.len() != nlp.dim() || lo.len() != nlp.dim() || hi.len() != nlp.dim() {
        return Err(Error::DimensionMismatch {
            context: "optimization variables",
            expected: nlp.dim(),
            found: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    project(&mut x, &lo, &hi);
    let mut al = Augmented {
        nlp,
        mu: vec![0.0; nlp.constraint_count()],
        rho: settings.initial_penalty,
        rejected: 0,
    };
    let mut point = al
        .point(x)
        .ok_or_else(|| Error::Optimization("the starting controls do not yield a solution".into()))?;
    let violation = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut previous_violation = f64::INFINITY;
    let mut history = Vec::new();
    let mut status = Status::Infeasible;
    for iteration in 0..settings.max_outer_iterations {
        al.rejected = 0;
        point.merit = al.merit(point.f, &point.g);
        let inner = inner_solve(&mut al, point, settings)?;
        point = inner.point;
        let v = violation(&point.g);
        history.push(OuterRecord {
            iteration,
            objective: point.f,
            max_violation: v,
            penalty: al.rho,
            inner_iterations: inner.iterations,
            stationarity: inner.stationarity,
            rejected_trials: al.rejected,
            merit: inner.merit,
        });
        log::info!(
            "outer {iteration}: objective {:.6e}, violation {v:.3e}, penalty {:.1e}, stationarity {:.3e}",
            point.f,
            al.rho,
            inner.stationarity
        );
        for (m, g) in al.mu.iter_mut().zip(&point.g) {
            *m = (*m + al.rho * g).max(0.0);
        }
        if v <= settings.feasibility_tolerance {
            if inner.stationarity <= settings.optimality_tolerance {
                status = Status::Optimal;
                break;
            }
            status = Status::Feasible;
            if inner.iterations == 0 {
                break;
            }
        } else {
            status = Status::Infeasible;
            if v > 0.25 * previous_violation {
                al.rho = (al.rho * 10.0).min(1e12);
            }
        }
        previous_violation = v;
    }
    Ok(DriverResult {
        objective: point.f,
        max_violation: violation(&point.g),
        x: point.x,
        status,
        history,
    })
}

/// Compressor and valve control of a gas network over a fixed horizon.
pub struct ControlProblem<'a> {
    pub model: &'a Model,
    pub x0: &'a [f64],
    pub times: &'a [f64],
    pub boundaries: &'a [StepBoundary],
    pub grid: &'a ControlGrid,
    pub cost: &'a CostSpec,
    pub constraints: &'a [PressureConstraint],
    pub points: Vec<ConstraintPoint>,
    pub solver: &'a SolverSettings,
}

impl<'a> ControlProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a Model,
        x0: &'a [f64],
        times: &'a [f64],
        boundaries: &'a [StepBoundary],
        grid: &'a ControlGrid,
        cost: &'a CostSpec,
        constraints: &'a [PressureConstraint],
        stride: usize,
        solver: &'a SolverSettings,
    ) -> Self {
        Self {
            model,
            x0,
            times,
            boundaries,
            grid,
            cost,
            constraints,
            points: constraint_points(constraints, times.len(), stride),
            solver,
        }
    }

    fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Runs the simulation for grid values `c`.
    pub fn simulate(&self, c: &[f64]) -> Result<Simulation> {
        let controls: Vec<Vec<f64>> = self
            .times
            .iter()
            .map(|&t| interpolate_controls(self.grid, c, t))
            .collect();
        simulate(self.model, self.x0, self.times, self.boundaries, &controls, self.solver)
    }

    /// Cost in bar²·s.
    pub fn cost(&self, c: &[f64]) -> f64 {
        let controls: Vec<Vec<f64>> = self
            .times
            .iter()
            .map(|&t| interpolate_controls(self.grid, c, t))
            .collect();
        evaluate_cost(&controls, self.times, self.cost)
    }

    /// Adjoint gradient of `sum_i w[i] g_i` over the thinned inequalities.
    pub fn constraint_gradient(&self, sim: &Simulation, w: &[f64]) -> Result<Vec<f64>> {
        let mut per_step: Vec<Vec<(usize, f64)>> = vec![Vec::new(); sim.states.len()];
        for (pt, wi) in self.points.iter().zip(w) {
            if *wi == 0.0 {
                continue;
            }
            let c = &self.constraints[pt.constraint];
            let p = self.model.node_pressure(&sim.states[pt.step], c.node)?;
            per_step[pt.step].extend(p.gradient.iter().map(|(col, d)| (*col, wi * c.sign() * d)));
        }
        if per_step.iter().all(|v| v.is_empty()) {
            return Ok(vec![0.0; self.grid.values.len()]);
        }
        adjoint_gradient(self.model, sim, self.boundaries, self.grid, &per_step)
    }
}

impl Nlp for ControlProblem<'_> {
    type Cache = Simulation;

    fn dim(&self) -> usize {
        self.grid.values.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.grid.bounds()
    }

    fn constraint_count(&self) -> usize {
        self.points.len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>, Simulation)> {
        let sim = self.simulate(x)?;
        if let Some(f) = &sim.failure {
            return Err(Error::NotConverged(format!("step {}: {}", f.step, f.reason)));
        }
        let g = constraint_values(self.model, &sim, self.constraints, &self.points)?;
        Ok((self.cost(x) / self.horizon(), g, sim))
    }

    fn gradient(&self, x: &[f64], cache: &Simulation, w_f: f64, w_g: &[f64]) -> Result<Vec<f64>> {
        let mut grad = self.constraint_gradient(cache, w_g)?;
        let scale = w_f / self.horizon();
        for (g, d) in grad.iter_mut().zip(cost_gradient(self.grid, x, self.times, self.cost)) {
            *g += scale * d;
        }
        Ok(grad)
    }
}

/// Optimized controls with their run, history and full-resolution audit.
#[derive(Debug, Clone)]
pub struct OptimizationOutcome {
    pub grid: ControlGrid,
    pub cost: f64,
    pub status: Status,
    pub history: Vec<OuterRecord>,
    pub simulation: Simulation,
    pub audit: Vec<Violation>,
}

/// Optimizes the controls starting from `grid` and audits the result at every step.
pub fn optimize(problem: &ControlProblem<'_>, settings: &DriverSettings) -> Result<OptimizationOutcome> {
    let result = solve_nlp(problem, &problem.grid.values, settings)?;
    let mut grid = problem.grid.clone();
    grid.values = result.x.clone();
    let simulation = problem.simulate(&grid.values)?;
    let audit = constraint_violation_audit(
        problem.model,
        &simulation,
        problem.constraints,
        settings.feasibility_tolerance,
    )?;
    Ok(OptimizationOutcome {
        cost: problem.cost(&grid.values),
        grid,
        status: result.status,
        history: result.history,
        simulation,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(times: Vec<f64>, values: Vec<f64>, arcs: usize) -> ControlGrid {
        ControlGrid {
            times,
            values,
            lower: vec![0.0; arcs],
            upper: vec![120.0; arcs],
            arcs: (0..arcs).map(|i| format!("c{i}")).collect(),
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = grid(vec![0.0, 10.0, 20.0], vec![0.0, 10.0, 4.0], 1);
        assert_eq!(g.interpolate(10.0), vec![10.0]);
        assert_eq!(g.interpolate(5.0), vec![5.0]);
        assert_eq!(g.interpolate(15.0), vec![7.0]);
        let flat = grid(vec![0.0, 10.0], vec![3.0, 3.0], 1);
        assert!([0.0, 2.5, 7.1, 10.0].iter().all(|&t| flat.interpolate(t) == vec![3.0]));
    }

    #[test]
    fn cost_examples() {
        let times: Vec<f64> = (0..=48).map(|j| j as f64 * 1800.0).collect();
        let spec = CostSpec {
            costed: vec![true, false],
        };
        let ones = vec![vec![1.0, 5.0]; times.len()];
        assert!((evaluate_cost(&ones, &times, &spec) - 86400.0).abs() < 1e-9);
        let zeros = vec![vec![0.0, 5.0]; times.len()];
        assert_eq!(evaluate_cost(&zeros, &times, &spec), 0.0);
        let u: Vec<Vec<f64>> = times.iter().map(|t| vec![(t / 3600.0).sin(), 0.0]).collect();
        let u2: Vec<Vec<f64>> = u.iter().map(|v| vec![2.0 * v[0], 0.0]).collect();
        let c = evaluate_cost(&u, &times, &spec);
        assert!((evaluate_cost(&u2, &times, &spec) - 4.0 * c).abs() < 1e-9 * c);
    }

    #[test]
    fn cost_gradient_matches_differences() {
        let g = grid(vec![0.0, 3600.0, 7200.0], vec![1.0, 4.0, 2.0, 0.5, 0.0, 3.0], 2);
        let times: Vec<f64> = (0..=8).map(|j| j as f64 * 900.0).collect();
        let spec = CostSpec {
            costed: vec![true, true],
        };
        let cost = |c: &[f64]| {
            let u: Vec<Vec<f64>> = times.iter().map(|&t| interpolate_controls(&g, c, t)).collect();
            evaluate_cost(&u, &times, &spec)
        };
        let grad = cost_gradient(&g, &g.values, &times, &spec);
        for i in 0..g.values.len() {
            let mut a = g.values.clone();
            let mut b = g.values.clone();
            a[i] += 1e-4;
            b[i] -= 1e-4;
            let fd = (cost(&a) - cost(&b)) / 2e-4;
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                "{i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn thinned_points_skip_initial_state() {
        let c = PressureConstraint {
            node: 0,
            node_id: "n".into(),
            bound: BoundKind::Lower,
            timeline: Timeline::constant(vec![70.0]),
        };
        let pts = constraint_points(std::slice::from_ref(&c), 7, 2);
        assert_eq!(pts.iter().map(|p| p.step).collect::<Vec<_>>(), vec![2, 4, 6]);
        assert_eq!(c.value(70.0, 0.0), 0.0);
        assert!(c.value(69.0, 0.0) > 0.0);
    }

    /// min (x0 - 2)^2 + (x1 + 1)^2 on [0, 5]^2 subject to x0 + x1 >= 3.
    struct Quadratic {
        bound: Option<f64>,
    }

    impl Nlp for Quadratic {
        type Cache = ();

        fn dim(&self) -> usize {
            2
        }

        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![0.0, 0.0], vec![5.0, 5.0])
        }

        fn constraint_count(&self) -> usize {
            usize::from(self.bound.is_some())
        }

        fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>, ())> {
            let f = (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2);
            let g = self.bound.map(|b| vec![b - x[0] - x[1]]).unwrap_or_default();
            Ok((f, g, ()))
        }

        fn gradient(&self, x: &[f64], _: &(), w_f: f64, w_g: &[f64]) -> Result<Vec<f64>> {
            let mut g = vec![2.0 * w_f * (x[0] - 2.0), 2.0 * w_f * (x[1] + 1.0)];
            if let Some(w) = w_g.first() {
                g[0] -= w;
                g[1] -= w;
            }
            Ok(g)
        }
    }

    #[test]
    fn driver_finds_box_and_constrained_minimizers() {
        let settings = DriverSettings::default();
        let free = solve_nlp(&Quadratic { bound: None }, &[4.0, 4.0], &settings).unwrap();
        assert_eq!(free.status, Status::Optimal);
        assert!((free.x[0] - 2.0).abs() < 1e-6 && free.x[1] == 0.0);

        // on the face x1 = 0 the bound is x0 >= 3; with x1 > 0 the optimum is (3, 0) anyway
        let constrained = solve_nlp(&Quadratic { bound: Some(3.0) }, &[0.0, 0.0], &settings).unwrap();
        assert!(matches!(constrained.status, Status::Optimal | Status::Feasible));
        assert!(constrained.max_violation <= 1e-6);
        assert!((constrained.x[0] - 3.0).abs() < 1e-4, "{:?}", constrained.x);
        assert!(constrained.x[1] < 1e-4);
        for rec in &constrained.history {
            assert!(rec.merit.windows(2).all(|w| w[1] <= w[0]));
        }

        let impossible = solve_nlp(&Quadratic { bound: Some(20.0) }, &[0.0, 0.0], &settings).unwrap();
        assert_eq!(impossible.status, Status::Infeasible);
        assert_eq!(impossible.x, vec![5.0, 5.0]);
    }
}
