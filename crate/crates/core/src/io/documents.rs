//! On-disk document types of a problem bundle.
//!
//! Units on disk: pressures in bar, gas flows in m³/s, power in per-unit of
//! 100 MW, lengths in m, times in s. Every document may carry a `$schema`
//! key pointing at its JSON schema.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::gas::GasConstants;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
pub const DEFAULT_MAX_HALVINGS: usize = 8;
pub const DEFAULT_TIME_UNIT_SECONDS: f64 = 3600.0;

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}
fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}
fn default_max_halvings() -> usize {
    DEFAULT_MAX_HALVINGS
}
fn default_time_unit() -> f64 {
    DEFAULT_TIME_UNIT_SECONDS
}
fn default_min_substeps() -> usize {
    1
}
fn default_stride() -> usize {
    1
}
fn default_feasibility() -> f64 {
    1e-6
}
fn default_optimality() -> f64 {
    1e-6
}
fn default_outer() -> usize {
    30
}
fn default_inner() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProblemDataDocument {
    #[serde(rename = "$schema", default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub time_evolution: TimeEvolution,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gas_constants: Option<GasConstants>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationSettings>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TimeEvolution {
    pub start_time: f64,
    pub end_time: f64,
    pub delta_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Bound on the scaled residual infinity norm.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Step halvings per Newton iteration while the residual does not decrease.
    #[serde(default = "default_max_halvings")]
    pub max_halvings: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            max_halvings: DEFAULT_MAX_HALVINGS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OptimizationSettings {
    /// Controlled arcs whose squared control is integrated into the cost.
    pub costed_controls: Vec<String>,
    #[serde(default)]
    pub constraints: Vec<PressureConstraintRecord>,
    /// Constraints are evaluated at every n-th state time step.
    #[serde(default = "default_stride")]
    pub constraint_stride: usize,
    #[serde(default = "default_feasibility")]
    pub feasibility_tolerance: f64,
    #[serde(default = "default_optimality")]
    pub optimality_tolerance: f64,
    #[serde(default = "default_outer")]
    pub max_outer_iterations: usize,
    #[serde(default = "default_inner")]
    pub max_inner_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PressureConstraintRecord {
    /// Gas node whose pressure is bounded.
    pub node: String,
    pub bound: BoundKind,
    /// Piecewise-linear bound timeline, bar.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    #[serde(rename = "$schema", default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub nodes: NodeSection,
    pub connections: ConnectionSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    #[serde(rename = "Source", default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<GasNodeRecord>,
    #[serde(rename = "Sink", default, skip_serializing_if = "Vec::is_empty")]
    pub sinks: Vec<GasNodeRecord>,
    #[serde(rename = "Innode", default, skip_serializing_if = "Vec::is_empty")]
    pub junctions: Vec<GasNodeRecord>,
    #[serde(rename = "Vphinode", default, skip_serializing_if = "Vec::is_empty")]
    pub vphi: Vec<PowerNodeRecord>,
    #[serde(rename = "PVnode", default, skip_serializing_if = "Vec::is_empty")]
    pub pv: Vec<PowerNodeRecord>,
    #[serde(rename = "PQnode", default, skip_serializing_if = "Vec::is_empty")]
    pub pq: Vec<PowerNodeRecord>,
    #[serde(rename = "StochasticPQnode", default, skip_serializing_if = "Vec::is_empty")]
    pub stochastic_pq: Vec<StochasticNodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GasNodeRecord {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PowerNodeRecord {
    pub id: String,
    /// Shunt conductance, per-unit.
    #[serde(rename = "G")]
    pub g: f64,
    /// Shunt susceptance, per-unit.
    #[serde(rename = "B")]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StochasticNodeRecord {
    pub id: String,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "theta_P")]
    pub theta_p: f64,
    #[serde(rename = "sigma_P")]
    pub sigma_p: f64,
    #[serde(rename = "theta_Q")]
    pub theta_q: f64,
    #[serde(rename = "sigma_Q")]
    pub sigma_q: f64,
    pub cutoff: f64,
    /// Lower bound on the number of Euler-Maruyama steps per time step.
    #[serde(default = "default_min_substeps")]
    pub number_of_stochastic_steps: usize,
    /// Length in seconds of the time unit that `theta` and `sigma` refer to.
    #[serde(default = "default_time_unit")]
    pub time_unit_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSection {
    #[serde(rename = "Pipe", default, skip_serializing_if = "Vec::is_empty")]
    pub pipes: Vec<PipeRecord>,
    #[serde(rename = "Compressor", default, skip_serializing_if = "Vec::is_empty")]
    pub compressors: Vec<ControlledArcRecord>,
    #[serde(rename = "Controlvalve", default, skip_serializing_if = "Vec::is_empty")]
    pub valves: Vec<ControlledArcRecord>,
    #[serde(rename = "Transmissionline", default, skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<LineRecord>,
    #[serde(rename = "Gaspowerconnection", default, skip_serializing_if = "Vec::is_empty")]
    pub conversions: Vec<ConversionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PipeRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    /// m
    pub roughness: f64,
    /// Cross-section in m², defaults to the circle area of the diameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    /// Requested spatial step, m. The actual step divides the length evenly.
    pub desired_delta_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ControlledArcRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    /// bar
    #[serde(default)]
    pub lower_bound: f64,
    /// bar
    pub upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConversionRecord {
    pub id: String,
    /// Gas node the plant draws from.
    pub from: String,
    /// Slack power node the plant feeds.
    pub to: String,
    /// MW·s/m³
    pub power2gas_q_coeff: f64,
    /// MW·s/m³
    pub gas2power_q_coeff: f64,
    /// m³/s
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BoundaryDocument {
    #[serde(rename = "$schema", default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub boundary_values: Vec<BoundaryRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum BoundaryKind {
    /// Gas inflow (sources) or withdrawal (sinks), m³/s.
    #[serde(rename = "flow")]
    Flow,
    /// Gas pressure, bar.
    #[serde(rename = "pressure")]
    Pressure,
    #[serde(rename = "V-phi")]
    VoltagePhase,
    #[serde(rename = "P-V")]
    PowerVoltage,
    #[serde(rename = "P-Q")]
    PowerReactive,
}

impl BoundaryKind {
    pub fn width(self) -> usize {
        match self {
            BoundaryKind::Flow | BoundaryKind::Pressure => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BoundaryRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: BoundaryKind,
    /// Breakpoints of a piecewise-linear timeline.
    pub data: Vec<TimedValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TimedValues {
    pub time: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InitialDocument {
    #[serde(rename = "$schema", default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub initial_values: Vec<InitialRecord>,
}

/// Initial values of one component.
///
/// Pipes list `[pressure bar, flow]` at positions `x` (interpolated onto the
/// grid), power nodes `[V, phi, P, Q]`, controlled arcs
/// `[p_in, q_in, p_out, q_out]` and conversion arcs `[q]`, each at `x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InitialRecord {
    pub id: String,
    pub data: Vec<PositionedValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PositionedValues {
    pub x: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ControlDocument {
    #[serde(rename = "$schema", default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    /// Control discretization points, s.
    pub control_times: Vec<f64>,
    #[serde(default)]
    pub controls: Vec<ControlRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ControlRecord {
    pub id: String,
    /// One value in bar per control time.
    pub values: Vec<f64>,
}
