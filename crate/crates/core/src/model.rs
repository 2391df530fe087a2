//! A network bound to its boundary data, with the layout of the global
//! unknown vector and the coupled residual.
//!
//! Unknowns, in order: two per power node (see [`power::unknowns`]),
//! `(rho, q)` per pipe grid point, `(p_in, q_in, p_out, q_out)` per
//! controlled arc with pressures in Pa, and the gas flow of every conversion
//! arc. Rows follow the same block order: power balances, box scheme cells,
//! controlled arc equations, gas node conditions, conversion couplings.

use std::collections::HashMap;

use crate::coupling::{conversion_power, conversion_power_derivative, MW_PER_PER_UNIT};
use crate::error::{Error, Result};
use crate::gas::{
    self, box_scheme_jacobian, box_scheme_prev_jacobian, box_scheme_residual, control_sign, density_of_pressure,
    GasConstants, PipeState, PA_PER_BAR,
};
use crate::io::documents::{BoundaryDocument, BoundaryKind, InitialDocument};
use crate::linalg::SparseMatrix;
use crate::network::{GasArc, GasKind, Network, NodeRef, PowerKind};
use crate::power::{self, Admittance, PowerState};
use crate::stochastic::{realize_path, stream_rng, Cutoff, OuProcess};
use crate::timeline::Timeline;

/// Condition imposed at a gas node.
#[derive(Debug, Clone, PartialEq)]
pub enum GasBoundary {
    /// Supply (sources, positive) or withdrawal (sinks) in m³/s.
    Flow(Timeline),
    /// Pressure in bar shared by every incident arc end.
    Pressure(Timeline),
    /// Junction without external supply.
    None,
}

/// Boundary values at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBoundary {
    /// Prescribed pair per power node, in the order of [`power::prescribed`].
    pub power: Vec<[f64; 2]>,
    /// Net supply (flow nodes) or pressure (pressure nodes) per gas node.
    pub gas: Vec<f64>,
}

/// Start indices of each block of unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub pipes: Vec<usize>,
    pub controlled: Vec<usize>,
    pub conversions: Vec<usize>,
    pub len: usize,
    pub pipe_rows: Vec<usize>,
    pub controlled_rows: usize,
    pub node_rows: Vec<usize>,
    pub conversion_rows: usize,
}

impl Layout {
    fn new(net: &Network) -> Self {
        let mut offset = 2 * net.power_nodes.len();
        let mut pipes = Vec::new();
        for p in &net.pipes {
            pipes.push(offset);
            offset += 2 * p.points();
        }
        let mut controlled = Vec::new();
        for _ in &net.controlled {
            controlled.push(offset);
            offset += 4;
        }
        let mut conversions = Vec::new();
        for _ in &net.conversions {
            conversions.push(offset);
            offset += 1;
        }
        let len = offset;

        let mut row = 2 * net.power_nodes.len();
        let mut pipe_rows = Vec::new();
        for p in &net.pipes {
            pipe_rows.push(row);
            row += 2 * p.cells;
        }
        let controlled_rows = row;
        row += 2 * net.controlled.len();
        let mut node_rows = Vec::new();
        for n in &net.gas_nodes {
            node_rows.push(row);
            row += n.incidence.len();
        }
        let conversion_rows = row;
        row += net.conversions.len();
        debug_assert_eq!(row, len);
        Self {
            pipes,
            controlled,
            conversions,
            len,
            pipe_rows,
            controlled_rows,
            node_rows,
            conversion_rows,
        }
    }
}

/// Value and gradient entries of a scalar read off the unknown vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub gradient: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub constants: GasConstants,
    pub layout: Layout,
    pub admittance: Admittance,
    pub power_boundary: Vec<Timeline>,
    pub gas_boundary: Vec<GasBoundary>,
    /// Diffusion used instead of the topology values for every stochastic node.
    sigma_override: Option<f64>,
}

impl Model {
    pub fn new(network: Network, constants: GasConstants, boundary: &BoundaryDocument) -> Result<Self> {
        constants.validate()?;
        let mut problems = Vec::new();
        let mut records: HashMap<&str, &crate::io::documents::BoundaryRecord> = HashMap::new();
        for r in &boundary.boundary_values {
            if records.insert(r.id.as_str(), r).is_some() {
                problems.push(format!("boundary: duplicate record for `{}`", r.id));
            }
            if network.node(&r.id).is_none() {
                problems.push(format!("boundary: unknown node `{}`", r.id));
            }
        }
        let timeline = |r: &crate::io::documents::BoundaryRecord, problems: &mut Vec<String>| -> Option<Timeline> {
            let width = r.kind.width();
            if r.data.iter().any(|d| d.values.len() != width) {
                problems.push(format!("boundary `{}`: every entry needs {width} value(s)", r.id));
                return None;
            }
            match Timeline::new(
                &r.id,
                r.data.iter().map(|d| d.time).collect(),
                r.data.iter().map(|d| d.values.clone()).collect(),
            ) {
                Ok(t) => Some(t),
                Err(e) => {
                    problems.push(format!("boundary: {e}"));
                    None
                }
            }
        };

        let mut power_boundary = Vec::new();
        for node in &network.power_nodes {
            let expected = match node.kind {
                PowerKind::Vphi => BoundaryKind::VoltagePhase,
                PowerKind::PV => BoundaryKind::PowerVoltage,
                PowerKind::PQ | PowerKind::StochasticPQ => BoundaryKind::PowerReactive,
            };
            match records.get(node.id.as_str()) {
                None => problems.push(format!("boundary: missing record for power node `{}`", node.id)),
                Some(r) if r.kind != expected => problems.push(format!(
                    "boundary `{}`: {} nodes need type {:?}",
                    node.id,
                    node.kind.name(),
                    expected
                )),
                Some(r) => {
                    if let Some(t) = timeline(r, &mut problems) {
                        power_boundary.push(t);
                        continue;
                    }
                }
            }
            power_boundary.push(Timeline::constant(vec![0.0, 0.0]));
        }

        let mut gas_boundary = Vec::new();
        for node in &network.gas_nodes {
            let record = records.get(node.id.as_str());
            let b = match (node.kind, record) {
                (GasKind::Junction, None) => GasBoundary::None,
                (GasKind::Junction, Some(_)) => {
                    problems.push(format!("boundary `{}`: junctions take no boundary record", node.id));
                    GasBoundary::None
                }
                (_, None) => {
                    problems.push(format!("boundary: missing record for gas node `{}`", node.id));
                    GasBoundary::None
                }
                (_, Some(r)) => match r.kind {
                    BoundaryKind::Flow => timeline(r, &mut problems).map_or(GasBoundary::None, GasBoundary::Flow),
                    BoundaryKind::Pressure => {
                        timeline(r, &mut problems).map_or(GasBoundary::None, GasBoundary::Pressure)
                    }
                    other => {
                        problems.push(format!(
                            "boundary `{}`: gas nodes take flow or pressure, not {other:?}",
                            node.id
                        ));
                        GasBoundary::None
                    }
                },
            };
            gas_boundary.push(b);
        }
        if !problems.is_empty() {
            return Err(Error::Invalid(problems));
        }
        let layout = Layout::new(&network);
        let admittance = Admittance::new(&network);
        Ok(Self {
            network,
            constants,
            layout,
            admittance,
            power_boundary,
            gas_boundary,
            sigma_override: None,
        })
    }

    /// Replaces the diffusion of every stochastic node.
    pub fn set_sigma(&mut self, sigma: Option<f64>) {
        self.sigma_override = sigma;
    }

    pub fn len(&self) -> usize {
        self.layout.len
    }

    pub fn is_empty(&self) -> bool {
        self.layout.len == 0
    }

    /// Checks that every boundary timeline spans `[start, end]`.
    pub fn check_horizon(&self, start: f64, end: f64) -> Result<()> {
        let mut problems = Vec::new();
        for (node, t) in self.network.power_nodes.iter().zip(&self.power_boundary) {
            if !t.covers(start, end) {
                problems.push(format!("boundary `{}` does not cover [{start}, {end}]", node.id));
            }
        }
        for (node, b) in self.network.gas_nodes.iter().zip(&self.gas_boundary) {
            if let GasBoundary::Flow(t) | GasBoundary::Pressure(t) = b {
                if !t.covers(start, end) {
                    problems.push(format!("boundary `{}` does not cover [{start}, {end}]", node.id));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems))
        }
    }

    /// Deterministic boundary values at time `t` (stochastic loads at their mean).
    pub fn mean_boundary(&self, t: f64) -> StepBoundary {
        let power = self
            .power_boundary
            .iter()
            .map(|tl| [tl.component(0, t), tl.component(1, t)])
            .collect();
        let gas = self
            .network
            .gas_nodes
            .iter()
            .zip(&self.gas_boundary)
            .map(|(node, b)| match b {
                GasBoundary::Flow(tl) => match node.kind {
                    GasKind::Sink => -tl.component(0, t),
                    _ => tl.component(0, t),
                },
                GasBoundary::Pressure(tl) => tl.component(0, t),
                GasBoundary::None => 0.0,
            })
            .collect();
        StepBoundary { power, gas }
    }

    /// Boundary values at every time, with stochastic loads realized from `seed`.
    pub fn step_boundaries(&self, times: &[f64], seed: u64) -> Result<Vec<StepBoundary>> {
        let mut out: Vec<StepBoundary> = times.iter().map(|&t| self.mean_boundary(t)).collect();
        for (k, node) in self.network.power_nodes.iter().enumerate() {
            let Some(process) = node.process else { continue };
            let unit = process.time_unit_seconds;
            let scaled: Vec<f64> = times.iter().map(|t| t / unit).collect();
            let mean = rescale_timeline(&self.power_boundary[k], unit)?;
            for (component, (theta, sigma, tag)) in [
                (process.theta_p, process.sigma_p, "P"),
                (process.theta_q, process.sigma_q, "Q"),
            ]
            .into_iter()
            .enumerate()
            {
                let ou = OuProcess {
                    theta,
                    sigma: self.sigma_override.unwrap_or(sigma),
                    cutoff: Cutoff::Band(process.cutoff),
                };
                let mut rng = stream_rng(seed, &node.id, tag);
                let path = realize_path(&ou, &mean, component, &scaled, process.min_substeps, &mut rng)?;
                for (b, v) in out.iter_mut().zip(path) {
                    b.power[k][component] = v;
                }
            }
        }
        Ok(out)
    }

    /// Full power state from the unknown vector and the prescribed values.
    pub fn power_state(&self, x: &[f64], boundary: &StepBoundary) -> PowerState {
        let n = self.network.power_nodes.len();
        let mut state = PowerState::zeros(n);
        for (k, node) in self.network.power_nodes.iter().enumerate() {
            for (i, q) in power::prescribed(node.kind).into_iter().enumerate() {
                state.set(k, q, boundary.power[k][i]);
            }
            for (i, q) in power::unknowns(node.kind).into_iter().enumerate() {
                state.set(k, q, x[2 * k + i]);
            }
        }
        state
    }

    pub fn pipe_state(&self, x: &[f64], pipe: usize) -> PipeState {
        let off = self.layout.pipes[pipe];
        let n = self.network.pipes[pipe].points();
        PipeState {
            rho: (0..n).map(|k| x[off + 2 * k]).collect(),
            q: (0..n).map(|k| x[off + 2 * k + 1]).collect(),
        }
    }

    /// Scale applied to momentum rows of a pipe, turning them into bar.
    fn momentum_scale(&self, pipe: usize) -> f64 {
        self.constants.rho0 / (self.network.pipes[pipe].area * PA_PER_BAR)
    }

    /// Pressure (bar) and flow of one arc end with their unknown columns.
    fn arc_end(&self, x: &[f64], arc: GasArc, sign: f64) -> Result<(Probe, usize)> {
        let at_start = sign > 0.0;
        match arc {
            GasArc::Pipe(i) => {
                let off = self.layout.pipes[i];
                let k = if at_start { 0 } else { self.network.pipes[i].cells };
                let rho = x[off + 2 * k];
                let p = gas::pressure_of_density(rho, &self.constants)?;
                let dp = self.constants.dpressure_pa(rho) / PA_PER_BAR;
                Ok((
                    Probe {
                        value: p,
                        gradient: vec![(off + 2 * k, dp)],
                    },
                    off + 2 * k + 1,
                ))
            }
            GasArc::Controlled(i) => {
                let off = self.layout.controlled[i] + if at_start { 0 } else { 2 };
                Ok((
                    Probe {
                        value: x[off] / PA_PER_BAR,
                        gradient: vec![(off, 1.0 / PA_PER_BAR)],
                    },
                    off + 1,
                ))
            }
        }
    }

    /// Pressure of a gas node in bar, read at its first incident arc end.
    pub fn node_pressure(&self, x: &[f64], node: usize) -> Result<Probe> {
        let e = self.network.gas_nodes[node].incidence[0];
        self.arc_end(x, e.arc, e.sign).map(|(p, _)| p)
    }

    /// Pressure and flow at every arc end incident to a gas node, in incidence order.
    pub fn node_ends(&self, x: &[f64], node: usize) -> Result<Vec<gas::ArcEnd>> {
        self.network.gas_nodes[node]
            .incidence
            .iter()
            .map(|e| {
                let (p, qcol) = self.arc_end(x, e.arc, e.sign)?;
                Ok(gas::ArcEnd {
                    sign: e.sign,
                    pressure: p.value,
                    flow: x[qcol],
                })
            })
            .collect()
    }

    /// Net gas leaving a node through its arcs, `sum s(e) q_e`.
    pub fn node_outflow(&self, x: &[f64], node: usize) -> Result<f64> {
        let mut sum = 0.0;
        for e in &self.network.gas_nodes[node].incidence {
            let (_, qcol) = self.arc_end(x, e.arc, e.sign)?;
            sum += e.sign * x[qcol];
        }
        Ok(sum)
    }

    /// Net supply `q_n` of a flow node, conversion withdrawals included.
    pub fn node_supply(&self, x: &[f64], node: usize, boundary: &StepBoundary) -> f64 {
        let n = &self.network.gas_nodes[node];
        boundary.gas[node]
            - n.conversions
                .iter()
                .map(|&c| x[self.layout.conversions[c]])
                .sum::<f64>()
    }

    /// Scaled residual of the step from `prev` to `next` under `controls` (bar, one per controlled arc).
    pub fn residual(
        &self,
        prev: &[f64],
        next: &[f64],
        boundary: &StepBoundary,
        controls: &[f64],
        dt: f64,
    ) -> Result<Vec<f64>> {
        self.check_dims(prev, next, boundary, controls)?;
        let mut r = vec![0.0; self.layout.len];
        let ps = self.power_state(next, boundary);
        let pr = power::powerflow_residual(&self.admittance, &ps)?;
        r[..pr.len()].copy_from_slice(&pr);

        for (i, pipe) in self.network.pipes.iter().enumerate() {
            let box_r = box_scheme_residual(
                &self.pipe_state(prev, i),
                &self.pipe_state(next, i),
                dt,
                pipe,
                &self.constants,
            )?;
            let row = self.layout.pipe_rows[i];
            let scale = self.momentum_scale(i);
            for (j, v) in box_r.into_iter().enumerate() {
                r[row + j] = if j % 2 == 1 { v * scale } else { v };
            }
        }

        for (i, arc) in self.network.controlled.iter().enumerate() {
            let off = self.layout.controlled[i];
            let row = self.layout.controlled_rows + 2 * i;
            let c = gas::controlled_arc_residual(
                arc.kind,
                next[off] / PA_PER_BAR,
                next[off + 2] / PA_PER_BAR,
                next[off + 1],
                next[off + 3],
                controls[i],
            );
            r[row] = c[0];
            r[row + 1] = c[1];
        }

        for n in 0..self.network.gas_nodes.len() {
            let row = self.layout.node_rows[n];
            let ends = self.node_ends(next, n)?;
            match &self.gas_boundary[n] {
                GasBoundary::Pressure(_) => {
                    for (j, end) in ends.iter().enumerate() {
                        r[row + j] = end.pressure - boundary.gas[n];
                    }
                }
                _ => {
                    let rows = gas::junction_residual(&ends, self.node_supply(next, n, boundary))?;
                    r[row..row + rows.len()].copy_from_slice(&rows);
                }
            }
        }

        for (i, conv) in self.network.conversions.iter().enumerate() {
            let share = self.network.conversion_share(conv.power_node);
            let q = next[self.layout.conversions[i]];
            r[self.layout.conversion_rows + i] =
                crate::coupling::coupling_residual(&conv.curve, q, ps.p[conv.power_node], share);
        }
        Ok(r)
    }

    fn check_dims(&self, prev: &[f64], next: &[f64], boundary: &StepBoundary, controls: &[f64]) -> Result<()> {
        let checks = [
            ("previous state", self.layout.len, prev.len()),
            ("next state", self.layout.len, next.len()),
            ("power boundary", self.network.power_nodes.len(), boundary.power.len()),
            ("gas boundary", self.network.gas_nodes.len(), boundary.gas.len()),
            ("controls", self.network.controlled.len(), controls.len()),
        ];
        for (context, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    /// Scaled Jacobian with respect to `next`, as triplets.
    pub fn jacobian_entries(&self, next: &[f64], boundary: &StepBoundary, dt: f64) -> Result<Vec<(usize, usize, f64)>> {
        let mut out = Vec::new();
        let ps = self.power_state(next, boundary);
        let columns: Vec<[Option<usize>; 4]> = self
            .network
            .power_nodes
            .iter()
            .enumerate()
            .map(|(k, node)| {
                let mut cols = [None; 4];
                for (i, q) in power::unknowns(node.kind).into_iter().enumerate() {
                    cols[q] = Some(2 * k + i);
                }
                cols
            })
            .collect();
        for e in power::powerflow_jacobian(&self.admittance, &ps)? {
            if let Some(col) = columns[e.col / 4][e.col % 4] {
                out.push((e.row, col, e.value));
            }
        }

        for (i, pipe) in self.network.pipes.iter().enumerate() {
            let row = self.layout.pipe_rows[i];
            let off = self.layout.pipes[i];
            let scale = self.momentum_scale(i);
            for e in box_scheme_jacobian(&self.pipe_state(next, i), dt, pipe, &self.constants)? {
                let v = if e.row % 2 == 1 { e.value * scale } else { e.value };
                out.push((row + e.row, off + e.col, v));
            }
        }

        for (i, _) in self.network.controlled.iter().enumerate() {
            let off = self.layout.controlled[i];
            let row = self.layout.controlled_rows + 2 * i;
            out.push((row, off + 3, 1.0));
            out.push((row, off + 1, -1.0));
            out.push((row + 1, off + 2, 1.0 / PA_PER_BAR));
            out.push((row + 1, off, -1.0 / PA_PER_BAR));
        }

        for (n, node) in self.network.gas_nodes.iter().enumerate() {
            let row = self.layout.node_rows[n];
            let mut ends = Vec::with_capacity(node.incidence.len());
            for e in &node.incidence {
                ends.push(self.arc_end(next, e.arc, e.sign)?);
            }
            match &self.gas_boundary[n] {
                GasBoundary::Pressure(_) => {
                    for (j, (p, _)) in ends.iter().enumerate() {
                        for &(col, d) in &p.gradient {
                            out.push((row + j, col, d));
                        }
                    }
                }
                _ => {
                    let (reference, _) = &ends[0];
                    for (j, (p, _)) in ends.iter().enumerate().skip(1) {
                        for &(col, d) in &p.gradient {
                            out.push((row + j - 1, col, d));
                        }
                        for &(col, d) in &reference.gradient {
                            out.push((row + j - 1, col, -d));
                        }
                    }
                    let balance = row + ends.len() - 1;
                    for (e, (_, qcol)) in node.incidence.iter().zip(&ends) {
                        out.push((balance, *qcol, -e.sign));
                    }
                    for &c in &node.conversions {
                        out.push((balance, self.layout.conversions[c], -1.0));
                    }
                }
            }
        }

        for (i, conv) in self.network.conversions.iter().enumerate() {
            let share = self.network.conversion_share(conv.power_node) as f64;
            let row = self.layout.conversion_rows + i;
            let col = self.layout.conversions[i];
            let q = next[col];
            out.push((row, col, -conversion_power_derivative(q, &conv.curve) / MW_PER_PER_UNIT));
            // P of a slack node is its first unknown
            out.push((row, 2 * conv.power_node, 1.0 / share));
        }
        Ok(out)
    }

    pub fn jacobian(&self, next: &[f64], boundary: &StepBoundary, dt: f64) -> Result<SparseMatrix> {
        SparseMatrix::from_triplets(
            self.layout.len,
            self.layout.len,
            &self.jacobian_entries(next, boundary, dt)?,
        )
    }

    /// Scaled Jacobian with respect to `prev`; it does not depend on the state.
    pub fn prev_jacobian(&self) -> Result<SparseMatrix> {
        let mut out = Vec::new();
        for (i, pipe) in self.network.pipes.iter().enumerate() {
            let row = self.layout.pipe_rows[i];
            let off = self.layout.pipes[i];
            let scale = self.momentum_scale(i);
            for e in box_scheme_prev_jacobian(pipe) {
                let v = if e.row % 2 == 1 { e.value * scale } else { e.value };
                out.push((row + e.row, off + e.col, v));
            }
        }
        SparseMatrix::from_triplets(self.layout.len, self.layout.len, &out)
    }

    /// Derivative of the residual rows with respect to each arc control: `(row, arc, value)`.
    pub fn control_jacobian(&self) -> Vec<(usize, usize, f64)> {
        self.network
            .controlled
            .iter()
            .enumerate()
            .map(|(i, arc)| (self.layout.controlled_rows + 2 * i + 1, i, -control_sign(arc.kind)))
            .collect()
    }

    /// Unknown vector from an initial-value document.
    pub fn initial_state(&self, doc: &InitialDocument) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.layout.len];
        let mut problems = Vec::new();
        let mut seen: HashMap<&str, &crate::io::documents::InitialRecord> = HashMap::new();
        for r in &doc.initial_values {
            if seen.insert(r.id.as_str(), r).is_some() {
                problems.push(format!("initial: duplicate record for `{}`", r.id));
            }
            if self.network.node(&r.id).is_none() && self.network.arc(&r.id).is_none() {
                problems.push(format!("initial: unknown component `{}`", r.id));
            }
        }
        let single = |id: &str, width: usize, problems: &mut Vec<String>| -> Option<Vec<f64>> {
            match seen.get(id) {
                None => {
                    problems.push(format!("initial: missing record for `{id}`"));
                    None
                }
                Some(r) => match r.data.as_slice() {
                    [one] if one.values.len() == width && one.values.iter().all(|v| v.is_finite()) => {
                        Some(one.values.clone())
                    }
                    _ => {
                        problems.push(format!("initial `{id}`: expected one entry with {width} finite values"));
                        None
                    }
                },
            }
        };
        for (k, node) in self.network.power_nodes.iter().enumerate() {
            if let Some(v) = single(&node.id, 4, &mut problems) {
                for (i, q) in power::unknowns(node.kind).into_iter().enumerate() {
                    x[2 * k + i] = v[q];
                }
            }
        }
        for (i, pipe) in self.network.pipes.iter().enumerate() {
            let Some(r) = seen.get(pipe.id.as_str()) else {
                problems.push(format!("initial: missing record for `{}`", pipe.id));
                continue;
            };
            if r.data.is_empty() || r.data.iter().any(|d| d.values.len() != 2) {
                problems.push(format!("initial `{}`: entries need [pressure, flow]", pipe.id));
                continue;
            }
            let tl = match Timeline::new(
                &pipe.id,
                r.data.iter().map(|d| d.x).collect(),
                r.data.iter().map(|d| d.values.clone()).collect(),
            ) {
                Ok(t) => t,
                Err(e) => {
                    problems.push(format!("initial: {e}"));
                    continue;
                }
            };
            let off = self.layout.pipes[i];
            for (k, xk) in pipe.grid().into_iter().enumerate() {
                let v = tl.at(xk);
                match density_of_pressure(v[0], &self.constants) {
                    Ok(rho) if rho > 0.0 => {
                        x[off + 2 * k] = rho;
                        x[off + 2 * k + 1] = v[1];
                    }
                    _ => {
                        problems.push(format!(
                            "initial `{}`: pressure {} bar is outside the gas law domain",
                            pipe.id, v[0]
                        ));
                        break;
                    }
                }
            }
        }
        for (i, arc) in self.network.controlled.iter().enumerate() {
            if let Some(v) = single(&arc.id, 4, &mut problems) {
                let off = self.layout.controlled[i];
                x[off] = v[0] * PA_PER_BAR;
                x[off + 1] = v[1];
                x[off + 2] = v[2] * PA_PER_BAR;
                x[off + 3] = v[3];
            }
        }
        for (i, conv) in self.network.conversions.iter().enumerate() {
            if let Some(v) = single(&conv.id, 1, &mut problems) {
                x[self.layout.conversions[i]] = v[0];
            }
        }
        if problems.is_empty() {
            Ok(x)
        } else {
            Err(Error::Invalid(problems))
        }
    }

    /// Initial-value document describing `x`.
    pub fn initial_document(&self, x: &[f64], boundary: &StepBoundary) -> Result<InitialDocument> {
        use crate::io::documents::{InitialRecord, PositionedValues};
        let one = |id: &str, values: Vec<f64>| InitialRecord {
            id: id.to_string(),
            data: vec![PositionedValues { x: 0.0, values }],
        };
        let mut records = Vec::new();
        let ps = self.power_state(x, boundary);
        for (k, node) in self.network.power_nodes.iter().enumerate() {
            records.push(one(&node.id, vec![ps.v[k], ps.phi[k], ps.p[k], ps.q[k]]));
        }
        for (i, pipe) in self.network.pipes.iter().enumerate() {
            let state = self.pipe_state(x, i);
            let mut data = Vec::new();
            for (k, xk) in pipe.grid().into_iter().enumerate() {
                data.push(PositionedValues {
                    x: xk,
                    values: vec![gas::pressure_of_density(state.rho[k], &self.constants)?, state.q[k]],
                });
            }
            records.push(InitialRecord {
                id: pipe.id.clone(),
                data,
            });
        }
        for (i, arc) in self.network.controlled.iter().enumerate() {
            let off = self.layout.controlled[i];
            records.push(one(
                &arc.id,
                vec![x[off] / PA_PER_BAR, x[off + 1], x[off + 2] / PA_PER_BAR, x[off + 3]],
            ));
        }
        for (i, conv) in self.network.conversions.iter().enumerate() {
            records.push(one(&conv.id, vec![x[self.layout.conversions[i]]]));
        }
        Ok(InitialDocument {
            schema: None,
            initial_values: records,
        })
    }

    /// Power in MW delivered by each conversion arc.
    pub fn conversion_output(&self, x: &[f64]) -> Vec<f64> {
        self.network
            .conversions
            .iter()
            .enumerate()
            .map(|(i, c)| conversion_power(x[self.layout.conversions[i]], &c.curve))
            .collect()
    }

    /// Starting point for a stationary solve: unit voltages and gas at rest
    /// at the mean prescribed pressure.
    pub fn flat_guess(&self, boundary: &StepBoundary) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.layout.len];
        for (k, node) in self.network.power_nodes.iter().enumerate() {
            for (i, q) in power::unknowns(node.kind).into_iter().enumerate() {
                if q == power::V {
                    x[2 * k + i] = 1.0;
                }
            }
        }
        let pressures: Vec<f64> = self
            .gas_boundary
            .iter()
            .zip(&boundary.gas)
            .filter(|(b, _)| matches!(b, GasBoundary::Pressure(_)))
            .map(|(_, p)| *p)
            .collect();
        let p = if pressures.is_empty() {
            50.0
        } else {
            pressures.iter().sum::<f64>() / pressures.len() as f64
        };
        let rho = density_of_pressure(p, &self.constants)?;
        for (i, pipe) in self.network.pipes.iter().enumerate() {
            for k in 0..pipe.points() {
                x[self.layout.pipes[i] + 2 * k] = rho;
            }
        }
        for off in &self.layout.controlled {
            x[*off] = p * PA_PER_BAR;
            x[off + 2] = p * PA_PER_BAR;
        }
        Ok(x)
    }

    pub fn gas_node_index(&self, id: &str) -> Result<usize> {
        match self.network.node(id) {
            Some(NodeRef::Gas(i)) => Ok(i),
            _ => Err(Error::UnknownId(id.to_string())),
        }
    }
}

fn rescale_timeline(tl: &Timeline, unit: f64) -> Result<Timeline> {
    let times: Vec<f64> = tl.times().iter().map(|t| t / unit).collect();
    let values = tl.times().iter().map(|&t| tl.at(t)).collect();
    Timeline::new("mean", times, values)
}
