//! Typed directed graph of the coupled network.

use std::collections::{BTreeMap, HashMap};

use crate::coupling::ConversionCurve;
use crate::error::{Error, Result};
use crate::io::documents::{ControlledArcRecord, TopologyDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PowerKind {
    /// Slack node with fixed voltage magnitude and angle.
    Vphi,
    /// Generator with fixed real power and voltage magnitude.
    PV,
    /// Load with fixed real and reactive power.
    PQ,
    /// Load whose real and reactive power follow mean-reverting processes.
    StochasticPQ,
}

impl PowerKind {
    pub fn name(self) -> &'static str {
        match self {
            PowerKind::Vphi => "Vphinode",
            PowerKind::PV => "PVnode",
            PowerKind::PQ => "PQnode",
            PowerKind::StochasticPQ => "StochasticPQnode",
        }
    }
}

/// Parameters of the demand processes of a stochastic load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandProcess {
    pub theta_p: f64,
    pub sigma_p: f64,
    pub theta_q: f64,
    pub sigma_q: f64,
    pub cutoff: f64,
    pub min_substeps: usize,
    pub time_unit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerNode {
    pub id: String,
    pub kind: PowerKind,
    /// Diagonal admittance entry, per-unit.
    pub g: f64,
    pub b: f64,
    pub process: Option<DemandProcess>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionLine {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GasKind {
    Source,
    Sink,
    Junction,
}

impl GasKind {
    pub fn name(self) -> &'static str {
        match self {
            GasKind::Source => "Source",
            GasKind::Sink => "Sink",
            GasKind::Junction => "Innode",
        }
    }
}

/// Arc of the gas network carrying boundary unknowns at its ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GasArc {
    Pipe(usize),
    Controlled(usize),
}

/// One arc end at a gas node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incidence {
    pub arc: GasArc,
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasNode {
    pub id: String,
    pub kind: GasKind,
    /// Incident pipes and controlled arcs sorted by arc id.
    pub incidence: Vec<Incidence>,
    /// Conversion arcs drawing from this node.
    pub conversions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub diameter: f64,
    pub roughness: f64,
    pub area: f64,
    /// Actual spatial step, `length / cells`.
    pub dx: f64,
    pub cells: usize,
}

impl Pipeline {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        length: f64,
        diameter: f64,
        roughness: f64,
        area: Option<f64>,
        desired_dx: f64,
    ) -> Result<Self> {
        let id = id.into();
        let positive = |what: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(&id, format!("{what} must be positive, got {v}")))
            }
        };
        positive("length", length)?;
        positive("diameter", diameter)?;
        positive("desired_delta_x", desired_dx)?;
        if !(roughness.is_finite() && roughness >= 0.0) {
            return Err(Error::invalid(
                &id,
                format!("roughness must be non-negative, got {roughness}"),
            ));
        }
        let area = match area {
            Some(a) => {
                positive("area", a)?;
                a
            }
            None => std::f64::consts::PI * diameter * diameter / 4.0,
        };
        let cells = ((length / desired_dx) - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            id,
            from: from.into(),
            to: to.into(),
            length,
            diameter,
            roughness,
            area,
            dx: length / cells as f64,
            cells,
        })
    }

    pub fn points(&self) -> usize {
        self.cells + 1
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.cells).map(|k| k as f64 * self.dx).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlledKind {
    Compressor,
    Valve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledArc {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: ControlledKind,
    /// Control bounds, bar.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionArc {
    pub id: String,
    pub gas_node: usize,
    pub power_node: usize,
    pub curve: ConversionCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRef {
    Power(usize),
    Gas(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArcRef {
    Line(usize),
    Pipe(usize),
    Controlled(usize),
    Conversion(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub power_nodes: Vec<PowerNode>,
    pub lines: Vec<TransmissionLine>,
    pub gas_nodes: Vec<GasNode>,
    pub pipes: Vec<Pipeline>,
    pub controlled: Vec<ControlledArc>,
    pub conversions: Vec<ConversionArc>,
    nodes: HashMap<String, NodeRef>,
    arcs: HashMap<String, ArcRef>,
}

impl Network {
    pub fn node(&self, id: &str) -> Option<NodeRef> {
        self.nodes.get(id).copied()
    }

    pub fn arc(&self, id: &str) -> Option<ArcRef> {
        self.arcs.get(id).copied()
    }

    pub fn node_id(&self, node: NodeRef) -> &str {
        match node {
            NodeRef::Power(i) => &self.power_nodes[i].id,
            NodeRef::Gas(i) => &self.gas_nodes[i].id,
        }
    }

    pub fn arc_id(&self, arc: ArcRef) -> &str {
        match arc {
            ArcRef::Line(i) => &self.lines[i].id,
            ArcRef::Pipe(i) => &self.pipes[i].id,
            ArcRef::Controlled(i) => &self.controlled[i].id,
            ArcRef::Conversion(i) => &self.conversions[i].id,
        }
    }

    pub fn gas_arc_id(&self, arc: GasArc) -> &str {
        match arc {
            GasArc::Pipe(i) => &self.pipes[i].id,
            GasArc::Controlled(i) => &self.controlled[i].id,
        }
    }

    /// Endpoint ids `(from, to)` of an arc.
    pub fn endpoints(&self, arc: ArcRef) -> (&str, &str) {
        match arc {
            ArcRef::Line(i) => {
                let l = &self.lines[i];
                (&self.power_nodes[l.from].id, &self.power_nodes[l.to].id)
            }
            ArcRef::Pipe(i) => (&self.pipes[i].from, &self.pipes[i].to),
            ArcRef::Controlled(i) => (&self.controlled[i].from, &self.controlled[i].to),
            ArcRef::Conversion(i) => {
                let c = &self.conversions[i];
                (&self.gas_nodes[c.gas_node].id, &self.power_nodes[c.power_node].id)
            }
        }
    }

    /// All arc ids in ascending order.
    pub fn arc_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.arcs.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    /// +1 if `arc` starts at `node`, -1 if it ends there.
    pub fn incidence_sign(&self, node: &str, arc: &str) -> Result<i8> {
        let arc_ref = self.arc(arc).ok_or_else(|| Error::UnknownId(arc.to_string()))?;
        if self.node(node).is_none() {
            return Err(Error::UnknownId(node.to_string()));
        }
        let (from, to) = self.endpoints(arc_ref);
        if from == node {
            Ok(1)
        } else if to == node {
            Ok(-1)
        } else {
            Err(Error::NotIncident {
                node: node.to_string(),
                arc: arc.to_string(),
            })
        }
    }

    /// Number of conversion arcs feeding power node `k`.
    pub fn conversion_share(&self, power_node: usize) -> usize {
        self.conversions.iter().filter(|c| c.power_node == power_node).count()
    }
}

/// Builds and validates a network, reporting every problem found.
pub fn build_network(doc: &TopologyDocument) -> Result<Network> {
    let mut problems = Vec::new();
    let mut nodes: HashMap<String, NodeRef> = HashMap::new();
    let mut power_nodes = Vec::new();
    let mut gas_nodes = Vec::new();

    let mut add_node = |id: &str, node: NodeRef, problems: &mut Vec<String>| -> bool {
        if id.is_empty() {
            problems.push("empty node id".to_string());
            return false;
        }
        if nodes.insert(id.to_string(), node).is_some() {
            problems.push(Error::DuplicateId(id.to_string()).to_string());
            return false;
        }
        true
    };

    for (kind, records) in [
        (GasKind::Source, &doc.nodes.sources),
        (GasKind::Sink, &doc.nodes.sinks),
        (GasKind::Junction, &doc.nodes.junctions),
    ] {
        for r in records {
            if add_node(&r.id, NodeRef::Gas(gas_nodes.len()), &mut problems) {
                gas_nodes.push(GasNode {
                    id: r.id.clone(),
                    kind,
                    incidence: Vec::new(),
                    conversions: Vec::new(),
                });
            }
        }
    }
    for (kind, records) in [
        (PowerKind::Vphi, &doc.nodes.vphi),
        (PowerKind::PV, &doc.nodes.pv),
        (PowerKind::PQ, &doc.nodes.pq),
    ] {
        for r in records {
            if add_node(&r.id, NodeRef::Power(power_nodes.len()), &mut problems) {
                power_nodes.push(PowerNode {
                    id: r.id.clone(),
                    kind,
                    g: r.g,
                    b: r.b,
                    process: None,
                });
            }
        }
    }
    for r in &doc.nodes.stochastic_pq {
        let process = DemandProcess {
            theta_p: r.theta_p,
            sigma_p: r.sigma_p,
            theta_q: r.theta_q,
            sigma_q: r.sigma_q,
            cutoff: r.cutoff,
            min_substeps: r.number_of_stochastic_steps,
            time_unit_seconds: r.time_unit_seconds,
        };
        if let Err(e) = validate_process(&r.id, &process) {
            problems.push(e.to_string());
        }
        if add_node(&r.id, NodeRef::Power(power_nodes.len()), &mut problems) {
            power_nodes.push(PowerNode {
                id: r.id.clone(),
                kind: PowerKind::StochasticPQ,
                g: r.g,
                b: r.b,
                process: Some(process),
            });
        }
    }
    for n in &power_nodes {
        if !(n.g.is_finite() && n.b.is_finite()) {
            problems.push(Error::invalid(&n.id, "admittance must be finite").to_string());
        }
    }

    let mut arcs: HashMap<String, ArcRef> = HashMap::new();
    let mut add_arc = |id: &str, arc: ArcRef, problems: &mut Vec<String>| -> bool {
        if id.is_empty() {
            problems.push("empty arc id".to_string());
            return false;
        }
        if arcs.insert(id.to_string(), arc).is_some() {
            problems.push(Error::DuplicateId(id.to_string()).to_string());
            return false;
        }
        true
    };

    let gas_endpoint = |arc: &str, node: &str, problems: &mut Vec<String>| -> Option<usize> {
        match nodes.get(node) {
            Some(NodeRef::Gas(i)) => Some(*i),
            Some(NodeRef::Power(_)) => {
                problems.push(
                    Error::WrongEndpointKind {
                        arc: arc.to_string(),
                        node: node.to_string(),
                        expected: "gas",
                    }
                    .to_string(),
                );
                None
            }
            None => {
                problems.push(
                    Error::DanglingEndpoint {
                        arc: arc.to_string(),
                        node: node.to_string(),
                    }
                    .to_string(),
                );
                None
            }
        }
    };
    let power_endpoint = |arc: &str, node: &str, problems: &mut Vec<String>| -> Option<usize> {
        match nodes.get(node) {
            Some(NodeRef::Power(i)) => Some(*i),
            Some(NodeRef::Gas(_)) => {
                problems.push(
                    Error::WrongEndpointKind {
                        arc: arc.to_string(),
                        node: node.to_string(),
                        expected: "power",
                    }
                    .to_string(),
                );
                None
            }
            None => {
                problems.push(
                    Error::DanglingEndpoint {
                        arc: arc.to_string(),
                        node: node.to_string(),
                    }
                    .to_string(),
                );
                None
            }
        }
    };

    let mut lines = Vec::new();
    for r in &doc.connections.lines {
        let from = power_endpoint(&r.id, &r.from, &mut problems);
        let to = power_endpoint(&r.id, &r.to, &mut problems);
        if r.from == r.to {
            problems.push(Error::invalid(&r.id, "arc must connect two distinct nodes").to_string());
        }
        if !(r.g.is_finite() && r.b.is_finite()) {
            problems.push(Error::invalid(&r.id, "admittance must be finite").to_string());
        }
        if let (Some(from), Some(to)) = (from, to) {
            if add_arc(&r.id, ArcRef::Line(lines.len()), &mut problems) {
                lines.push(TransmissionLine {
                    id: r.id.clone(),
                    from,
                    to,
                    g: r.g,
                    b: r.b,
                });
            }
        }
    }

    let mut pipes = Vec::new();
    for r in &doc.connections.pipes {
        let from = gas_endpoint(&r.id, &r.from, &mut problems);
        let to = gas_endpoint(&r.id, &r.to, &mut problems);
        if r.from == r.to {
            problems.push(Error::invalid(&r.id, "arc must connect two distinct nodes").to_string());
        }
        let pipe = Pipeline::new(
            &r.id,
            &r.from,
            &r.to,
            r.length,
            r.diameter,
            r.roughness,
            r.area,
            r.desired_delta_x,
        );
        match pipe {
            Ok(pipe) => {
                if let (Some(from), Some(to)) = (from, to) {
                    if add_arc(&r.id, ArcRef::Pipe(pipes.len()), &mut problems) {
                        let arc = GasArc::Pipe(pipes.len());
                        gas_nodes[from].incidence.push(Incidence { arc, sign: 1.0 });
                        gas_nodes[to].incidence.push(Incidence { arc, sign: -1.0 });
                        pipes.push(pipe);
                    }
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
    }

    let mut controlled = Vec::new();
    let controlled_records = doc
        .connections
        .compressors
        .iter()
        .map(|r| (ControlledKind::Compressor, r))
        .chain(doc.connections.valves.iter().map(|r| (ControlledKind::Valve, r)));
    for (kind, r) in controlled_records {
        let from = gas_endpoint(&r.id, &r.from, &mut problems);
        let to = gas_endpoint(&r.id, &r.to, &mut problems);
        if r.from == r.to {
            problems.push(Error::invalid(&r.id, "arc must connect two distinct nodes").to_string());
        }
        if let Err(e) = validate_bounds(r) {
            problems.push(e.to_string());
            continue;
        }
        if let (Some(from), Some(to)) = (from, to) {
            if add_arc(&r.id, ArcRef::Controlled(controlled.len()), &mut problems) {
                let arc = GasArc::Controlled(controlled.len());
                gas_nodes[from].incidence.push(Incidence { arc, sign: 1.0 });
                gas_nodes[to].incidence.push(Incidence { arc, sign: -1.0 });
                controlled.push(ControlledArc {
                    id: r.id.clone(),
                    from: r.from.clone(),
                    to: r.to.clone(),
                    kind,
                    lower: r.lower_bound,
                    upper: r.upper_bound,
                });
            }
        }
    }

    let mut conversions = Vec::new();
    for r in &doc.connections.conversions {
        let gas = gas_endpoint(&r.id, &r.from, &mut problems);
        let power = power_endpoint(&r.id, &r.to, &mut problems);
        if let Some(p) = power {
            if power_nodes[p].kind != PowerKind::Vphi {
                problems.push(
                    Error::ConversionEndpoint {
                        arc: r.id.clone(),
                        node: r.to.clone(),
                    }
                    .to_string(),
                );
                continue;
            }
        }
        let curve = match ConversionCurve::new(r.power2gas_q_coeff, r.gas2power_q_coeff, r.kappa) {
            Ok(c) => c,
            Err(_) => {
                problems.push(Error::invalid(&r.id, "conversion efficiencies and kappa must be positive").to_string());
                continue;
            }
        };
        if let (Some(gas_node), Some(power_node)) = (gas, power) {
            if add_arc(&r.id, ArcRef::Conversion(conversions.len()), &mut problems) {
                gas_nodes[gas_node].conversions.push(conversions.len());
                conversions.push(ConversionArc {
                    id: r.id.clone(),
                    gas_node,
                    power_node,
                    curve,
                });
            }
        }
    }

    if !power_nodes.is_empty() && !power_nodes.iter().any(|n| n.kind == PowerKind::Vphi) {
        problems.push(Error::NoSlackNode.to_string());
    }

    let arc_names: BTreeMap<GasArc, &str> = pipes
        .iter()
        .enumerate()
        .map(|(i, p)| (GasArc::Pipe(i), p.id.as_str()))
        .chain(
            controlled
                .iter()
                .enumerate()
                .map(|(i, c)| (GasArc::Controlled(i), c.id.as_str())),
        )
        .collect();
    for node in &mut gas_nodes {
        node.incidence.sort_by(|a, b| arc_names[&a.arc].cmp(arc_names[&b.arc]));
        if node.incidence.is_empty() {
            problems.push(Error::invalid(&node.id, "gas node has no incident pipe or controlled arc").to_string());
        }
    }

    if !problems.is_empty() {
        return Err(Error::Invalid(problems));
    }
    Ok(Network {
        power_nodes,
        lines,
        gas_nodes,
        pipes,
        controlled,
        conversions,
        nodes,
        arcs,
    })
}

impl PartialOrd for GasArc {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GasArc {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let key = |a: &GasArc| match a {
            GasArc::Pipe(i) => (0, *i),
            GasArc::Controlled(i) => (1, *i),
        };
        key(self).cmp(&key(other))
    }
}

fn validate_bounds(r: &ControlledArcRecord) -> Result<()> {
    if !(r.lower_bound.is_finite() && r.upper_bound.is_finite()) || r.lower_bound < 0.0 || r.upper_bound < r.lower_bound
    {
        return Err(Error::invalid(
            &r.id,
            format!(
                "control bounds must satisfy 0 <= lower <= upper, got [{}, {}]",
                r.lower_bound, r.upper_bound
            ),
        ));
    }
    Ok(())
}

fn validate_process(id: &str, p: &DemandProcess) -> Result<()> {
    if !(p.theta_p > 0.0 && p.theta_q > 0.0) {
        return Err(Error::invalid(id, "theta must be positive"));
    }
    if !(p.sigma_p >= 0.0 && p.sigma_q >= 0.0) {
        return Err(Error::invalid(id, "sigma must be non-negative"));
    }
    if !(0.0..=1.0).contains(&p.cutoff) {
        return Err(Error::invalid(id, "cutoff must lie in [0, 1]"));
    }
    if p.min_substeps == 0 {
        return Err(Error::invalid(id, "number_of_stochastic_steps must be at least 1"));
    }
    if !(p.time_unit_seconds > 0.0) {
        return Err(Error::invalid(id, "time_unit_seconds must be positive"));
    }
    Ok(())
}
