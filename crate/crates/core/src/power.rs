//! AC power flow equations.
//!
//! Admittance entries are taken literally: lines give the off-diagonal
//! entries `Y_ik = Y_ki`, node shunts give the diagonal `Y_kk`.

use crate::error::{Error, Result};
use crate::gas::LocalEntry;
use crate::network::{Network, PowerKind};

/// Column offsets of the four per-node quantities.
pub const V: usize = 0;
pub const PHI: usize = 1;
pub const P: usize = 2;
pub const Q: usize = 3;

/// Quantities fixed by the boundary timeline, in the on-disk value order.
pub fn prescribed(kind: PowerKind) -> [usize; 2] {
    match kind {
        PowerKind::Vphi => [V, PHI],
        PowerKind::PV => [P, V],
        PowerKind::PQ | PowerKind::StochasticPQ => [P, Q],
    }
}

/// Quantities solved for.
pub fn unknowns(kind: PowerKind) -> [usize; 2] {
    match kind {
        PowerKind::Vphi => [P, Q],
        PowerKind::PV => [Q, PHI],
        PowerKind::PQ | PowerKind::StochasticPQ => [V, PHI],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerState {
    pub v: Vec<f64>,
    pub phi: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl PowerState {
    pub fn zeros(n: usize) -> Self {
        Self {
            v: vec![0.0; n],
            phi: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn get(&self, node: usize, quantity: usize) -> f64 {
        match quantity {
            V => self.v[node],
            PHI => self.phi[node],
            P => self.p[node],
            _ => self.q[node],
        }
    }

    pub fn set(&mut self, node: usize, quantity: usize, value: f64) {
        match quantity {
            V => self.v[node] = value,
            PHI => self.phi[node] = value,
            P => self.p[node] = value,
            _ => self.q[node] = value,
        }
    }
}

/// Off-diagonal admittances per node, parallel lines summed.
#[derive(Debug, Clone, PartialEq)]
pub struct Admittance {
    diagonal: Vec<(f64, f64)>,
    neighbors: Vec<Vec<(usize, f64, f64)>>,
}

impl Admittance {
    pub fn new(net: &Network) -> Self {
        let n = net.power_nodes.len();
        let mut neighbors: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
        let mut add = |k: usize, i: usize, g: f64, b: f64| {
            if let Some(entry) = neighbors[k].iter_mut().find(|e| e.0 == i) {
                entry.1 += g;
                entry.2 += b;
            } else {
                neighbors[k].push((i, g, b));
            }
        };
        for line in &net.lines {
            add(line.from, line.to, line.g, line.b);
            add(line.to, line.from, line.g, line.b);
        }
        for list in &mut neighbors {
            list.sort_by_key(|e| e.0);
        }
        Self {
            diagonal: net.power_nodes.iter().map(|n| (n.g, n.b)).collect(),
            neighbors,
        }
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn neighbors(&self, k: usize) -> &[(usize, f64, f64)] {
        &self.neighbors[k]
    }
}

fn check(adm: &Admittance, state: &PowerState) -> Result<()> {
    let n = adm.len();
    for len in [state.v.len(), state.phi.len(), state.p.len(), state.q.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context: "power state",
                expected: n,
                found: len,
            });
        }
    }
    Ok(())
}

/// Real and reactive power computed from voltages and angles.
pub fn computed_power(adm: &Admittance, state: &PowerState) -> Result<(Vec<f64>, Vec<f64>)> {
    check(adm, state)?;
    let n = adm.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for k in 0..n {
        let vk = state.v[k];
        let (gkk, bkk) = adm.diagonal[k];
        let mut pk = vk * vk * gkk;
        let mut qk = -vk * vk * bkk;
        for &(i, g, b) in &adm.neighbors[k] {
            let angle = state.phi[k] - state.phi[i];
            let (s, c) = angle.sin_cos();
            let vv = vk * state.v[i];
            pk += vv * (g * c + b * s);
            qk += vv * (g * s - b * c);
        }
        p[k] = pk;
        q[k] = qk;
    }
    Ok((p, q))
}

/// Residual rows `(P_calc - P, Q_calc - Q)` per node.
pub fn powerflow_residual(adm: &Admittance, state: &PowerState) -> Result<Vec<f64>> {
    let (p, q) = computed_power(adm, state)?;
    let mut out = Vec::with_capacity(2 * p.len());
    for k in 0..p.len() {
        out.push(p[k] - state.p[k]);
        out.push(q[k] - state.q[k]);
    }
    Ok(out)
}

/// Jacobian of [`powerflow_residual`] with respect to all four quantities.
///
/// Rows are `2k` and `2k + 1`, columns `4k + V|PHI|P|Q`. The pattern only
/// depends on the network.
pub fn powerflow_jacobian(adm: &Admittance, state: &PowerState) -> Result<Vec<LocalEntry>> {
    check(adm, state)?;
    let mut entries = Vec::new();
    for k in 0..adm.len() {
        let (rp, rq) = (2 * k, 2 * k + 1);
        let vk = state.v[k];
        let (gkk, bkk) = adm.diagonal[k];
        let mut dp_dvk = 2.0 * vk * gkk;
        let mut dq_dvk = -2.0 * vk * bkk;
        let mut dp_dphik = 0.0;
        let mut dq_dphik = 0.0;
        for &(i, g, b) in &adm.neighbors[k] {
            let vi = state.v[i];
            let (s, c) = (state.phi[k] - state.phi[i]).sin_cos();
            let re = g * c + b * s;
            let im = g * s - b * c;
            dp_dvk += vi * re;
            dq_dvk += vi * im;
            dp_dphik -= vk * vi * im;
            dq_dphik += vk * vi * re;
            entries.push(LocalEntry {
                row: rp,
                col: 4 * i + V,
                value: vk * re,
            });
            entries.push(LocalEntry {
                row: rp,
                col: 4 * i + PHI,
                value: vk * vi * im,
            });
            entries.push(LocalEntry {
                row: rq,
                col: 4 * i + V,
                value: vk * im,
            });
            entries.push(LocalEntry {
                row: rq,
                col: 4 * i + PHI,
                value: -vk * vi * re,
            });
        }
        entries.push(LocalEntry {
            row: rp,
            col: 4 * k + V,
            value: dp_dvk,
        });
        entries.push(LocalEntry {
            row: rp,
            col: 4 * k + PHI,
            value: dp_dphik,
        });
        entries.push(LocalEntry {
            row: rp,
            col: 4 * k + P,
            value: -1.0,
        });
        entries.push(LocalEntry {
            row: rq,
            col: 4 * k + V,
            value: dq_dvk,
        });
        entries.push(LocalEntry {
            row: rq,
            col: 4 * k + PHI,
            value: dq_dphik,
        });
        entries.push(LocalEntry {
            row: rq,
            col: 4 * k + Q,
            value: -1.0,
        });
    }
    Ok(entries)
}
