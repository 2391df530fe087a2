//! Gas pipeline physics: pressure law, wall friction, the isentropic Euler
//! flux, the implicit box scheme, node coupling and controlled arcs.
//!
//! All quantities are SI internally (Pa, kg/m³, m³/s, s). Pressures cross
//! the public boundary of this module in bar where noted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ControlledKind, Pipeline};

pub const PA_PER_BAR: f64 = 1e5;

/// Lower end of the friction blending interval.
pub const RE_LAMINAR: f64 = 2000.0;
/// Upper end of the friction blending interval.
pub const RE_TURBULENT: f64 = 4000.0;
/// Base of the logarithm in the turbulent friction law.
pub const FRICTION_LOG_BASE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GasConstants {
    /// Density at standard conditions, kg/m³.
    pub rho0: f64,
    /// Vacuum limit of the speed of sound, m/s.
    pub c_vac: f64,
    /// Compressibility, 1/bar.
    pub alpha: f64,
    /// Dynamic viscosity, kg/(m·s).
    pub eta: f64,
}

impl Default for GasConstants {
    fn default() -> Self {
        Self {
            rho0: 0.785,
            c_vac: 364.87,
            alpha: -0.00224,
            eta: 1e-5,
        }
    }
}

impl GasConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0 && self.c_vac > 0.0 && self.eta > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("gas constants", "rho0, c_vac and eta must be positive"));
        }
        Ok(())
    }

    fn alpha_per_pa(&self) -> f64 {
        self.alpha / PA_PER_BAR
    }

    /// Pressure in Pa.
    pub fn pressure_pa(&self, rho: f64) -> f64 {
        let c2 = self.c_vac * self.c_vac;
        c2 * rho / (1.0 - self.alpha_per_pa() * c2 * rho)
    }

    /// dp/dρ in Pa·m³/kg.
    pub fn dpressure_pa(&self, rho: f64) -> f64 {
        let c2 = self.c_vac * self.c_vac;
        let den = 1.0 - self.alpha_per_pa() * c2 * rho;
        c2 / (den * den)
    }

    /// Density from a pressure in Pa.
    pub fn density_from_pa(&self, p: f64) -> f64 {
        p / (self.c_vac * self.c_vac * (1.0 + self.alpha_per_pa() * p))
    }
}

/// Pressure in bar for density `rho` in kg/m³.
pub fn pressure_of_density(rho: f64, c: &GasConstants) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("density must be positive, got {rho}")));
    }
    let den = 1.0 - c.alpha_per_pa() * c.c_vac * c.c_vac * rho;
    if !(den > 0.0) {
        return Err(Error::Domain(format!("density {rho} outside the pressure law domain")));
    }
    Ok(c.pressure_pa(rho) / PA_PER_BAR)
}

/// Compressibility factor `1 + alpha p` for `p` in bar.
pub fn compressibility(p_bar: f64, c: &GasConstants) -> f64 {
    1.0 + c.alpha * p_bar
}

/// Density in kg/m³ for a pressure in bar.
pub fn density_of_pressure(p_bar: f64, c: &GasConstants) -> Result<f64> {
    let z = compressibility(p_bar, c);
    if !(z > 0.0) {
        return Err(Error::Domain(format!(
            "compressibility factor {z} at {p_bar} bar is not positive"
        )));
    }
    Ok(p_bar * PA_PER_BAR / (c.c_vac * c.c_vac * z))
}

/// Reynolds number for volumetric flow `q`.
pub fn reynolds(q: f64, pipe: &Pipeline, c: &GasConstants) -> f64 {
    reynolds_per_flow(pipe, c) * q.abs()
}

fn reynolds_per_flow(pipe: &Pipeline, c: &GasConstants) -> f64 {
    pipe.diameter / (pipe.area * c.eta) * c.rho0
}

fn swamee_jain(re: f64, pipe: &Pipeline) -> (f64, f64) {
    let a = pipe.roughness / (3.7 * pipe.diameter);
    let arg = a + 5.74 * re.powf(-0.9);
    let ln_base = FRICTION_LOG_BASE.ln();
    let l = arg.ln() / ln_base;
    let value = 0.25 / (l * l);
    let dl = (-0.9 * 5.74 * re.powf(-1.9)) / (arg * ln_base);
    let deriv = -0.5 / (l * l * l) * dl;
    (value, deriv)
}

fn laminar(re: f64) -> (f64, f64) {
    (64.0 / re, -64.0 / (re * re))
}

/// Friction factor and its derivative with respect to the Reynolds number.
pub fn friction_factor_with_derivative(re: f64, pipe: &Pipeline) -> Result<(f64, f64)> {
    if !(re >= 0.0) {
        return Err(Error::Domain(format!("Reynolds number must be non-negative, got {re}")));
    }
    if re < RE_LAMINAR {
        return Ok(laminar(re));
    }
    if re > RE_TURBULENT {
        return Ok(swamee_jain(re, pipe));
    }
    let (y0, d0) = laminar(RE_LAMINAR);
    let (y1, d1) = swamee_jain(RE_TURBULENT, pipe);
    let h = RE_TURBULENT - RE_LAMINAR;
    let t = (re - RE_LAMINAR) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = 6.0 * t2 - 6.0 * t;
    let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
    let dh01 = -6.0 * t2 + 6.0 * t;
    let dh11 = 3.0 * t2 - 2.0 * t;
    let deriv = (dh00 * y0 + dh01 * y1) / h + dh10 * d0 + dh11 * d1;
    Ok((value, deriv))
}

/// Darcy friction factor.
pub fn friction_factor(re: f64, pipe: &Pipeline) -> Result<f64> {
    friction_factor_with_derivative(re, pipe).map(|(v, _)| v)
}

/// Wall friction source of the momentum equation and its partial
/// derivatives `(S, dS/drho, dS/dq)`.
pub fn source_term_with_derivatives(rho: f64, q: f64, pipe: &Pipeline, c: &GasConstants) -> Result<(f64, f64, f64)> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("density must be positive, got {rho}")));
    }
    let re_coef = reynolds_per_flow(pipe, c);
    let re = re_coef * q.abs();
    if re < RE_LAMINAR {
        // 64/Re cancels |q|, which keeps q = 0 regular
        let k = -32.0 * pipe.area * c.eta / (pipe.diameter * pipe.diameter * c.rho0);
        let s = k * q / rho;
        return Ok((s, -s / rho, k / rho));
    }
    let (lambda, dlambda) = friction_factor_with_derivative(re, pipe)?;
    let two_d = 2.0 * pipe.diameter;
    let s = -lambda / two_d * q.abs() * q / rho;
    // d(lambda |q| q)/dq = lambda'(Re) Re_coef q^2 + 2 lambda |q|
    let dh = dlambda * re_coef * q * q + 2.0 * lambda * q.abs();
    Ok((s, -s / rho, -dh / (two_d * rho)))
}

pub fn source_term(rho: f64, q: f64, pipe: &Pipeline, c: &GasConstants) -> Result<f64> {
    source_term_with_derivatives(rho, q, pipe, c).map(|(s, _, _)| s)
}

/// Flux of the balance law for `(rho, q)`.
pub fn pipe_flux(rho: f64, q: f64, pipe: &Pipeline, c: &GasConstants) -> Result<[f64; 2]> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("density must be positive, got {rho}")));
    }
    let ra = c.rho0 / pipe.area;
    Ok([ra * q, c.pressure_pa(rho) / ra + ra * q * q / rho])
}

/// Analytic Jacobian of [`pipe_flux`], row-major.
pub fn pipe_flux_jacobian(rho: f64, q: f64, pipe: &Pipeline, c: &GasConstants) -> Result<[[f64; 2]; 2]> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("density must be positive, got {rho}")));
    }
    let ra = c.rho0 / pipe.area;
    Ok([
        [0.0, ra],
        [c.dpressure_pa(rho) / ra - ra * q * q / (rho * rho), 2.0 * ra * q / rho],
    ])
}

/// Eigenvalues `(lambda_minus, lambda_plus)` of the flux Jacobian.
pub fn flux_eigenvalues(rho: f64, q: f64, pipe: &Pipeline, c: &GasConstants) -> Result<(f64, f64)> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("density must be positive, got {rho}")));
    }
    let velocity = c.rho0 * q / (pipe.area * rho);
    let sound = c.dpressure_pa(rho).sqrt();
    Ok((velocity - sound, velocity + sound))
}

/// Smallest characteristic speed magnitude.
pub fn min_characteristic_speed(rho: f64, q: f64, pipe: &Pipeline, c: &GasConstants) -> Result<f64> {
    let (lo, hi) = flux_eigenvalues(rho, q, pipe, c)?;
    Ok(lo.abs().min(hi.abs()))
}

/// States of one pipeline on its spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeState {
    pub rho: Vec<f64>,
    pub q: Vec<f64>,
}

impl PipeState {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn constant(points: usize, rho: f64, q: f64) -> Self {
        Self {
            rho: vec![rho; points],
            q: vec![q; points],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CflDiagnostic {
    Ok,
    Violated { grid_point: usize, min_speed: f64 },
}

/// Checks the inverse CFL condition `dt > dx / (2 Lambda)` at every grid point.
///
/// Reports the first violating point.
pub fn check_inverse_cfl(state: &PipeState, dt: f64, pipe: &Pipeline, c: &GasConstants) -> Result<CflDiagnostic> {
    for k in 0..state.len() {
        let speed = min_characteristic_speed(state.rho[k], state.q[k], pipe, c)?;
        let ok = speed > 0.0 && dt > pipe.dx / (2.0 * speed);
        if !ok {
            return Ok(CflDiagnostic::Violated {
                grid_point: k,
                min_speed: speed,
            });
        }
    }
    Ok(CflDiagnostic::Ok)
}

fn check_grid(state: &PipeState, pipe: &Pipeline) -> Result<()> {
    let expected = pipe.cells + 1;
    if state.rho.len() != expected || state.q.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "pipe state",
            expected,
            found: state.rho.len().min(state.q.len()),
        });
    }
    Ok(())
}

/// Box scheme residual, `2K` entries ordered `(mass, momentum)` per cell.
pub fn box_scheme_residual(
    prev: &PipeState,
    next: &PipeState,
    dt: f64,
    pipe: &Pipeline,
    c: &GasConstants,
) -> Result<Vec<f64>> {
    check_grid(prev, pipe)?;
    check_grid(next, pipe)?;
    let ratio = dt / pipe.dx;
    let mut flux = Vec::with_capacity(next.len());
    let mut source = Vec::with_capacity(next.len());
    for k in 0..next.len() {
        flux.push(pipe_flux(next.rho[k], next.q[k], pipe, c)?);
        source.push(source_term(next.rho[k], next.q[k], pipe, c)?);
    }
    let mut out = Vec::with_capacity(2 * pipe.cells);
    for k in 1..next.len() {
        let mass = 0.5 * (next.rho[k] + next.rho[k - 1]) - 0.5 * (prev.rho[k] + prev.rho[k - 1])
            + ratio * (flux[k][0] - flux[k - 1][0]);
        let momentum = 0.5 * (next.q[k] + next.q[k - 1]) - 0.5 * (prev.q[k] + prev.q[k - 1])
            + ratio * (flux[k][1] - flux[k - 1][1])
            - dt * (source[k] + source[k - 1]);
        out.push(mass);
        out.push(momentum);
    }
    Ok(out)
}

/// One entry of a local Jacobian block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Jacobian of [`box_scheme_residual`] with respect to `next`.
///
/// Columns index the pipe unknowns as `2k` (density) and `2k + 1` (flow).
/// Every cell emits its full 2x4 stencil, so the pattern does not depend on
/// the state.
pub fn box_scheme_jacobian(next: &PipeState, dt: f64, pipe: &Pipeline, c: &GasConstants) -> Result<Vec<LocalEntry>> {
    check_grid(next, pipe)?;
    let ratio = dt / pipe.dx;
    let mut local = Vec::with_capacity(next.len());
    for k in 0..next.len() {
        let df = pipe_flux_jacobian(next.rho[k], next.q[k], pipe, c)?;
        let (_, ds_drho, ds_dq) = source_term_with_derivatives(next.rho[k], next.q[k], pipe, c)?;
        local.push((df, ds_drho, ds_dq));
    }
    let mut entries = Vec::with_capacity(8 * pipe.cells);
    for cell in 1..next.len() {
        let row = 2 * (cell - 1);
        for (point, sign) in [(cell - 1, -1.0), (cell, 1.0)] {
            let (df, ds_drho, ds_dq) = local[point];
            let col = 2 * point;
            entries.push(LocalEntry {
                row,
                col,
                value: 0.5 + sign * ratio * df[0][0],
            });
            entries.push(LocalEntry {
                row,
                col: col + 1,
                value: sign * ratio * df[0][1],
            });
            entries.push(LocalEntry {
                row: row + 1,
                col,
                value: sign * ratio * df[1][0] - dt * ds_drho,
            });
            entries.push(LocalEntry {
                row: row + 1,
                col: col + 1,
                value: 0.5 + sign * ratio * df[1][1] - dt * ds_dq,
            });
        }
    }
    Ok(entries)
}

/// Jacobian of [`box_scheme_residual`] with respect to `prev` (state independent).
pub fn box_scheme_prev_jacobian(pipe: &Pipeline) -> Vec<LocalEntry> {
    let mut entries = Vec::with_capacity(4 * pipe.cells);
    for cell in 1..=pipe.cells {
        let row = 2 * (cell - 1);
        for point in [cell - 1, cell] {
            entries.push(LocalEntry {
                row,
                col: 2 * point,
                value: -0.5,
            });
            entries.push(LocalEntry {
                row: row + 1,
                col: 2 * point + 1,
                value: -0.5,
            });
        }
    }
    entries
}

/// Boundary values of one arc end at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcEnd {
    /// +1 if the arc starts at the node, -1 if it ends there.
    pub sign: f64,
    /// Pressure, bar.
    pub pressure: f64,
    /// Flow, m³/s.
    pub flow: f64,
}

/// Coupling conditions at a gas node: pressure equality against the first
/// incident end, then the flow balance `q_n - sum s(e) q_e`.
pub fn junction_residual(ends: &[ArcEnd], supply: f64) -> Result<Vec<f64>> {
    let (reference, rest) = ends
        .split_first()
        .ok_or_else(|| Error::Domain("gas node without incident arcs".into()))?;
    let mut out: Vec<f64> = rest.iter().map(|e| e.pressure - reference.pressure).collect();
    let balance: f64 = ends.iter().map(|e| e.sign * e.flow).sum();
    out.push(supply - balance);
    Ok(out)
}

/// Controlled arc equations `(q_out - q_in, p_out - p_in -+ u)`; pressures and `u` in bar.
pub fn controlled_arc_residual(kind: ControlledKind, p_in: f64, p_out: f64, q_in: f64, q_out: f64, u: f64) -> [f64; 2] {
    [q_out - q_in, p_out - p_in - control_sign(kind) * u]
}

/// +1 for compressors (pressure raised by `u`), -1 for valves.
pub fn control_sign(kind: ControlledKind) -> f64 {
    match kind {
        ControlledKind::Compressor => 1.0,
        ControlledKind::Valve => -1.0,
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::network::Pipeline;
    use proptest::prelude::*;

    fn pipe(diameter: f64, roughness: f64, length: f64, cells: usize) -> Pipeline {
        Pipeline::new("p", "a", "b", length, diameter, roughness, None, length / cells as f64).unwrap()
    }

    fn consts() -> GasConstants {
        GasConstants::default()
    }

    #[test]
    fn vacuum_limit() {
        let c = consts();
        let rho = 1e-9;
        let p = pressure_of_density(rho, &c).unwrap();
        assert!(p > 0.0 && p < 1e-8);
        let slope = c.dpressure_pa(rho);
        assert!((slope / (c.c_vac * c.c_vac) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pressure_at_standard_density() {
        // oracle: c^2 rho / (1 - alpha/1e5 c^2 rho) evaluated by hand in SI
        let c = consts();
        let p = pressure_of_density(0.785, &c).unwrap();
        assert!((p - 1.042_630_661_018_254_7).abs() < 1e-12, "{p}");
        let back = density_of_pressure(p, &c).unwrap();
        assert!((back - 0.785).abs() < 1e-14);
    }

    #[test]
    fn density_at_fifty_bar() {
        let c = consts();
        assert!((compressibility(50.0, &c) - 0.888).abs() < 1e-15);
        let rho = density_of_pressure(50.0, &c).unwrap();
        assert!((rho - 42.294_191_290_014_79).abs() < 1e-10, "{rho}");
        assert!((pressure_of_density(rho, &c).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(density_of_pressure(0.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn pressure_law_domain_errors() {
        let c = consts();
        assert!(pressure_of_density(0.0, &c).is_err());
        assert!(pressure_of_density(-1.0, &c).is_err());
        // z(p) <= 0 beyond 1/|alpha| bar
        assert!(density_of_pressure(1.0 / 0.00224 + 1.0, &c).is_err());
    }

    #[test]
    fn reynolds_sample() {
        let c = consts();
        let p = pipe(1.0, 1e-4, 1000.0, 1);
        let re = reynolds(1.0, &p, &c);
        assert!((re - 99_949.304_261_710_28).abs() < 1e-8, "{re}");
        assert_eq!(reynolds(0.0, &p, &c), 0.0);
        assert_eq!(reynolds(-3.0, &p, &c), reynolds(3.0, &p, &c));
    }

    #[test]
    fn friction_laminar_and_turbulent() {
        let p = pipe(1.0, 1e-4, 1000.0, 1);
        assert_eq!(friction_factor(1600.0, &p).unwrap(), 0.04);
        // oracle: 1 / (4 log2(1e-4/3.7 + 5.74/1e5^0.9)^2)
        let lambda = friction_factor(1e5, &p).unwrap();
        assert!((lambda - 0.001_672_143_216_909_366_4).abs() < 1e-15, "{lambda}");
        assert!(friction_factor(-1.0, &p).is_err());
    }

    #[test]
    fn friction_is_c1_at_blend_points() {
        let p = pipe(0.8, 1e-4, 1000.0, 1);
        let f = |re: f64| friction_factor(re, &p).unwrap();
        for re in [RE_LAMINAR, RE_TURBULENT] {
            // second-order one-sided differences
            let h = 0.05;
            let left = (3.0 * f(re) - 4.0 * f(re - h) + f(re - 2.0 * h)) / (2.0 * h);
            let right = (-3.0 * f(re) + 4.0 * f(re + h) - f(re + 2.0 * h)) / (2.0 * h);
            assert!((left - right).abs() <= 1e-6 * left.abs(), "{left} {right}");
            let (_, d_below) = friction_factor_with_derivative(re - 1e-9 * re, &p).unwrap();
            let (_, d_above) = friction_factor_with_derivative(re + 1e-9 * re, &p).unwrap();
            assert!((d_below - d_above).abs() <= 1e-6 * d_below.abs(), "{d_below} {d_above}");
        }
    }

    #[test]
    fn source_term_symmetry_and_rest() {
        let c = consts();
        let p = pipe(0.8, 1e-4, 1000.0, 1);
        assert_eq!(source_term(40.0, 0.0, &p, &c).unwrap(), 0.0);
        let laminar_q = 1e-4;
        let s = source_term(40.0, laminar_q, &p, &c).unwrap();
        assert_eq!(source_term(40.0, -laminar_q, &p, &c).unwrap(), -s);
        assert!(s < 0.0);
        assert!(source_term(0.0, 1.0, &p, &c).is_err());
    }

    #[test]
    fn turbulent_source_sample() {
        // oracle chain: Re -> Swamee-Jain (log2) -> -lambda/(2d) |q| q / rho
        let c = consts();
        let p = pipe(0.8, 1e-4, 1000.0, 1);
        let s = source_term(40.0, 200.0, &p, &c).unwrap();
        assert!((s - (-0.713_300_413_545_254)).abs() < 1e-12, "{s}");
    }

    #[test]
    fn source_derivatives_match_finite_differences() {
        let c = consts();
        let p = pipe(0.5, 5e-5, 1000.0, 1);
        // spans laminar, blended and turbulent regimes
        for q in [-50.0, -0.02, -2e-3, 1e-4, 2.5e-3, 4e-3, 0.3, 80.0] {
            let rho = 35.0;
            let (_, drho, dq) = source_term_with_derivatives(rho, q, &p, &c).unwrap();
            let h = 1e-6 * q.abs().max(1e-6);
            let fd_q =
                (source_term(rho, q + h, &p, &c).unwrap() - source_term(rho, q - h, &p, &c).unwrap()) / (2.0 * h);
            let hr = 1e-6;
            let fd_r =
                (source_term(rho + hr, q, &p, &c).unwrap() - source_term(rho - hr, q, &p, &c).unwrap()) / (2.0 * hr);
            assert!((fd_q - dq).abs() <= 1e-5 * dq.abs().max(1e-12), "q={q}: {fd_q} vs {dq}");
            assert!(
                (fd_r - drho).abs() <= 1e-5 * drho.abs().max(1e-12),
                "q={q}: {fd_r} vs {drho}"
            );
        }
    }

    #[test]
    fn flux_samples() {
        let c = consts();
        let p = pipe(1.0, 1e-4, 1000.0, 1);
        let [f0, f1] = pipe_flux(30.0, 0.0, &p, &c).unwrap();
        assert_eq!(f0, 0.0);
        assert!((f1 - p.area / c.rho0 * c.pressure_pa(30.0)).abs() < 1e-6);
        let [g0, g1] = pipe_flux(30.0, 100.0, &p, &c).unwrap();
        assert!((g0 - 99.949_304_261_710_28).abs() < 1e-10, "{g0}");
        assert!((g1 - 3_668_128.825_429_811_6).abs() < 1e-6, "{g1}");
        let [h0, _] = pipe_flux(30.0, 200.0, &p, &c).unwrap();
        assert!((h0 - 2.0 * g0).abs() < 1e-9);
    }

    #[test]
    fn eigenvalues_match_numeric_jacobian() {
        let c = consts();
        let p = pipe(0.6, 1e-4, 1000.0, 1);
        for (rho, q) in [(30.0, 0.0), (45.0, 120.0), (10.0, -80.0)] {
            let (lo, hi) = flux_eigenvalues(rho, q, &p, &c).unwrap();
            // numeric Jacobian by central differences, eigenvalues of the 2x2
            let h = [1e-5 * rho, 1e-5 * q.abs().max(1.0)];
            let mut jac = [[0.0; 2]; 2];
            for j in 0..2 {
                let mut plus = [rho, q];
                let mut minus = [rho, q];
                plus[j] += h[j];
                minus[j] -= h[j];
                let fp = pipe_flux(plus[0], plus[1], &p, &c).unwrap();
                let fm = pipe_flux(minus[0], minus[1], &p, &c).unwrap();
                for i in 0..2 {
                    jac[i][j] = (fp[i] - fm[i]) / (2.0 * h[j]);
                }
            }
            let tr = jac[0][0] + jac[1][1];
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            let disc = (tr * tr / 4.0 - det).sqrt();
            let (nlo, nhi) = (tr / 2.0 - disc, tr / 2.0 + disc);
            assert!((nlo - lo).abs() <= 1e-8 * lo.abs());
            assert!((nhi - hi).abs() <= 1e-8 * hi.abs());
            if q == 0.0 {
                assert_eq!(lo, -hi);
            }
        }
    }

    #[test]
    fn inverse_cfl_diagnostics() {
        let c = consts();
        let p = pipe(0.6, 1e-4, 1000.0, 4);
        let state = PipeState::constant(5, 40.0, 50.0);
        assert_eq!(check_inverse_cfl(&state, 1e6, &p, &c).unwrap(), CflDiagnostic::Ok);
        assert!(matches!(
            check_inverse_cfl(&state, 0.0, &p, &c).unwrap(),
            CflDiagnostic::Violated { grid_point: 0, .. }
        ));
        let speed = min_characteristic_speed(40.0, 50.0, &p, &c).unwrap();
        let boundary = p.dx / (2.0 * speed);
        assert!(matches!(
            check_inverse_cfl(&state, boundary, &p, &c).unwrap(),
            CflDiagnostic::Violated { .. }
        ));
        assert_eq!(
            check_inverse_cfl(&state, boundary * (1.0 + 1e-9), &p, &c).unwrap(),
            CflDiagnostic::Ok
        );
    }

    #[test]
    fn box_residual_vanishes_for_rest_state() {
        let c = consts();
        let p = pipe(0.6, 1e-4, 4000.0, 4);
        let state = PipeState::constant(5, 40.0, 0.0);
        let r = box_scheme_residual(&state, &state, 1800.0, &p, &c).unwrap();
        assert_eq!(r.len(), 8);
        assert!(r.iter().all(|v| v.abs() < 1e-9), "{r:?}");
    }

    /// Marches a steady profile cell by cell with a scalar Newton solve of the
    /// discrete steady balance, independent of the box residual code.
    fn steady_profile(p: &Pipeline, c: &GasConstants, rho_in: f64, q: f64) -> PipeState {
        let ra = c.rho0 / p.area;
        let mut rho = vec![rho_in];
        let momentum = |r: f64| c.pressure_pa(r) / ra + ra * q * q / r;
        let friction = |r: f64| {
            let re = p.diameter / (p.area * c.eta) * c.rho0 * q.abs();
            let a = p.roughness / (3.7 * p.diameter);
            let l = (a + 5.74 * re.powf(-0.9)).log2();
            let lambda = 0.25 / (l * l);
            -lambda / (2.0 * p.diameter) * q.abs() * q / r
        };
        for k in 1..=p.cells {
            let prev = rho[k - 1];
            let target = momentum(prev);
            let g_prev = friction(prev);
            let mut r = prev;
            for _ in 0..100 {
                let f = (momentum(r) - target) / p.dx - (friction(r) + g_prev);
                let h = 1e-7 * r;
                let fp = (momentum(r + h) - target) / p.dx - (friction(r + h) + g_prev);
                r -= f * h / (fp - f);
            }
            rho.push(r);
        }
        PipeState {
            rho,
            q: vec![q; p.cells + 1],
        }
    }

    #[test]
    fn box_residual_vanishes_for_discrete_steady_state() {
        let c = consts();
        let p = pipe(0.5, 1e-4, 20_000.0, 8);
        let state = steady_profile(&p, &c, 45.0, 150.0);
        assert!(state.rho.windows(2).all(|w| w[1] < w[0]));
        let r = box_scheme_residual(&state, &state, 1800.0, &p, &c).unwrap();
        for v in r {
            assert!(v.abs() < 1e-7, "{v}");
        }
    }

    #[test]
    fn box_residual_is_affine_in_previous_state() {
        let c = consts();
        let p = pipe(0.6, 1e-4, 3000.0, 3);
        let next = PipeState {
            rho: vec![40.0, 39.5, 39.2, 39.0],
            q: vec![100.0, 101.0, 99.0, 98.0],
        };
        let a = PipeState {
            rho: vec![41.0, 40.0, 39.0, 38.0],
            q: vec![90.0, 95.0, 97.0, 99.0],
        };
        let b = PipeState {
            rho: vec![38.0, 38.5, 39.5, 40.0],
            q: vec![110.0, 105.0, 100.0, 95.0],
        };
        let mid = PipeState {
            rho: a.rho.iter().zip(&b.rho).map(|(x, y)| 0.5 * (x + y)).collect(),
            q: a.q.iter().zip(&b.q).map(|(x, y)| 0.5 * (x + y)).collect(),
        };
        let ra = box_scheme_residual(&a, &next, 1800.0, &p, &c).unwrap();
        let rb = box_scheme_residual(&b, &next, 1800.0, &p, &c).unwrap();
        let rm = box_scheme_residual(&mid, &next, 1800.0, &p, &c).unwrap();
        for i in 0..ra.len() {
            assert!((rm[i] - 0.5 * (ra[i] + rb[i])).abs() < 1e-6 * (1.0 + rm[i].abs()));
        }
    }

    #[test]
    fn box_residual_grid_mismatch() {
        let c = consts();
        let p = pipe(0.6, 1e-4, 3000.0, 3);
        let good = PipeState::constant(4, 40.0, 0.0);
        let bad = PipeState::constant(3, 40.0, 0.0);
        assert!(box_scheme_residual(&good, &bad, 1.0, &p, &c).is_err());
    }

    #[test]
    fn junction_examples() {
        let two = [
            ArcEnd {
                sign: 1.0,
                pressure: 60.0,
                flow: 5.0,
            },
            ArcEnd {
                sign: -1.0,
                pressure: 60.0,
                flow: 5.0,
            },
        ];
        assert_eq!(junction_residual(&two, 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(junction_residual(&[], 0.0).is_err());
        let source = [ArcEnd {
            sign: 1.0,
            pressure: 70.0,
            flow: 105.32815527751042,
        }];
        let r = junction_residual(&source, 105.32815527751042).unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn junction_balance_over_all_orientations() {
        let flows = [3.0, -7.5, 11.25];
        for mask in 0..8u32 {
            let ends: Vec<ArcEnd> = (0..3)
                .map(|i| ArcEnd {
                    sign: if mask & (1 << i) != 0 { 1.0 } else { -1.0 },
                    pressure: 50.0,
                    flow: flows[i],
                })
                .collect();
            // brute force: outgoing arcs carry flow away, incoming bring it in
            let mut out = 0.0;
            for (i, e) in ends.iter().enumerate() {
                if e.sign > 0.0 {
                    out += flows[i];
                } else {
                    out -= flows[i];
                }
            }
            let r = junction_residual(&ends, 0.0).unwrap();
            assert_eq!(r.len(), 3);
            assert_eq!(r[0], 0.0);
            assert_eq!(r[1], 0.0);
            assert!((r[2] + out).abs() < 1e-12);
        }
    }

    #[test]
    fn controlled_arcs() {
        for kind in [ControlledKind::Compressor, ControlledKind::Valve] {
            assert_eq!(controlled_arc_residual(kind, 60.0, 60.0, 5.0, 5.0, 0.0), [0.0, 0.0]);
        }
        assert_eq!(
            controlled_arc_residual(ControlledKind::Compressor, 60.0, 70.0, 1.0, 1.0, 10.0),
            [0.0, 0.0]
        );
        assert_ne!(
            controlled_arc_residual(ControlledKind::Compressor, 60.0, 69.0, 1.0, 1.0, 10.0)[1],
            0.0
        );
        assert_eq!(
            controlled_arc_residual(ControlledKind::Valve, 60.0, 50.0, 1.0, 1.0, 10.0),
            [0.0, 0.0]
        );
    }

    proptest! {
        #[test]
        fn pressure_density_round_trip(rho in 1e-6f64..200.0) {
            let c = consts();
            let p = pressure_of_density(rho, &c).unwrap();
            let back = density_of_pressure(p, &c).unwrap();
            prop_assert!((back - rho).abs() <= 1e-12 * rho);
        }

        #[test]
        fn box_jacobian_matches_finite_differences(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = consts();
            let p = pipe(0.7, 1e-4, 8000.0, 4);
            let next = PipeState {
                rho: (0..5).map(|_| rng.random_range(20.0..60.0)).collect(),
                q: (0..5).map(|_| rng.random_range(-150.0..150.0)).collect(),
            };
            let prev = PipeState::constant(5, 40.0, 10.0);
            let entries = box_scheme_jacobian(&next, 900.0, &p, &c).unwrap();
            let mut dense = vec![vec![0.0; 10]; 8];
            for e in &entries {
                dense[e.row][e.col] += e.value;
            }
            let scale = dense.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for col in 0..10 {
                let (k, comp) = (col / 2, col % 2);
                let base = if comp == 0 { next.rho[k] } else { next.q[k] };
                let h = 1e-6 * base.abs().max(1.0);
                let mut plus = next.clone();
                let mut minus = next.clone();
                if comp == 0 { plus.rho[k] += h; minus.rho[k] -= h; } else { plus.q[k] += h; minus.q[k] -= h; }
                let rp = box_scheme_residual(&prev, &plus, 900.0, &p, &c).unwrap();
                let rm = box_scheme_residual(&prev, &minus, 900.0, &p, &c).unwrap();
                for row in 0..8 {
                    let fd = (rp[row] - rm[row]) / (2.0 * h);
                    prop_assert!((fd - dense[row][col]).abs() <= 1e-6 * (1.0 + scale), "row {} col {}: {} vs {}", row, col, fd, dense[row][col]);
                }
            }
        }
    }
}
