//! Gas/power conversion arcs.
//!
//! A conversion plant burns gas to feed power into a slack node (gas-to-power)
//! or uses surplus power to produce gas (power-to-gas). Both directions are
//! linear in the gas flow, with different efficiencies; the kink at zero flow
//! is replaced on `[-kappa, kappa]` by the cubic Hermite interpolant matching
//! value and slope of both linear branches at the interval ends.

use crate::error::{Error, Result};

/// Conversion factor from the per-unit power base (100 MW) to MW.
pub const MW_PER_PER_UNIT: f64 = 100.0;

/// Power-to-gas efficiency of the reference scenario, MW·s/m³.
pub const DEFAULT_POWER_TO_GAS: f64 = 43.56729;
/// Gas-to-power efficiency of the reference scenario, MW·s/m³.
pub const DEFAULT_GAS_TO_POWER: f64 = 12.56;
/// Smoothing half-width of the reference scenario, m³/s.
pub const DEFAULT_KAPPA: f64 = 60.0;

/// Flow-to-power map of one conversion plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionCurve {
    power_to_gas: f64,
    gas_to_power: f64,
    kappa: f64,
    /// Monomial coefficients `c0 + c1 q + c2 q^2 + c3 q^3` of the smoothing polynomial.
    coefficients: [f64; 4],
}

impl ConversionCurve {
    /// `power_to_gas` and `gas_to_power` in MW·s/m³, `kappa` in m³/s.
    pub fn new(power_to_gas: f64, gas_to_power: f64, kappa: f64) -> Result<Self> {
        for (name, value) in [
            ("power-to-gas efficiency", power_to_gas),
            ("gas-to-power efficiency", gas_to_power),
            ("kappa", kappa),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(
                    "conversion curve",
                    format!("{name} must be positive, got {value}"),
                ));
            }
        }
        let coefficients = hermite_coefficients(
            (-kappa, -power_to_gas * kappa, power_to_gas),
            (kappa, gas_to_power * kappa, gas_to_power),
        );
        Ok(Self {
            power_to_gas,
            gas_to_power,
            kappa,
            coefficients,
        })
    }

    pub fn power_to_gas(&self) -> f64 {
        self.power_to_gas
    }

    pub fn gas_to_power(&self) -> f64 {
        self.gas_to_power
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn smoothing_coefficients(&self) -> [f64; 4] {
        self.coefficients
    }
}

impl Default for ConversionCurve {
    fn default() -> Self {
        Self::new(DEFAULT_POWER_TO_GAS, DEFAULT_GAS_TO_POWER, DEFAULT_KAPPA).expect("reference constants are positive")
    }
}

/// Cubic through `(x0, y0)` and `(x1, y1)` with slopes `d0`, `d1`, in monomial form.
fn hermite_coefficients(left: (f64, f64, f64), right: (f64, f64, f64)) -> [f64; 4] {
    let (x0, y0, d0) = left;
    let (x1, y1, d1) = right;
    let h = x1 - x0;
    let delta = (y1 - y0) / h;
    // Newton form: y0 + d0 (x-x0) + a (x-x0)^2 + b (x-x0)^2 (x-x1)
    let a = (delta - d0) / h;
    let b = (d0 + d1 - 2.0 * delta) / (h * h);
    // expand around 0
    let c3 = b;
    let c2 = a - b * (2.0 * x0 + x1);
    let c1 = d0 - 2.0 * a * x0 + b * (x0 * x0 + 2.0 * x0 * x1);
    let c0 = y0 - d0 * x0 + a * x0 * x0 - b * x0 * x0 * x1;
    [c0, c1, c2, c3]
}

/// Electrical power in MW produced (positive) or consumed (negative) by a
/// plant with gas flow `q` in m³/s.
pub fn conversion_power(q: f64, curve: &ConversionCurve) -> f64 {
    if q < -curve.kappa {
        curve.power_to_gas * q
    } else if q > curve.kappa {
        curve.gas_to_power * q
    } else {
        let [c0, c1, c2, c3] = curve.coefficients;
        c0 + q * (c1 + q * (c2 + q * c3))
    }
}

/// Exact derivative of [`conversion_power`] with respect to the gas flow.
pub fn conversion_power_derivative(q: f64, curve: &ConversionCurve) -> f64 {
    if q < -curve.kappa {
        curve.power_to_gas
    } else if q > curve.kappa {
        curve.gas_to_power
    } else {
        let [_, c1, c2, c3] = curve.coefficients;
        c1 + q * (2.0 * c2 + 3.0 * q * c3)
    }
}

/// Residual `P/share - conversion_power(q)/100` in per-unit power.
///
/// `slack_power` is the solved real power of the attached slack node in
/// per-unit. When several plants feed the same slack node, each carries an
/// equal `1/share` part of it.
pub fn coupling_residual(curve: &ConversionCurve, q: f64, slack_power: f64, share: usize) -> f64 {
    slack_power / share as f64 - conversion_power(q, curve) / MW_PER_PER_UNIT
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn curve() -> ConversionCurve {
        ConversionCurve::default()
    }

    /// Independent oracle: solve the 4x4 Hermite system with Gaussian elimination.
    fn hermite_by_elimination(c: &ConversionCurve) -> [f64; 4] {
        let k = c.kappa();
        let mut m = [
            [1.0, -k, k * k, -k * k * k, -c.power_to_gas() * k],
            [1.0, k, k * k, k * k * k, c.gas_to_power() * k],
            [0.0, 1.0, -2.0 * k, 3.0 * k * k, c.power_to_gas()],
            [0.0, 1.0, 2.0 * k, 3.0 * k * k, c.gas_to_power()],
        ];
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                .unwrap();
            m.swap(col, pivot);
            for row in 0..4 {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for j in col..5 {
                        m[row][j] -= f * m[col][j];
                    }
                }
            }
        }
        [0, 1, 2, 3].map(|i| m[i][4] / m[i][i])
    }

    #[test]
    fn linear_branches_are_exact() {
        let c = curve();
        assert_eq!(conversion_power(100.0, &c), 12.56 * 100.0);
        assert_eq!(conversion_power(100.0, &c), 1256.0);
        assert_eq!(conversion_power(-100.0, &c), 43.56729 * -100.0);
        assert_eq!(conversion_power_derivative(120.0, &c), 12.56);
        assert_eq!(conversion_power_derivative(-120.0, &c), 43.56729);
    }

    #[test]
    fn smoothing_polynomial_matches_elimination_oracle() {
        let c = curve();
        let oracle = hermite_by_elimination(&c);
        for (a, b) in c.smoothing_coefficients().iter().zip(oracle) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
        // value at zero flow, frozen from the oracle: (E_GtP - E_PtG) * kappa / 4
        let p0 = conversion_power(0.0, &c);
        assert!((p0 - oracle[0]).abs() < 1e-9);
        assert!((p0 - (-465.109_35)).abs() < 1e-9, "{p0}");
    }

    #[test]
    fn continuous_at_kappa() {
        let c = curve();
        for edge in [-60.0, 60.0] {
            let eps = 1e-9;
            let left = conversion_power(edge - eps, &c);
            let right = conversion_power(edge + eps, &c);
            assert!((left - right).abs() < 1e-6);
            let dl = conversion_power_derivative(edge - eps, &c);
            let dr = conversion_power_derivative(edge + eps, &c);
            assert!((dl - dr).abs() < 1e-8);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let c = curve();
        let h = 1e-4;
        for i in 0..=80 {
            let q = -120.0 + 3.0 * i as f64;
            if (q.abs() - 60.0).abs() < 2.0 * h {
                continue;
            }
            let fd = (conversion_power(q + h, &c) - conversion_power(q - h, &c)) / (2.0 * h);
            let exact = conversion_power_derivative(q, &c);
            assert!(
                (fd - exact).abs() <= 1e-8 * exact.abs().max(1.0),
                "q={q}: {fd} vs {exact}"
            );
        }
    }

    #[test]
    fn monotone_with_reference_constants() {
        // the smoothing derivative is affine in q, so checking both ends suffices
        let c = curve();
        let [_, _, _, c3] = c.smoothing_coefficients();
        assert!(c3.abs() < 1e-12);
        assert!(conversion_power_derivative(-60.0, &c) > 0.0);
        assert!(conversion_power_derivative(60.0, &c) > 0.0);
    }

    #[test]
    fn coupling_residual_pins_gas_to_power_flow() {
        // 19.3 per-unit at ld23/N119 needs q = 1930 MW / 12.56 in the burning branch
        let c = curve();
        let p = 19.299999999999976;
        let q = p * MW_PER_PER_UNIT / c.gas_to_power();
        assert!(q > c.kappa());
        assert!(coupling_residual(&c, q, p, 1).abs() < 1e-12);
        // zero power is matched only where the curve crosses zero
        let r0 = coupling_residual(&c, 0.0, 0.0, 1);
        assert!(r0.abs() > 1.0);
        // negative demand lies in the smoothing region
        let p_neg = -0.08926590504578025;
        let r = coupling_residual(&c, 0.0, p_neg, 1);
        assert!((r - (p_neg - conversion_power(0.0, &c) / 100.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_constants() {
        assert!(ConversionCurve::new(0.0, 1.0, 1.0).is_err());
        assert!(ConversionCurve::new(1.0, -1.0, 1.0).is_err());
        assert!(ConversionCurve::new(1.0, 1.0, 0.0).is_err());
    }
}
