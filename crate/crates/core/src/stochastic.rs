//! Mean-reverting demand processes sampled with Euler-Maruyama.
//!
//! Time inside this module is measured in the process time unit (hours by
//! default); callers convert from seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::timeline::Timeline;

/// Stable step size as a fraction of `1/theta`.
pub const STEP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    /// Relative half-width of the band around the mean.
    Band(f64),
    /// No clamping.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuProcess {
    pub theta: f64,
    pub sigma: f64,
    pub cutoff: Cutoff,
}

impl OuProcess {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid(
                "process",
                format!("theta must be positive, got {}", self.theta),
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(
                "process",
                format!("sigma must be non-negative, got {}", self.sigma),
            ));
        }
        if let Cutoff::Band(c) = self.cutoff {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::invalid("process", format!("cutoff must lie in [0, 1], got {c}")));
            }
        }
        Ok(())
    }
}

/// One Euler-Maruyama step of length `dt` driven by a standard normal `xi`.
pub fn em_step(value: f64, mean: f64, theta: f64, sigma: f64, dt: f64, xi: f64) -> f64 {
    value + theta * (mean - value) * dt + sigma * dt.sqrt() * xi
}

/// Clamps `value` into the band `mean * [1 - c, 1 + c]`.
pub fn apply_cutoff(value: f64, mean: f64, cutoff: Cutoff) -> f64 {
    match cutoff {
        Cutoff::Disabled => value,
        Cutoff::Band(c) => {
            let a = (1.0 - c) * mean;
            let b = (1.0 + c) * mean;
            value.clamp(a.min(b), a.max(b))
        }
    }
}

/// Substeps for one time step of length `dt`: at least `minimum`, and fine
/// enough that each substep is no longer than `STEP_FRACTION / theta`.
pub fn substep_count(dt: f64, theta: f64, minimum: usize) -> Result<usize> {
    if !(dt > 0.0 && theta > 0.0) {
        return Err(Error::invalid("substeps", "time step and theta must be positive"));
    }
    let needed = (dt / (STEP_FRACTION / theta) - 1e-9).ceil().max(1.0) as usize;
    let n = needed.max(minimum).max(1);
    let h = dt / n as f64;
    if !(h < 2.0 / theta) {
        return Err(Error::invalid(
            "substeps",
            format!("substep {h} violates the stability bound 2/theta"),
        ));
    }
    Ok(n)
}

/// Independent generator for one `(node, quantity)` stream.
pub fn stream_rng(seed: u64, node: &str, quantity: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((node.len() as u64).to_le_bytes());
    hasher.update(node.as_bytes());
    hasher.update(quantity.as_bytes());
    ChaCha12Rng::from_seed(hasher.finalize().into())
}

/// Samples one path at the coarse `times` (process time units).
///
/// The path starts at the mean, `mean` is interpolated at every substep and
/// the cutoff is applied after each substep.
pub fn realize_path<R: Rng + ?Sized>(
    process: &OuProcess,
    mean: &Timeline,
    component: usize,
    times: &[f64],
    min_substeps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    process.validate()?;
    let Some(&t0) = times.first() else {
        return Ok(Vec::new());
    };
    let mut value = mean.component(component, t0);
    let mut out = Vec::with_capacity(times.len());
    out.push(value);
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let n = substep_count(dt, process.theta, min_substeps)?;
        let h = dt / n as f64;
        for i in 1..=n {
            let t = if i == n { w[1] } else { w[0] + i as f64 * h };
            let mu = mean.component(component, t);
            let xi: f64 = rng.sample(StandardNormal);
            value = em_step(value, mu, process.theta, process.sigma, h, xi);
            value = apply_cutoff(value, mu, process.cutoff);
        }
        out.push(value);
    }
    Ok(out)
}
