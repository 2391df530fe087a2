use crate::error::{Error, Result};

/// Vector-valued piecewise-linear function of time, constant beyond its ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Timeline {
    pub fn new(id: &str, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid(id, "timeline needs one value row per breakpoint"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid(
                id,
                "timeline breakpoints must be finite and strictly increasing",
            ));
        }
        let width = values[0].len();
        if values
            .iter()
            .any(|v| v.len() != width || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::invalid(id, "timeline rows must be finite and of equal width"));
        }
        Ok(Self { times, values })
    }

    pub fn constant(values: Vec<f64>) -> Self {
        Self {
            times: vec![0.0],
            values: vec![values],
        }
    }

    pub fn width(&self) -> usize {
        self.values[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn covers(&self, start: f64, end: f64) -> bool {
        self.times.len() == 1 || (self.start() <= start + 1e-9 && self.end() >= end - 1e-9)
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        (0..self.width()).map(|i| self.component(i, t)).collect()
    }

    pub fn component(&self, i: usize, t: f64) -> f64 {
        let (lo, hi, w) = self.locate(t);
        (1.0 - w) * self.values[lo][i] + w * self.values[hi][i]
    }

    /// Bracketing breakpoints and the weight of the upper one.
    pub fn locate(&self, t: f64) -> (usize, usize, f64) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let hi = self.times.partition_point(|&x| x <= t);
        let lo = hi - 1;
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        (lo, hi, w)
    }
}
