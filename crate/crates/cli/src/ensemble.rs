//! Seeded ensembles and quantile bands.

use std::collections::BTreeMap;

use gridflow_core::io::output::Series;
use rayon::prelude::*;

/// Runs `f` for seeds `master + i`, `i < runs`, returning results in seed order.
pub fn run_seeds<T, E, F>(pool: &rayon::ThreadPool, runs: usize, master: u64, f: F) -> Vec<(u64, Result<T, E>)>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync,
{
    pool.install(|| {
        (0..runs)
            .into_par_iter()
            .map(|i| {
                let seed = master.wrapping_add(i as u64);
                (seed, f(seed))
            })
            .collect()
    })
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central band `[(1 - level)/2, (1 + level)/2]` of one series across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub key: String,
    pub level: f64,
    pub columns: Vec<String>,
    pub time: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    pub median: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl BandTable {
    pub fn width(&self, step: usize, column: usize) -> f64 {
        self.upper[step][column] - self.lower[step][column]
    }
}

/// Bands of every series shared by all runs.
pub fn aggregate(runs: &[BTreeMap<String, Series>], levels: &[f64]) -> Vec<BandTable> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (key, proto) in first {
        let members: Vec<&Series> = runs.iter().filter_map(|r| r.get(key)).collect();
        if members.len() != runs.len() {
            continue;
        }
        let steps = members.iter().map(|s| s.data.len()).min().unwrap_or(0);
        let cols = proto.columns.len();
        let mut samples = vec![vec![Vec::with_capacity(runs.len()); cols]; steps];
        for s in &members {
            for (j, row) in s.data.iter().take(steps).enumerate() {
                for (c, v) in row.iter().enumerate().take(cols) {
                    samples[j][c].push(*v);
                }
            }
        }
        for column_samples in samples.iter_mut().flatten() {
            column_samples.sort_by(f64::total_cmp);
        }
        let table = |f: &dyn Fn(&[f64]) -> f64| -> Vec<Vec<f64>> {
            samples.iter().map(|row| row.iter().map(|s| f(s)).collect()).collect()
        };
        for &level in levels {
            out.push(BandTable {
                key: key.clone(),
                level,
                columns: proto.columns.clone(),
                time: proto.time[..steps].to_vec(),
                lower: table(&|s| quantile(s, 0.5 * (1.0 - level))),
                median: table(&|s| quantile(s, 0.5)),
                upper: table(&|s| quantile(s, 0.5 * (1.0 + level))),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_seven_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert_eq!(quantile(&x, 0.5), 2.5);
        assert!((quantile(&x, 0.05) - 1.15).abs() < 1e-12);
        assert_eq!(quantile(&[7.0; 5], 0.95), 7.0);
    }

    fn series(v: f64) -> BTreeMap<String, Series> {
        let mut m = BTreeMap::new();
        m.insert(
            "p_x".to_string(),
            Series {
                unit: "bar".into(),
                columns: vec!["0".into()],
                time: vec![0.0, 1.0],
                data: vec![vec![v], vec![2.0 * v]],
            },
        );
        m
    }

    #[test]
    fn constant_ensemble_collapses() {
        let runs: Vec<_> = (0..10).map(|_| series(3.0)).collect();
        let t = &aggregate(&runs, &[0.9])[0];
        assert_eq!(t.lower, t.upper);
        assert_eq!(t.median[1][0], 6.0);
    }

    #[test]
    fn order_and_workers_do_not_matter() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let f = |seed: u64| -> Result<BTreeMap<String, Series>, ()> { Ok(series((seed % 7) as f64)) };
        let a: Vec<_> = run_seeds(&one, 50, 100, f)
            .into_iter()
            .map(|(_, r)| r.unwrap())
            .collect();
        let b: Vec<_> = run_seeds(&four, 50, 100, f)
            .into_iter()
            .map(|(_, r)| r.unwrap())
            .collect();
        assert_eq!(aggregate(&a, &[0.5, 0.9]), aggregate(&b, &[0.5, 0.9]));
        let mut rev = a.clone();
        rev.reverse();
        assert_eq!(aggregate(&a, &[0.9]), aggregate(&rev, &[0.9]));
    }
}
