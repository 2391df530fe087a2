use std::path::Path;

use gridflow_core::io::bundle::{load_bundle, Overrides, Scenario};
use gridflow_core::linalg::inf_norm;
use gridflow_core::solver::simulate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURES: [&str; 6] = [
    "one_pipeline",
    "y_junction",
    "three_bus",
    "coupled",
    "compressor_opt",
    "compressor_free",
];

fn scenario(name: &str) -> Scenario {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name);
    load_bundle(&dir).unwrap().scenario(&Overrides::default()).unwrap()
}

#[test]
fn systems_are_square() {
    for name in FIXTURES {
        let s = scenario(name);
        let b = s.model.mean_boundary(s.times[0]);
        let u = s.grid.interpolate(s.times[0]);
        let r = s.model.residual(&s.x0, &s.x0, &b, &u, 1800.0).unwrap();
        assert_eq!(r.len(), s.model.len(), "{name}");
        let j = s.model.jacobian(&s.x0, &b, 1800.0).unwrap();
        assert_eq!((j.nrows(), j.ncols()), (s.model.len(), s.model.len()), "{name}");
    }
}

#[test]
fn stored_initial_states_are_fixed_points() {
    for name in FIXTURES {
        let s = scenario(name);
        let b = s.model.mean_boundary(s.times[0]);
        let u = s.grid.interpolate(s.times[0]);
        let r = s.model.residual(&s.x0, &s.x0, &b, &u, 1800.0).unwrap();
        assert!(inf_norm(&r) < 1e-10, "{name}: {}", inf_norm(&r));
    }
}

/// Global Jacobian against fourth-order differences on perturbed states,
/// relative to the largest entry of each row.
#[test]
fn global_jacobian_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for name in FIXTURES {
        let s = scenario(name);
        let b = s.model.mean_boundary(s.times[0]);
        let u = s.grid.interpolate(s.times[0]);
        let dt = 1800.0;
        for _ in 0..3 {
            let x: Vec<f64> = s.x0.iter().map(|v| v * (1.0 + rng.random_range(-0.02..0.02))).collect();
            let j = s.model.jacobian(&x, &b, dt).unwrap().to_dense();
            let f = |y: &[f64]| s.model.residual(&s.x0, y, &b, &u, dt).unwrap();
            let n = x.len();
            let mut fd = vec![vec![0.0; n]; n];
            for c in 0..n {
                let h = 1e-4 * x[c].abs().max(1.0);
                let at = |d: f64| {
                    let mut y = x.clone();
                    y[c] += d;
                    f(&y)
                };
                let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
                for r in 0..n {
                    fd[r][c] = (8.0 * (p1[r] - m1[r]) - (p2[r] - m2[r])) / (12.0 * h);
                }
            }
            for r in 0..n {
                let scale = fd[r].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for c in 0..n {
                    let err = (j[r][c] - fd[r][c]).abs() / scale;
                    assert!(err < 1e-6, "{name}: entry ({r}, {c}) {} vs {}", j[r][c], fd[r][c]);
                }
            }
        }
    }
}

#[test]
fn seeded_runs_repeat_and_seeds_matter() {
    let s = scenario("coupled");
    let run = |seed| {
        let b = s.model.step_boundaries(&s.times, seed).unwrap();
        let u = s.grid.at_steps(&s.times);
        simulate(&s.model, &s.x0, &s.times, &b, &u, &s.solver).unwrap()
    };
    let (a, b, c) = (run(5), run(5), run(6));
    assert!(a.is_complete());
    assert_eq!(a.states, b.states);
    assert_ne!(a.states, c.states);
}

#[test]
fn zero_diffusion_removes_the_seed() {
    let mut s = scenario("coupled");
    s.model.set_sigma(Some(0.0));
    let b5 = s.model.step_boundaries(&s.times, 5).unwrap();
    let b6 = s.model.step_boundaries(&s.times, 6).unwrap();
    assert_eq!(b5, b6);
}

#[test]
fn demand_jump_beyond_the_iteration_budget_stops_the_run() {
    let mut s = scenario("one_pipeline");
    s.solver.max_iterations = 1;
    let mut b = s.model.step_boundaries(&s.times, 0).unwrap();
    let sink = s.model.gas_node_index("sink").unwrap();
    for (j, step) in b.iter_mut().enumerate() {
        if j >= 10 {
            step.gas[sink] *= 1.5;
        }
    }
    let u = s.grid.at_steps(&s.times);
    let sim = simulate(&s.model, &s.x0, &s.times, &b, &u, &s.solver).unwrap();
    let failure = sim.failure.expect("the run must fail");
    assert_eq!(failure.step, 10);
    assert_eq!(sim.states.len(), 10);
    assert_eq!(failure.time, s.times[10]);
}
