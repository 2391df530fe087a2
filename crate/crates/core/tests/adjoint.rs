//! Adjoint gradients against central differences on a network with a
//! control valve between two pipes.

use gridflow_core::gas::GasConstants;
use gridflow_core::io::documents::{
    BoundaryDocument, ControlDocument, OptimizationSettings, SolverSettings, TopologyDocument,
};
use gridflow_core::model::Model;
use gridflow_core::network::build_network;
use gridflow_core::optimization::{pressure_constraints, ControlGrid, ControlProblem, CostSpec, Nlp};
use gridflow_core::solver::{steady_state, time_grid};
use serde_json::json;

fn documents() -> (
    TopologyDocument,
    BoundaryDocument,
    ControlDocument,
    OptimizationSettings,
) {
    let topology = json!({
        "nodes": {
            "Source": [{"id": "s"}],
            "Sink": [{"id": "d"}],
            "Innode": [{"id": "a"}, {"id": "b"}]
        },
        "connections": {
            "Pipe": [
                {"id": "p1", "from": "s", "to": "a", "length": 8000.0, "diameter": 0.5, "roughness": 1e-5, "desired_delta_x": 2000.0},
                {"id": "p2", "from": "b", "to": "d", "length": 6000.0, "diameter": 0.4, "roughness": 1e-5, "desired_delta_x": 2000.0}
            ],
            "Controlvalve": [{"id": "v", "from": "a", "to": "b", "upper_bound": 30.0}]
        }
    });
    let boundary = json!({"boundary_values": [
        {"id": "s", "type": "pressure", "data": [{"time": 0.0, "values": [70.0]}]},
        {"id": "d", "type": "flow", "data": [{"time": 0.0, "values": [40.0]}, {"time": 21600.0, "values": [70.0]}]}
    ]});
    let control = json!({"control_times": [0.0, 7200.0, 14400.0, 21600.0], "controls": [{"id": "v", "values": [5.0, 8.0, 4.0, 6.0]}]});
    let settings = json!({
        "costed_controls": ["v"],
        "constraints": [
            {"node": "d", "bound": "lower", "times": [0.0, 21600.0], "values": [55.0, 58.0]},
            {"node": "a", "bound": "upper", "times": [0.0], "values": [69.9]}
        ]
    });
    (
        serde_json::from_value(topology).unwrap(),
        serde_json::from_value(boundary).unwrap(),
        serde_json::from_value(control).unwrap(),
        serde_json::from_value(settings).unwrap(),
    )
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn valve_gradients_match_central_differences() {
    let (topology, boundary, control, settings) = documents();
    let model = Model::new(build_network(&topology).unwrap(), GasConstants::default(), &boundary).unwrap();
    let grid = ControlGrid::from_document(&model, Some(&control)).unwrap();
    let times = time_grid(0.0, 21600.0, 1800.0).unwrap();
    let solver = SolverSettings {
        tolerance: 1e-11,
        ..SolverSettings::default()
    };
    let b0 = model.mean_boundary(0.0);
    let x0 = steady_state(
        &model,
        &model.flat_guess(&b0).unwrap(),
        &b0,
        &grid.interpolate(0.0),
        1800.0,
        &solver,
    )
    .unwrap();
    let boundaries = model.step_boundaries(&times, 0).unwrap();
    let constraints = pressure_constraints(&model, &settings, 0.0, 21600.0).unwrap();
    let cost = CostSpec::new(&grid, &settings.costed_controls).unwrap();
    let problem = ControlProblem::new(&model, &x0, &times, &boundaries, &grid, &cost, &constraints, 2, &solver);

    let c0 = grid.values.clone();
    let (_, g0, sim) = problem.evaluate(&c0).unwrap();
    assert_eq!(g0.len(), 2 * 6);
    let h = 1e-3;
    let mut fd = vec![vec![0.0; c0.len()]; g0.len() + 1];
    for k in 0..c0.len() {
        let mut plus = c0.clone();
        let mut minus = c0.clone();
        plus[k] += h;
        minus[k] -= h;
        let (fp, gp, _) = problem.evaluate(&plus).unwrap();
        let (fm, gm, _) = problem.evaluate(&minus).unwrap();
        fd[0][k] = (fp - fm) / (2.0 * h);
        for i in 0..g0.len() {
            fd[i + 1][k] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for (i, expected) in fd.iter().enumerate() {
        let mut w = vec![0.0; g0.len()];
        let w_f = if i == 0 { 1.0 } else { 0.0 };
        if i > 0 {
            w[i - 1] = 1.0;
        }
        let adjoint = problem.gradient(&c0, &sim, w_f, &w).unwrap();
        let diff: Vec<f64> = adjoint.iter().zip(expected).map(|(a, e)| a - e).collect();
        assert!(max_abs(expected) > 0.0, "function {i} does not depend on the controls");
        assert!(
            max_abs(&diff) <= 1e-4 * max_abs(expected),
            "function {i}: {adjoint:?} vs {expected:?}"
        );
    }
}
