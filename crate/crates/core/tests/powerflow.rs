use opf_sense::cases;
use opf_sense::error::Error;
use opf_sense::netmodel::Network;
use opf_sense::opf::{solve_opf, OpfStatus, SolverOptions};
use opf_sense::powerflow::*;
use opf_sense::qcqp::{OutputLayout, QcqpModel};

fn nominal_spec(net: &Network, model: &QcqpModel) -> PfSpec {
    let theta = model.params.nominal(net);
    let pg: Vec<f64> = net.generators.iter().map(|g| g.pg0).collect();
    let vm: Vec<f64> = net.generators.iter().map(|g| g.vg0).collect();
    PfSpec::from_setpoints(net, model, &theta, &pg, &vm).unwrap()
}

#[test]
fn ieee39_converges_quickly() {
    let net = cases::load("case39").unwrap();
    let model = QcqpModel::from_network(&net).unwrap();
    let sol = solve_pf(&net, &nominal_spec(&net, &model), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assert!(sol.max_mismatch < 1e-8);
    assert!(sol.iterations <= 6, "{} iterations", sol.iterations);
}

#[test]
fn power_flow_state_satisfies_balance_rows() {
    for name in cases::NAMES {
        let net = cases::load(name).unwrap();
        let model = QcqpModel::from_network(&net).unwrap();
        let theta = model.params.nominal(&net);
        let sol = solve_pf(&net, &nominal_spec(&net, &model), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let v = sol.rectangular();
        let xg = implied_dispatch(&model, &v, &theta);
        let (h, _) = model.eval_constraints(&v, &xg, &theta).unwrap();
        let worst = h[..2 * net.n_bus()].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(worst < 10.0 * DEFAULT_TOL, "{name}: {worst:e}");
        assert!(h[2 * net.n_bus()].abs() < 1e-20);
    }
}

#[test]
fn newton_converges_quadratically() {
    let net = cases::load("case39").unwrap();
    let model = QcqpModel::from_network(&net).unwrap();
    let spec = nominal_spec(&net, &model);
    let mismatches: Vec<f64> = (0..5)
        .map(|it| match solve_pf(&net, &spec, 1e-14, it) {
            Err(Error::PfNotConverged { mismatch, .. }) => mismatch,
            Ok(s) => s.max_mismatch,
            Err(e) => panic!("{e}"),
        })
        .collect();
    for w in mismatches.windows(2) {
        if w[0] < 1e-1 && w[1] > 1e-13 {
            assert!(w[1] < 10.0 * w[0] * w[0], "{mismatches:?}");
        }
    }
}

#[test]
fn true_setpoints_recover_the_opf_state() {
    for name in ["case3_twogen", "case5_toy", "case39"] {
        let net = cases::load(name).unwrap();
        let model = QcqpModel::from_network(&net).unwrap();
        let theta = model.params.nominal(&net);
        let opf = solve_opf(&model, &theta, &SolverOptions::default()).unwrap();
        assert_eq!(opf.status, OpfStatus::Optimal);
        let layout = OutputLayout::new(&model);
        let pred = layout.extract(&model, &opf.v, &opf.xg);
        let pf = state_from_prediction(&net, &model, &theta, &pred).unwrap();
        let v = pf.rectangular();
        let worst = v.iter().zip(&opf.v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst < 1e-6, "{name}: {worst:e}");
    }
}

#[test]
fn raised_voltages_breach_upper_limits() {
    let net = cases::load("case5_toy").unwrap();
    let model = QcqpModel::from_network(&net).unwrap();
    let theta = model.params.nominal(&net);
    let layout = OutputLayout::new(&model);
    let mut pred: Vec<f64> = layout.pg_gens.iter().map(|&g| net.generators[g].pg0).collect();
    pred.extend(layout.vm_gens.iter().map(|&g| net.buses[net.gen_bus_index(g)].vmax + 0.05));
    let pf = state_from_prediction(&net, &model, &theta, &pred).unwrap();
    let v = pf.rectangular();
    let xg = implied_dispatch(&model, &v, &theta);
    let (_, g) = model.eval_constraints(&v, &xg, &theta).unwrap();
    for &gi in &layout.vm_gens {
        assert!(g[model.v_upper(net.gen_bus_index(gi))] > 0.0);
    }
}

#[test]
fn excessive_load_does_not_converge() {
    let net = cases::load("case39").unwrap();
    let model = QcqpModel::from_network(&net).unwrap();
    let theta: Vec<f64> = model.params.nominal(&net).iter().map(|t| 10.0 * t).collect();
    let layout = OutputLayout::new(&model);
    let mut pred: Vec<f64> = layout.pg_gens.iter().map(|&g| net.generators[g].pg0).collect();
    pred.extend(layout.vm_gens.iter().map(|_| 1.0));
    assert!(matches!(state_from_prediction(&net, &model, &theta, &pred), Err(Error::PfNotConverged { .. })));
}
