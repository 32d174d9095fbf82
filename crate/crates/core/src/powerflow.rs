//! Newton–Raphson AC power flow in polar coordinates.

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, lu_solve};
use crate::netmodel::Network;
use crate::qcqp::{OutputLayout, QcqpModel};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Role of one bus in the power-flow problem. Injections are net
/// (generation minus demand), in pu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PfBus {
    Slack { vm: f64 },
    Pv { p: f64, vm: f64 },
    Pq { p: f64, q: f64 },
}

/// One entry per bus, in bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct PfSpec {
    pub buses: Vec<PfBus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub v: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PfSolution {
    /// `[vr; vi]`
    pub fn rectangular(&self) -> Vec<f64> {
        self.v.iter().map(|c| c.re).chain(self.v.iter().map(|c| c.im)).collect()
    }
}

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 30;

pub fn solve_pf(net: &Network, spec: &PfSpec, tol: f64, max_iter: usize) -> Result<PfSolution> {
    solve_pf_from(net, spec, tol, max_iter, None)
}

/// Power flow from a given starting voltage; magnitudes of slack and PV
/// buses are reset to their targets.
pub fn solve_pf_from(
    net: &Network,
    spec: &PfSpec,
    tol: f64,
    max_iter: usize,
    start: Option<&[Complex64]>,
) -> Result<PfSolution> {
    let nb = net.n_bus();
    if spec.buses.len() != nb {
        return Err(Error::Dimension(format!("power-flow spec has {} buses, network {nb}", spec.buses.len())));
    }
    if !(tol > 0.0) {
        return Err(Error::Config("power-flow tolerance must be positive".into()));
    }
    let slack = net.slack_index();
    if !matches!(spec.buses[slack], PfBus::Slack { .. }) || spec.buses.iter().filter(|b| matches!(b, PfBus::Slack { .. })).count() != 1 {
        return Err(Error::Validation("power-flow spec must mark exactly the reference bus as slack".into()));
    }
    let pv: Vec<usize> = (0..nb).filter(|&k| matches!(spec.buses[k], PfBus::Pv { .. })).collect();
    let pq: Vec<usize> = (0..nb).filter(|&k| matches!(spec.buses[k], PfBus::Pq { .. })).collect();
    let pvpq: Vec<usize> = pv.iter().chain(&pq).copied().collect();

    let mut vm = vec![1.0; nb];
    let mut va = vec![0.0; nb];
    if let Some(v0) = start {
        if v0.len() != nb {
            return Err(Error::Dimension(format!("warm start has {} buses, network {nb}", v0.len())));
        }
        for k in 0..nb {
            vm[k] = v0[k].norm();
            va[k] = v0[k].arg();
        }
        let a0 = va[slack];
        va.iter_mut().for_each(|a| *a -= a0);
    }
    let mut s_spec = vec![Complex64::new(0.0, 0.0); nb];
    for (k, b) in spec.buses.iter().enumerate() {
        match *b {
            PfBus::Slack { vm: m } => vm[k] = m,
            PfBus::Pv { p, vm: m } => {
                vm[k] = m;
                s_spec[k] = Complex64::new(p, 0.0);
            }
            PfBus::Pq { p, q } => s_spec[k] = Complex64::new(p, q),
        }
    }
    let y = net.y();

    let mut it = 0;
    loop {
        let v: Vec<Complex64> = (0..nb).map(|k| Complex64::from_polar(vm[k], va[k])).collect();
        let vv = DVector::from_vec(v.clone());
        let ibus = y * &vv;
        let mis: Vec<Complex64> = (0..nb).map(|k| v[k] * ibus[k].conj() - s_spec[k]).collect();
        let f: Vec<f64> = pvpq.iter().map(|&k| mis[k].re).chain(pq.iter().map(|&k| mis[k].im)).collect();
        let norm = inf_norm(&f);
        if !norm.is_finite() {
            return Err(Error::PfNotConverged { iterations: it, mismatch: norm });
        }
        if norm < tol {
            return Ok(PfSolution { v, iterations: it, max_mismatch: norm });
        }
        if it >= max_iter {
            return Err(Error::PfNotConverged { iterations: it, mismatch: norm });
        }

        // dS/dVa and dS/dVm, restricted to the unknowns
        let vn: Vec<Complex64> = v.iter().map(|c| c / c.norm()).collect();
        let j = Complex64::new(0.0, 1.0);
        let ds_dva = |i: usize, k: usize| {
            let inner = if i == k { ibus[i] - y[(i, k)] * v[k] } else { -y[(i, k)] * v[k] };
            j * v[i] * inner.conj()
        };
        let ds_dvm = |i: usize, k: usize| {
            let mut s = v[i] * (y[(i, k)] * vn[k]).conj();
            if i == k {
                s += ibus[i].conj() * vn[i];
            }
            s
        };
        let (n1, n2) = (pvpq.len(), pq.len());
        let mut jac = DMatrix::zeros(n1 + n2, n1 + n2);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(r, c)] = ds_dva(i, k).re;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, n1 + c)] = ds_dvm(i, k).re;
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(n1 + r, c)] = ds_dva(i, k).im;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(n1 + r, n1 + c)] = ds_dvm(i, k).im;
            }
        }
        let rhs = -DVector::from_vec(f);
        let Some(dx) = lu_solve(&jac, &rhs, 1e-14) else {
            return Err(Error::PfNotConverged { iterations: it, mismatch: norm });
        };
        for (r, &k) in pvpq.iter().enumerate() {
            va[k] += dx[r];
        }
        for (r, &k) in pq.iter().enumerate() {
            vm[k] += dx[n1 + r];
        }
        it += 1;
    }
}

impl PfSpec {
    /// Generators at their active setpoints and voltage magnitudes, demands
    /// from θ (and the model's fixed loads). `pg` is indexed by generator;
    /// the reference generator's entry is ignored.
    pub fn from_setpoints(net: &Network, model: &QcqpModel, theta: &[f64], pg: &[f64], vm: &[f64]) -> Result<Self> {
        let nb = net.n_bus();
        if pg.len() != net.n_gen() || vm.len() != net.n_gen() || theta.len() != model.n_theta() {
            return Err(Error::Dimension("setpoint vectors do not match the network".into()));
        }
        let zero = vec![0.0; model.n_xg()];
        let buses = (0..nb)
            .map(|k| {
                // injections of the demand alone (−pd, −qd)
                let load_p = model.eq_rhs(k, &zero, theta);
                let load_q = model.eq_rhs(nb + k, &zero, theta);
                match net.gen_at(k) {
                    Some(g) if k == net.slack_index() => PfBus::Slack { vm: vm[g] },
                    Some(g) => PfBus::Pv { p: pg[g] + load_p, vm: vm[g] },
                    None => PfBus::Pq { p: load_p, q: load_q },
                }
            })
            .collect();
        Ok(Self { buses })
    }
}

/// Full network state implied by predicted generator setpoints in the
/// reduced output ordering.
pub fn state_from_prediction(net: &Network, model: &QcqpModel, theta: &[f64], predicted: &[f64]) -> Result<PfSolution> {
    let layout = OutputLayout::new(model);
    if predicted.len() != layout.len() {
        return Err(Error::Dimension(format!("prediction has {} entries, expected {}", predicted.len(), layout.len())));
    }
    let mut pg = vec![0.0; net.n_gen()];
    let mut vm = vec![1.0; net.n_gen()];
    for (k, &g) in layout.pg_gens.iter().enumerate() {
        pg[g] = predicted[k];
    }
    for (k, &g) in layout.vm_gens.iter().enumerate() {
        vm[g] = predicted[layout.pg_gens.len() + k];
    }
    let spec = PfSpec::from_setpoints(net, model, theta, &pg, &vm)?;
    solve_pf(net, &spec, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Generator dispatch `[p_g; q_g]` implied by a voltage state.
pub fn implied_dispatch(model: &QcqpModel, v: &[f64], theta: &[f64]) -> Vec<f64> {
    let nb = model.n_bus;
    let zero = vec![0.0; model.n_xg()];
    let mut xg = vec![0.0; model.n_xg()];
    for (g, &k) in model.gen_bus.iter().enumerate() {
        xg[g] = model.eq[k].quad.quad(v) - model.eq_rhs(k, &zero, theta);
        xg[model.n_gen + g] = model.eq[nb + k].quad.quad(v) - model.eq_rhs(nb + k, &zero, theta);
    }
    xg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::*;

    fn two_bus(pd: f64) -> Network {
        let buses = vec![
            Bus { id: 1, kind: BusKind::Slack, pd: 0.0, qd: 0.0, vmin: 0.9, vmax: 1.1, gsh: 0.0, bsh: 0.0 },
            Bus { id: 2, kind: BusKind::Load, pd, qd: 0.0, vmin: 0.9, vmax: 1.1, gsh: 0.0, bsh: 0.0 },
        ];
        let branches = vec![Branch { from: 1, to: 2, r: 0.0, x: 0.1, b_charge: 0.0, tap: 0.0, shift: 0.0, rate: 0.0, imax: None }];
        let gens = vec![Generator { bus: 1, pmin: 0.0, pmax: 5.0, qmin: -5.0, qmax: 5.0, cp: 1.0, cq: 0.0, pg0: 0.0, vg0: 1.0 }];
        Network::new("two", 100.0, buses, branches, gens).unwrap()
    }

    #[test]
    fn flat_start_solves_unloaded_network() {
        let net = two_bus(0.0);
        let spec = PfSpec { buses: vec![PfBus::Slack { vm: 1.0 }, PfBus::Pq { p: 0.0, q: 0.0 }] };
        let sol = solve_pf(&net, &spec, 1e-9, 30).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.v[1], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let net = two_bus(0.1);
        let spec = PfSpec { buses: vec![PfBus::Slack { vm: 1.0 }, PfBus::Pq { p: -0.1, q: 0.0 }] };
        let sol = solve_pf(&net, &spec, 1e-12, 30).unwrap();
        // |v2|⁴ − |v2|² + x²p² = 0, high-voltage root
        let (x, p) = (0.1f64, 0.1f64);
        let u = (1.0 + (1.0 - 4.0 * x * x * p * p).sqrt()) / 2.0;
        assert!((sol.v[1].norm_sqr() - u).abs() < 1e-11);
    }

    #[test]
    fn excessive_load_fails_to_converge() {
        let net = two_bus(0.0);
        let spec = PfSpec { buses: vec![PfBus::Slack { vm: 1.0 }, PfBus::Pq { p: -50.0, q: 0.0 }] };
        assert!(matches!(solve_pf(&net, &spec, 1e-9, 30), Err(Error::PfNotConverged { .. })));
    }

    #[test]
    fn spec_must_match_bus_count() {
        let net = two_bus(0.0);
        let spec = PfSpec { buses: vec![PfBus::Slack { vm: 1.0 }] };
        assert!(matches!(solve_pf(&net, &spec, 1e-9, 30), Err(Error::Dimension(_))));
    }
}
