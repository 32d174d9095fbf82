//! Tightening limits to the values attained at a solution, used to build
//! instances whose binding constraints have dependent gradients.

use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::opf::{solve_opf, OpfSolution, OpfStatus, SolverOptions};
use crate::qcqp::{assemble_qcqp, build_quadforms, ParamSpec, QcqpModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PinnedLimit {
    VoltageUpper { bus: usize },
    VoltageLower { bus: usize },
    Flow { branch: usize },
}

/// Copy of `net` with each listed limit set to the value it takes at `v`
/// (bus ids, branch positions).
pub fn pin_limits(net: &Network, v: &[f64], limits: &[PinnedLimit]) -> Result<Network> {
    let nb = net.n_bus();
    if v.len() != 2 * nb {
        return Err(Error::Dimension("voltage vector does not match the network".into()));
    }
    let mut rec = net.to_record();
    let forms = build_quadforms(net);
    for lim in limits {
        match *lim {
            PinnedLimit::VoltageUpper { bus } | PinnedLimit::VoltageLower { bus } => {
                let k = net.bus_index(bus).ok_or_else(|| Error::Validation(format!("unknown bus {bus}")))?;
                let mag = v[k].hypot(v[nb + k]);
                let b = &mut rec.buses[k];
                if matches!(lim, PinnedLimit::VoltageUpper { .. }) {
                    b.vmax = mag;
                } else {
                    b.vmin = mag;
                }
            }
            PinnedLimit::Flow { branch } => {
                let q = forms.mi.get(branch).ok_or_else(|| Error::Validation(format!("unknown branch {branch}")))?;
                rec.branches[branch].imax = Some(q.quad(v));
            }
        }
    }
    Network::from_record(rec)
}

/// Solves at `theta`, pins `limits` at the solution and solves the pinned
/// problem again.
pub fn pinned_instance(
    net: &Network,
    params: &ParamSpec,
    theta: &[f64],
    limits: &[PinnedLimit],
    opts: &SolverOptions,
) -> Result<(Network, QcqpModel, OpfSolution)> {
    let model = assemble_qcqp(net, &build_quadforms(net), params)?;
    let base = solve_opf(&model, theta, opts)?;
    if base.status != OpfStatus::Optimal {
        return Err(Error::Model(format!("unpinned problem not solved: {:?}", base.status)));
    }
    let pinned = pin_limits(net, &base.v, limits)?;
    let model = assemble_qcqp(&pinned, &build_quadforms(&pinned), params)?;
    let sol = solve_opf(&model, theta, opts)?;
    Ok((pinned, model, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn pinned_voltage_is_attained() {
        let net = cases::load("case4_radial").unwrap();
        let model = QcqpModel::from_network(&net).unwrap();
        let theta = model.params.nominal(&net);
        let sol = solve_opf(&model, &theta, &SolverOptions::default()).unwrap();
        let pinned = pin_limits(&net, &sol.v, &[PinnedLimit::VoltageLower { bus: 4 }, PinnedLimit::Flow { branch: 3 }]).unwrap();
        let m2 = QcqpModel::from_network(&pinned).unwrap();
        let (_, g) = m2.eval_constraints(&sol.v, &sol.xg, &theta).unwrap();
        assert!(g[m2.v_lower(3)].abs() < 1e-14);
        assert!(g[m2.flow(3)].abs() < 1e-14);
    }
}
