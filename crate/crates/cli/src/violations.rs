//! Constraint violations of the network state implied by predicted
//! generator setpoints.

use opf_sense::netmodel::Network;
use opf_sense::powerflow::{implied_dispatch, state_from_prediction};
use opf_sense::qcqp::{IneqKind, QcqpModel};
use opf_sense::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Violations above this normalized size are counted.
pub const COUNT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationStats {
    pub instances: usize,
    /// Instances whose power flow did not converge; excluded below.
    pub pf_failures: usize,
    /// Constraints checked per instance.
    pub constraints: usize,
    /// Average number of violations above `COUNT_THRESHOLD` per instance.
    pub mean_count: f64,
    pub max_violation: f64,
    /// Average over all constraints and instances.
    pub mean_violation: f64,
}

/// Normalized violation of every limit the output activation does not
/// enforce: load-bus voltages (pu), branch currents, reactive generation
/// and slack active power (relative to the largest limit). Upper and
/// lower limits are separate entries.
pub fn constraint_violations(net: &Network, model: &QcqpModel, theta: &[f64], v: &[f64]) -> Vec<f64> {
    let nb = model.n_bus;
    let mut out = Vec::new();
    let mut both = |x: f64, lo: f64, hi: f64, scale: f64| {
        out.push((x - hi).max(0.0) / scale);
        out.push((lo - x).max(0.0) / scale);
    };
    for k in net.load_bus_indices() {
        let b = &net.buses[k];
        both(v[k].hypot(v[nb + k]), b.vmin, b.vmax, 1.0);
    }
    for row in &model.ineq {
        if let IneqKind::Flow { .. } = row.kind {
            if row.f.is_finite() && row.f > 0.0 {
                let limit = row.f.sqrt();
                out.push(((row.quad.quad(v).max(0.0).sqrt() - limit) / limit).max(0.0));
            }
        }
    }
    let xg = implied_dispatch(model, v, theta);
    let scale = |lo: f64, hi: f64| {
        let s = lo.abs().max(hi.abs());
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let mut both = |x: f64, lo: f64, hi: f64| {
        let s = scale(lo, hi);
        out.push((x - hi).max(0.0) / s);
        out.push((lo - x).max(0.0) / s);
    };
    for (g, gen) in net.generators.iter().enumerate() {
        both(xg[model.n_gen + g], gen.qmin, gen.qmax);
    }
    let slack = &net.generators[model.slack_gen];
    both(xg[model.slack_gen], slack.pmin, slack.pmax);
    out
}

/// Aggregates violations over `thetas`, with `predict` mapping θ to the
/// physical reduced output.
pub fn violation_report<F>(net: &Network, model: &QcqpModel, thetas: &[Vec<f64>], predict: F) -> Result<ViolationStats>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if thetas.is_empty() {
        return Err(Error::Config("no instances to evaluate".into()));
    }
    let per: Vec<Option<Vec<f64>>> = thetas
        .par_iter()
        .map(|t| -> Result<Option<Vec<f64>>> {
            let y = predict(t)?;
            Ok(match state_from_prediction(net, model, t, &y) {
                Ok(pf) => Some(constraint_violations(net, model, t, &pf.rectangular())),
                Err(Error::PfNotConverged { .. }) => None,
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut stats = ViolationStats { instances: thetas.len(), ..Default::default() };
    let mut total = 0.0;
    let mut entries = 0usize;
    let mut counted = 0usize;
    for viol in &per {
        let Some(viol) = viol else {
            stats.pf_failures += 1;
            continue;
        };
        stats.constraints = viol.len();
        for &x in viol {
            total += x;
            stats.max_violation = stats.max_violation.max(x);
            if x > COUNT_THRESHOLD {
                counted += 1;
            }
        }
        entries += viol.len();
    }
    let evaluated = thetas.len() - stats.pf_failures;
    if evaluated > 0 {
        stats.mean_count = counted as f64 / evaluated as f64;
        stats.mean_violation = if entries > 0 { total / entries as f64 } else { 0.0 };
    }
    Ok(stats)
}
