//! Training sweeps comparing predictors trained with and without the
//! Jacobian term.

use crate::config::ExperimentConfig;
use crate::violations::{violation_report, ViolationStats};
use opf_sense::dataset::{Dataset, Split};
use opf_sense::mlp::{train, BoxScaling, Example, LossCurve, MlpModel};
use opf_sense::netmodel::Network;
use opf_sense::qcqp::{assemble_qcqp, build_quadforms};
use opf_sense::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Instant;

pub const P_DNN: &str = "P-DNN";
pub const SI_DNN: &str = "SI-DNN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub rho: f64,
}

/// The plain predictor and the sensitivity-informed one with weight `rho`.
pub fn standard_variants(rho: f64) -> Vec<VariantSpec> {
    vec![VariantSpec { name: P_DNN.into(), rho: 0.0 }, VariantSpec { name: SI_DNN.into(), rho }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub size: usize,
    pub run: usize,
    pub variant: String,
    pub rho: f64,
    /// Mean squared errors on scaled outputs; absent when training failed.
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_mse_per_output: Vec<f64>,
    /// Wall clock of the training loop.
    pub wall_time_s: f64,
    pub curve: LossCurve,
    /// SHA-256 of the training inputs and value labels.
    pub value_hash: String,
    pub violations: Option<ViolationStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub result: RunResult,
    pub model: Option<MlpModel>,
}

/// Initialization and shuffling seed of one (size, run) cell; shared by
/// all variants.
pub fn run_seed(seed: u64, size: usize, run: usize) -> u64 {
    seed ^ (((size as u64) << 32) | run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn value_hash(examples: &[Example]) -> String {
    let mut h = Sha256::new();
    for ex in examples {
        for x in ex.theta.iter().chain(&ex.y) {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Component-wise range of the inputs of `examples`.
fn input_box(examples: &[Example]) -> Result<BoxScaling> {
    let n = examples[0].theta.len();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for ex in examples {
        for (i, &t) in ex.theta.iter().enumerate() {
            lo[i] = lo[i].min(t);
            hi[i] = hi[i].max(t);
        }
    }
    BoxScaling::new(lo, hi)
}

/// Per-output mean squared error on scaled outputs.
pub fn per_output_mse(model: &MlpModel, data: &[Example]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.n_out()];
    for ex in data {
        let y = model.forward(&ex.theta)?;
        for (a, (p, t)) in acc.iter_mut().zip(y.iter().zip(&ex.y)) {
            *a += (p - t) * (p - t);
        }
    }
    Ok(acc.into_iter().map(|a| a / data.len() as f64).collect())
}

/// Trains every variant on every split. Variants of one split share the
/// architecture, initial weights, optimizer settings and value labels.
/// Training failures are recorded in the result rows. Violation
/// statistics on the test set are added when `with_violations` is set.
pub fn run_experiment(
    ds: &Dataset,
    net: &Network,
    splits: &[Split],
    cfg: &ExperimentConfig,
    variants: &[VariantSpec],
    with_violations: bool,
) -> Result<Vec<TrainedRun>> {
    if variants.is_empty() {
        return Err(Error::Config("no variants to train".into()));
    }
    if let Some(sp) = splits.iter().find(|s| s.test.is_empty()) {
        return Err(Error::EmptyTestSet { size: sp.size, pool: sp.train.len() + sp.test.len() });
    }
    ds.check_network(net)?;
    let qm = assemble_qcqp(net, &build_quadforms(net), &ds.header.params)?;
    let all: Vec<usize> = splits.iter().flat_map(|s| s.train.iter().chain(&s.test).copied()).collect();
    let input_scaling = if cfg.scale_inputs && !all.is_empty() { Some(input_box(&ds.examples(&all, false)?)?) } else { None };
    let n_in = ds.header.params.len();
    let mut dims = vec![n_in];
    dims.extend(cfg.hidden_for(net.n_bus()));
    dims.push(ds.n_outputs());
    let jobs: Vec<(&Split, &VariantSpec)> = splits.iter().flat_map(|s| variants.iter().map(move |v| (s, v))).collect();
    jobs.par_iter()
        .map(|&(sp, var)| -> Result<TrainedRun> {
            let train_set = ds.examples(&sp.train, var.rho > 0.0)?;
            let test_set = ds.examples(&sp.test, false)?;
            let seed = run_seed(cfg.seed, sp.size, sp.run);
            let mut model = MlpModel::with_init(&dims, ds.output_scaling()?, seed, cfg.init)?;
            model.input_scaling = input_scaling.clone();
            let tc = opf_sense::mlp::TrainConfig { seed, ..cfg.train_config(var.rho) };
            let mut result = RunResult {
                size: sp.size,
                run: sp.run,
                variant: var.name.clone(),
                rho: var.rho,
                train_mse: None,
                test_mse: None,
                test_mse_per_output: vec![],
                wall_time_s: 0.0,
                curve: LossCurve::default(),
                value_hash: value_hash(&train_set),
                violations: None,
                error: None,
            };
            let start = Instant::now();
            let outcome = train(&mut model, &train_set, &tc);
            result.wall_time_s = start.elapsed().as_secs_f64();
            match outcome {
                Ok(curve) => result.curve = curve,
                Err(e) => {
                    log::warn!("size {} run {} {}: {e}", sp.size, sp.run, var.name);
                    result.error = Some(e.to_string());
                    return Ok(TrainedRun { result, model: None });
                }
            }
            result.train_mse = Some(model.mse(&train_set)?);
            result.test_mse = Some(model.mse(&test_set)?);
            result.test_mse_per_output = per_output_mse(&model, &test_set)?;
            if with_violations {
                let thetas: Vec<Vec<f64>> = sp.test.iter().map(|&i| ds.samples[i].theta.clone()).collect();
                result.violations = Some(violation_report(net, &qm, &thetas, |t| model.predict(t))?);
            }
            Ok(TrainedRun { result, model: Some(model) })
        })
        .collect()
}

/// `n` evenly spaced points per axis of the box `[lo, hi]`, first axis
/// varying slowest.
pub fn grid_thetas(lo: &[f64], hi: &[f64], n: usize) -> Vec<Vec<f64>> {
    let dim = lo.len();
    let at = |i: usize, k: usize| if n == 1 { lo[i] } else { lo[i] + (hi[i] - lo[i]) * k as f64 / (n - 1) as f64 };
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut t = vec![0.0; dim];
            for i in (0..dim).rev() {
                t[i] = at(i, idx % n);
                idx /= n;
            }
            t
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_the_box() {
        let g = grid_thetas(&[0.0, 1.0], &[1.0, 3.0], 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, 1.0]);
        assert_eq!(g[1], vec![0.0, 2.0]);
        assert_eq!(g[8], vec![1.0, 3.0]);
    }

    #[test]
    fn seeds_differ_between_cells() {
        assert_ne!(run_seed(0, 10, 0), run_seed(0, 10, 1));
        assert_ne!(run_seed(0, 10, 0), run_seed(0, 50, 0));
        assert_eq!(run_seed(3, 10, 2), run_seed(3, 10, 2));
    }
}
