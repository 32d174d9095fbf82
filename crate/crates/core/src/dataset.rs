//! Labeled datasets `(θ, x̄, ∂x̄/∂θ)`: load sampling, parallel labeling,
//! JSON-lines persistence and train/test splits.

use crate::error::{Error, Result};
use crate::mlp::{BoxScaling, Example};
use crate::netmodel::Network;
use crate::opf::{resolve_with_active_set, solve_opf, OpfSolution, OpfStatus, SolverOptions};
use crate::qcqp::{assemble_qcqp, build_quadforms, OutputLayout, ParamSpec, QcqpModel};
use crate::sensitivity::{solve_sensitivities, SensitivityOptions};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const DATASET_FORMAT: &str = "opf-sense-dataset/1";

/// Entry-wise scaling of the nominal demands by independent uniform draws
/// from `[lo, hi]`.
pub fn sample_thetas(nominal: &[f64], n: usize, range: (f64, f64), seed: u64) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = range;
    if n == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("invalid scaling range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| nominal.iter().map(|t| t * rng.gen_range(lo..=hi)).collect()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    /// Value and Jacobian.
    Labeled,
    /// Value only (degenerate, inconsistent or unverifiable sensitivity).
    ValueOnly,
    Infeasible,
    Failed,
}

impl SampleStatus {
    pub fn has_output(self) -> bool {
        matches!(self, SampleStatus::Labeled | SampleStatus::ValueOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub case: String,
    pub network_hash: String,
    pub params: ParamSpec,
    pub param_labels: Vec<String>,
    /// Reduced output: non-reference generator active powers, then
    /// generator voltage magnitudes.
    pub output_labels: Vec<String>,
    pub output_lo: Vec<f64>,
    pub output_hi: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub index: usize,
    pub theta: Vec<f64>,
    pub status: SampleStatus,
    pub note: Option<String>,
    pub output: Option<Vec<f64>>,
    /// `∂x̄/∂θ`, row-major, one row per output.
    pub jacobian: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub opf_status: Option<OpfStatus>,
    pub kkt_residual: Option<f64>,
    pub active: Vec<usize>,
    pub degenerate: bool,
    pub rank_deficient: bool,
    /// Parameter whose column was checked by finite differences.
    pub fd_column: Option<usize>,
    pub fd_error: Option<f64>,
}

impl TrainingSample {
    fn empty(index: usize, theta: &[f64], status: SampleStatus, note: String) -> Self {
        Self {
            index,
            theta: theta.to_vec(),
            status,
            note: Some(note),
            output: None,
            jacobian: None,
            objective: None,
            opf_status: None,
            kkt_residual: None,
            active: vec![],
            degenerate: false,
            rank_deficient: false,
            fd_column: None,
            fd_error: None,
        }
    }

    pub fn jacobian_matrix(&self, n_out: usize) -> Option<DMatrix<f64>> {
        let j = self.jacobian.as_ref()?;
        Some(DMatrix::from_row_slice(n_out, j.len() / n_out, j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<TrainingSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub solver: SolverOptions,
    pub sensitivity: SensitivityOptions,
    pub fd_eps: f64,
    pub fd_tol: f64,
    /// KKT residual a label must meet.
    pub label_tol: f64,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            sensitivity: SensitivityOptions::default(),
            fd_eps: 1e-5,
            fd_tol: 1e-3,
            label_tol: 1e-8,
            seed: 0,
        }
    }
}

fn output_difference(model: &QcqpModel, sol: &OpfSolution, theta: &[f64], p: usize, eps: f64) -> Result<Option<Vec<f64>>> {
    let layout = OutputLayout::new(model);
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    plus[p] += eps;
    minus[p] -= eps;
    let (Some(a), Some(b)) = (resolve_with_active_set(model, sol, &plus)?, resolve_with_active_set(model, sol, &minus)?) else {
        return Ok(None);
    };
    let ya = layout.extract(model, &a.v, &a.xg);
    let yb = layout.extract(model, &b.v, &b.xg);
    Ok(Some(ya.iter().zip(&yb).map(|(u, w)| (u - w) / (2.0 * eps)).collect()))
}

fn label_one(model: &QcqpModel, theta: &[f64], index: usize, opts: &GenerateOptions) -> TrainingSample {
    let sol = match solve_opf(model, theta, &opts.solver) {
        Ok(s) => s,
        Err(e) => return TrainingSample::empty(index, theta, SampleStatus::Failed, e.to_string()),
    };
    match sol.status {
        OpfStatus::Optimal => {}
        OpfStatus::Infeasible => return TrainingSample::empty(index, theta, SampleStatus::Infeasible, "OPF infeasible".into()),
        OpfStatus::MaxIter => return TrainingSample::empty(index, theta, SampleStatus::Failed, "OPF iteration limit".into()),
    }
    let mut s = TrainingSample::empty(index, theta, SampleStatus::Failed, String::new());
    s.note = None;
    s.objective = Some(sol.objective);
    s.opf_status = Some(sol.status);
    s.kkt_residual = Some(sol.residuals.max());
    s.active = sol.active.clone();
    if !(sol.residuals.max() < opts.label_tol) {
        s.note = Some(format!("KKT residual {:.3e} above label tolerance", sol.residuals.max()));
        return s;
    }
    let layout = OutputLayout::new(model);
    s.output = Some(layout.extract(model, &sol.v, &sol.xg));
    s.status = SampleStatus::ValueOnly;
    let rec = match solve_sensitivities(model, &sol, theta, &opts.sensitivity) {
        Ok(r) => r,
        Err(e) => {
            s.note = Some(e.to_string());
            return s;
        }
    };
    s.degenerate = rec.degenerate;
    s.rank_deficient = rec.rank_deficient;
    let Some(j) = rec.j_out else {
        s.note = Some(if rec.degenerate { "degenerate constraint".into() } else { "inconsistent sensitivity system".into() });
        return s;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let p = rng.gen_range(0..theta.len());
    s.fd_column = Some(p);
    let mut fd = None;
    for eps in [opts.fd_eps, 0.01 * opts.fd_eps] {
        match output_difference(model, &sol, theta, p, eps) {
            Ok(Some(col)) => {
                fd = Some(col);
                break;
            }
            Ok(None) => {}
            Err(e) => {
                s.note = Some(e.to_string());
                return s;
            }
        }
    }
    let Some(fd) = fd else {
        s.note = Some("binding set changes within the difference stencil".into());
        return s;
    };
    let err = (0..j.nrows()).map(|r| (j[(r, p)] - fd[r]).abs() / fd[r].abs().max(1e-3)).fold(0.0, f64::max);
    s.fd_error = Some(err);
    if err >= opts.fd_tol {
        s.note = Some(format!("finite-difference check failed ({err:.3e})"));
        return s;
    }
    s.jacobian = Some(j.transpose().iter().copied().collect());
    s.status = SampleStatus::Labeled;
    s
}

/// Solves and labels every θ in parallel; results keep the input order.
/// Failed instances are recorded, never fatal.
pub fn generate(case: &str, net: &Network, params: &ParamSpec, thetas: &[Vec<f64>], opts: &GenerateOptions) -> Result<Dataset> {
    let model = assemble_qcqp(net, &build_quadforms(net), params)?;
    if let Some(t) = thetas.iter().find(|t| t.len() != model.n_theta()) {
        return Err(Error::Dimension(format!("θ has {} entries, model expects {}", t.len(), model.n_theta())));
    }
    let layout = OutputLayout::new(&model);
    let (lo, hi) = layout.bounds(net);
    let samples: Vec<TrainingSample> = thetas.par_iter().enumerate().map(|(i, t)| label_one(&model, t, i, opts)).collect();
    for s in samples.iter().filter(|s| !s.status.has_output() || s.status == SampleStatus::ValueOnly) {
        log::info!("sample {}: {:?} ({})", s.index, s.status, s.note.as_deref().unwrap_or(""));
    }
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.into(),
            case: case.into(),
            network_hash: net.hash(),
            params: params.clone(),
            param_labels: params.labels(),
            output_labels: layout.labels(net),
            output_lo: lo,
            output_hi: hi,
            n_samples: samples.len(),
            seed: opts.seed,
        },
        samples,
    })
}

impl Dataset {
    pub fn n_outputs(&self) -> usize {
        self.header.output_labels.len()
    }

    /// Indices of samples carrying an output label.
    pub fn usable(&self) -> Vec<usize> {
        self.samples.iter().enumerate().filter(|(_, s)| s.status.has_output()).map(|(i, _)| i).collect()
    }

    pub fn count(&self, status: SampleStatus) -> usize {
        self.samples.iter().filter(|s| s.status == status).count()
    }

    pub fn output_scaling(&self) -> Result<BoxScaling> {
        BoxScaling::new(self.header.output_lo.clone(), self.header.output_hi.clone())
    }

    /// Training examples in scaled output space. Jacobians are dropped
    /// when `with_jacobians` is false.
    pub fn examples(&self, indices: &[usize], with_jacobians: bool) -> Result<Vec<Example>> {
        let scaling = self.output_scaling()?;
        let n_out = self.n_outputs();
        indices
            .iter()
            .map(|&i| {
                let s = self.samples.get(i).ok_or_else(|| Error::Dimension(format!("sample {i} out of range")))?;
                let y = s.output.as_ref().ok_or_else(|| Error::Validation(format!("sample {i} has no output label")))?;
                let jac = if with_jacobians { s.jacobian_matrix(n_out).map(|j| scaling.scale_jacobian_rows(&j)) } else { None };
                Ok(Example { theta: s.theta.clone(), y: scaling.to_unit(y), jac })
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)? + "\n";
        for s in &self.samples {
            out += &serde_json::to_string(s)?;
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    fn read_lines(mut lines: impl Iterator<Item = std::io::Result<String>>) -> Result<Self> {
        let first = lines.next().ok_or_else(|| Error::Validation("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Validation(format!("unknown dataset format {:?}", header.format)));
        }
        let mut samples = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                samples.push(serde_json::from_str::<TrainingSample>(&line)?);
            }
        }
        if samples.len() != header.n_samples {
            return Err(Error::Validation(format!("header lists {} samples, file has {}", header.n_samples, samples.len())));
        }
        Ok(Self { header, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl()?.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_lines(BufReader::new(std::fs::File::open(path)?).lines())
    }

    /// Fails when `net` is not the network the dataset was generated on.
    pub fn check_network(&self, net: &Network) -> Result<()> {
        if net.hash() != self.header.network_hash {
            return Err(Error::Validation("dataset was generated on a different network".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub sizes: Vec<usize>,
    /// Runs per size, aligned with `sizes`.
    pub runs: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub size: usize,
    pub run: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Training sets drawn without replacement from `pool`; each test set is
/// the rest of the pool.
pub fn split(pool: &[usize], plan: &SplitPlan) -> Result<Vec<Split>> {
    if plan.sizes.len() != plan.runs.len() {
        return Err(Error::Config("split plan needs one run count per size".into()));
    }
    let mut out = Vec::new();
    for (&size, &runs) in plan.sizes.iter().zip(&plan.runs) {
        if size >= pool.len() {
            return Err(Error::EmptyTestSet { size, pool: pool.len() });
        }
        if size == 0 {
            return Err(Error::Config("training size must be positive".into()));
        }
        for run in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(((size as u64) << 32) | run as u64);
            let mut order = pool.to_vec();
            order.shuffle(&mut rng);
            let mut train = order[..size].to_vec();
            let mut test = order[size..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            out.push(Split { size, run, train, test });
        }
    }
    Ok(out)
}
