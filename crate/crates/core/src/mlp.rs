//! Fully connected predictor with rectifier hidden layers and a tanh
//! output, its analytic input Jacobian, and training on value and
//! Jacobian targets with Adam.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-entry affine map between a box `[lo, hi]` and `[−1, 1]`. Entries
/// with `lo == hi` are only shifted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxScaling {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxScaling {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension("scaling bounds differ in length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(Error::Validation("scaling bounds must be finite with lo ≤ hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Maps `[−1, 1]` to itself.
    pub fn unit(n: usize) -> Self {
        Self { lo: vec![-1.0; n], hi: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    fn mid(&self, i: usize) -> f64 {
        0.5 * (self.lo[i] + self.hi[i])
    }

    pub fn half_width(&self, i: usize) -> f64 {
        if self.hi[i] > self.lo[i] {
            0.5 * (self.hi[i] - self.lo[i])
        } else {
            1.0
        }
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| (v - self.mid(i)) / self.half_width(i)).collect()
    }

    /// Inverse of `to_unit`, clamped to the open box so that outputs of a
    /// saturated tanh still land strictly inside.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| {
                let x = self.mid(i) + self.half_width(i) * v;
                if self.hi[i] > self.lo[i] {
                    x.clamp(self.lo[i].next_up(), self.hi[i].next_down())
                } else {
                    x
                }
            })
            .collect()
    }

    /// Rows of a Jacobian `∂x/∂θ` expressed for the unit-scaled `x`.
    pub fn scale_jacobian_rows(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = j.clone();
        for (r, mut row) in out.row_iter_mut().enumerate() {
            row /= self.half_width(r);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Layer widths `[u_0, …, u_{K+1}]`.
    pub dims: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    /// Set to `false` to make the output layer affine (used in tests).
    pub output_tanh: bool,
    /// Optional map applied to θ before the first layer; `None` feeds θ
    /// as given.
    pub input_scaling: Option<BoxScaling>,
    pub output_scaling: BoxScaling,
    pub seed: u64,
}

/// One training pair in scaled output space: `y` and the rows of `jac`
/// are already divided by the output half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub jac: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    fn zeros_like(m: &MlpModel) -> Self {
        Self {
            weights: m.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: m.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// All entries, layer by layer, weights row-major then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub value: f64,
    pub jacobian: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.value + self.jacobian
    }
}

/// Uniform weight initialization with bound `√(6/fan_in)` (He) or
/// `√(6/(fan_in + fan_out))` (Glorot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    HeUniform,
    #[default]
    GlorotUniform,
}

struct Trace {
    /// Layer inputs `a_0 … a_K`.
    acts: Vec<DVector<f64>>,
    /// Rectifier masks of the hidden layers.
    masks: Vec<DVector<f64>>,
    out: DVector<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights and zero biases.
    pub fn new(dims: &[usize], output_scaling: BoxScaling, seed: u64) -> Result<Self> {
        Self::with_init(dims, output_scaling, seed, WeightInit::default())
    }

    pub fn with_init(dims: &[usize], output_scaling: BoxScaling, seed: u64, init: WeightInit) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config("network needs an input and an output layer of nonzero width".into()));
        }
        let n_out = *dims.last().unwrap();
        if output_scaling.len() != n_out {
            return Err(Error::Dimension(format!("output scaling has {} entries for {n_out} outputs", output_scaling.len())));
        }
        if output_scaling.lo.iter().zip(&output_scaling.hi).any(|(l, h)| l >= h) {
            return Err(Error::Validation("output box must have positive width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let fan = match init {
                WeightInit::HeUniform => w[0],
                WeightInit::GlorotUniform => w[0] + w[1],
            };
            let bound = (6.0 / fan as f64).sqrt();
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-bound..bound)));
            biases.push(DVector::zeros(w[1]));
        }
        Ok(Self { dims: dims.to_vec(), weights, biases, output_tanh: true, input_scaling: None, output_scaling, seed })
    }

    pub fn n_in(&self) -> usize {
        self.dims[0]
    }

    pub fn n_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn check_input(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_in() {
            return Err(Error::Dimension(format!("input has {} entries, network expects {}", theta.len(), self.n_in())));
        }
        Ok(())
    }

    fn input_half(&self, j: usize) -> f64 {
        self.input_scaling.as_ref().map_or(1.0, |s| s.half_width(j))
    }

    fn trace(&self, theta: &[f64]) -> Trace {
        let a0 = match &self.input_scaling {
            Some(s) => s.to_unit(theta),
            None => theta.to_vec(),
        };
        let mut acts = vec![DVector::from_vec(a0)];
        let mut masks = Vec::new();
        let last = self.weights.len() - 1;
        let mut out = DVector::zeros(0);
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w * acts.last().unwrap() + b;
            if k < last {
                let mask = z.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                acts.push(z.component_mul(&mask));
                masks.push(mask);
            } else {
                out = if self.output_tanh { z.map(f64::tanh) } else { z };
            }
        }
        Trace { acts, masks, out }
    }

    /// Scaled prediction `ŷ ∈ (−1, 1)`.
    pub fn forward(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_input(theta)?;
        Ok(self.trace(theta).out.iter().copied().collect())
    }

    /// Prediction in physical units.
    pub fn predict(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.output_scaling.from_unit(&self.forward(theta)?))
    }

    fn output_slope(&self, out: &DVector<f64>) -> DVector<f64> {
        if self.output_tanh {
            out.map(|y| 1.0 - y * y)
        } else {
            DVector::from_element(out.len(), 1.0)
        }
    }

    /// `Lp[k]`: product of the layers above layer `k` without the output
    /// slope, so that `Ĵ = diag(s) Lp[k] W_k P_k`.
    fn left_products(&self, tr: &Trace) -> Vec<DMatrix<f64>> {
        let nl = self.weights.len();
        let mut lp = vec![DMatrix::zeros(0, 0); nl];
        lp[nl - 1] = DMatrix::identity(self.n_out(), self.n_out());
        for k in (0..nl - 1).rev() {
            let mut m = &lp[k + 1] * &self.weights[k + 1];
            for (c, mut col) in m.column_iter_mut().enumerate() {
                col *= tr.masks[k][c];
            }
            lp[k] = m;
        }
        lp
    }

    /// `∂ŷ/∂θ` (scaled outputs, physical inputs).
    pub fn input_jacobian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(theta)?;
        let tr = self.trace(theta);
        let lp = self.left_products(&tr);
        let s = self.output_slope(&tr.out);
        let mut j = &lp[0] * &self.weights[0];
        for (r, mut row) in j.row_iter_mut().enumerate() {
            row *= s[r];
        }
        for (c, mut col) in j.column_iter_mut().enumerate() {
            col /= self.input_half(c);
        }
        Ok(j)
    }

    /// Loss of one example with the value term weighted by `wv` and the
    /// Jacobian term by `wj`.
    fn sample_loss_and_grads(&self, ex: &Example, wv: f64, wj: f64) -> Result<(LossParts, Gradients)> {
        self.check_input(&ex.theta)?;
        if ex.y.len() != self.n_out() {
            return Err(Error::Dimension(format!("label has {} entries, network has {} outputs", ex.y.len(), self.n_out())));
        }
        let nl = self.weights.len();
        let tr = self.trace(&ex.theta);
        let s = self.output_slope(&tr.out);
        let err = &tr.out - DVector::from_column_slice(&ex.y);
        let mut parts = LossParts { value: wv * err.norm_squared(), jacobian: 0.0 };
        let mut delta = (2.0 * wv * &err).component_mul(&s);
        let mut grads = Gradients::zeros_like(self);

        if let (Some(jt), true) = (&ex.jac, wj != 0.0) {
            if jt.shape() != (self.n_out(), self.n_in()) {
                return Err(Error::Dimension(format!("Jacobian label is {:?}, expected {:?}", jt.shape(), (self.n_out(), self.n_in()))));
            }
            let lp = self.left_products(&tr);
            let m = &lp[0] * &self.weights[0];
            let mut jhat = m.clone();
            for (r, mut row) in jhat.row_iter_mut().enumerate() {
                row *= s[r];
            }
            for (c, mut col) in jhat.column_iter_mut().enumerate() {
                col /= self.input_half(c);
            }
            let diff = &jhat - jt;
            parts.jacobian = wj * diff.norm_squared();
            // G with respect to the first-layer input
            let mut g = 2.0 * wj * diff;
            for (c, mut col) in g.column_iter_mut().enumerate() {
                col /= self.input_half(c);
            }
            if self.output_tanh {
                for i in 0..self.n_out() {
                    let c = g.row(i).dot(&m.row(i));
                    delta[i] += c * (-2.0 * tr.out[i] * s[i]);
                }
            }
            // B_k = G P_kᵀ, carried forward through the layers
            let mut b = g;
            for k in 0..nl {
                let mut left = lp[k].clone();
                for (r, mut row) in left.row_iter_mut().enumerate() {
                    row *= s[r];
                }
                grads.weights[k] += left.transpose() * &b;
                if k + 1 < nl {
                    let mut next = &b * self.weights[k].transpose();
                    for (c, mut col) in next.column_iter_mut().enumerate() {
                        col *= tr.masks[k][c];
                    }
                    b = next;
                }
            }
        }

        for k in (0..nl).rev() {
            grads.weights[k] += &delta * tr.acts[k].transpose();
            grads.biases[k] += &delta;
            if k > 0 {
                delta = (self.weights[k].transpose() * &delta).component_mul(&tr.masks[k - 1]);
            }
        }
        Ok((parts, grads))
    }

    /// Summed loss `Σ ‖ŷ − y‖² + ρ ‖Ĵ − J‖²_F` over `batch` (the Jacobian
    /// term only where a label Jacobian is present) and its gradient.
    pub fn loss_and_grads(&self, batch: &[Example], rho: f64) -> Result<(LossParts, Gradients)> {
        self.loss_and_grads_with(batch, rho, LossReduction::Sum)
    }

    pub fn loss_and_grads_with(&self, batch: &[Example], rho: f64, reduction: LossReduction) -> Result<(LossParts, Gradients)> {
        let (wv, wj) = match reduction {
            LossReduction::Sum => (1.0, rho),
            LossReduction::Mean => {
                let b = batch.len().max(1) as f64;
                let n_out = self.n_out() as f64;
                (1.0 / (b * n_out), rho / (b * n_out * self.n_in() as f64))
            }
        };
        let per: Vec<Result<(LossParts, Gradients)>> = batch.par_iter().map(|ex| self.sample_loss_and_grads(ex, wv, wj)).collect();
        let mut parts = LossParts::default();
        let mut grads = Gradients::zeros_like(self);
        for r in per {
            let (p, g) = r?;
            parts.value += p.value;
            parts.jacobian += p.jacobian;
            grads.add(&g);
        }
        Ok((parts, grads))
    }

    /// Mean squared error over all outputs of `data`, on scaled outputs.
    pub fn mse(&self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Dimension("no examples to evaluate".into()));
        }
        let mut total = 0.0;
        for ex in data {
            let y = self.forward(&ex.theta)?;
            total += y.iter().zip(&ex.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(total / (data.len() * self.n_out()) as f64)
    }

    /// All parameters in the order of `Gradients::flatten`.
    pub fn flatten(&self) -> Vec<f64> {
        Gradients { weights: self.weights.clone(), biases: self.biases.clone() }.flatten()
    }

    pub fn set_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension(format!("{} parameters given, network has {}", p.len(), self.n_params())));
        }
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = p[i];
                    i += 1;
                }
            }
            for x in b.iter_mut() {
                *x = p[i];
                i += 1;
            }
        }
        Ok(())
    }

    /// Smallest |pre-activation| of any hidden unit at `theta`.
    pub fn kink_distance(&self, theta: &[f64]) -> Result<f64> {
        self.check_input(theta)?;
        let tr = self.trace(theta);
        let mut d = f64::INFINITY;
        for k in 0..self.weights.len() - 1 {
            let z = &self.weights[k] * &tr.acts[k] + &self.biases[k];
            d = z.iter().fold(d, |m, x| m.min(x.abs()));
        }
        Ok(d)
    }
}

/// How per-entry squared errors are combined into the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Sums over examples, outputs and Jacobian entries.
    Sum,
    /// Batch mean of the per-entry mean squared errors of values and of
    /// Jacobian entries.
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the Jacobian term; 0 trains on values only.
    pub rho: f64,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub reduction: LossReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { rho: 20.0, lr0: 5e-4, decay: 0.85, decay_every: 250, epochs: 2000, batch_size: 100, seed: 0, reduction: LossReduction::Mean }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be finite and non-negative, got {}", self.rho)));
        }
        if !(self.lr0 > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) || self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::Config("learning rate, decay, decay interval and batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Per-epoch loss, summed over the batches of the epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurve {
    pub value: Vec<f64>,
    pub jacobian: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Adam with step decay. Full batch when the data fit in one batch,
/// otherwise shuffled mini-batches drawn from `cfg.seed`.
pub fn train(model: &mut MlpModel, data: &[Example], cfg: &TrainConfig) -> Result<LossCurve> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = model.flatten();
    let mut adam = Adam::new(params.len());
    let mut curve = LossCurve::default();
    for epoch in 0..cfg.epochs {
        if data.len() > cfg.batch_size {
            order.shuffle(&mut rng);
        }
        let lr = cfg.learning_rate(epoch);
        let mut sum = LossParts::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (parts, grads) = model.loss_and_grads_with(&batch, cfg.rho, cfg.reduction)?;
            if !parts.total().is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch} (value {}, jacobian {})", parts.value, parts.jacobian)));
            }
            sum.value += parts.value;
            sum.jacobian += parts.jacobian;
            adam.step(&mut params, &grads.flatten(), lr);
            model.set_flat(&params)?;
        }
        curve.value.push(sum.value);
        curve.jacobian.push(sum.jacobian);
    }
    Ok(curve)
}

/// Stored network: widths, row-major weights, biases, scaling maps and
/// the training settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub output_tanh: bool,
    pub input_scaling: Option<BoxScaling>,
    pub output_scaling: BoxScaling,
    pub seed: u64,
    pub train: Option<TrainConfig>,
}

const CHECKPOINT_FORMAT: &str = "opf-sense-mlp/1";

impl Checkpoint {
    pub fn from_model(m: &MlpModel, train: Option<TrainConfig>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            dims: m.dims.clone(),
            weights: m.weights.iter().map(|w| w.transpose().iter().copied().collect()).collect(),
            biases: m.biases.iter().map(|b| b.iter().copied().collect()).collect(),
            output_tanh: m.output_tanh,
            input_scaling: m.input_scaling.clone(),
            output_scaling: m.output_scaling.clone(),
            seed: m.seed,
            train,
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!("unknown checkpoint format {:?}", self.format)));
        }
        let n = self.dims.len();
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::Dimension("checkpoint layer count mismatch".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..n - 1 {
            let (rows, cols) = (self.dims[k + 1], self.dims[k]);
            if self.weights[k].len() != rows * cols || self.biases[k].len() != rows {
                return Err(Error::Dimension(format!("checkpoint layer {k} has the wrong size")));
            }
            weights.push(DMatrix::from_row_slice(rows, cols, &self.weights[k]));
            biases.push(DVector::from_vec(self.biases[k].clone()));
        }
        Ok(MlpModel {
            dims: self.dims,
            weights,
            biases,
            output_tanh: self.output_tanh,
            input_scaling: self.input_scaling,
            output_scaling: self.output_scaling,
            seed: self.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(w: DMatrix<f64>) -> MlpModel {
        let mut m = MlpModel::new(&[w.ncols(), w.nrows()], BoxScaling::unit(w.nrows()), 0).unwrap();
        m.weights[0] = w;
        m.output_tanh = false;
        m
    }

    #[test]
    fn zero_network_predicts_zero() {
        let mut m = MlpModel::new(&[3, 5, 2], BoxScaling::unit(2), 1).unwrap();
        m.set_flat(&vec![0.0; m.n_params()]).unwrap();
        assert_eq!(m.forward(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn affine_layer_is_its_own_jacobian() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.5]);
        let m = affine(w.clone());
        let x = [0.2, 0.4, -1.0];
        let y = m.forward(&x).unwrap();
        let expect = &w * DVector::from_column_slice(&x);
        assert_eq!(y, expect.iter().copied().collect::<Vec<_>>());
        assert_eq!(m.input_jacobian(&x).unwrap(), w);
    }

    #[test]
    fn dead_hidden_layer_has_zero_jacobian() {
        let mut m = MlpModel::new(&[2, 3, 2], BoxScaling::unit(2), 4).unwrap();
        m.biases[0] = DVector::from_element(3, -100.0);
        assert_eq!(m.input_jacobian(&[0.1, 0.2]).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let mut m = MlpModel::new(&[3, 4, 2], BoxScaling::unit(2), 2).unwrap();
        m.output_tanh = true;
        let x = vec![0.5, -0.2, 0.9];
        let ex = Example { y: m.forward(&x).unwrap(), jac: Some(m.input_jacobian(&x).unwrap()), theta: x };
        let (parts, g) = m.loss_and_grads(&[ex], 20.0).unwrap();
        assert_eq!(parts.total(), 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weight_on_jacobians_is_plain_squared_error() {
        let m = MlpModel::new(&[3, 4, 2], BoxScaling::unit(2), 3).unwrap();
        let ex = Example { theta: vec![0.1, 0.2, 0.3], y: vec![0.4, -0.4], jac: Some(DMatrix::from_element(2, 3, 7.0)) };
        let (parts, _) = m.loss_and_grads(std::slice::from_ref(&ex), 0.0).unwrap();
        let y = m.forward(&ex.theta).unwrap();
        let plain: f64 = y.iter().zip(&ex.y).map(|(a, b)| (a - b) * (a - b)).sum();
        assert_eq!(parts.total(), plain);
    }

    #[test]
    fn saturated_outputs_stay_inside_the_box() {
        let s = BoxScaling::new(vec![0.0, 0.95], vec![2.0, 1.05]).unwrap();
        let p = s.from_unit(&[1.0, -1.0]);
        assert!(p[0] < 2.0 && p[1] > 0.95);
        assert!(BoxScaling::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn learning_rate_steps_down() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate(249), 5e-4);
        assert!((c.learning_rate(250) - 5e-4 * 0.85).abs() < 1e-18);
        assert!((c.learning_rate(1000) - 5e-4 * 0.85f64.powi(4)).abs() < 1e-18);
    }
}
