//! Primal-dual interior-point solver for the OPF QCQP, followed by an
//! active-set Newton polish of the KKT equations.
//!
//! Internally the reference constraint is the linear `v^i_ref = 0`; its
//! multiplier is reported in the reference slot of `lambda`.

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, lstsq_vec, lu_solve};
use crate::qcqp::QcqpModel;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpfStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub v: Vec<f64>,
    pub xg: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// $/h
    pub objective: f64,
    pub status: OpfStatus,
    pub residuals: KktResiduals,
    /// Inequalities treated as binding by the final Newton polish.
    pub active: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol_kkt: f64,
    pub max_iter: usize,
    /// Barrier reduction factor per iteration.
    pub sigma: f64,
    /// Fraction-to-boundary factor.
    pub step_fraction: f64,
    pub polish: bool,
    pub warm_start: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_kkt: 1e-8, max_iter: 300, sigma: 0.2, step_fraction: 0.995, polish: true, warm_start: None }
    }
}

/// `(‖∇ₓℒ‖∞, ‖h‖∞ + ‖max(g,0)‖∞, ‖μ ⊙ g‖∞)` with the quadratic reference
/// constraint. Unlimited inequalities (`f = ∞`) are skipped.
pub fn kkt_residuals(model: &QcqpModel, v: &[f64], xg: &[f64], lambda: &[f64], mu: &[f64], theta: &[f64]) -> Result<KktResiduals> {
    let (h, g) = model.eval_constraints(v, xg, theta)?;
    if lambda.len() != model.n_eq() || mu.len() != model.n_ineq() {
        return Err(Error::Dimension("dual vectors do not match the model".into()));
    }
    let nv = model.n_v();
    let mut grad_v = vec![0.0; nv];
    for (l, r) in model.eq.iter().enumerate() {
        r.quad.mul_add_into(v, 2.0 * lambda[l], &mut grad_v);
    }
    let mut grad_xg = model.a0.clone();
    for (l, r) in model.eq.iter().enumerate() {
        for &(j, a) in &r.a {
            grad_xg[j] -= lambda[l] * a;
        }
    }
    let mut feas_g = 0.0f64;
    let mut comp = 0.0f64;
    for (m, r) in model.ineq.iter().enumerate() {
        if !r.f.is_finite() {
            continue;
        }
        r.quad.mul_add_into(v, 2.0 * mu[m], &mut grad_v);
        feas_g = feas_g.max(g[m].max(0.0));
        comp = comp.max((mu[m] * g[m]).abs());
    }
    Ok(KktResiduals {
        stationarity: inf_norm(&grad_v).max(inf_norm(&grad_xg)),
        feasibility: inf_norm(&h) + feas_g,
        complementarity: comp,
    })
}

/// Constraint evaluation at fixed θ with the linear reference row.
struct Problem<'a> {
    model: &'a QcqpModel,
    eq_rhs: Vec<f64>,
    in_rhs: Vec<f64>,
    /// Inequalities with a finite right-hand side.
    finite: Vec<usize>,
}

impl<'a> Problem<'a> {
    fn new(model: &'a QcqpModel, theta: &[f64]) -> Self {
        let zero = vec![0.0; model.n_xg()];
        let eq_rhs = (0..model.n_eq()).map(|l| model.eq_rhs(l, &zero, theta)).collect();
        let in_rhs: Vec<f64> = (0..model.n_ineq()).map(|m| model.ineq_rhs(m, theta)).collect();
        let finite = (0..model.n_ineq()).filter(|&m| in_rhs[m].is_finite()).collect();
        Self { model, eq_rhs, in_rhs, finite }
    }

    fn nv(&self) -> usize {
        self.model.n_v()
    }

    fn nx(&self) -> usize {
        self.model.n_x()
    }

    fn h(&self, x: &[f64]) -> Vec<f64> {
        let m = self.model;
        let (v, xg) = x.split_at(self.nv());
        (0..m.n_eq())
            .map(|l| {
                if l == m.ref_row() {
                    v[m.ref_coord()]
                } else {
                    let r = &m.eq[l];
                    r.quad.quad(v) - r.a.iter().map(|&(j, a)| a * xg[j]).sum::<f64>() - self.eq_rhs[l]
                }
            })
            .collect()
    }

    fn g(&self, x: &[f64], rows: &[usize]) -> Vec<f64> {
        let v = &x[..self.nv()];
        rows.iter().map(|&m| self.model.ineq[m].quad.quad(v) - self.in_rhs[m]).collect()
    }

    fn jh(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.model;
        let nv = self.nv();
        let v = &x[..nv];
        let mut j = DMatrix::zeros(m.n_eq(), self.nx());
        for l in 0..m.n_eq() {
            if l == m.ref_row() {
                j[(l, m.ref_coord())] = 1.0;
                continue;
            }
            let r = &m.eq[l];
            let gv = r.quad.mul(v);
            for k in r.quad.support() {
                j[(l, k)] = 2.0 * gv[k];
            }
            for &(c, a) in &r.a {
                j[(l, nv + c)] -= a;
            }
        }
        j
    }

    fn jg(&self, x: &[f64], rows: &[usize]) -> DMatrix<f64> {
        let v = &x[..self.nv()];
        let mut j = DMatrix::zeros(rows.len(), self.nx());
        for (i, &m) in rows.iter().enumerate() {
            let q = &self.model.ineq[m].quad;
            let gv = q.mul(v);
            for k in q.support() {
                j[(i, k)] = 2.0 * gv[k];
            }
        }
        j
    }

    /// Hessian of the Lagrangian; `mu` pairs with `rows`.
    fn hess(&self, lambda: &[f64], mu: &[f64], rows: &[usize]) -> DMatrix<f64> {
        let m = self.model;
        let mut w = DMatrix::zeros(self.nx(), self.nx());
        for l in 0..m.n_eq() {
            if l != m.ref_row() && lambda[l] != 0.0 {
                m.eq[l].quad.add_to_dense(&mut w, 0, 2.0 * lambda[l]);
            }
        }
        for (i, &r) in rows.iter().enumerate() {
            if mu[i] != 0.0 {
                m.ineq[r].quad.add_to_dense(&mut w, 0, 2.0 * mu[i]);
            }
        }
        w
    }

    /// Gradient of the Lagrangian; `mu` pairs with `rows`.
    fn grad_lag(&self, x: &[f64], lambda: &[f64], mu: &[f64], rows: &[usize]) -> DVector<f64> {
        let jh = self.jh(x);
        let jg = self.jg(x, rows);
        let mut gl = jh.tr_mul(&DVector::from_column_slice(lambda)) + jg.tr_mul(&DVector::from_column_slice(mu));
        let nv = self.nv();
        for (j, a) in self.model.a0.iter().enumerate() {
            gl[nv + j] += a;
        }
        gl
    }

    fn cost(&self, x: &[f64]) -> f64 {
        self.model.a0.iter().zip(&x[self.nv()..]).map(|(a, b)| a * b).sum()
    }
}

fn initial_point(model: &QcqpModel, warm: &Option<(Vec<f64>, Vec<f64>)>) -> Result<Vec<f64>> {
    let nb = model.n_bus;
    let mut x = vec![0.0; model.n_x()];
    match warm {
        Some((v, xg)) => {
            if v.len() != model.n_v() || xg.len() != model.n_xg() {
                return Err(Error::Dimension("warm start does not match the model".into()));
            }
            x[..model.n_v()].copy_from_slice(v);
            x[model.n_v()..].copy_from_slice(xg);
        }
        None => {
            for k in 0..nb {
                x[k] = 1.0;
            }
            // midpoint dispatch from the generator limit rows
            for g in 0..model.n_gen {
                for (slot, up, lo) in [(g, model.pg_upper(g), model.pg_lower(g)), (model.n_gen + g, model.qg_upper(g), model.qg_lower(g))] {
                    let (fu, fl) = (model.ineq[up].f, model.ineq[lo].f);
                    let k = model.gen_bus[g];
                    // fu = hi − fixed demand, fl = fixed demand − lo
                    let fixed = if slot < model.n_gen { -model.eq[k].c } else { -model.eq[nb + k].c };
                    let mid = 0.5 * ((fu + fixed) + (fixed - fl));
                    x[model.n_v() + slot] = if mid.is_finite() { mid } else { 0.0 };
                }
            }
        }
    }
    Ok(x)
}

/// Solves the OPF at parameter `theta`.
pub fn solve_opf(model: &QcqpModel, theta: &[f64], opts: &SolverOptions) -> Result<OpfSolution> {
    if theta.len() != model.n_theta() {
        return Err(Error::Dimension(format!("θ has {} entries, model expects {}", theta.len(), model.n_theta())));
    }
    if !(opts.tol_kkt > 0.0) {
        return Err(Error::Config("tol_kkt must be positive".into()));
    }
    let p = Problem::new(model, theta);
    let fin = p.finite.clone();
    let (nx, neq, ni) = (p.nx(), model.n_eq(), fin.len());
    let mut x = initial_point(model, &opts.warm_start)?;
    let mut g = p.g(&x, &fin);
    let mut z: Vec<f64> = g.iter().map(|&gi| (-gi).max(0.1)).collect();
    let mut gamma = 1.0;
    let mut mu: Vec<f64> = z.iter().map(|zi| gamma / zi).collect();
    let mut lambda = vec![0.0; neq];
    let mut f_prev = p.cost(&x);
    let ipm_tol = 0.1 * opts.tol_kkt;

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..=opts.max_iter {
        iterations = it;
        let h = p.h(&x);
        g = p.g(&x, &fin);
        let jh = p.jh(&x);
        let jg = p.jg(&x, &fin);
        let mut lx = jh.tr_mul(&DVector::from_column_slice(&lambda)) + jg.tr_mul(&DVector::from_column_slice(&mu));
        for (j, a) in model.a0.iter().enumerate() {
            lx[model.n_v() + j] += a;
        }
        let f = p.cost(&x);
        let xnorm = inf_norm(&x);
        let gmax = g.iter().fold(0.0f64, |m, &v| m.max(v));
        let feas = inf_norm(&h).max(gmax) / (1.0 + xnorm.max(inf_norm(&z)));
        let grad = lx.amax() / (1.0 + inf_norm(&lambda).max(inf_norm(&mu)));
        let comp = z.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() / (1.0 + xnorm);
        let costc = (f - f_prev).abs() / (1.0 + f_prev.abs());
        if it > 0 && feas < ipm_tol && grad < ipm_tol && comp < ipm_tol && costc < ipm_tol {
            converged = true;
            break;
        }
        if it == opts.max_iter || !xnorm.is_finite() || xnorm > 1e6 {
            break;
        }
        f_prev = f;

        let mut mm = p.hess(&lambda, &mu, &fin);
        let scaled: Vec<f64> = (0..ni).map(|i| mu[i] / z[i]).collect();
        let mut jg_s = jg.clone();
        for i in 0..ni {
            jg_s.row_mut(i).scale_mut(scaled[i]);
        }
        mm += jg.tr_mul(&jg_s);
        let corr: Vec<f64> = (0..ni).map(|i| (mu[i] * g[i] + gamma) / z[i]).collect();
        let n = &lx + jg.tr_mul(&DVector::from_vec(corr));

        let dim = nx + neq;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (nx, nx)).copy_from(&mm);
        kkt.view_mut((0, nx), (nx, neq)).copy_from(&jh.transpose());
        kkt.view_mut((nx, 0), (neq, nx)).copy_from(&jh);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, nx).copy_from(&(-&n));
        for l in 0..neq {
            rhs[nx + l] = -h[l];
        }
        let mut delta = 0.0;
        let step = loop {
            let mut k = kkt.clone();
            if delta > 0.0 {
                for i in 0..nx {
                    k[(i, i)] += delta;
                }
                for i in nx..dim {
                    k[(i, i)] -= delta * 1e-3;
                }
            }
            if let Some(s) = lu_solve(&k, &rhs, 0.0) {
                break Some(s);
            }
            delta = if delta == 0.0 { 1e-8 } else { 2.0 * delta };
            if delta > 1e4 {
                break None;
            }
        };
        let Some(step) = step else { break };
        let dx = step.rows(0, nx).into_owned();
        let dlam = step.rows(nx, neq).into_owned();
        let jgdx = &jg * &dx;
        let dz: Vec<f64> = (0..ni).map(|i| -g[i] - z[i] - jgdx[i]).collect();
        let dmu: Vec<f64> = (0..ni).map(|i| -mu[i] + (gamma - mu[i] * dz[i]) / z[i]).collect();
        let ratio = |vals: &[f64], d: &[f64]| {
            let mut a = 1.0f64;
            for i in 0..vals.len() {
                if d[i] < 0.0 {
                    a = a.min(opts.step_fraction * (-vals[i] / d[i]));
                }
            }
            a
        };
        let ap = ratio(&z, &dz);
        let ad = ratio(&mu, &dmu);
        for i in 0..nx {
            x[i] += ap * dx[i];
        }
        for i in 0..ni {
            z[i] += ap * dz[i];
            mu[i] += ad * dmu[i];
        }
        for l in 0..neq {
            lambda[l] += ad * dlam[l];
        }
        gamma = opts.sigma * z.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() / ni.max(1) as f64;
    }

    let mut mu_full = vec![0.0; model.n_ineq()];
    for (i, &m) in fin.iter().enumerate() {
        mu_full[m] = mu[i];
    }
    let mut sol = finish(model, theta, &x, &lambda, &mu_full, vec![], iterations)?;
    let h = p.h(&x);
    let gmax = p.g(&x, &fin).iter().fold(0.0f64, |m, &v| m.max(v));
    let infeasible = !(inf_norm(&h).max(gmax) <= 1e-4) || !x.iter().all(|v| v.is_finite());
    if opts.polish && !infeasible {
        // binding iff the multiplier dominates the slack
        let active: Vec<usize> = fin.iter().enumerate().filter(|&(i, _)| mu[i] > z[i]).map(|(_, &m)| m).collect();
        if let Some(polished) = polish_active_set(model, theta, &sol, active, iterations) {
            if polished.residuals.max() <= sol.residuals.max().max(opts.tol_kkt) {
                sol = polished;
                converged = true;
            }
        }
    }
    if sol.residuals.max() >= opts.tol_kkt || !converged {
        sol.status = if infeasible { OpfStatus::Infeasible } else { OpfStatus::MaxIter };
    }
    Ok(sol)
}

fn finish(
    model: &QcqpModel,
    theta: &[f64],
    x: &[f64],
    lambda: &[f64],
    mu: &[f64],
    active: Vec<usize>,
    iterations: usize,
) -> Result<OpfSolution> {
    let (v, xg) = x.split_at(model.n_v());
    let residuals = kkt_residuals(model, v, xg, lambda, mu, theta)?;
    Ok(OpfSolution {
        v: v.to_vec(),
        xg: xg.to_vec(),
        lambda: lambda.to_vec(),
        mu: mu.to_vec(),
        objective: model.objective(xg),
        status: OpfStatus::Optimal,
        residuals,
        active,
        iterations,
    })
}

/// Newton's method on the KKT equations with a fixed set of binding
/// inequalities: unknowns `(x, λ, μ_A)`, equations `∇ℒ = 0, h = 0,
/// g_A = 0`. Falls back to minimum-norm steps when the Jacobian is
/// singular (dependent constraint gradients).
fn newton_kkt(p: &Problem, x: &mut [f64], lambda: &mut [f64], mu_a: &mut [f64], active: &[usize]) -> f64 {
    let (nx, neq, na) = (p.nx(), p.model.n_eq(), active.len());
    let dim = nx + neq + na;
    let residual = |x: &[f64], lambda: &[f64], mu_a: &[f64]| -> DVector<f64> {
        let mut r = DVector::zeros(dim);
        r.rows_mut(0, nx).copy_from(&p.grad_lag(x, lambda, mu_a, active));
        for (l, hv) in p.h(x).into_iter().enumerate() {
            r[nx + l] = hv;
        }
        for (i, gv) in p.g(x, active).into_iter().enumerate() {
            r[nx + neq + i] = gv;
        }
        r
    };
    let mut r = residual(x, lambda, mu_a);
    let mut norm = r.amax();
    for _ in 0..30 {
        if norm < 1e-15 {
            break;
        }
        let mut jac = DMatrix::zeros(dim, dim);
        jac.view_mut((0, 0), (nx, nx)).copy_from(&p.hess(lambda, mu_a, active));
        let jh = p.jh(x);
        let jg = p.jg(x, active);
        jac.view_mut((0, nx), (nx, neq)).copy_from(&jh.transpose());
        jac.view_mut((nx, 0), (neq, nx)).copy_from(&jh);
        if na > 0 {
            jac.view_mut((0, nx + neq), (nx, na)).copy_from(&jg.transpose());
            jac.view_mut((nx + neq, 0), (na, nx)).copy_from(&jg);
        }
        let rhs = -&r;
        let step = lu_solve(&jac, &rhs, 1e-12).unwrap_or_else(|| lstsq_vec(&jac, &rhs, 1e-12));
        let (mut xt, mut lt, mut mt) = (x.to_vec(), lambda.to_vec(), mu_a.to_vec());
        for i in 0..nx {
            xt[i] += step[i];
        }
        for l in 0..neq {
            lt[l] += step[nx + l];
        }
        for i in 0..na {
            mt[i] += step[nx + neq + i];
        }
        let rt = residual(&xt, &lt, &mt);
        let nt = rt.amax();
        if !(nt < norm) {
            break;
        }
        x.copy_from_slice(&xt);
        lambda.copy_from_slice(&lt);
        mu_a.copy_from_slice(&mt);
        let progress = nt / norm;
        r = rt;
        norm = nt;
        if progress > 0.5 && norm < 1e-12 {
            break;
        }
    }
    norm
}

const POLISH_ACCEPT: f64 = 1e-11;

/// Polishes `start` at `theta` with `active` as the initial binding set,
/// adjusting the set when multipliers turn negative or dropped
/// constraints become violated.
fn polish_active_set(model: &QcqpModel, theta: &[f64], start: &OpfSolution, mut active: Vec<usize>, iterations: usize) -> Option<OpfSolution> {
    let p = Problem::new(model, theta);
    for _ in 0..6 {
        let mut x: Vec<f64> = start.v.iter().chain(&start.xg).copied().collect();
        let mut lambda = start.lambda.clone();
        let mut mu_a: Vec<f64> = active.iter().map(|&m| start.mu[m]).collect();
        let norm = newton_kkt(&p, &mut x, &mut lambda, &mut mu_a, &active);
        if !(norm < POLISH_ACCEPT) {
            return None;
        }
        let g = p.g(&x, &p.finite);
        let violated: Vec<usize> = p.finite.iter().enumerate().filter(|&(i, m)| g[i] > 1e-10 && !active.contains(m)).map(|(_, &m)| m).collect();
        let negative: Vec<usize> = active.iter().enumerate().filter(|&(i, _)| mu_a[i] < -1e-10).map(|(_, &m)| m).collect();
        if violated.is_empty() && negative.is_empty() {
            let mut mu = vec![0.0; model.n_ineq()];
            for (i, &m) in active.iter().enumerate() {
                mu[m] = mu_a[i].max(0.0);
            }
            return finish(model, theta, &x, &lambda, &mu, active, iterations).ok();
        }
        active.retain(|m| !negative.contains(m));
        active.extend(violated);
        active.sort_unstable();
    }
    None
}

/// Re-solves at a nearby `theta` by Newton's method on the KKT equations
/// from `base`, keeping its binding set. Returns `None` when the binding
/// set cannot be kept (a multiplier turns negative or a dropped
/// constraint becomes violated).
pub fn resolve_with_active_set(model: &QcqpModel, base: &OpfSolution, theta: &[f64]) -> Result<Option<OpfSolution>> {
    if theta.len() != model.n_theta() {
        return Err(Error::Dimension("θ does not match the model".into()));
    }
    let p = Problem::new(model, theta);
    let active = base.active.clone();
    let mut x: Vec<f64> = base.v.iter().chain(&base.xg).copied().collect();
    let mut lambda = base.lambda.clone();
    let mut mu_a: Vec<f64> = active.iter().map(|&m| base.mu[m]).collect();
    let norm = newton_kkt(&p, &mut x, &mut lambda, &mut mu_a, &active);
    if !(norm < POLISH_ACCEPT) {
        return Ok(None);
    }
    let g = p.g(&x, &p.finite);
    let violated = p.finite.iter().enumerate().any(|(i, m)| g[i] > 0.0 && !active.contains(m));
    if violated || mu_a.iter().any(|&m| m < 0.0) {
        return Ok(None);
    }
    let mut mu = vec![0.0; model.n_ineq()];
    for (i, &m) in active.iter().enumerate() {
        mu[m] = mu_a[i];
    }
    finish(model, theta, &x, &lambda, &mu, active, 0).map(Some)
}

/// Re-solve near a known solution: the active-set Newton polish first, a
/// cold interior-point solve if the binding set changes.
pub fn resolve_near(model: &QcqpModel, base: &OpfSolution, theta: &[f64], opts: &SolverOptions) -> Result<OpfSolution> {
    match resolve_with_active_set(model, base, theta)? {
        Some(sol) => Ok(sol),
        None => solve_opf(model, theta, opts),
    }
}

/// Central difference of `[v; x_g]` in parameter `p`, re-solving at
/// `θ ± ε e_p` with the base binding set. `None` when the binding set
/// changes within the stencil.
pub fn finite_difference_column(model: &QcqpModel, base: &OpfSolution, theta: &[f64], p: usize, eps: f64) -> Result<Option<Vec<f64>>> {
    if p >= theta.len() {
        return Err(Error::Dimension(format!("parameter {p} out of range")));
    }
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    plus[p] += eps;
    minus[p] -= eps;
    let (Some(a), Some(b)) = (resolve_with_active_set(model, base, &plus)?, resolve_with_active_set(model, base, &minus)?) else {
        return Ok(None);
    };
    let xa = a.v.iter().chain(&a.xg);
    let xb = b.v.iter().chain(&b.xg);
    Ok(Some(xa.zip(xb).map(|(u, w)| (u - w) / (2.0 * eps)).collect()))
}

/// All columns of the central-difference Jacobian.
pub fn finite_difference_jacobian(model: &QcqpModel, base: &OpfSolution, theta: &[f64], eps: f64) -> Result<Option<DMatrix<f64>>> {
    let mut j = DMatrix::zeros(model.n_x(), theta.len());
    for p in 0..theta.len() {
        let Some(col) = finite_difference_column(model, base, theta, p, eps)? else {
            return Ok(None);
        };
        j.set_column(p, &DVector::from_vec(col));
    }
    Ok(Some(j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::*;

    fn two_bus() -> Network {
        let buses = vec![
            Bus { id: 1, kind: BusKind::Slack, pd: 0.0, qd: 0.0, vmin: 0.9, vmax: 1.1, gsh: 0.0, bsh: 0.0 },
            Bus { id: 2, kind: BusKind::Load, pd: 0.5, qd: 0.2, vmin: 0.9, vmax: 1.1, gsh: 0.0, bsh: 0.0 },
        ];
        let branches = vec![Branch { from: 1, to: 2, r: 0.02, x: 0.1, b_charge: 0.0, tap: 0.0, shift: 0.0, rate: 0.0, imax: None }];
        let gens = vec![Generator { bus: 1, pmin: 0.0, pmax: 2.0, qmin: -2.0, qmax: 2.0, cp: 1500.0, cq: 0.0, pg0: 0.0, vg0: 1.0 }];
        Network::new("two", 100.0, buses, branches, gens).unwrap()
    }

    #[test]
    fn two_bus_converges_with_small_residuals() {
        let net = two_bus();
        let model = QcqpModel::from_network(&net).unwrap();
        let theta = model.params.nominal(&net);
        let sol = solve_opf(&model, &theta, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        assert!(sol.residuals.max() < 1e-8, "{:?}", sol.residuals);
        assert!(sol.mu.iter().all(|&m| m >= -1e-12));
        assert!((sol.objective - 1500.0 * sol.xg[0]).abs() < 1e-9);
        // cheapest losses: highest voltages allowed
        assert!((sol.v[0].hypot(sol.v[2]) - 1.1).abs() < 1e-9);
    }

    #[test]
    fn random_point_has_nonzero_residuals() {
        let net = two_bus();
        let model = QcqpModel::from_network(&net).unwrap();
        let theta = model.params.nominal(&net);
        let r = kkt_residuals(&model, &[1.0, 0.9, 0.1, 0.2], &[0.3, 0.1], &[0.1; 5], &[0.0; 9], &theta).unwrap();
        assert!(r.stationarity > 0.0 && r.feasibility > 0.0);
    }

    #[test]
    fn wrong_theta_length_is_an_error() {
        let net = two_bus();
        let model = QcqpModel::from_network(&net).unwrap();
        assert!(matches!(solve_opf(&model, &[0.1], &SolverOptions::default()), Err(Error::Dimension(_))));
    }
}
