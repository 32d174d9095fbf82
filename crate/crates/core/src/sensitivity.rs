//! Sensitivities of the OPF minimizer with respect to the load parameters,
//! from the differentiated KKT conditions.
//!
//! Unknowns of the linear system are `(dv, dx_g, dλ, dμ_A)`; the first
//! block row is half the differentiated gradient of the Lagrangian in `v`.

use crate::error::{Error, Result};
use crate::linalg::{lstsq, null_space};
use crate::opf::OpfSolution;
use crate::qcqp::{EqKind, IneqKind, OutputLayout, QcqpModel};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Multiplier threshold relative to `max(1, ‖μ‖∞)`.
    pub mu_rel: f64,
    /// Slack threshold relative to `max(1, |rhs|)` of each inequality.
    pub g_rel: f64,
    /// Accepted residual relative to `‖U‖_F`.
    pub residual_rel: f64,
    /// Singular values below `rank_rtol · σ_max` are treated as zero.
    pub rank_rtol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { mu_rel: 1e-6, g_rel: 1e-6, residual_rel: 1e-6, rank_rtol: 1e-10 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub inactive: Vec<usize>,
    pub active: Vec<usize>,
    pub degenerate: Vec<usize>,
}

impl Classification {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate.is_empty()
    }
}

/// Inactive when `μ < τ_μ` and `g < −τ_g`, strongly active when `μ ≥ τ_μ`
/// and `|g| ≤ τ_g`, degenerate otherwise.
pub fn classify_constraints(g: &[f64], mu: &[f64], tau_g: f64, tau_mu: f64) -> Classification {
    let mut c = Classification::default();
    for (m, (&gm, &mm)) in g.iter().zip(mu).enumerate() {
        if mm < tau_mu && gm < -tau_g {
            c.inactive.push(m);
        } else if mm >= tau_mu && gm.abs() <= tau_g {
            c.active.push(m);
        } else {
            c.degenerate.push(m);
        }
    }
    c
}

/// Classification of an OPF solution with per-row scaled slacks.
pub fn classify_solution(model: &QcqpModel, sol: &OpfSolution, theta: &[f64], th: &Thresholds) -> Result<Classification> {
    let (_, g) = model.eval_constraints(&sol.v, &sol.xg, theta)?;
    let scaled: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(m, &gm)| {
            let rhs = model.ineq_rhs(m, theta);
            if rhs.is_finite() { gm / rhs.abs().max(1.0) } else { f64::NEG_INFINITY }
        })
        .collect();
    let mu_max = sol.mu.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    Ok(classify_constraints(&scaled, &sol.mu, th.g_rel, th.mu_rel * mu_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoltageLimitForm {
    /// `|v|² ≤ vmax²`
    #[default]
    Squared,
    /// `|v| ≤ vmax`
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenLimitForm {
    /// Limits on the injection quadratic plus demand.
    #[default]
    Quadratic,
    /// Bounds directly on `p_g`, `q_g`.
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceForm {
    /// `v^i_ref = 0`
    #[default]
    Linear,
    /// `atan(v^i_ref / v^r_ref) = 0`
    Arctan,
    /// `(v^i_ref)² = 0`; its gradient vanishes on the feasible set, so it
    /// is only usable for gradient reporting.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConstraintForms {
    pub voltage: VoltageLimitForm,
    pub generator: GenLimitForm,
    pub reference: ReferenceForm,
    /// Flow limits posed at both line ends (two identical rows).
    pub flow_both_ends: bool,
}

/// One constraint as seen by the linear system.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTerm {
    pub grad_v: Vec<f64>,
    pub grad_xg: Vec<f64>,
    /// Upper-triangle entries of `∇²_v`, off-diagonals listed once.
    pub hess_v: Vec<(usize, usize, f64)>,
    /// `−∂/∂θ` of the constraint function.
    pub rhs_theta: Vec<f64>,
    pub multiplier: f64,
}

fn quad_hessian(q: &crate::quad::SymQuad, scale: f64) -> Vec<(usize, usize, f64)> {
    q.entries().iter().map(|&(i, j, a)| (i, j, 2.0 * scale * a)).collect()
}

/// Gradient, Hessian and multiplier of equality `l` under `forms`.
pub fn equality_term(model: &QcqpModel, sol: &OpfSolution, l: usize, forms: &ConstraintForms) -> ConstraintTerm {
    let (nv, nxg, nt) = (model.n_v(), model.n_xg(), model.n_theta());
    let row = &model.eq[l];
    let mut t = ConstraintTerm {
        grad_v: vec![0.0; nv],
        grad_xg: vec![0.0; nxg],
        hess_v: vec![],
        rhs_theta: vec![0.0; nt],
        multiplier: sol.lambda[l],
    };
    if row.kind == EqKind::Reference {
        let c = model.ref_coord();
        let vr = sol.v[c - model.n_bus];
        match forms.reference {
            ReferenceForm::Linear => t.grad_v[c] = 1.0,
            ReferenceForm::Arctan => {
                t.grad_v[c] = 1.0 / vr;
                t.multiplier = sol.lambda[l] * vr;
                t.hess_v.push((c - model.n_bus, c, -1.0 / (vr * vr)));
            }
            ReferenceForm::Quadratic => {
                row.quad.mul_add_into(&sol.v, 2.0, &mut t.grad_v);
                t.hess_v = quad_hessian(&row.quad, 1.0);
            }
        }
        return t;
    }
    row.quad.mul_add_into(&sol.v, 2.0, &mut t.grad_v);
    t.hess_v = quad_hessian(&row.quad, 1.0);
    for &(j, a) in &row.a {
        t.grad_xg[j] -= a;
    }
    for &(p, b) in &row.b {
        t.rhs_theta[p] += b;
    }
    if forms.generator == GenLimitForm::Box {
        // generator limit multipliers fold into the balance multiplier
        let gen_limits = |g: usize, kind: &EqKind| match kind {
            EqKind::PBalance { .. } => Some((model.pg_upper(g), model.pg_lower(g))),
            EqKind::QBalance { .. } => Some((model.qg_upper(g), model.qg_lower(g))),
            EqKind::Reference => None,
        };
        let bus = match row.kind {
            EqKind::PBalance { bus } | EqKind::QBalance { bus } => bus,
            EqKind::Reference => unreachable!(),
        };
        if let Some(g) = model.gen_bus.iter().position(|&k| k == bus) {
            if let Some((up, lo)) = gen_limits(g, &row.kind) {
                t.multiplier += sol.mu[up] - sol.mu[lo];
            }
        }
    }
    t
}

/// Gradient, Hessian and multiplier of inequality `m` under `forms`.
pub fn inequality_term(model: &QcqpModel, sol: &OpfSolution, m: usize, forms: &ConstraintForms) -> ConstraintTerm {
    let (nv, nxg, nt) = (model.n_v(), model.n_xg(), model.n_theta());
    let row = &model.ineq[m];
    let mut t = ConstraintTerm {
        grad_v: vec![0.0; nv],
        grad_xg: vec![0.0; nxg],
        hess_v: vec![],
        rhs_theta: vec![0.0; nt],
        multiplier: sol.mu[m],
    };
    let gen_slot = match row.kind {
        IneqKind::PgUpper { gen } => Some((gen, 1.0)),
        IneqKind::PgLower { gen } => Some((gen, -1.0)),
        IneqKind::QgUpper { gen } => Some((model.n_gen + gen, 1.0)),
        IneqKind::QgLower { gen } => Some((model.n_gen + gen, -1.0)),
        _ => None,
    };
    match (row.kind, gen_slot) {
        (_, Some((j, sign))) if forms.generator == GenLimitForm::Box => {
            t.grad_xg[j] = sign;
            return t;
        }
        (IneqKind::VUpper { bus } | IneqKind::VLower { bus }, _) if forms.voltage == VoltageLimitForm::Magnitude => {
            let sign = if matches!(row.kind, IneqKind::VUpper { .. }) { 1.0 } else { -1.0 };
            let (r, i) = (bus, model.n_bus + bus);
            let (vr, vi) = (sol.v[r], sol.v[i]);
            let mag = vr.hypot(vi);
            t.grad_v[r] = sign * vr / mag;
            t.grad_v[i] = sign * vi / mag;
            let m3 = mag * mag * mag;
            t.hess_v = vec![
                (r, r, sign * (1.0 / mag - vr * vr / m3)),
                (r, i, -sign * vr * vi / m3),
                (i, i, sign * (1.0 / mag - vi * vi / m3)),
            ];
            t.multiplier = 2.0 * mag * sol.mu[m];
            return t;
        }
        _ => {}
    }
    row.quad.mul_add_into(&sol.v, 2.0, &mut t.grad_v);
    t.hess_v = quad_hessian(&row.quad, 1.0);
    for &(p, d) in &row.d {
        t.rhs_theta[p] += d;
    }
    if forms.flow_both_ends && matches!(row.kind, IneqKind::Flow { .. }) {
        t.multiplier *= 0.5;
    }
    t
}

/// The linear system `S Γ = U` for one OPF solution.
#[derive(Debug, Clone, PartialEq)]
pub struct KktDiffSystem {
    pub s: DMatrix<f64>,
    pub u: DMatrix<f64>,
    /// Primal unknowns `2(N_b + N_g)`.
    pub n_x: usize,
    pub n_eq: usize,
    /// Model inequality index of each retained row (flows repeated when
    /// posed at both ends).
    pub ineq_rows: Vec<usize>,
}

/// Builds the reduced system. Inactive constraints are dropped unless
/// `keep_inactive` is set; degenerate instances are refused.
pub fn assemble_system(
    model: &QcqpModel,
    sol: &OpfSolution,
    theta: &[f64],
    class: &Classification,
    forms: &ConstraintForms,
    keep_inactive: bool,
) -> Result<KktDiffSystem> {
    if class.is_degenerate() {
        return Err(Error::Sensitivity(format!("degenerate constraints {:?}", class.degenerate)));
    }
    model.check_dims(&sol.v, &sol.xg, theta)?;
    let (nv, nxg, nt) = (model.n_v(), model.n_xg(), model.n_theta());
    let nx = nv + nxg;
    let (_, g) = model.eval_constraints(&sol.v, &sol.xg, theta)?;

    let mut rows: Vec<usize> = class.active.clone();
    if keep_inactive {
        rows.extend(class.inactive.iter().filter(|&&m| g[m].is_finite()));
        rows.sort_unstable();
    }
    let mut ineq_rows = Vec::with_capacity(rows.len());
    for &m in &rows {
        ineq_rows.push(m);
        if forms.flow_both_ends && matches!(model.ineq[m].kind, IneqKind::Flow { .. }) {
            ineq_rows.push(m);
        }
    }
    let eq_terms: Vec<ConstraintTerm> = (0..model.n_eq()).map(|l| equality_term(model, sol, l, forms)).collect();
    let in_terms: Vec<ConstraintTerm> = ineq_rows.iter().map(|&m| inequality_term(model, sol, m, forms)).collect();
    let neq = eq_terms.len();
    let na = in_terms.len();
    let dim = nx + neq + na;
    let mut s = DMatrix::zeros(dim, dim);
    let mut u = DMatrix::zeros(dim, nt);

    // Z = ½ Σ multiplier · ∇²_v
    for t in eq_terms.iter().chain(&in_terms) {
        for &(i, j, h) in &t.hess_v {
            s[(i, j)] += 0.5 * t.multiplier * h;
            if i != j {
                s[(j, i)] += 0.5 * t.multiplier * h;
            }
        }
    }
    for (c, t) in eq_terms.iter().enumerate() {
        let col = nx + c;
        for i in 0..nv {
            s[(i, col)] = 0.5 * t.grad_v[i];
            s[(col, i)] = t.grad_v[i];
        }
        for j in 0..nxg {
            s[(nv + j, col)] = -t.grad_xg[j];
            s[(col, nv + j)] = t.grad_xg[j];
        }
        for p in 0..nt {
            u[(col, p)] = t.rhs_theta[p];
        }
    }
    for (c, (t, &m)) in in_terms.iter().zip(&ineq_rows).enumerate() {
        let col = nx + neq + c;
        let mu = t.multiplier;
        for i in 0..nv {
            s[(i, col)] = 0.5 * t.grad_v[i];
            s[(col, i)] = mu * t.grad_v[i];
        }
        for j in 0..nxg {
            s[(nv + j, col)] = -t.grad_xg[j];
            s[(col, nv + j)] = mu * t.grad_xg[j];
        }
        s[(col, col)] = if class.active.contains(&m) { 0.0 } else { g[m] };
        for p in 0..nt {
            u[(col, p)] = mu * t.rhs_theta[p];
        }
    }
    Ok(KktDiffSystem { s, u, n_x: nx, n_eq: neq, ineq_rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSolution {
    /// Full solution `Γ`, one column per parameter.
    pub gamma: DMatrix<f64>,
    pub rank: usize,
    pub sigma_ratio: f64,
    /// `‖S Γ − U‖_F`
    pub residual: f64,
}

impl KktDiffSystem {
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Right singular vectors of `S` with singular values below
    /// `rtol · σ_max`, as columns.
    pub fn null_space(&self, rtol: f64) -> DMatrix<f64> {
        null_space(&self.s, rtol)
    }

    /// `Γ = S⁻¹ U`, or the minimum-norm least-squares solution when `S`
    /// is numerically singular.
    pub fn solve(&self, rank_rtol: f64) -> SystemSolution {
        let sv = self.s.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let (gamma, rank) = lstsq(&self.s, &self.u, rank_rtol);
        let residual = (&self.s * &gamma - &self.u).norm();
        SystemSolution { gamma, rank, sigma_ratio: if smax > 0.0 { smin / smax } else { 0.0 }, residual }
    }
}

/// Sensitivities of one OPF instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRecord {
    /// `∂[v; x_g]/∂θ`; absent for degenerate or rejected instances.
    pub j_full: Option<DMatrix<f64>>,
    /// `∂(reduced output)/∂θ` in the output layout ordering.
    pub j_out: Option<DMatrix<f64>>,
    /// Multiplier sensitivities `∂[λ; μ_A]/∂θ`; not unique when
    /// `rank_deficient`.
    pub j_dual: Option<DMatrix<f64>>,
    pub rank_deficient: bool,
    pub degenerate: bool,
    /// The system was inconsistent beyond the residual threshold.
    pub rejected: bool,
    pub residual: f64,
    pub sigma_ratio: f64,
    pub classification: Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensitivityOptions {
    pub thresholds: Thresholds,
    pub forms: ConstraintForms,
}

/// `∂|v_n|/∂θ` from the rows `∂v^r_n/∂θ` and `∂v^i_n/∂θ`.
pub fn vmag_chain_rule(vr: f64, vi: f64, dvr: &[f64], dvi: &[f64]) -> Result<Vec<f64>> {
    let mag = vr.hypot(vi);
    if mag < 1e-6 {
        return Err(Error::Sensitivity(format!("voltage magnitude {mag:e} too small for the chain rule")));
    }
    if dvr.len() != dvi.len() {
        return Err(Error::Dimension("chain-rule rows differ in length".into()));
    }
    Ok(dvr.iter().zip(dvi).map(|(a, b)| (vr * a + vi * b) / mag).collect())
}

/// Rows of the reduced output Jacobian from the full primal Jacobian.
pub fn output_jacobian(model: &QcqpModel, v: &[f64], j_full: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let layout = OutputLayout::new(model);
    let nt = j_full.ncols();
    let mut out = DMatrix::zeros(layout.len(), nt);
    for (r, &g) in layout.pg_gens.iter().enumerate() {
        out.row_mut(r).copy_from(&j_full.row(model.n_v() + g));
    }
    let off = layout.pg_gens.len();
    for (r, &g) in layout.vm_gens.iter().enumerate() {
        let k = model.gen_bus[g];
        let dvr: Vec<f64> = j_full.row(k).iter().copied().collect();
        let dvi: Vec<f64> = j_full.row(model.n_bus + k).iter().copied().collect();
        let row = vmag_chain_rule(v[k], v[model.n_bus + k], &dvr, &dvi)?;
        for p in 0..nt {
            out[(off + r, p)] = row[p];
        }
    }
    Ok(out)
}

/// Classification, assembly and solve for one OPF solution.
pub fn solve_sensitivities(model: &QcqpModel, sol: &OpfSolution, theta: &[f64], opts: &SensitivityOptions) -> Result<SensitivityRecord> {
    let class = classify_solution(model, sol, theta, &opts.thresholds)?;
    if class.is_degenerate() {
        return Ok(SensitivityRecord {
            j_full: None,
            j_out: None,
            j_dual: None,
            rank_deficient: false,
            degenerate: true,
            rejected: false,
            residual: 0.0,
            sigma_ratio: 0.0,
            classification: class,
        });
    }
    let sys = assemble_system(model, sol, theta, &class, &opts.forms, false)?;
    let res = sys.solve(opts.thresholds.rank_rtol);
    let rank_deficient = res.rank < sys.dim();
    let rejected = res.residual > opts.thresholds.residual_rel * sys.u.norm() || !res.residual.is_finite();
    let (j_full, j_out, j_dual) = if rejected {
        (None, None, None)
    } else {
        let jf = res.gamma.rows(0, sys.n_x).into_owned();
        let jo = output_jacobian(model, &sol.v, &jf)?;
        let jd = res.gamma.rows(sys.n_x, sys.dim() - sys.n_x).into_owned();
        (Some(jf), Some(jo), Some(jd))
    };
    Ok(SensitivityRecord {
        j_full,
        j_out,
        j_dual,
        rank_deficient,
        degenerate: false,
        rejected,
        residual: res.residual,
        sigma_ratio: res.sigma_ratio,
        classification: class,
    })
}

/// Gradient `(∇_v g, ∇_{x_g} g)` of inequality `m` under the voltage or
/// generator-limit form given by `forms`.
pub fn gradient_variant(model: &QcqpModel, sol: &OpfSolution, m: usize, forms: &ConstraintForms) -> (Vec<f64>, Vec<f64>) {
    let t = inequality_term(model, sol, m, forms);
    (t.grad_v, t.grad_xg)
}

/// Jacobian of the equality and the given inequality constraints with
/// respect to `[v; x_g]`, one row per constraint.
pub fn active_constraint_jacobian(model: &QcqpModel, sol: &OpfSolution, ineq: &[usize]) -> DMatrix<f64> {
    let forms = ConstraintForms::default();
    let (nv, nx) = (model.n_v(), model.n_x());
    let terms: Vec<ConstraintTerm> = (0..model.n_eq())
        .map(|l| equality_term(model, sol, l, &forms))
        .chain(ineq.iter().map(|&m| inequality_term(model, sol, m, &forms)))
        .collect();
    let mut j = DMatrix::zeros(terms.len(), nx);
    for (r, t) in terms.iter().enumerate() {
        for i in 0..nv {
            j[(r, i)] = t.grad_v[i];
        }
        for k in 0..model.n_xg() {
            j[(r, nv + k)] = t.grad_xg[k];
        }
    }
    j
}

/// Columns spanning `{w : Jᵀ w = 0}`: multiplier shifts that leave the
/// stationarity conditions unchanged.
pub fn multiplier_null_space(jac: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let r = jac.nrows();
    let mut jt = DMatrix::zeros(jac.ncols().max(r), r);
    jt.view_mut((0, 0), (jac.ncols(), r)).copy_from(&jac.transpose());
    null_space(&jt, rtol)
}
