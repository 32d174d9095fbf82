//! Quadratic forms of the AC power-flow equations in rectangular voltage
//! coordinates and the standard-form parametric QCQP built from them.
//!
//! The voltage vector is `v = [vr; vi]` of length `2 N_b`; the generator
//! vector is `x_g = [p_g; q_g]` of length `2 N_g`.

use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::quad::SymQuad;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Injection, magnitude and current forms for every bus and branch.
#[derive(Debug, Clone)]
pub struct QuadForms {
    pub n_bus: usize,
    pub mp: Vec<SymQuad>,
    pub mq: Vec<SymQuad>,
    pub mv: Vec<SymQuad>,
    /// Squared series current of each branch.
    pub mi: Vec<SymQuad>,
    /// Selector of the reference bus' imaginary voltage.
    pub mref: SymQuad,
}

pub fn build_quadforms(net: &Network) -> QuadForms {
    let nb = net.n_bus();
    let dim = 2 * nb;
    let y = net.y();
    let mut mp = Vec::with_capacity(nb);
    let mut mq = Vec::with_capacity(nb);
    for n in 0..nb {
        let (rn, in_) = (n, nb + n);
        let mut sp = Vec::new();
        let mut sq = Vec::new();
        for k in 0..nb {
            let (g, b) = (y[(n, k)].re, y[(n, k)].im);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let (rk, ik) = (k, nb + k);
            sp.extend([(rn, rk, g), (rn, ik, -b), (in_, ik, g), (in_, rk, b)]);
            sq.extend([(in_, rk, g), (in_, ik, -b), (rn, ik, -g), (rn, rk, -b)]);
        }
        mp.push(SymQuad::from_stamps(dim, sp));
        mq.push(SymQuad::from_stamps(dim, sq));
    }
    let mv = (0..nb).map(|n| SymQuad::diagonal(dim, &[(n, 1.0), (nb + n, 1.0)])).collect();
    let mi = (0..net.n_branch())
        .map(|e| {
            let (m, n) = net.branch_ends(e);
            let w = net.branches[e].series_admittance().norm_sqr();
            SymQuad::from_stamps(
                dim,
                [
                    (m, m, w),
                    (n, n, w),
                    (m, n, -2.0 * w),
                    (nb + m, nb + m, w),
                    (nb + n, nb + n, w),
                    (nb + m, nb + n, -2.0 * w),
                ],
            )
        })
        .collect();
    let mref = SymQuad::diagonal(dim, &[(nb + net.slack_index(), 1.0)]);
    QuadForms { n_bus: nb, mp, mq, mv, mi, mref }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadQuantity {
    P,
    Q,
}

/// One entry of the parameter vector: a demand at a bus (by id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub bus: usize,
    pub quantity: LoadQuantity,
}

/// Which demands are entries of θ, in order. Demands not listed stay at
/// their nominal value and enter the model as constants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub entries: Vec<ParamEntry>,
}

impl ParamSpec {
    /// Active demands at every bus without a generator (bus order), then
    /// the reactive demands at the same buses.
    pub fn load_buses(net: &Network) -> Self {
        let ids: Vec<usize> = net.load_bus_indices().into_iter().map(|k| net.buses[k].id).collect();
        let entries = ids
            .iter()
            .map(|&bus| ParamEntry { bus, quantity: LoadQuantity::P })
            .chain(ids.iter().map(|&bus| ParamEntry { bus, quantity: LoadQuantity::Q }))
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Demands from the case data, in parameter order.
    pub fn nominal(&self, net: &Network) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| {
                let b = &net.buses[net.bus_index(e.bus).expect("validated param bus")];
                match e.quantity {
                    LoadQuantity::P => b.pd,
                    LoadQuantity::Q => b.qd,
                }
            })
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| match e.quantity {
                LoadQuantity::P => format!("pd{}", e.bus),
                LoadQuantity::Q => format!("qd{}", e.bus),
            })
            .collect()
    }

    fn position(&self, bus: usize, q: LoadQuantity) -> Option<usize> {
        self.entries.iter().position(|e| e.bus == bus && e.quantity == q)
    }

    fn validate(&self, net: &Network) -> Result<()> {
        for (k, e) in self.entries.iter().enumerate() {
            if net.bus_index(e.bus).is_none() {
                return Err(Error::Model(format!("parameter {k} refers to unknown bus {}", e.bus)));
            }
            if self.entries[..k].contains(e) {
                return Err(Error::Model(format!("parameter {k} duplicates an earlier entry")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum EqKind {
    PBalance { bus: usize },
    QBalance { bus: usize },
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum IneqKind {
    PgUpper { gen: usize },
    PgLower { gen: usize },
    QgUpper { gen: usize },
    QgLower { gen: usize },
    VUpper { bus: usize },
    VLower { bus: usize },
    Flow { branch: usize },
}

/// `vᵀ L v = aᵀ x_g + bᵀ θ + c`
#[derive(Debug, Clone)]
pub struct EqRow {
    pub kind: EqKind,
    pub quad: SymQuad,
    pub a: Vec<(usize, f64)>,
    pub b: Vec<(usize, f64)>,
    /// Contribution of fixed (non-parameter) demand.
    pub c: f64,
}

/// `vᵀ M v ≤ dᵀ θ + f`; `f = +∞` for an unlimited branch.
#[derive(Debug, Clone)]
pub struct IneqRow {
    pub kind: IneqKind,
    pub quad: SymQuad,
    pub d: Vec<(usize, f64)>,
    pub f: f64,
}

/// Standard-form parametric QCQP. Bus and generator indices are positions
/// in the network's collections.
#[derive(Debug, Clone)]
pub struct QcqpModel {
    pub n_bus: usize,
    pub n_gen: usize,
    pub slack: usize,
    pub slack_gen: usize,
    pub gen_bus: Vec<usize>,
    pub eq: Vec<EqRow>,
    pub ineq: Vec<IneqRow>,
    /// Cost per unit of `x_g`, divided by `cost_scale`.
    pub a0: Vec<f64>,
    pub cost_scale: f64,
    pub params: ParamSpec,
    pub vmin: Vec<f64>,
    pub vmax: Vec<f64>,
}

pub fn assemble_qcqp(net: &Network, forms: &QuadForms, params: &ParamSpec) -> Result<QcqpModel> {
    params.validate(net)?;
    let nb = net.n_bus();
    let ng = net.n_gen();
    let slack = net.slack_index();
    let slack_gen = net
        .slack_gen()
        .ok_or_else(|| Error::Model(format!("reference bus {} hosts no generator", net.slack_bus)))?;
    let gen_bus: Vec<usize> = (0..ng).map(|g| net.gen_bus_index(g)).collect();

    // demand at bus k: either a parameter column or a constant
    let demand = |k: usize, q: LoadQuantity| -> (Option<usize>, f64) {
        let b = &net.buses[k];
        match params.position(b.id, q) {
            Some(p) => (Some(p), 0.0),
            None => (None, if q == LoadQuantity::P { b.pd } else { b.qd }),
        }
    };

    let mut eq = Vec::with_capacity(2 * nb + 1);
    for (quantity, forms_q) in [(LoadQuantity::P, &forms.mp), (LoadQuantity::Q, &forms.mq)] {
        for k in 0..nb {
            let (col, fixed) = demand(k, quantity);
            let a = match net.gen_at(k) {
                Some(g) if quantity == LoadQuantity::P => vec![(g, 1.0)],
                Some(g) => vec![(ng + g, 1.0)],
                None => vec![],
            };
            let kind = match quantity {
                LoadQuantity::P => EqKind::PBalance { bus: k },
                LoadQuantity::Q => EqKind::QBalance { bus: k },
            };
            eq.push(EqRow { kind, quad: forms_q[k].clone(), a, b: col.map(|p| vec![(p, -1.0)]).unwrap_or_default(), c: -fixed });
        }
    }
    eq.push(EqRow { kind: EqKind::Reference, quad: forms.mref.clone(), a: vec![], b: vec![], c: 0.0 });

    let mut ineq = Vec::with_capacity(4 * ng + 2 * nb + net.n_branch());
    for g in 0..ng {
        let k = gen_bus[g];
        let gen = &net.generators[g];
        for (quantity, form, lo, hi) in [
            (LoadQuantity::P, &forms.mp[k], gen.pmin, gen.pmax),
            (LoadQuantity::Q, &forms.mq[k], gen.qmin, gen.qmax),
        ] {
            let (col, fixed) = demand(k, quantity);
            // injection + demand ≤ hi  and  lo ≤ injection + demand
            let (up, dn) = match quantity {
                LoadQuantity::P => (IneqKind::PgUpper { gen: g }, IneqKind::PgLower { gen: g }),
                LoadQuantity::Q => (IneqKind::QgUpper { gen: g }, IneqKind::QgLower { gen: g }),
            };
            ineq.push(IneqRow { kind: up, quad: form.clone(), d: col.map(|p| vec![(p, -1.0)]).unwrap_or_default(), f: hi - fixed });
            ineq.push(IneqRow { kind: dn, quad: form.scaled(-1.0), d: col.map(|p| vec![(p, 1.0)]).unwrap_or_default(), f: fixed - lo });
        }
    }
    for k in 0..nb {
        let b = &net.buses[k];
        ineq.push(IneqRow { kind: IneqKind::VUpper { bus: k }, quad: forms.mv[k].clone(), d: vec![], f: b.vmax * b.vmax });
        ineq.push(IneqRow { kind: IneqKind::VLower { bus: k }, quad: forms.mv[k].scaled(-1.0), d: vec![], f: if b.vmin > 0.0 { -b.vmin * b.vmin } else { f64::INFINITY } });
    }
    for (e, br) in net.branches.iter().enumerate() {
        ineq.push(IneqRow { kind: IneqKind::Flow { branch: e }, quad: forms.mi[e].clone(), d: vec![], f: br.imax.unwrap_or(f64::INFINITY) });
    }

    let raw_cost: Vec<f64> = net.generators.iter().map(|g| g.cp).chain(net.generators.iter().map(|g| g.cq)).collect();
    let scale = raw_cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let cost_scale = if scale > 0.0 { scale } else { 1.0 };
    let a0 = raw_cost.iter().map(|c| c / cost_scale).collect();

    Ok(QcqpModel {
        n_bus: nb,
        n_gen: ng,
        slack,
        slack_gen,
        gen_bus,
        eq,
        ineq,
        a0,
        cost_scale,
        params: params.clone(),
        vmin: net.buses.iter().map(|b| b.vmin).collect(),
        vmax: net.buses.iter().map(|b| b.vmax).collect(),
    })
}

impl QcqpModel {
    /// Convenience: forms and model with θ = demands at all load buses.
    pub fn from_network(net: &Network) -> Result<Self> {
        assemble_qcqp(net, &build_quadforms(net), &ParamSpec::load_buses(net))
    }

    pub fn n_v(&self) -> usize {
        2 * self.n_bus
    }

    pub fn n_xg(&self) -> usize {
        2 * self.n_gen
    }

    pub fn n_x(&self) -> usize {
        self.n_v() + self.n_xg()
    }

    pub fn n_theta(&self) -> usize {
        self.params.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq.len()
    }

    /// Position of the reference equality row.
    pub fn ref_row(&self) -> usize {
        2 * self.n_bus
    }

    /// Position of the imaginary voltage of the reference bus in `v`.
    pub fn ref_coord(&self) -> usize {
        self.n_bus + self.slack
    }

    pub fn pg_upper(&self, g: usize) -> usize {
        4 * g
    }

    pub fn pg_lower(&self, g: usize) -> usize {
        4 * g + 1
    }

    pub fn qg_upper(&self, g: usize) -> usize {
        4 * g + 2
    }

    pub fn qg_lower(&self, g: usize) -> usize {
        4 * g + 3
    }

    pub fn v_upper(&self, k: usize) -> usize {
        4 * self.n_gen + 2 * k
    }

    pub fn v_lower(&self, k: usize) -> usize {
        4 * self.n_gen + 2 * k + 1
    }

    pub fn flow(&self, e: usize) -> usize {
        4 * self.n_gen + 2 * self.n_bus + e
    }

    pub fn check_dims(&self, v: &[f64], xg: &[f64], theta: &[f64]) -> Result<()> {
        if v.len() != self.n_v() || xg.len() != self.n_xg() || theta.len() != self.n_theta() {
            return Err(Error::Dimension(format!(
                "expected v/x_g/θ of length {}/{}/{}, got {}/{}/{}",
                self.n_v(),
                self.n_xg(),
                self.n_theta(),
                v.len(),
                xg.len(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// Right-hand side `aᵀ x_g + bᵀ θ + c` of equality `l`.
    pub fn eq_rhs(&self, l: usize, xg: &[f64], theta: &[f64]) -> f64 {
        let r = &self.eq[l];
        r.a.iter().map(|&(j, a)| a * xg[j]).sum::<f64>() + r.b.iter().map(|&(p, b)| b * theta[p]).sum::<f64>() + r.c
    }

    /// Right-hand side `dᵀ θ + f` of inequality `m`.
    pub fn ineq_rhs(&self, m: usize, theta: &[f64]) -> f64 {
        let r = &self.ineq[m];
        r.d.iter().map(|&(p, d)| d * theta[p]).sum::<f64>() + r.f
    }

    /// Equality residuals `h` and inequality values `g` (`g ≤ 0` feasible).
    pub fn eval_constraints(&self, v: &[f64], xg: &[f64], theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(v, xg, theta)?;
        let h = (0..self.n_eq()).map(|l| self.eq[l].quad.quad(v) - self.eq_rhs(l, xg, theta)).collect();
        let g = (0..self.n_ineq()).map(|m| self.ineq[m].quad.quad(v) - self.ineq_rhs(m, theta)).collect();
        Ok((h, g))
    }

    /// Objective in $/h.
    pub fn objective(&self, xg: &[f64]) -> f64 {
        self.cost_scale * self.a0.iter().zip(xg).map(|(a, x)| a * x).sum::<f64>()
    }

    /// Injection assignment matrix over `x_g` (`L × 2N_g`, last row zero).
    pub fn matrix_a(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_eq(), self.n_xg());
        for (l, r) in self.eq.iter().enumerate() {
            for &(j, val) in &r.a {
                a[(l, j)] += val;
            }
        }
        a
    }

    /// Injection assignment matrix over θ (`L × dim θ`).
    pub fn matrix_b(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n_eq(), self.n_theta());
        for (l, r) in self.eq.iter().enumerate() {
            for &(p, val) in &r.b {
                b[(l, p)] += val;
            }
        }
        b
    }

    /// `M × dim θ` matrix whose row `m` is `d_mᵀ`.
    pub fn matrix_d(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_ineq(), self.n_theta());
        for (m, r) in self.ineq.iter().enumerate() {
            for &(p, val) in &r.d {
                d[(m, p)] += val;
            }
        }
        d
    }

    /// Plain-text dump: one record per constraint.
    ///
    /// ```text
    /// eq <index> <kind> c=<c> a=<j:val,...> b=<p:val,...> quad=<i:j:val,...>
    /// ineq <index> <kind> f=<f> d=<p:val,...> quad=<i:j:val,...>
    /// ```
    /// Quadratic entries list the upper triangle of the symmetric matrix.
    pub fn dump_text(&self) -> String {
        fn sparse(v: &[(usize, f64)]) -> String {
            v.iter().map(|(j, x)| format!("{j}:{x:e}")).collect::<Vec<_>>().join(",")
        }
        fn quad(q: &SymQuad) -> String {
            q.entries().iter().map(|(i, j, x)| format!("{i}:{j}:{x:e}")).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "qcqp n_bus={} n_gen={} n_theta={} L={} M={} cost_scale={:e}",
            self.n_bus,
            self.n_gen,
            self.n_theta(),
            self.n_eq(),
            self.n_ineq(),
            self.cost_scale
        );
        let _ = writeln!(s, "a0 {}", self.a0.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(","));
        for (l, r) in self.eq.iter().enumerate() {
            let _ = writeln!(s, "eq {l} {:?} c={:e} a={} b={} quad={}", r.kind, r.c, sparse(&r.a), sparse(&r.b), quad(&r.quad));
        }
        for (m, r) in self.ineq.iter().enumerate() {
            let _ = writeln!(s, "ineq {m} {:?} f={:e} d={} quad={}", r.kind, r.f, sparse(&r.d), quad(&r.quad));
        }
        s
    }
}

/// Generator setpoints a predictor outputs: active power of every
/// non-reference generator, then voltage magnitude at every generator bus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputLayout {
    pub pg_gens: Vec<usize>,
    pub vm_gens: Vec<usize>,
}

impl OutputLayout {
    pub fn new(model: &QcqpModel) -> Self {
        Self {
            pg_gens: (0..model.n_gen).filter(|&g| g != model.slack_gen).collect(),
            vm_gens: (0..model.n_gen).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pg_gens.len() + self.vm_gens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self, net: &Network) -> Vec<String> {
        let bus = |g: usize| net.generators[g].bus;
        self.pg_gens
            .iter()
            .map(|&g| format!("pg{}", bus(g)))
            .chain(self.vm_gens.iter().map(|&g| format!("vm{}", bus(g))))
            .collect()
    }

    pub fn extract(&self, model: &QcqpModel, v: &[f64], xg: &[f64]) -> Vec<f64> {
        let nb = model.n_bus;
        self.pg_gens
            .iter()
            .map(|&g| xg[g])
            .chain(self.vm_gens.iter().map(|&g| {
                let k = model.gen_bus[g];
                v[k].hypot(v[nb + k])
            }))
            .collect()
    }

    /// Box limits `(lo, hi)` of every output.
    pub fn bounds(&self, net: &Network) -> (Vec<f64>, Vec<f64>) {
        let vlim = |g: usize| {
            let b = &net.buses[net.gen_bus_index(g)];
            (b.vmin, b.vmax)
        };
        let lo = self.pg_gens.iter().map(|&g| net.generators[g].pmin).chain(self.vm_gens.iter().map(|&g| vlim(g).0)).collect();
        let hi = self.pg_gens.iter().map(|&g| net.generators[g].pmax).chain(self.vm_gens.iter().map(|&g| vlim(g).1)).collect();
        (lo, hi)
    }
}
