//! Dense solves shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// LU solve that refuses near-singular systems (pivot ratio below
/// `min_pivot_ratio`) and non-finite results.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>, min_pivot_ratio: f64) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in 0..u.nrows().min(u.ncols()) {
        let p = u[(k, k)].abs();
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if !(hi > 0.0) || lo / hi < min_pivot_ratio {
        return None;
    }
    let x = lu.solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Minimum-norm least-squares solution of `a x = b` through the SVD,
/// discarding singular values below `rtol · σ_max`. Also returns the
/// numerical rank.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = rtol * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let x = svd.solve(b, cut).expect("both factors computed");
    (x, rank)
}

pub fn lstsq_vec(a: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> DVector<f64> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let (x, _) = lstsq(a, &bm, rtol);
    x.column(0).into_owned()
}

/// Right singular vectors of a square matrix with singular values below
/// `rtol · σ_max`, as columns.
pub fn null_space(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s <= rtol * smax)
        .map(|(k, _)| vt.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(a.ncols(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
