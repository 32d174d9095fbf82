//! Sparse symmetric matrices used as quadratic forms `vᵀ M v`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Symmetric sparse matrix stored as its upper triangle (`row <= col`).
///
/// Entries are kept sorted and deduplicated, so two forms built from the
/// same stamps compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymQuad {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymQuad {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Builds a form from arbitrary (row, col, value) stamps of a possibly
    /// non-symmetric matrix `C`; the stored matrix is `(C + Cᵀ)/2`.
    pub fn from_stamps(dim: usize, stamps: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, val) in stamps {
            assert!(i < dim && j < dim, "stamp ({i},{j}) outside {dim}x{dim}");
            if i == j {
                *acc.entry((i, i)).or_insert(0.0) += val;
            } else {
                let key = (i.min(j), i.max(j));
                // off-diagonal stamp contributes half to each mirrored position
                *acc.entry(key).or_insert(0.0) += 0.5 * val;
            }
        }
        let entries = acc.into_iter().filter(|&(_, v)| v != 0.0).map(|((i, j), v)| (i, j, v)).collect();
        Self { dim, entries }
    }

    /// `e_i e_iᵀ`-style diagonal selector.
    pub fn diagonal(dim: usize, diag: &[(usize, f64)]) -> Self {
        Self::from_stamps(dim, diag.iter().map(|&(i, v)| (i, i, v)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Upper-triangle entries `(i, j, m_ij)` with `i <= j`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, j, v)| (i, j, alpha * v)).collect(),
        }
    }

    /// `vᵀ M v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, m)| if i == j { m * v[i] * v[i] } else { 2.0 * m * v[i] * v[j] })
            .sum()
    }

    /// `vᵀ M w` for symmetric M.
    pub fn bilinear(&self, v: &[f64], w: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, m)| if i == j { m * v[i] * w[i] } else { m * (v[i] * w[j] + v[j] * w[i]) })
            .sum()
    }

    /// `M v`.
    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mul_add_into(v, 1.0, &mut out);
        out
    }

    /// `out += alpha · M v`.
    pub fn mul_add_into(&self, v: &[f64], alpha: f64, out: &mut [f64]) {
        for &(i, j, m) in &self.entries {
            out[i] += alpha * m * v[j];
            if i != j {
                out[j] += alpha * m * v[i];
            }
        }
    }

    /// `dense[offset.., offset..] += alpha · M`.
    pub fn add_to_dense(&self, dense: &mut DMatrix<f64>, offset: usize, alpha: f64) {
        for &(i, j, m) in &self.entries {
            dense[(offset + i, offset + j)] += alpha * m;
            if i != j {
                dense[(offset + j, offset + i)] += alpha * m;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.dim, self.dim);
        self.add_to_dense(&mut d, 0, 1.0);
        d
    }

    /// Indices touched by the form (row or column of some nonzero).
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.entries.iter().flat_map(|&(i, j, _)| [i, j]).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrizes_off_diagonal_stamps() {
        let q = SymQuad::from_stamps(2, [(0, 1, 2.0)]);
        let d = q.to_dense();
        assert_eq!(d[(0, 1)], 1.0);
        assert_eq!(d[(1, 0)], 1.0);
        assert_eq!(q.quad(&[1.0, 3.0]), 6.0);
    }

    #[test]
    fn quad_matches_dense_product() {
        let q = SymQuad::from_stamps(3, [(0, 0, 1.5), (0, 2, -1.0), (2, 1, 0.25), (1, 1, 2.0)]);
        let v = [0.3, -1.2, 0.7];
        let d = q.to_dense();
        let dv = nalgebra::DVector::from_column_slice(&v);
        let expected = dv.dot(&(&d * &dv));
        assert!((q.quad(&v) - expected).abs() < 1e-14);
        let mv = q.mul(&v);
        let dmv = &d * &dv;
        for k in 0..3 {
            assert!((mv[k] - dmv[k]).abs() < 1e-14);
        }
        assert!((q.bilinear(&v, &v) - expected).abs() < 1e-14);
    }
}
