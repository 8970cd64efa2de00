//! Problem data for convex QCQPs.
//!
//! ```text
//! minimise    ½ xᵀQx + cᵀx + r
//! subject to  aᵢᵀx = bᵢ                      (equalities)
//!             ½ xᵀPⱼx + qⱼᵀx + sⱼ ≤ 0         (convex quadratic inequalities)
//!             lower ≤ x ≤ upper               (±∞ allowed)
//! ```
//!
//! Matrices are stored sparsely because the receding-horizon problems this
//! crate was written for are block structured: a few dense blocks per time
//! step and a banded coupling between steps.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::QcqpError;

/// Relative eigenvalue tolerance used when checking positive semidefiniteness.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Sparse vector as `(index, value)` pairs. Repeated indices are summed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(entries: Vec<(usize, f64)>) -> Self {
        Self { entries }
    }

    /// Keeps only the nonzero entries of `dense`.
    pub fn from_dense(dense: &[f64]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        Self { entries }
    }

    pub fn push(&mut self, index: usize, value: f64) {
        self.entries.push((index, value));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|(_, v)| *v == 0.0)
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|(i, v)| v * x[*i]).sum()
    }

    /// Adds `scale * self` into `out`.
    pub fn axpy_into(&self, scale: f64, out: &mut [f64]) {
        for (i, v) in &self.entries {
            out[*i] += scale * v;
        }
    }

    /// Entries with duplicates merged, sorted by index, zeros dropped.
    pub fn compressed(&self) -> Vec<(usize, f64)> {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in &self.entries {
            *map.entry(*i).or_insert(0.0) += v;
        }
        map.into_iter().filter(|(_, v)| *v != 0.0).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.compressed().iter().fold(0.0, |m, (_, v)| m.max(v.abs()))
    }

    fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|(i, _)| *i).max()
    }
}

/// Symmetric matrix stored as upper-triangle triplets `(row, col, value)`
/// with `row <= col`. Repeated positions are summed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymMatrix {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `value` at `(i, j)` and, implicitly, at `(j, i)`.
    pub fn push(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push((r, c, value));
    }

    /// Adds a dense symmetric block whose rows and columns map to `vars`.
    /// Only the upper triangle of `block` is read.
    pub fn add_block(&mut self, vars: &[usize], block: &DMatrix<f64>) {
        assert_eq!(block.nrows(), vars.len());
        assert_eq!(block.ncols(), vars.len());
        for a in 0..vars.len() {
            for b in a..vars.len() {
                let v = block[(a, b)];
                if v != 0.0 {
                    self.push(vars[a], vars[b], v);
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|(_, _, v)| *v == 0.0)
    }

    /// `M x` as a dense vector of length `n`.
    pub fn mul(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.mul_add_into(x, &mut out);
        out
    }

    pub fn mul_add_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, j, v) in &self.entries {
            out[*i] += v * x[*j];
            if i != j {
                out[*j] += v * x[*i];
            }
        }
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|(i, j, v)| {
                if i == j {
                    v * x[*i] * x[*i]
                } else {
                    2.0 * v * x[*i] * x[*j]
                }
            })
            .sum()
    }

    /// Upper-triangle entries with duplicates merged and zeros dropped.
    pub fn compressed(&self) -> Vec<(usize, usize, f64)> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, v) in &self.entries {
            *map.entry((*i, *j)).or_insert(0.0) += v;
        }
        map.into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|((i, j), v)| (i, j, v))
            .collect()
    }

    /// Sorted indices touched by a nonzero entry.
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.compressed().iter().flat_map(|(i, j, _)| [*i, *j]).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Dense restriction to the sorted index set `vars`. Entries outside it
    /// are dropped.
    pub fn local_dense(&self, vars: &[usize]) -> DMatrix<f64> {
        let k = vars.len();
        let mut m = DMatrix::zeros(k, k);
        for (i, j, v) in self.compressed() {
            let (Ok(a), Ok(b)) = (vars.binary_search(&i), vars.binary_search(&j)) else {
                continue;
            };
            m[(a, b)] += v;
            if a != b {
                m[(b, a)] += v;
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.compressed().iter().fold(0.0, |m, (_, _, v)| m.max(v.abs()))
    }

    fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|(_, j, _)| *j).max()
    }

    /// Groups the support into connected components of the sparsity graph.
    /// Each group is sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let support = self.support();
        if support.is_empty() {
            return Vec::new();
        }
        let pos = |i: usize| support.binary_search(&i).unwrap();
        let mut parent: Vec<usize> = (0..support.len()).collect();
        fn find(parent: &mut [usize], mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        for (i, j, _) in self.compressed() {
            let (a, b) = (find(&mut parent, pos(i)), find(&mut parent, pos(j)));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, idx) in support.iter().enumerate() {
            let root = find(&mut parent, k);
            groups.entry(root).or_default().push(*idx);
        }
        groups.into_values().collect()
    }

    /// Smallest eigenvalue over all connected components, together with the
    /// largest absolute eigenvalue. Returns `(0, 0)` for an empty matrix.
    pub fn eigen_extremes(&self) -> (f64, f64) {
        let mut min_eig = 0.0_f64;
        let mut max_abs = 0.0_f64;
        for group in self.components() {
            let local = self.local_dense(&group);
            let eig = SymmetricEigen::new(local);
            for &l in eig.eigenvalues.iter() {
                min_eig = min_eig.min(l);
                max_abs = max_abs.max(l.abs());
            }
        }
        (min_eig, max_abs)
    }

    pub fn is_psd(&self) -> bool {
        let (min_eig, max_abs) = self.eigen_extremes();
        min_eig >= -PSD_TOLERANCE * max_abs.max(f64::MIN_POSITIVE)
    }

    /// Factor `M = FᵀF` over the support. Returns the support indices and
    /// `F` with one row per numerically nonzero eigenvalue.
    pub fn psd_factor(&self) -> (Vec<usize>, DMatrix<f64>) {
        let support = self.support();
        if support.is_empty() {
            return (support, DMatrix::zeros(0, 0));
        }
        let local = self.local_dense(&support);
        let eig = SymmetricEigen::new(local);
        let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        let keep: Vec<usize> = (0..support.len())
            .filter(|&k| eig.eigenvalues[k] > PSD_TOLERANCE * max_abs)
            .collect();
        let mut f = DMatrix::zeros(keep.len(), support.len());
        for (row, &k) in keep.iter().enumerate() {
            let scale = eig.eigenvalues[k].sqrt();
            for col in 0..support.len() {
                f[(row, col)] = scale * eig.eigenvectors[(col, k)];
            }
        }
        (support, f)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub q: SymMatrix,
    pub c: Vec<f64>,
    pub r: f64,
}

/// `aᵀx = b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearEq {
    pub a: SparseVec,
    pub b: f64,
}

impl LinearEq {
    pub fn new(a: SparseVec, b: f64) -> Self {
        Self { a, b }
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        self.a.dot(x) - self.b
    }
}

/// `½ xᵀPx + qᵀx + s ≤ 0` with `P` positive semidefinite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadIneq {
    pub p: SymMatrix,
    pub q: SparseVec,
    pub s: f64,
}

impl QuadIneq {
    /// Linear inequality `qᵀx + s ≤ 0`.
    pub fn linear(q: SparseVec, s: f64) -> Self {
        Self {
            p: SymMatrix::new(),
            q,
            s,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.p.quad_form(x) + self.q.dot(x) + self.s
    }

    /// Adds `scale * (P x + q)` into `out`.
    pub fn gradient_axpy(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        for (i, j, v) in &self.p.entries {
            out[*i] += scale * v * x[*j];
            if i != j {
                out[*j] += scale * v * x[*i];
            }
        }
        self.q.axpy_into(scale, out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub n: usize,
    pub objective: Objective,
    pub eq: Vec<LinearEq>,
    pub quad_ineq: Vec<QuadIneq>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QcqpProblem {
    /// Problem with `n` free variables and a zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            objective: Objective {
                q: SymMatrix::new(),
                c: vec![0.0; n],
                r: 0.0,
            },
            eq: Vec::new(),
            quad_ineq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        0.5 * self.objective.q.quad_form(x) + dot(&self.objective.c, x) + self.objective.r
    }

    /// Largest violation over all constraints, in the constraint's own units.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for e in &self.eq {
            worst = worst.max(e.residual(x).abs());
        }
        for c in &self.quad_ineq {
            worst = worst.max(c.value(x));
        }
        for i in 0..self.n {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }

    /// Checks dimensions, finiteness and convexity.
    pub fn validate(&self) -> Result<(), QcqpError> {
        let n = self.n;
        if self.objective.c.len() != n {
            return Err(QcqpError::Dimension(format!(
                "objective c has length {}, expected {n}",
                self.objective.c.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QcqpError::Dimension(format!(
                "bounds have lengths {}/{}, expected {n}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        let out_of_range = |m: Option<usize>| m.is_some_and(|i| i >= n);
        if out_of_range(self.objective.q.max_index()) {
            return Err(QcqpError::Dimension("objective Q index out of range".into()));
        }
        if !self.objective.r.is_finite()
            || self.objective.c.iter().any(|v| !v.is_finite())
            || self.objective.q.entries.iter().any(|e| !e.2.is_finite())
        {
            return Err(QcqpError::NonFinite("objective".into()));
        }
        for (k, e) in self.eq.iter().enumerate() {
            if out_of_range(e.a.max_index()) {
                return Err(QcqpError::Dimension(format!("equality {k} index out of range")));
            }
            if !e.b.is_finite() || e.a.entries.iter().any(|(_, v)| !v.is_finite()) {
                return Err(QcqpError::NonFinite(format!("equality {k}")));
            }
        }
        for (k, c) in self.quad_ineq.iter().enumerate() {
            if out_of_range(c.q.max_index()) || out_of_range(c.p.max_index()) {
                return Err(QcqpError::Dimension(format!("inequality {k} index out of range")));
            }
            if !c.s.is_finite()
                || c.q.entries.iter().any(|(_, v)| !v.is_finite())
                || c.p.entries.iter().any(|e| !e.2.is_finite())
            {
                return Err(QcqpError::NonFinite(format!("inequality {k}")));
            }
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(QcqpError::InvalidBounds { index: i });
            }
            if self.lower[i] == f64::INFINITY || self.upper[i] == f64::NEG_INFINITY {
                return Err(QcqpError::InvalidBounds { index: i });
            }
        }
        let (min_eig, max_abs) = self.objective.q.eigen_extremes();
        if min_eig < -PSD_TOLERANCE * max_abs.max(f64::MIN_POSITIVE) {
            return Err(QcqpError::NotPsd {
                location: "objective".into(),
                min_eigenvalue: min_eig,
            });
        }
        for (k, c) in self.quad_ineq.iter().enumerate() {
            let (min_eig, max_abs) = c.p.eigen_extremes();
            if min_eig < -PSD_TOLERANCE * max_abs.max(f64::MIN_POSITIVE) {
                return Err(QcqpError::NotPsd {
                    location: format!("inequality {k}"),
                    min_eigenvalue: min_eig,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_matrix_products_use_both_triangles() {
        let mut m = SymMatrix::new();
        m.push(0, 0, 2.0);
        m.push(1, 0, 1.0);
        m.push(1, 1, 3.0);
        let x = [1.0, 2.0];
        assert_eq!(m.mul(&x, 2), vec![4.0, 7.0]);
        assert_eq!(m.quad_form(&x), 2.0 + 4.0 + 12.0);
    }

    #[test]
    fn components_split_block_diagonal_patterns() {
        let mut m = SymMatrix::new();
        m.push(0, 2, 1.0);
        m.push(5, 5, 1.0);
        m.push(2, 3, 1.0);
        assert_eq!(m.components(), vec![vec![0, 2, 3], vec![5]]);
    }

    #[test]
    fn psd_factor_reconstructs_matrix() {
        let mut m = SymMatrix::new();
        m.push(3, 3, 2.0);
        m.push(3, 7, 1.0);
        m.push(7, 7, 1.0);
        let (support, f) = m.psd_factor();
        assert_eq!(support, vec![3, 7]);
        let back = f.transpose() * &f;
        let dense = m.local_dense(&support);
        assert!((back - dense).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficient_factor_drops_null_directions() {
        let mut m = SymMatrix::new();
        m.push(0, 0, 1.0);
        m.push(0, 1, 1.0);
        m.push(1, 1, 1.0);
        let (_, f) = m.psd_factor();
        assert_eq!(f.nrows(), 1);
    }

    #[test]
    fn validate_rejects_indefinite_objective() {
        let mut p = QcqpProblem::new(2);
        p.objective.q.push(0, 0, 1.0);
        p.objective.q.push(1, 1, -1.0);
        assert!(matches!(p.validate(), Err(QcqpError::NotPsd { .. })));
    }

    #[test]
    fn validate_rejects_crossed_bounds() {
        let mut p = QcqpProblem::new(1);
        p.lower[0] = 1.0;
        p.upper[0] = 0.0;
        assert!(matches!(p.validate(), Err(QcqpError::InvalidBounds { index: 0 })));
    }
}
