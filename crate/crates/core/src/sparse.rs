//! Fixed-pattern sparse matrices backed by faer's sparse LU.
//!
//! The Jacobians assembled here keep the same nonzero pattern for the whole
//! simulation, so the pattern and the symbolic factorization are built once
//! and shared; only values are refreshed per Newton iteration.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::Mat;

use crate::{Error, Result};

#[derive(Debug)]
pub struct SparsePattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    lu: OnceLock<Option<SymbolicLu<usize>>>,
}

impl SparsePattern {
    /// Square pattern from (row, col) pairs; duplicates are merged.
    pub fn new(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let set: BTreeSet<(usize, usize)> = entries.into_iter().map(|(r, c)| (c, r)).collect();
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(set.len());
        for &(c, r) in &set {
            assert!(r < n && c < n, "pattern entry ({r}, {c}) out of bounds for n = {n}");
            col_ptr[c + 1] += 1;
            row_idx.push(r);
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let symbolic =
            SymbolicSparseColMat::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
        SparsePattern { n, col_ptr, row_idx, symbolic, lu: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Storage slot of entry (row, col), if it is part of the pattern.
    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        self.row_idx[lo..hi].binary_search(&row).ok().map(|k| lo + k)
    }

    fn symbolic_lu(&self) -> Option<&SymbolicLu<usize>> {
        self.lu
            .get_or_init(|| SymbolicLu::try_new(self.symbolic.as_ref()).ok())
            .as_ref()
    }
}

/// Square sparse matrix with a shared, immutable pattern.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pattern: Arc<SparsePattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsePattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        SparseMatrix { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `value` at (row, col). Panics if the entry is outside the pattern.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        let slot = self
            .pattern
            .slot(row, col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) not in sparsity pattern"));
        self.values[slot] += value;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.slot(row, col).map_or(0.0, |s| self.values[s])
    }

    /// `self += alpha * other`; both must share the same pattern.
    pub fn add_scaled(&mut self, alpha: f64, other: &SparseMatrix) {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern), "pattern mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Replaces the matrix by its symmetric part, `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let p = &self.pattern;
        let mut out = self.values.clone();
        for c in 0..p.n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                let r = p.row_idx[k];
                if r < c {
                    if let Some(t) = p.slot(c, r) {
                        let avg = 0.5 * (self.values[k] + self.values[t]);
                        out[k] = avg;
                        out[t] = avg;
                    }
                }
            }
        }
        self.values = out;
    }

    /// Replaces rows and columns of `fixed` DOFs by identity rows.
    pub fn pin(&mut self, fixed: &[bool]) {
        let p = &self.pattern;
        for c in 0..p.n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                let r = p.row_idx[k];
                if fixed[r] || fixed[c] {
                    self.values[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// Iterator over stored (row, col, value) entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let p = &self.pattern;
        (0..p.n).flat_map(move |c| {
            (p.col_ptr[c]..p.col_ptr[c + 1]).map(move |k| (p.row_idx[k], c, self.values[k]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for (r, c, v) in self.entries() {
            y[r] += v * x[c];
        }
        y
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim(), self.dim());
        for (r, c, v) in self.entries() {
            m[(r, c)] += v;
        }
        m
    }

    /// Solves `self * x = rhs` by sparse LU with partial pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let p = &self.pattern;
        let symbolic = p.symbolic_lu().ok_or(Error::Singular)?;
        let mat = SparseColMatRef::new(p.symbolic.as_ref(), &self.values);
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), mat).map_err(|_| Error::Singular)?;
        let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        lu.solve_in_place(x.as_mut());
        let out: Vec<f64> = (0..rhs.len()).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Singular)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> SparseMatrix {
        let entries = (0..n).flat_map(|i| {
            let mut v = vec![(i, i)];
            if i > 0 {
                v.push((i, i - 1));
                v.push((i - 1, i));
            }
            v
        });
        let pattern = Arc::new(SparsePattern::new(n, entries));
        let mut m = SparseMatrix::zeros(pattern);
        for i in 0..n {
            m.add(i, i, 4.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
                m.add(i - 1, i, -2.0);
            }
        }
        m
    }

    #[test]
    fn solve_matches_dense() {
        let m = tridiag(12);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin() + 0.5).collect();
        let x = m.solve(&b).unwrap();
        let r = m.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let dense = m.to_dense().lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for (a, d) in x.iter().zip(dense.iter()) {
            assert!((a - d).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetrize_averages_pairs() {
        let mut m = tridiag(4);
        m.symmetrize();
        assert_eq!(m.get(0, 1), -1.5);
        assert_eq!(m.get(1, 0), -1.5);
        assert_eq!(m.get(2, 2), 4.0);
    }

    #[test]
    fn pinned_rows_become_identity() {
        let mut m = tridiag(5);
        let fixed = [false, true, false, false, false];
        m.pin(&fixed);
        assert_eq!(m.get(1, 1), 1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(2, 1), 0.0);
        assert_eq!(m.get(2, 2), 4.0);
    }

    #[test]
    #[should_panic(expected = "not in sparsity pattern")]
    fn add_outside_pattern_panics() {
        let mut m = tridiag(4);
        m.add(0, 3, 1.0);
    }
}
