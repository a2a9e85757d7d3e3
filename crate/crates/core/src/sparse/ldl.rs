//! LDL^T factorization of a sparse symmetric matrix.
//!
//! Up-looking algorithm driven by the elimination tree. The symbolic
//! analysis (tree, column counts, transposed upper-triangle access) is
//! computed once from the pattern and reused across numeric refactorizations
//! with identical structure, which is the hot path of the inference engine:
//! the precision pattern never changes across hyperparameter evaluations.

use crate::error::{Error, Result};
use crate::sparse::SparseSym;

#[derive(Debug, Clone)]
pub struct SparseLdl {
    n: usize,
    // row-wise access to the strict upper triangle of A:
    // for row k, columns j < k with A[j,k] != 0 and the slot of that value
    // in A's lower-triangle storage.
    at_ptr: Vec<usize>,
    at_col: Vec<usize>,
    at_pos: Vec<usize>,
    // slot of each diagonal value in A's storage
    diag_pos: Vec<usize>,
    parent: Vec<isize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    numeric_done: bool,
}

impl SparseLdl {
    /// Symbolic analysis of the pattern of `a` (lower-triangle CSC with a
    /// full structural diagonal).
    pub fn analyze(a: &SparseSym) -> Self {
        let n = a.dim();
        let col_ptr = a.col_ptr();
        let row_idx = a.row_idx();

        let mut diag_pos = vec![usize::MAX; n];
        let mut at_count = vec![0usize; n];
        for j in 0..n {
            for p in col_ptr[j]..col_ptr[j + 1] {
                let i = row_idx[p];
                if i == j {
                    diag_pos[j] = p;
                } else {
                    at_count[i] += 1;
                }
            }
        }
        debug_assert!(diag_pos.iter().all(|&p| p != usize::MAX), "missing structural diagonal");

        let mut at_ptr = vec![0usize; n + 1];
        for k in 0..n {
            at_ptr[k + 1] = at_ptr[k] + at_count[k];
        }
        let nnz_strict = at_ptr[n];
        let mut at_col = vec![0usize; nnz_strict];
        let mut at_pos = vec![0usize; nnz_strict];
        let mut fill = at_ptr.clone();
        for j in 0..n {
            for p in col_ptr[j]..col_ptr[j + 1] {
                let i = row_idx[p];
                if i != j {
                    at_col[fill[i]] = j;
                    at_pos[fill[i]] = p;
                    fill[i] += 1;
                }
            }
        }

        // elimination tree and column counts of L
        let mut parent = vec![-1isize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for t in at_ptr[k]..at_ptr[k + 1] {
                let mut i = at_col[t];
                while flag[i] != k {
                    if parent[i] == -1 {
                        parent[i] = k as isize;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i] as usize;
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz_l = lp[n];

        SparseLdl {
            n,
            at_ptr,
            at_col,
            at_pos,
            diag_pos,
            parent,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            numeric_done: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.li.len()
    }

    pub fn l_colptr(&self) -> &[usize] {
        &self.lp
    }

    pub fn l_rowidx(&self) -> &[usize] {
        &self.li
    }

    pub fn l_values(&self) -> &[f64] {
        &self.lx
    }

    pub fn d_values(&self) -> &[f64] {
        &self.d
    }

    /// Numeric factorization A = L D L'. `a` must have the analyzed pattern.
    ///
    /// Fails on a zero, negative or non-finite pivot when `require_pd`;
    /// callers add diagonal regularization and retry.
    pub fn factor(&mut self, a: &SparseSym, require_pd: bool) -> Result<()> {
        let n = self.n;
        let avals = a.values();
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnext: Vec<usize> = self.lp[..n].to_vec();

        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            y[k] = avals[self.diag_pos[k]];
            for t in self.at_ptr[k]..self.at_ptr[k + 1] {
                let j = self.at_col[t];
                y[j] = avals[self.at_pos[t]];
                let mut len = 0usize;
                let mut i = j;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = self.parent[i] as usize;
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = pattern[len];
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for t in top..n {
                let j = stack[t];
                let yj = y[j];
                y[j] = 0.0;
                let p2 = lnext[j];
                for p in self.lp[j]..p2 {
                    y[self.li[p]] -= self.lx[p] * yj;
                }
                let lkj = yj / self.d[j];
                dk -= lkj * yj;
                self.li[p2] = k;
                self.lx[p2] = lkj;
                lnext[j] += 1;
            }
            if !dk.is_finite() || (require_pd && dk <= 0.0) {
                return Err(Error::numeric(format!(
                    "LDL pivot {dk:.3e} at index {k} of {n}"
                )));
            }
            self.d[k] = dk;
        }
        self.numeric_done = true;
        Ok(())
    }

    /// log det A = sum of log pivots (valid after a positive-definite factor).
    pub fn log_det(&self) -> f64 {
        debug_assert!(self.numeric_done);
        self.d.iter().map(|&v| v.ln()).sum()
    }

    pub fn min_pivot(&self) -> f64 {
        self.d.iter().fold(f64::INFINITY, |a, &v| a.min(v))
    }

    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert!(self.numeric_done);
        debug_assert_eq!(b.len(), self.n);
        // L y = b
        for j in 0..self.n {
            let bj = b[j];
            if bj != 0.0 {
                for p in self.lp[j]..self.lp[j + 1] {
                    b[self.li[p]] -= self.lx[p] * bj;
                }
            }
        }
        // D z = y
        for j in 0..self.n {
            b[j] /= self.d[j];
        }
        // L' x = z
        for j in (0..self.n).rev() {
            let mut bj = b[j];
            for p in self.lp[j]..self.lp[j + 1] {
                bj -= self.lx[p] * b[self.li[p]];
            }
            b[j] = bj;
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SymTriplets;

    fn spd_test_matrix(n: usize) -> SparseSym {
        // second-difference penalty plus a ridge: strictly PD, banded
        let mut t = SymTriplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.5 + 0.1 * (i as f64));
        }
        for i in 0..n - 1 {
            t.push(i + 1, i, -1.0);
        }
        for i in 0..n - 2 {
            t.push(i + 2, i, 0.25);
        }
        t.build()
    }

    #[test]
    fn factor_and_solve_match_dense() {
        let a = spd_test_matrix(12);
        let mut ldl = SparseLdl::analyze(&a);
        ldl.factor(&a, true).unwrap();

        let dense = a.to_dense();
        let b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        let x = ldl.solve(&b);
        let xd = dense
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&b))
            .unwrap();
        for i in 0..12 {
            assert!((x[i] - xd[i]).abs() < 1e-10, "x[{i}] {} vs {}", x[i], xd[i]);
        }

        let logdet_dense = dense.lu().determinant().ln();
        assert!((ldl.log_det() - logdet_dense).abs() < 1e-9);
    }

    #[test]
    fn refactor_with_same_pattern_reuses_symbolic() {
        let a = spd_test_matrix(20);
        let mut ldl = SparseLdl::analyze(&a);
        ldl.factor(&a, true).unwrap();
        let d1 = ldl.log_det();

        let mut a2 = a.clone();
        for v in a2.values_mut() {
            *v *= 2.0;
        }
        ldl.factor(&a2, true).unwrap();
        let d2 = ldl.log_det();
        assert!((d2 - (d1 + 20.0 * 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut t = SymTriplets::new(2);
        t.push(0, 0, 1.0);
        t.push(1, 1, -1.0);
        let a = t.build();
        let mut ldl = SparseLdl::analyze(&a);
        assert!(ldl.factor(&a, true).is_err());
    }
}
