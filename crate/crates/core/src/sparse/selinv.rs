//! Selected inverse of an LDL^T-factored matrix (Takahashi recursion).
//!
//! Computes the entries of A^{-1} restricted to the pattern of L plus the
//! diagonal. The fill-path closure of a Cholesky pattern guarantees that all
//! intermediate entries required by the recursion are themselves in the
//! pattern, so no fill beyond L is ever needed.

use crate::sparse::ldl::SparseLdl;

#[derive(Debug, Clone)]
pub struct SelectedInverse {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    /// inverse entries at the strict-lower pattern of L
    zx: Vec<f64>,
    /// inverse diagonal
    zd: Vec<f64>,
}

impl SelectedInverse {
    /// Run the recursion over the factor. O(sum of column-count^2).
    pub fn compute(ldl: &SparseLdl) -> SelectedInverse {
        let n = ldl.dim();
        let lp = ldl.l_colptr().to_vec();
        let li = ldl.l_rowidx().to_vec();
        let lx = ldl.l_values();
        let d = ldl.d_values();
        let mut zx = vec![0.0f64; li.len()];
        let mut zd = vec![0.0f64; n];

        // z lookup for (i, j), i > j, among already-computed columns
        let get = |zx: &[f64], zd: &[f64], i: usize, j: usize| -> f64 {
            if i == j {
                return zd[i];
            }
            let (r, c) = if i > j { (i, j) } else { (j, i) };
            match li[lp[c]..lp[c + 1]].binary_search(&r) {
                Ok(k) => zx[lp[c] + k],
                Err(_) => 0.0,
            }
        };

        let mut gram: Vec<f64> = Vec::new();
        for j in (0..n).rev() {
            let lo = lp[j];
            let hi = lp[j + 1];
            let s = hi - lo;
            if s == 0 {
                zd[j] = 1.0 / d[j];
                continue;
            }
            // gather the s x s block of the inverse over this column's rows
            gram.resize(s * s, 0.0);
            for a in 0..s {
                let ra = li[lo + a];
                gram[a * s + a] = zd[ra];
                for b in (a + 1)..s {
                    let rb = li[lo + b];
                    let v = get(&zx, &zd, rb, ra);
                    gram[a * s + b] = v;
                    gram[b * s + a] = v;
                }
            }
            // off-diagonal entries of column j
            let mut diag_acc = 0.0;
            for a in 0..s {
                let mut acc = 0.0;
                for b in 0..s {
                    acc += lx[lo + b] * gram[b * s + a];
                }
                zx[lo + a] = -acc;
                diag_acc += lx[lo + a] * zx[lo + a];
            }
            zd[j] = 1.0 / d[j] - diag_acc;
        }

        SelectedInverse { n, lp, li, zx, zd }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diag(&self) -> &[f64] {
        &self.zd
    }

    /// Inverse entry (i, j) if it lies on the computed pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(self.zd[i]);
        }
        let (r, c) = if i > j { (i, j) } else { (j, i) };
        match self.li[self.lp[c]..self.lp[c + 1]].binary_search(&r) {
            Ok(k) => Some(self.zx[self.lp[c] + k]),
            Err(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SymTriplets;

    #[test]
    fn selected_inverse_matches_dense_inverse_on_pattern() {
        let n = 10;
        let mut t = SymTriplets::new(n);
        for i in 0..n {
            t.push(i, i, 3.0 + (i as f64) * 0.2);
        }
        for i in 0..n - 1 {
            t.push(i + 1, i, -1.0);
        }
        t.push(7, 2, 0.5);
        t.push(9, 0, -0.25);
        let a = t.build();

        let mut ldl = SparseLdl::analyze(&a);
        ldl.factor(&a, true).unwrap();
        let z = SelectedInverse::compute(&ldl);

        let inv = a.to_dense().try_inverse().unwrap();
        for i in 0..n {
            assert!((z.diag()[i] - inv[(i, i)]).abs() < 1e-10);
        }
        // every pattern entry agrees with the dense inverse
        for j in 0..n {
            for p in ldl.l_colptr()[j]..ldl.l_colptr()[j + 1] {
                let i = ldl.l_rowidx()[p];
                let got = z.get(i, j).unwrap();
                assert!(
                    (got - inv[(i, j)]).abs() < 1e-10,
                    "entry ({i},{j}): {got} vs {}",
                    inv[(i, j)]
                );
            }
        }
    }
}
