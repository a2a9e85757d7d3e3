//! Sparse symmetric matrices and factorizations.
//!
//! Everything the inference core needs from linear algebra lives here:
//! a compressed-column symmetric storage ([`SparseSym`], lower triangle),
//! a triplet assembler with a reusable scatter map so precision matrices can
//! be refilled without re-sorting, an LDL^T factorization with cached
//! symbolic analysis ([`ldl::SparseLdl`]), a reverse Cuthill-McKee ordering,
//! and the Takahashi selected-inverse recursion ([`selinv`]).

pub mod ldl;
pub mod selinv;

use crate::error::{Error, Result};

/// Symmetric sparse matrix, lower triangle stored in compressed-column form.
///
/// Row indices within a column are strictly ascending and every diagonal
/// entry is structurally present (explicit zero if numerically absent);
/// the factorization and the selected-inverse recursion rely on both.
#[derive(Debug, Clone)]
pub struct SparseSym {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_lower(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Entry (i, j); either triangle may be addressed.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let lo = self.col_ptr[c];
        let hi = self.col_ptr[c + 1];
        match self.row_idx[lo..hi].binary_search(&r) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// y += alpha * A x, using symmetry.
    pub fn mul_add(&self, x: &[f64], y: &mut [f64], alpha: f64) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                let v = alpha * self.values[k];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
    }

    /// x' A x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                let v = self.values[k];
                acc += if i == j {
                    v * x[i] * x[i]
                } else {
                    2.0 * v * x[i] * x[j]
                };
            }
        }
        acc
    }

    /// Infinity norm of A v over the columns of a dense matrix `v` (n x m,
    /// column-major).
    pub fn kernel_residual(&self, v: &[f64], m: usize) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..m {
            let col = &v[c * self.n..(c + 1) * self.n];
            let mut y = vec![0.0; self.n];
            self.mul_add(col, &mut y, 1.0);
            for &e in &y {
                worst = worst.max(e.abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    pub fn max_diag(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.n {
            let k = self.col_ptr[j];
            if k < self.col_ptr[j + 1] && self.row_idx[k] == j {
                m = m.max(self.values[k].abs());
            }
        }
        m
    }

    /// Dense lower-triangle expansion (small matrices / oracles only).
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                d[(i, j)] = self.values[k];
                d[(j, i)] = self.values[k];
            }
        }
        d
    }

    /// Symmetric permutation B = P A P'; `perm.perm[new] = old`.
    ///
    /// The returned pattern depends only on the input pattern and the
    /// permutation, so a [`ScatterMap`] built against it stays valid across
    /// refills.
    pub fn permute_sym(&self, perm: &Permutation) -> SparseSym {
        let n = self.n;
        let mut t = SymTriplets::new(n);
        for j in 0..n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                t.push(perm.inv[i], perm.inv[j], self.values[k]);
            }
        }
        t.build()
    }

    /// Adjacency lists of the off-diagonal pattern (undirected).
    pub fn pattern_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// MatrixMarket coordinate text (symmetric), for external inspection.
    pub fn to_matrix_market(&self) -> String {
        let mut out = String::new();
        out.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
        out.push_str(&format!("{} {} {}\n", self.n, self.n, self.nnz_lower()));
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out.push_str(&format!("{} {} {:e}\n", self.row_idx[k] + 1, j + 1, self.values[k]));
            }
        }
        out
    }
}

/// Triplet accumulator for symmetric matrices.
///
/// Entries may be pushed in any order and in either triangle; duplicates sum.
#[derive(Debug, Clone)]
pub struct SymTriplets {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymTriplets {
    pub fn new(n: usize) -> Self {
        SymTriplets { n, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn build(&self) -> SparseSym {
        self.build_with_map().0
    }

    /// Build the matrix and a scatter map from triplet order to value slots,
    /// so later refills with the same pattern skip sorting entirely.
    ///
    /// A structural diagonal entry is inserted in every column; the diagonal
    /// is always the first slot of its column.
    pub fn build_with_map(&self) -> (SparseSym, ScatterMap) {
        let n = self.n;
        let m = self.vals.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_unstable_by_key(|&k| (self.cols[k], self.rows[k]));

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx: Vec<usize> = Vec::with_capacity(m + n);
        let mut values: Vec<f64> = Vec::with_capacity(m + n);
        let mut slot_of_triplet = vec![0usize; m];

        let mut pos = 0usize;
        for j in 0..n {
            col_ptr[j] = row_idx.len();
            // sorted order puts diagonal triplets (row == col) first in the column
            let mut have_diag = false;
            while pos < m && self.cols[order[pos]] == j {
                let k = order[pos];
                let r = self.rows[k];
                if r == j {
                    have_diag = true;
                } else if !have_diag {
                    row_idx.push(j);
                    values.push(0.0);
                    have_diag = true;
                }
                if row_idx.len() > col_ptr[j] && *row_idx.last().unwrap() == r {
                    slot_of_triplet[k] = values.len() - 1;
                    *values.last_mut().unwrap() += self.vals[k];
                } else {
                    row_idx.push(r);
                    values.push(self.vals[k]);
                    slot_of_triplet[k] = values.len() - 1;
                }
                pos += 1;
            }
            if !have_diag {
                row_idx.push(j);
                values.push(0.0);
            }
        }
        col_ptr[n] = row_idx.len();

        let nnz = values.len();
        let mat = SparseSym { n, col_ptr, row_idx, values };
        (mat, ScatterMap { slot_of_triplet, nnz })
    }
}

/// Maps triplet positions to value slots of a built [`SparseSym`].
#[derive(Debug, Clone)]
pub struct ScatterMap {
    slot_of_triplet: Vec<usize>,
    nnz: usize,
}

impl ScatterMap {
    /// Refill `target` values from per-triplet values (same pattern as built).
    pub fn refill(&self, triplet_vals: &[f64], target: &mut SparseSym) {
        assert_eq!(triplet_vals.len(), self.slot_of_triplet.len());
        assert_eq!(target.values.len(), self.nnz);
        for v in target.values.iter_mut() {
            *v = 0.0;
        }
        for (k, &v) in triplet_vals.iter().enumerate() {
            target.values[self.slot_of_triplet[k]] += v;
        }
    }
}

/// Symmetric permutation; `perm[new] = old`, `inv[old] = new`.
#[derive(Debug, Clone)]
pub struct Permutation {
    pub perm: Vec<usize>,
    pub inv: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        let perm: Vec<usize> = (0..n).collect();
        Permutation { inv: perm.clone(), perm }
    }

    pub fn from_new_to_old(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(Error::numeric("invalid permutation"));
            }
            inv[old] = new;
        }
        Ok(Permutation { perm, inv })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Gather a vector from natural order into permuted order.
    pub fn gather(&self, x: &[f64], out: &mut [f64]) {
        for (new, &old) in self.perm.iter().enumerate() {
            out[new] = x[old];
        }
    }

    /// Scatter a permuted-order vector back to natural order.
    pub fn scatter(&self, x: &[f64], out: &mut [f64]) {
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
    }
}

/// Reverse Cuthill-McKee ordering of an undirected adjacency structure.
///
/// Ties break on vertex index, so the ordering is deterministic.
pub fn rcm_order(adj: &[Vec<usize>]) -> Permutation {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let degree = |v: usize| adj[v].len();

    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_unstable_by_key(|&v| (degree(v), v));

    for &seed in &seeds {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_unstable_by_key(|&u| (degree(u), u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    Permutation::from_new_to_old(order).expect("rcm produced a bijection")
}

/// Concatenate per-block orderings into one permutation over the union.
///
/// `blocks` are disjoint index sets in natural order; each block is ordered
/// internally by RCM over the induced pattern, and blocks are laid out in the
/// order given. Indices not covered by any block are appended last.
pub fn block_rcm_order(n: usize, adj: &[Vec<usize>], blocks: &[Vec<usize>]) -> Permutation {
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut taken = vec![false; n];
    for block in blocks {
        // induced adjacency within the block
        let mut local_of = std::collections::HashMap::new();
        for (k, &v) in block.iter().enumerate() {
            local_of.insert(v, k);
        }
        let mut local_adj = vec![Vec::new(); block.len()];
        for (k, &v) in block.iter().enumerate() {
            for &u in &adj[v] {
                if let Some(&l) = local_of.get(&u) {
                    local_adj[k].push(l);
                }
            }
        }
        let p = rcm_order(&local_adj);
        for &l in &p.perm {
            let v = block[l];
            debug_assert!(!taken[v]);
            taken[v] = true;
            order.push(v);
        }
    }
    for v in 0..n {
        if !taken[v] {
            order.push(v);
        }
    }
    Permutation::from_new_to_old(order).expect("block ordering is a bijection")
}
