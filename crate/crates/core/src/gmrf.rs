//! Intrinsic GMRF structure matrices: spatial CAR, temporal random walks,
//! Kronecker space-time interactions, variance scaling, and the sum-to-zero
//! constraint sets each interaction type requires.
//!
//! Unknown ordering convention used throughout the crate: the interaction
//! vector is laid out area-fastest, index `t * n + i` for area i at time t,
//! matching the Kronecker products `R_temporal (x) R_spatial`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AreaGraph;
use crate::sparse::{ldl::SparseLdl, rcm_order, selinv::SelectedInverse, SparseSym, SymTriplets};

/// A sparse kernel vector: (index, value) pairs, ascending indices.
pub type SparseVec = Vec<(usize, f64)>;

/// Sparse symmetric positive-semidefinite structure matrix with its declared
/// rank deficiency and a basis of the null space.
#[derive(Debug, Clone)]
pub struct StructureMatrix {
    dim: usize,
    entries: SparseSym,
    rank_deficiency: usize,
    null_basis: Vec<SparseVec>,
    /// log of the product of nonzero eigenvalues
    log_gdet: f64,
    /// connected-component label per index of the pattern (None when the
    /// matrix is not graph-structured)
    components: Option<Vec<usize>>,
}

impl StructureMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &SparseSym {
        &self.entries
    }

    pub fn rank_deficiency(&self) -> usize {
        self.rank_deficiency
    }

    pub fn rank(&self) -> usize {
        self.dim - self.rank_deficiency
    }

    pub fn null_basis(&self) -> &[SparseVec] {
        &self.null_basis
    }

    pub fn log_gdet(&self) -> f64 {
        self.log_gdet
    }

    pub fn components(&self) -> Option<&[usize]> {
        self.components.as_deref()
    }

    pub fn n_components(&self) -> usize {
        self.components
            .as_ref()
            .map(|c| c.iter().copied().max().map_or(0, |m| m + 1))
            .unwrap_or(1)
    }

    /// Dense expansion of the null basis (columns span the kernel).
    pub fn null_basis_dense(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.dim, self.rank_deficiency);
        for (c, col) in self.null_basis.iter().enumerate() {
            for &(i, x) in col {
                v[(i, c)] = x;
            }
        }
        v
    }

    /// max_i |(R v)_i| over all null-basis columns, relative to max |R|.
    pub fn kernel_residual_rel(&self) -> f64 {
        let scale = self.entries.max_abs().max(1e-300);
        let mut worst = 0.0f64;
        for col in &self.null_basis {
            let mut x = vec![0.0; self.dim];
            for &(i, v) in col {
                x[i] = v;
            }
            let mut y = vec![0.0; self.dim];
            self.entries.mul_add(&x, &mut y, 1.0);
            for &e in &y {
                worst = worst.max(e.abs());
            }
        }
        worst / scale
    }

    /// Identity structure of the given dimension (proper, empty kernel).
    pub fn identity(dim: usize) -> StructureMatrix {
        let mut t = SymTriplets::new(dim);
        for i in 0..dim {
            t.push(i, i, 1.0);
        }
        StructureMatrix {
            dim,
            entries: t.build(),
            rank_deficiency: 0,
            null_basis: Vec::new(),
            log_gdet: 0.0,
            components: None,
        }
    }

    /// MatrixMarket text export for inspection.
    pub fn to_matrix_market(&self) -> String {
        self.entries.to_matrix_market()
    }
}

/// Order of the temporal random-walk penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RwOrder {
    Rw1,
    Rw2,
}

/// Space-time interaction type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InteractionType {
    I,
    II,
    III,
    IV,
}

impl std::fmt::Display for InteractionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            InteractionType::I => "I",
            InteractionType::II => "II",
            InteractionType::III => "III",
            InteractionType::IV => "IV",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for InteractionType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_uppercase().as_str() {
            "I" | "1" => Ok(InteractionType::I),
            "II" | "2" => Ok(InteractionType::II),
            "III" | "3" => Ok(InteractionType::III),
            "IV" | "4" => Ok(InteractionType::IV),
            other => Err(Error::config(format!("unknown interaction type {other:?}"))),
        }
    }
}

/// Spatial structure matrix of an adjacency graph: degree matrix minus
/// adjacency. Rank deficiency equals the number of connected components and
/// the kernel is spanned by the component indicator vectors.
pub fn spatial_structure(g: &AreaGraph) -> StructureMatrix {
    let n = g.n();
    assert!(n > 0, "empty graph");
    let mut t = SymTriplets::new(n);
    for i in 0..n {
        t.push(i, i, g.degree(i) as f64);
    }
    for &(a, b) in g.edges() {
        t.push(a, b, -1.0);
    }
    let entries = t.build();

    let comp = g.connected_components();
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut null_basis: Vec<SparseVec> = vec![Vec::new(); n_comp];
    for (i, &c) in comp.iter().enumerate() {
        null_basis[c].push((i, 1.0));
    }

    let log_gdet = laplacian_log_gdet(&entries, &comp, n_comp);

    StructureMatrix {
        dim: n,
        entries,
        rank_deficiency: n_comp,
        null_basis,
        log_gdet,
        components: Some(comp),
    }
}

/// log generalized determinant of a graph Laplacian, componentwise: the
/// product of nonzero eigenvalues of a connected component equals m times the
/// determinant of the component grounded at one vertex (matrix-tree theorem).
fn laplacian_log_gdet(entries: &SparseSym, comp: &[usize], n_comp: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..n_comp {
        let members: Vec<usize> = (0..entries.dim()).filter(|&i| comp[i] == c).collect();
        let m = members.len();
        if m <= 1 {
            continue; // singleton: zero matrix, empty nonzero spectrum
        }
        let grounded = extract_principal(entries, &members[..m - 1]);
        let perm = rcm_order(&grounded.pattern_adjacency());
        let pg = grounded.permute_sym(&perm);
        let mut ldl = SparseLdl::analyze(&pg);
        ldl.factor(&pg, true).expect("grounded component Laplacian is positive definite");
        total += (m as f64).ln() + ldl.log_det();
    }
    total
}

/// Principal submatrix over `keep` (parent indices, ascending).
fn extract_principal(a: &SparseSym, keep: &[usize]) -> SparseSym {
    let mut local = std::collections::HashMap::new();
    for (l, &g) in keep.iter().enumerate() {
        local.insert(g, l);
    }
    let mut t = SymTriplets::new(keep.len());
    for (l, &g) in keep.iter().enumerate() {
        for p in a.col_ptr()[g]..a.col_ptr()[g + 1] {
            let r = a.row_idx()[p];
            if let Some(&lr) = local.get(&r) {
                // lower triangle entries only; (r >= g) by storage
                t.push(lr, l, a.values()[p]);
            }
        }
        let _ = l;
    }
    t.build()
}

/// Temporal random-walk structure matrix of order 1 or 2.
pub fn rw_structure(t_len: usize, order: RwOrder) -> Result<StructureMatrix> {
    let ord = match order {
        RwOrder::Rw1 => 1,
        RwOrder::Rw2 => 2,
    };
    if t_len < ord + 1 {
        return Err(Error::model(format!(
            "random walk of order {ord} needs at least {} time points, got {t_len}",
            ord + 1
        )));
    }
    let mut t = SymTriplets::new(t_len);
    match order {
        RwOrder::Rw1 => {
            for i in 0..t_len - 1 {
                t.push(i, i, 1.0);
                t.push(i + 1, i + 1, 1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        RwOrder::Rw2 => {
            // D2' D2 with D2 the (T-2) x T second-difference operator
            for r in 0..t_len - 2 {
                let idx = [r, r + 1, r + 2];
                let coef = [1.0, -2.0, 1.0];
                for a in 0..3 {
                    for b in a..3 {
                        t.push(idx[b], idx[a], coef[a] * coef[b]);
                    }
                }
            }
        }
    }
    let entries = t.build();

    let null_basis: Vec<SparseVec> = match order {
        RwOrder::Rw1 => vec![(0..t_len).map(|i| (i, 1.0)).collect()],
        RwOrder::Rw2 => vec![
            (0..t_len).map(|i| (i, 1.0)).collect(),
            (0..t_len).map(|i| (i, (i + 1) as f64)).collect(),
        ],
    };

    let log_gdet = match order {
        RwOrder::Rw1 => {
            // path Laplacian: one spanning tree
            (t_len as f64).ln()
        }
        RwOrder::Rw2 => {
            let dense = entries.to_dense();
            let eig = dense.symmetric_eigen();
            let maxev = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
            eig.eigenvalues
                .iter()
                .filter(|&&v| v > 1e-10 * maxev)
                .map(|v| v.ln())
                .sum()
        }
    };

    Ok(StructureMatrix {
        dim: t_len,
        entries,
        rank_deficiency: ord,
        null_basis,
        log_gdet,
        components: None,
    })
}

/// Kronecker space-time interaction structure.
///
/// Type I: identity; Type II: R_temporal (x) I_n; Type III: I_T (x)
/// R_spatial; Type IV: R_temporal (x) R_spatial. Rank follows the Kronecker
/// rank rule rank(A (x) B) = rank(A) rank(B).
pub fn interaction_structure(
    spatial: &StructureMatrix,
    temporal: &StructureMatrix,
    ty: InteractionType,
) -> StructureMatrix {
    let n = spatial.dim();
    let t_len = temporal.dim();
    let dim = n * t_len;

    match ty {
        InteractionType::I => StructureMatrix::identity(dim),
        InteractionType::II => {
            // kron(R_t, I_n): entry ((t2*n+i),(t1*n+i)) = Rt[t2,t1]
            let rt = &temporal.entries;
            let mut tr = SymTriplets::new(dim);
            for c in 0..t_len {
                for p in rt.col_ptr()[c]..rt.col_ptr()[c + 1] {
                    let r = rt.row_idx()[p];
                    let v = rt.values()[p];
                    for i in 0..n {
                        tr.push(r * n + i, c * n + i, v);
                    }
                }
            }
            let entries = tr.build();
            let def = temporal.rank_deficiency() * n;
            let mut null_basis = Vec::with_capacity(def);
            for u in temporal.null_basis() {
                for i in 0..n {
                    null_basis.push(u.iter().map(|&(t, v)| (t * n + i, v)).collect());
                }
            }
            let log_gdet = (n as f64) * temporal.log_gdet();
            StructureMatrix { dim, entries, rank_deficiency: def, null_basis, log_gdet, components: None }
        }
        InteractionType::III => {
            // kron(I_T, R_s): block diagonal copies of R_s
            let rs = &spatial.entries;
            let mut tr = SymTriplets::new(dim);
            for t in 0..t_len {
                let off = t * n;
                for c in 0..n {
                    for p in rs.col_ptr()[c]..rs.col_ptr()[c + 1] {
                        tr.push(off + rs.row_idx()[p], off + c, rs.values()[p]);
                    }
                }
            }
            let entries = tr.build();
            let def = t_len * spatial.rank_deficiency();
            let mut null_basis = Vec::with_capacity(def);
            for t in 0..t_len {
                for w in spatial.null_basis() {
                    null_basis.push(w.iter().map(|&(i, v)| (t * n + i, v)).collect());
                }
            }
            let log_gdet = (t_len as f64) * spatial.log_gdet();
            StructureMatrix { dim, entries, rank_deficiency: def, null_basis, log_gdet, components: None }
        }
        InteractionType::IV => {
            let rt = &temporal.entries;
            let rs = &spatial.entries;
            let mut tr = SymTriplets::new(dim);
            // iterate both triangles of R_t, lower triangle of the product
            for c in 0..t_len {
                for p in rt.col_ptr()[c]..rt.col_ptr()[c + 1] {
                    let r = rt.row_idx()[p];
                    let vt = rt.values()[p];
                    for (tr_, tc, vt) in if r == c {
                        vec![(r, c, vt)]
                    } else {
                        vec![(r, c, vt), (c, r, vt)]
                    } {
                        for cs in 0..n {
                            for ps in rs.col_ptr()[cs]..rs.col_ptr()[cs + 1] {
                                let rs_i = rs.row_idx()[ps];
                                let vs = rs.values()[ps];
                                let (gi, gj) = (tr_ * n + rs_i, tc * n + cs);
                                if gi >= gj {
                                    tr.push(gi, gj, vt * vs);
                                }
                                if rs_i != cs {
                                    let (gi, gj) = (tr_ * n + cs, tc * n + rs_i);
                                    if gi >= gj {
                                        tr.push(gi, gj, vt * vs);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let entries = tr.build();
            let def_t = temporal.rank_deficiency();
            let def_s = spatial.rank_deficiency();
            let def = dim - (t_len - def_t) * (n - def_s);

            // kernel: ker(R_t) (x) R^n plus a complement of ker(R_t) tensor ker(R_s)
            let mut null_basis: Vec<SparseVec> = Vec::with_capacity(def);
            for u in temporal.null_basis() {
                for i in 0..n {
                    null_basis.push(u.iter().map(|&(t, v)| (t * n + i, v)).collect());
                }
            }
            let complement = kernel_complement(t_len, temporal.null_basis());
            for q in &complement {
                for w in spatial.null_basis() {
                    let mut col: SparseVec = Vec::new();
                    for &(t, qv) in q {
                        for &(i, wv) in w {
                            col.push((t * n + i, qv * wv));
                        }
                    }
                    col.sort_unstable_by_key(|&(i, _)| i);
                    null_basis.push(col);
                }
            }
            debug_assert_eq!(null_basis.len(), def);

            let log_gdet = (n - def_s) as f64 * temporal.log_gdet()
                + (t_len - def_t) as f64 * spatial.log_gdet();
            StructureMatrix { dim, entries, rank_deficiency: def, null_basis, log_gdet, components: None }
        }
    }
}

/// Orthonormal basis of the orthogonal complement of `kernel` in R^dim,
/// built by Gram-Schmidt over projected unit vectors. Deterministic.
fn kernel_complement(dim: usize, kernel: &[SparseVec]) -> Vec<SparseVec> {
    let mut dense_kernel: Vec<Vec<f64>> = Vec::new();
    for col in kernel {
        let mut v = vec![0.0; dim];
        for &(i, x) in col {
            v[i] = x;
        }
        // orthonormalize the kernel itself first
        for q in &dense_kernel {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= dot * b;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for a in &mut v {
                *a /= norm;
            }
            dense_kernel.push(v);
        }
    }
    let want = dim - dense_kernel.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(want);
    for e in 0..dim {
        if basis.len() == want {
            break;
        }
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        for q in dense_kernel.iter().chain(basis.iter()) {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= dot * b;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for a in &mut v {
                *a /= norm;
            }
            basis.push(v);
        }
    }
    basis
        .into_iter()
        .map(|v| {
            v.into_iter()
                .enumerate()
                .filter(|&(_, x)| x != 0.0)
                .collect::<SparseVec>()
        })
        .collect()
}

/// A structure matrix together with the factor that gives its generalized
/// inverse unit geometric-mean marginal variance under sum-to-zero
/// conditioning.
#[derive(Debug, Clone)]
pub struct ScaledStructure {
    pub matrix: StructureMatrix,
    /// geometric mean of the per-component factors
    pub scale_factor: f64,
    pub component_factors: Vec<f64>,
}

/// Marginal variances of the intrinsic GMRF with precision `r`, conditioned
/// on its kernel (sum-to-zero within each component).
///
/// Exact computation through a grounded generalized inverse: each component
/// is grounded at as many trailing vertices as its local kernel dimension,
/// solved by sparse LDL^T with a Takahashi selected inverse, then projected
/// onto the kernel complement.
pub fn conditional_variances(r: &StructureMatrix) -> Result<Vec<f64>> {
    let n = r.dim();
    let mut out = vec![0.0; n];

    if r.rank_deficiency() == 0 {
        let perm = rcm_order(&r.entries.pattern_adjacency());
        let pm = r.entries.permute_sym(&perm);
        let mut ldl = SparseLdl::analyze(&pm);
        ldl.factor(&pm, true)
            .map_err(|e| Error::numeric(format!("proper structure not PD: {e}")))?;
        let z = SelectedInverse::compute(&ldl);
        for i in 0..n {
            out[i] = z.diag()[perm.inv[i]];
        }
        return Ok(out);
    }

    // group indices by pattern component
    let comp = match r.components() {
        Some(c) => c.to_vec(),
        None => pattern_components(&r.entries),
    };
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    for c in 0..n_comp {
        let members: Vec<usize> = (0..n).filter(|&i| comp[i] == c).collect();
        let m = members.len();
        // local kernel columns supported on this component
        let local_kernel: Vec<Vec<f64>> = r
            .null_basis()
            .iter()
            .filter(|col| col.iter().any(|&(i, _)| comp[i] == c))
            .map(|col| {
                let mut v = vec![0.0; m];
                for &(i, x) in col {
                    if comp[i] == c {
                        let l = members.binary_search(&i).unwrap();
                        v[l] = x;
                    }
                }
                v
            })
            .collect();
        let rk = local_kernel.len();
        if rk == 0 {
            // proper block
            let sub = extract_principal(&r.entries, &members);
            let perm = rcm_order(&sub.pattern_adjacency());
            let pm = sub.permute_sym(&perm);
            let mut ldl = SparseLdl::analyze(&pm);
            ldl.factor(&pm, true)
                .map_err(|e| Error::numeric(format!("component not PD: {e}")))?;
            let z = SelectedInverse::compute(&ldl);
            for (l, &g) in members.iter().enumerate() {
                out[g] = z.diag()[perm.inv[l]];
            }
            continue;
        }
        if m == rk {
            // fully degenerate block (e.g. singleton island): no structure
            for &g in &members {
                out[g] = f64::NAN;
            }
            continue;
        }
        // ground the last rk vertices; kernel rows there must be invertible
        let keep = &members[..m - rk];
        let v_drop = DMatrix::from_fn(rk, rk, |a, b| local_kernel[b][m - rk + a]);
        if v_drop.clone().lu().determinant().abs() < 1e-10 {
            return Err(Error::numeric(
                "kernel basis singular at grounding vertices; reorder the structure",
            ));
        }
        let sub = extract_principal(&r.entries, keep);
        let perm = rcm_order(&sub.pattern_adjacency());
        let pm = sub.permute_sym(&perm);
        let mut ldl = SparseLdl::analyze(&pm);
        ldl.factor(&pm, true)
            .map_err(|e| Error::numeric(format!("grounded component not PD: {e}")))?;
        let z = SelectedInverse::compute(&ldl);

        // W = G V (zero rows at grounded vertices), M = V'V, K = M^{-1} V'W M^{-1}
        let kept = m - rk;
        let mut w = DMatrix::zeros(m, rk);
        for b in 0..rk {
            let mut rhs = vec![0.0; kept];
            for l in 0..kept {
                rhs[perm.inv[l]] = local_kernel[b][l];
            }
            ldl.solve_in_place(&mut rhs);
            for l in 0..kept {
                w[(l, b)] = rhs[perm.inv[l]];
            }
        }
        let v = DMatrix::from_fn(m, rk, |a, b| local_kernel[b][a]);
        let mm = v.transpose() * &v;
        let m_inv = mm.try_inverse().ok_or_else(|| Error::numeric("kernel Gram singular"))?;
        let vtw = v.transpose() * &w;
        let k = &m_inv * &vtw * &m_inv;

        for (l, &g) in members.iter().enumerate() {
            let g_ll = if l < kept { z.diag()[perm.inv[l]] } else { 0.0 };
            let w_l = w.row(l);
            let v_l = v.row(l);
            let cross = (w_l * &m_inv * v_l.transpose())[(0, 0)];
            let quad = (v_l * &k * v_l.transpose())[(0, 0)];
            out[g] = g_ll - 2.0 * cross + quad;
        }
    }
    Ok(out)
}

fn pattern_components(a: &SparseSym) -> Vec<usize> {
    let adj = a.pattern_adjacency();
    let n = a.dim();
    let mut comp = vec![usize::MAX; n];
    let mut c = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = c;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if comp[u] == usize::MAX {
                    comp[u] = c;
                    stack.push(u);
                }
            }
        }
        c += 1;
    }
    comp
}

/// Scale a structure matrix so the geometric mean of its conditional
/// marginal variances is one, componentwise.
pub fn scale_structure(r: &StructureMatrix) -> Result<ScaledStructure> {
    let n = r.dim();
    let variances = conditional_variances(r)?;
    let comp = match r.components() {
        Some(c) => c.to_vec(),
        None => pattern_components(&r.entries),
    };
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);

    let mut factors = vec![1.0f64; n_comp];
    let mut log_gdet_delta = 0.0;
    for c in 0..n_comp {
        let members: Vec<usize> = (0..n).filter(|&i| comp[i] == c).collect();
        let vals: Vec<f64> = members.iter().map(|&i| variances[i]).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            factors[c] = 1.0; // degenerate (island) component left untouched
            continue;
        }
        if vals.iter().any(|&v| v <= 0.0) {
            return Err(Error::numeric("nonpositive conditional variance while scaling"));
        }
        let gm = (vals.iter().map(|v| v.ln()).sum::<f64>() / vals.len() as f64).exp();
        factors[c] = gm;
        // local rank: component size minus local kernel columns
        let local_def = r
            .null_basis()
            .iter()
            .filter(|col| col.iter().any(|&(i, _)| comp[i] == c))
            .count();
        log_gdet_delta += (members.len() - local_def) as f64 * gm.ln();
    }

    let mut entries = r.entries.clone();
    {
        let (col_ptr, row_idx) = (entries.col_ptr().to_vec(), entries.row_idx().to_vec());
        let values = entries.values_mut();
        for j in 0..n {
            for p in col_ptr[j]..col_ptr[j + 1] {
                let i = row_idx[p];
                debug_assert_eq!(comp[i], comp[j]);
                values[p] *= factors[comp[j]];
            }
        }
    }

    let matrix = StructureMatrix {
        dim: n,
        entries,
        rank_deficiency: r.rank_deficiency,
        null_basis: r.null_basis.clone(),
        log_gdet: r.log_gdet + log_gdet_delta,
        components: Some(comp),
    };
    let scale_factor = (factors.iter().map(|f| f.ln()).sum::<f64>() / factors.len() as f64).exp();
    Ok(ScaledStructure { matrix, scale_factor, component_factors: factors })
}

/// Latent block a constraint row acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintBlock {
    Spatial,
    Temporal,
    Interaction,
}

/// One sum-to-zero row, indexed locally within its block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub block: ConstraintBlock,
    pub entries: Vec<(usize, f64)>,
}

/// The identifiability constraints for a model with n areas, T periods and a
/// given interaction type. Rows are linearly independent by construction;
/// the Type IV redundancy is resolved by dropping the last per-time row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub n: usize,
    pub t_len: usize,
    pub interaction: InteractionType,
    pub rows: Vec<ConstraintRow>,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense expansion over (spatial n | temporal T | interaction nT) for
    /// rank checks.
    pub fn to_dense_blocks(&self) -> DMatrix<f64> {
        let dim = self.n + self.t_len + self.n * self.t_len;
        let mut a = DMatrix::zeros(self.rows.len(), dim);
        for (r, row) in self.rows.iter().enumerate() {
            let off = match row.block {
                ConstraintBlock::Spatial => 0,
                ConstraintBlock::Temporal => self.n,
                ConstraintBlock::Interaction => self.n + self.t_len,
            };
            for &(i, v) in &row.entries {
                a[(r, off + i)] = v;
            }
        }
        a
    }
}

/// Sum-to-zero constraint rows for each interaction type: one row over the
/// spatial effect, one over the temporal effect, and the interaction rows
/// (grand sum for Type I, per-area time sums for Type II, per-time area sums
/// for Type III, both with one redundant row dropped for Type IV).
pub fn constraints_for(ty: InteractionType, n: usize, t_len: usize) -> ConstraintSet {
    assert!(n >= 2 && t_len >= 2, "constraints need n, T >= 2");
    let mut rows = Vec::new();
    rows.push(ConstraintRow {
        block: ConstraintBlock::Spatial,
        entries: (0..n).map(|i| (i, 1.0)).collect(),
    });
    rows.push(ConstraintRow {
        block: ConstraintBlock::Temporal,
        entries: (0..t_len).map(|t| (t, 1.0)).collect(),
    });
    match ty {
        InteractionType::I => {
            rows.push(ConstraintRow {
                block: ConstraintBlock::Interaction,
                entries: (0..n * t_len).map(|k| (k, 1.0)).collect(),
            });
        }
        InteractionType::II => {
            for i in 0..n {
                rows.push(ConstraintRow {
                    block: ConstraintBlock::Interaction,
                    entries: (0..t_len).map(|t| (t * n + i, 1.0)).collect(),
                });
            }
        }
        InteractionType::III => {
            for t in 0..t_len {
                rows.push(ConstraintRow {
                    block: ConstraintBlock::Interaction,
                    entries: (0..n).map(|i| (t * n + i, 1.0)).collect(),
                });
            }
        }
        InteractionType::IV => {
            for i in 0..n {
                rows.push(ConstraintRow {
                    block: ConstraintBlock::Interaction,
                    entries: (0..t_len).map(|t| (t * n + i, 1.0)).collect(),
                });
            }
            // per-time rows; the last one is linearly dependent on the rest
            for t in 0..t_len - 1 {
                rows.push(ConstraintRow {
                    block: ConstraintBlock::Interaction,
                    entries: (0..n).map(|i| (t * n + i, 1.0)).collect(),
                });
            }
        }
    }
    ConstraintSet { n, t_len, interaction: ty, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AreaGraph;
    use approx::assert_relative_eq;

    fn path(n: usize) -> AreaGraph {
        let ids = (0..n).map(|i| format!("a{i}")).collect();
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        AreaGraph::new(ids, edges).unwrap()
    }

    fn rook_grid(s: usize) -> AreaGraph {
        let ids = (0..s * s).map(|i| format!("g{i}")).collect();
        let mut edges = Vec::new();
        for r in 0..s {
            for c in 0..s {
                let v = r * s + c;
                if c + 1 < s {
                    edges.push((v, v + 1));
                }
                if r + 1 < s {
                    edges.push((v, v + s));
                }
            }
        }
        AreaGraph::new(ids, edges).unwrap()
    }

    #[test]
    fn spatial_structure_path3_exact() {
        let r = spatial_structure(&path(3));
        let expect = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.entries().get(i, j), expect[i][j]);
            }
        }
        assert_eq!(r.rank_deficiency(), 1);
        // row sums exactly zero
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| r.entries().get(i, j)).sum();
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn spatial_structure_two_dyads_deficiency_two() {
        let g = AreaGraph::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![(0, 1), (2, 3)],
        )
        .unwrap();
        let r = spatial_structure(&g);
        assert_eq!(r.rank_deficiency(), 2);
        assert!(r.kernel_residual_rel() <= 1e-8);
    }

    #[test]
    fn spatial_structure_grid_rank_matches_dense() {
        let r = spatial_structure(&rook_grid(4));
        let dense = r.entries().to_dense();
        let eig = dense.symmetric_eigen();
        let maxev = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
        let rank = eig.eigenvalues.iter().filter(|&&v| v > 1e-10 * maxev).count();
        assert_eq!(rank, 15);
        assert_eq!(r.rank(), 15);
        // generalized determinant agrees with the dense spectrum
        let gdet: f64 = eig
            .eigenvalues
            .iter()
            .filter(|&&v| v > 1e-10 * maxev)
            .map(|v| v.ln())
            .sum();
        assert_relative_eq!(r.log_gdet(), gdet, epsilon = 1e-8);
    }

    #[test]
    fn rw1_t3_exact() {
        let r = rw_structure(3, RwOrder::Rw1).unwrap();
        let expect = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.entries().get(i, j), expect[i][j]);
            }
        }
        assert_eq!(r.rank_deficiency(), 1);
    }

    #[test]
    fn rw2_t4_exact() {
        let r = rw_structure(4, RwOrder::Rw2).unwrap();
        let expect = [
            [1.0, -2.0, 1.0, 0.0],
            [-2.0, 5.0, -4.0, 1.0],
            [1.0, -4.0, 5.0, -2.0],
            [0.0, 1.0, -2.0, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.entries().get(i, j), expect[i][j]);
            }
        }
        assert_eq!(r.rank_deficiency(), 2);
        assert!(r.kernel_residual_rel() <= 1e-8);
    }

    #[test]
    fn rw_kernels_match_svd_oracle() {
        for (t_len, order) in [(5, RwOrder::Rw1), (7, RwOrder::Rw2)] {
            let r = rw_structure(t_len, order).unwrap();
            let dense = r.entries().to_dense();
            let svd = dense.svd(true, true);
            let tol = 1e-10 * svd.singular_values.max();
            let null_dim = svd.singular_values.iter().filter(|&&s| s <= tol).count();
            assert_eq!(null_dim, r.rank_deficiency());
            // declared kernel annihilated
            assert!(r.kernel_residual_rel() <= 1e-10);
        }
    }

    #[test]
    fn rw_too_short_errors() {
        assert!(rw_structure(1, RwOrder::Rw1).is_err());
        assert!(rw_structure(2, RwOrder::Rw2).is_err());
    }

    #[test]
    fn interaction_type1_is_identity() {
        let rs = spatial_structure(&path(3));
        let rt = rw_structure(2, RwOrder::Rw1).unwrap();
        let r = interaction_structure(&rs, &rt, InteractionType::I);
        assert_eq!(r.dim(), 6);
        assert_eq!(r.rank_deficiency(), 0);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(r.entries().get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn interaction_type4_rank_rule() {
        let rs = spatial_structure(&rook_grid(4).with_partition(vec![1; 16]).unwrap());
        // n=10 connected path also fine; replicate the documented case
        let rs10 = spatial_structure(&path(10));
        let rt5 = rw_structure(5, RwOrder::Rw1).unwrap();
        let r = interaction_structure(&rs10, &rt5, InteractionType::IV);
        assert_eq!(r.dim(), 50);
        assert_eq!(r.rank(), 36);
        assert_eq!(r.rank_deficiency(), 14);
        assert!(r.kernel_residual_rel() <= 1e-8);
        let _ = rs;
    }

    #[test]
    fn interaction_type2_matches_dense_kronecker() {
        let rs = spatial_structure(&path(3));
        let rt = rw_structure(3, RwOrder::Rw1).unwrap();
        let r = interaction_structure(&rs, &rt, InteractionType::II);
        let dt = rt.entries().to_dense();
        let n = 3;
        for a in 0..9 {
            for b in 0..9 {
                let (ta, ia) = (a / n, a % n);
                let (tb, ib) = (b / n, b % n);
                let expect = if ia == ib { dt[(ta, tb)] } else { 0.0 };
                assert_relative_eq!(r.entries().get(a, b), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn interaction_type4_matches_dense_kronecker() {
        let rs = spatial_structure(&path(3));
        let rt = rw_structure(3, RwOrder::Rw1).unwrap();
        let r = interaction_structure(&rs, &rt, InteractionType::IV);
        let ds = rs.entries().to_dense();
        let dt = rt.entries().to_dense();
        let n = 3;
        for a in 0..9 {
            for b in 0..9 {
                let (ta, ia) = (a / n, a % n);
                let (tb, ib) = (b / n, b % n);
                assert_relative_eq!(
                    r.entries().get(a, b),
                    dt[(ta, tb)] * ds[(ia, ib)],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn scale_identity_is_unit() {
        let r = StructureMatrix::identity(5);
        let s = scale_structure(&r).unwrap();
        assert_relative_eq!(s.scale_factor, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scale_path3_matches_pseudoinverse_oracle() {
        let r = spatial_structure(&path(3));
        let s = scale_structure(&r).unwrap();
        // dense pseudo-inverse oracle
        let dense = r.entries().to_dense();
        let eig = dense.symmetric_eigen();
        let mut pinv = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let ev = eig.eigenvalues[k];
            if ev > 1e-10 {
                let v = eig.eigenvectors.column(k);
                pinv += DMatrix::from_fn(3, 3, |i, j| v[i] * v[j] / ev);
            }
        }
        let gm = ((0..3).map(|i| pinv[(i, i)].ln()).sum::<f64>() / 3.0).exp();
        assert_relative_eq!(s.scale_factor, gm, epsilon = 1e-8);
        // scaled structure now has unit geometric mean variance
        let v = conditional_variances(&s.matrix).unwrap();
        let gm2 = (v.iter().map(|x| x.ln()).sum::<f64>() / 3.0).exp();
        assert_relative_eq!(gm2, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn scale_is_idempotent() {
        for g in [path(6), rook_grid(3)] {
            let r = spatial_structure(&g);
            let s1 = scale_structure(&r).unwrap();
            let s2 = scale_structure(&s1.matrix).unwrap();
            assert_relative_eq!(s2.scale_factor, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn scale_multi_component_per_component() {
        let g = AreaGraph::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
            vec![(0, 1), (2, 3), (3, 4)],
        )
        .unwrap();
        let r = spatial_structure(&g);
        let s = scale_structure(&r).unwrap();
        assert_eq!(s.component_factors.len(), 2);
        let v = conditional_variances(&s.matrix).unwrap();
        // per-component unit geometric mean
        let gm1 = ((v[0].ln() + v[1].ln()) / 2.0).exp();
        let gm2 = ((v[2].ln() + v[3].ln() + v[4].ln()) / 3.0).exp();
        assert_relative_eq!(gm1, 1.0, epsilon = 1e-6);
        assert_relative_eq!(gm2, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn constraint_counts_per_type() {
        assert_eq!(constraints_for(InteractionType::I, 4, 5).len(), 3);
        assert_eq!(constraints_for(InteractionType::II, 4, 5).len(), 4 + 2);
        assert_eq!(constraints_for(InteractionType::III, 4, 5).len(), 5 + 2);
        assert_eq!(constraints_for(InteractionType::IV, 4, 5).len(), 4 + 5 + 1);
    }

    #[test]
    fn constraint_rows_independent_by_qr() {
        for ty in [
            InteractionType::I,
            InteractionType::II,
            InteractionType::III,
            InteractionType::IV,
        ] {
            let cs = constraints_for(ty, 3, 3);
            let a = cs.to_dense_blocks();
            let rank = a.svd(false, false).rank(1e-10);
            assert_eq!(rank, cs.len(), "type {ty} rows dependent");
        }
    }

    #[test]
    fn type2_rows_are_per_area_time_sums() {
        let cs = constraints_for(InteractionType::II, 2, 4);
        let inter: Vec<_> =
            cs.rows.iter().filter(|r| r.block == ConstraintBlock::Interaction).collect();
        assert_eq!(inter.len(), 2);
        for (i, row) in inter.iter().enumerate() {
            let expect: Vec<(usize, f64)> = (0..4).map(|t| (t * 2 + i, 1.0)).collect();
            assert_eq!(row.entries, expect);
        }
    }

    #[test]
    fn type4_deficiency_matches_constraint_count() {
        // interaction rows equal the rank deficiency of the Kronecker structure
        for (n, t_len) in [(3usize, 3usize), (4, 3), (5, 4)] {
            let rs = spatial_structure(&path(n));
            let rt = rw_structure(t_len, RwOrder::Rw1).unwrap();
            let r4 = interaction_structure(&rs, &rt, InteractionType::IV);
            let cs = constraints_for(InteractionType::IV, n, t_len);
            let inter_rows =
                cs.rows.iter().filter(|r| r.block == ConstraintBlock::Interaction).count();
            assert_eq!(inter_rows, r4.rank_deficiency());
        }
    }
}
