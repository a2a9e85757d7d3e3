//! The latent Gaussian model for one (sub)domain: count data and offsets,
//! the latent field layout, the joint precision as a function of the
//! hyperparameters, and the identifiability constraints mapped into global
//! latent indexing.
//!
//! Latent ordering is fixed crate-wide: intercept, combined spatial effect
//! xi (n), structured spatial part u (n), temporal effect gamma (T), and the
//! interaction delta (nT, area-fastest). The linear predictor of cell (i, t)
//! touches exactly four latents: alpha, xi_i, gamma_t, delta_it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::{HyperPrior, ModelSpec};
use crate::error::{Error, Result};
use crate::gmrf::{
    constraints_for, interaction_structure, rw_structure, scale_structure, spatial_structure,
    ConstraintBlock, ConstraintSet, InteractionType, RwOrder, StructureMatrix,
};
use crate::graph::AreaGraph;
use crate::sparse::{ScatterMap, SparseSym, SymTriplets};

/// fill-in for structurally zero expected counts
pub const ZERO_EXPECTED_EPS: f64 = 1e-8;

/// Observed and expected cases on a complete (area, time) grid.
///
/// Cells are indexed `t * n + i`, area-fastest, matching the interaction
/// block layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountData {
    area_ids: Vec<String>,
    times: Vec<i64>,
    observed: Vec<u64>,
    expected: Vec<f64>,
    /// cells whose expected count was zero on input (structural zeros)
    zero_expected_cells: Vec<usize>,
}

impl CountData {
    pub fn new(
        area_ids: Vec<String>,
        times: Vec<i64>,
        observed: Vec<u64>,
        expected: Vec<f64>,
    ) -> Result<CountData> {
        let n = area_ids.len();
        let t_len = times.len();
        if observed.len() != n * t_len || expected.len() != n * t_len {
            return Err(Error::data("count grid size does not match areas x times"));
        }
        if expected.iter().any(|&e| !e.is_finite() || e < 0.0) {
            return Err(Error::data("expected counts must be finite and nonnegative"));
        }
        let mut exp = expected;
        let mut obs = observed;
        let mut zero_cells = Vec::new();
        for (c, e) in exp.iter_mut().enumerate() {
            if *e == 0.0 {
                *e = ZERO_EXPECTED_EPS;
                obs[c] = 0;
                zero_cells.push(c);
            }
        }
        Ok(CountData { area_ids, times, observed: obs, expected: exp, zero_expected_cells: zero_cells })
    }

    pub fn n(&self) -> usize {
        self.area_ids.len()
    }

    pub fn t_len(&self) -> usize {
        self.times.len()
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn cell(&self, i: usize, t: usize) -> usize {
        t * self.n() + i
    }

    pub fn observed(&self) -> &[u64] {
        &self.observed
    }

    pub fn expected(&self) -> &[f64] {
        &self.expected
    }

    pub fn zero_expected_cells(&self) -> &[usize] {
        &self.zero_expected_cells
    }

    /// Parse count data CSV. Two layouts are accepted:
    /// `area_id,time,observed,expected` or
    /// `area_id,time,observed,population,stratum` (indirect standardization).
    pub fn from_csv_str(text: &str) -> Result<CountData> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::data(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (c_area, c_time, c_obs) = match (col("area_id"), col("time"), col("observed")) {
            (Some(a), Some(t), Some(o)) => (a, t, o),
            _ => return Err(Error::data("count CSV needs area_id, time, observed columns")),
        };

        if let Some(c_exp) = col("expected") {
            let mut areas: Vec<String> = Vec::new();
            let mut area_index: HashMap<String, usize> = HashMap::new();
            let mut rows: Vec<(usize, i64, u64, f64)> = Vec::new();
            let mut times: Vec<i64> = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::data(e.to_string()))?;
                let id = rec.get(c_area).unwrap_or("").to_string();
                let i = *area_index.entry(id.clone()).or_insert_with(|| {
                    areas.push(id);
                    areas.len() - 1
                });
                let t: i64 = rec
                    .get(c_time)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::data("bad time value"))?;
                let o: u64 = rec
                    .get(c_obs)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::data("bad observed value"))?;
                let e: f64 = rec
                    .get(c_exp)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::data("bad expected value"))?;
                times.push(t);
                rows.push((i, t, o, e));
            }
            times.sort_unstable();
            times.dedup();
            let n = areas.len();
            let t_len = times.len();
            let t_of: HashMap<i64, usize> =
                times.iter().enumerate().map(|(k, &t)| (t, k)).collect();
            let mut observed = vec![0u64; n * t_len];
            let mut expected = vec![f64::NAN; n * t_len];
            for (i, t, o, e) in rows {
                let c = t_of[&t] * n + i;
                if !expected[c].is_nan() {
                    return Err(Error::data(format!(
                        "duplicate cell for area {:?} time {t}",
                        areas[i]
                    )));
                }
                observed[c] = o;
                expected[c] = e;
            }
            if let Some(c) = expected.iter().position(|e| e.is_nan()) {
                let (t, i) = (c / n, c % n);
                return Err(Error::data(format!(
                    "incomplete grid: area {:?} missing time {}",
                    areas[i], times[t]
                )));
            }
            CountData::new(areas, times, observed, expected)
        } else if let (Some(c_pop), Some(c_str)) = (col("population"), col("stratum")) {
            let mut rows: Vec<StrataRow> = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::data(e.to_string()))?;
                rows.push(StrataRow {
                    area_id: rec.get(c_area).unwrap_or("").to_string(),
                    time: rec
                        .get(c_time)
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| Error::data("bad time value"))?,
                    observed: rec
                        .get(c_obs)
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| Error::data("bad observed value"))?,
                    population: rec
                        .get(c_pop)
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| Error::data("bad population value"))?,
                    stratum: rec.get(c_str).unwrap_or("").to_string(),
                });
            }
            expected_cases(&rows)
        } else {
            Err(Error::data(
                "count CSV needs either an `expected` column or `population` and `stratum` columns",
            ))
        }
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<CountData> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("area_id,time,observed,expected\n");
        for t in 0..self.t_len() {
            for i in 0..self.n() {
                let c = self.cell(i, t);
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    self.area_ids[i], self.times[t], self.observed[c], self.expected[c]
                ));
            }
        }
        out
    }

    /// Reorder the area dimension to match the graph's id order.
    pub fn align_to(&self, graph: &AreaGraph) -> Result<CountData> {
        if graph.n() != self.n() {
            return Err(Error::data(format!(
                "data has {} areas, graph has {}",
                self.n(),
                graph.n()
            )));
        }
        let mut order = Vec::with_capacity(self.n());
        for id in graph.ids() {
            let k = self
                .area_ids
                .iter()
                .position(|a| a == id)
                .ok_or_else(|| Error::data(format!("graph area {id:?} missing from data")))?;
            order.push(k);
        }
        Ok(self.reindex(&order))
    }

    /// Subset (and reorder) areas by parent indices.
    pub fn subset_areas(&self, keep: &[usize]) -> CountData {
        self.reindex(keep)
    }

    fn reindex(&self, order: &[usize]) -> CountData {
        let n_new = order.len();
        let t_len = self.t_len();
        let mut observed = vec![0u64; n_new * t_len];
        let mut expected = vec![0.0; n_new * t_len];
        let mut ids = Vec::with_capacity(n_new);
        for (new_i, &old_i) in order.iter().enumerate() {
            ids.push(self.area_ids[old_i].clone());
            for t in 0..t_len {
                observed[t * n_new + new_i] = self.observed[t * self.n() + old_i];
                expected[t * n_new + new_i] = self.expected[t * self.n() + old_i];
            }
        }
        let zero_cells = {
            let old_zero: std::collections::HashSet<usize> =
                self.zero_expected_cells.iter().copied().collect();
            let mut z = Vec::new();
            for (new_i, &old_i) in order.iter().enumerate() {
                for t in 0..t_len {
                    if old_zero.contains(&(t * self.n() + old_i)) {
                        z.push(t * n_new + new_i);
                    }
                }
            }
            z.sort_unstable();
            z
        };
        CountData {
            area_ids: ids,
            times: self.times.clone(),
            observed,
            expected,
            zero_expected_cells: zero_cells,
        }
    }
}

/// One stratum record for indirect standardization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrataRow {
    pub area_id: String,
    pub time: i64,
    pub stratum: String,
    pub observed: u64,
    pub population: f64,
}

/// Indirect standardization: E_it = sum_j N_itj * (O_j / N_j) with the
/// stratum rates pooled over all areas and periods. The totals satisfy
/// sum E = sum O exactly, up to rounding.
pub fn expected_cases(rows: &[StrataRow]) -> Result<CountData> {
    let mut areas: Vec<String> = Vec::new();
    let mut area_index: HashMap<String, usize> = HashMap::new();
    let mut times: Vec<i64> = rows.iter().map(|r| r.time).collect();
    times.sort_unstable();
    times.dedup();
    let t_of: HashMap<i64, usize> = times.iter().enumerate().map(|(k, &t)| (t, k)).collect();

    let mut strata: Vec<String> = Vec::new();
    let mut strata_index: HashMap<String, usize> = HashMap::new();
    for r in rows {
        area_index.entry(r.area_id.clone()).or_insert_with(|| {
            areas.push(r.area_id.clone());
            areas.len() - 1
        });
        strata_index.entry(r.stratum.clone()).or_insert_with(|| {
            strata.push(r.stratum.clone());
            strata.len() - 1
        });
    }
    let n = areas.len();
    let t_len = times.len();
    let j_len = strata.len();

    // N_itj and O_itj accumulation
    let mut pop = vec![0.0f64; n * t_len * j_len];
    let mut obs_by = vec![0u64; n * t_len * j_len];
    let mut seen = vec![false; n * t_len];
    for r in rows {
        let i = area_index[&r.area_id];
        let t = t_of[&r.time];
        let j = strata_index[&r.stratum];
        if r.population < 0.0 {
            return Err(Error::data("negative population"));
        }
        let idx = (t * n + i) * j_len + j;
        pop[idx] += r.population;
        obs_by[idx] += r.observed;
        seen[t * n + i] = true;
    }
    if let Some(c) = seen.iter().position(|&s| !s) {
        let (t, i) = (c / n, c % n);
        return Err(Error::data(format!(
            "incomplete grid: area {:?} missing time {}",
            areas[i], times[t]
        )));
    }

    // pooled stratum rates
    let mut rate = vec![0.0f64; j_len];
    for j in 0..j_len {
        let mut oj = 0u64;
        let mut nj = 0.0;
        for c in 0..n * t_len {
            oj += obs_by[c * j_len + j];
            nj += pop[c * j_len + j];
        }
        if nj <= 0.0 {
            if oj > 0 {
                return Err(Error::data(format!(
                    "stratum {:?} has observed cases but zero population",
                    strata[j]
                )));
            }
            rate[j] = 0.0;
        } else {
            rate[j] = oj as f64 / nj;
        }
    }

    let mut observed = vec![0u64; n * t_len];
    let mut expected = vec![0.0f64; n * t_len];
    for c in 0..n * t_len {
        for j in 0..j_len {
            observed[c] += obs_by[c * j_len + j];
            expected[c] += pop[c * j_len + j] * rate[j];
        }
    }
    CountData::new(areas, times, observed, expected)
}

/// Hyperparameters in natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub tau_xi: f64,
    pub lambda_xi: f64,
    pub tau_gamma: f64,
    pub tau_delta: f64,
}

impl Theta {
    pub fn admissible(&self) -> bool {
        self.tau_xi > 0.0
            && self.tau_gamma > 0.0
            && self.tau_delta > 0.0
            && (0.0..=1.0).contains(&self.lambda_xi)
            && self.tau_xi.is_finite()
            && self.tau_gamma.is_finite()
            && self.tau_delta.is_finite()
    }

    /// Internal scale: (log tau_xi, logit lambda, log tau_gamma, log tau_delta).
    pub fn to_internal(&self) -> [f64; 4] {
        let l = self.lambda_xi.clamp(1e-12, 1.0 - 1e-12);
        [self.tau_xi.ln(), (l / (1.0 - l)).ln(), self.tau_gamma.ln(), self.tau_delta.ln()]
    }

    pub fn from_internal(z: &[f64]) -> Theta {
        let lambda = 1.0 / (1.0 + (-z[1]).exp());
        Theta {
            tau_xi: z[0].exp(),
            lambda_xi: lambda,
            tau_gamma: z[2].exp(),
            tau_delta: z[3].exp(),
        }
    }
}

/// Likelihood attached to the model. Poisson is the production path; the
/// Gaussian variant exists for closed-form validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Likelihood {
    Poisson,
    Gaussian { y: Vec<f64>, variance: Vec<f64> },
}

/// Assembled latent Gaussian model for one (sub)domain.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub n: usize,
    pub t_len: usize,
    pub area_ids: Vec<String>,
    pub times: Vec<i64>,
    pub interaction: InteractionType,
    pub temporal_order: RwOrder,
    pub hyper_prior: HyperPrior,
    pub likelihood: Likelihood,
    /// log E_it offsets, cell-indexed
    pub offset_log_e: Vec<f64>,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
    pub constraints: ConstraintSet,
    spatial_scaled: StructureMatrix,
    temporal: StructureMatrix,
    interaction_struct: StructureMatrix,
    spatial_components: usize,
    // cached prior assembly
    prior_coords: Vec<(usize, usize)>,
    prior_proto: SparseSym,
    prior_map: ScatterMap,
    // slot classes for fast value refills, aligned with prior_coords
    prior_class: Vec<PriorSlot>,
}

#[derive(Debug, Clone, Copy)]
enum PriorSlot {
    Alpha,
    XiDiag,
    XiU,
    UStruct(f64),
    UDiag,
    Gamma(f64),
    Delta(f64),
}

impl LatentModel {
    pub fn dim(&self) -> usize {
        1 + 2 * self.n + self.t_len + self.n * self.t_len
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.t_len
    }

    pub fn idx_alpha(&self) -> usize {
        0
    }

    pub fn idx_xi(&self, i: usize) -> usize {
        1 + i
    }

    pub fn idx_u(&self, i: usize) -> usize {
        1 + self.n + i
    }

    pub fn idx_gamma(&self, t: usize) -> usize {
        1 + 2 * self.n + t
    }

    pub fn idx_delta(&self, i: usize, t: usize) -> usize {
        1 + 2 * self.n + self.t_len + t * self.n + i
    }

    /// The four latent indices feeding the linear predictor of cell (i, t).
    pub fn eta_indices(&self, i: usize, t: usize) -> [usize; 4] {
        [self.idx_alpha(), self.idx_xi(i), self.idx_gamma(t), self.idx_delta(i, t)]
    }

    pub fn spatial_scaled(&self) -> &StructureMatrix {
        &self.spatial_scaled
    }

    pub fn temporal(&self) -> &StructureMatrix {
        &self.temporal
    }

    pub fn interaction_struct(&self) -> &StructureMatrix {
        &self.interaction_struct
    }

    pub fn spatial_components(&self) -> usize {
        self.spatial_components
    }

    /// eta = B x.
    pub fn eta_from_latent(&self, x: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.n_cells()];
        for t in 0..self.t_len {
            for i in 0..self.n {
                let c = t * self.n + i;
                eta[c] = x[self.idx_alpha()]
                    + x[self.idx_xi(i)]
                    + x[self.idx_gamma(t)]
                    + x[self.idx_delta(i, t)];
            }
        }
        eta
    }

    /// out += B' g.
    pub fn add_eta_gradient(&self, g_eta: &[f64], out: &mut [f64]) {
        for t in 0..self.t_len {
            for i in 0..self.n {
                let gc = g_eta[t * self.n + i];
                out[self.idx_alpha()] += gc;
                out[self.idx_xi(i)] += gc;
                out[self.idx_gamma(t)] += gc;
                out[self.idx_delta(i, t)] += gc;
            }
        }
    }

    /// Constraint rows mapped into global latent indexing.
    pub fn constraint_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.constraints
            .rows
            .iter()
            .map(|row| {
                row.entries
                    .iter()
                    .map(|&(local, v)| {
                        let global = match row.block {
                            ConstraintBlock::Spatial => self.idx_xi(local),
                            ConstraintBlock::Temporal => self.idx_gamma(local),
                            ConstraintBlock::Interaction => {
                                let (t, i) = (local / self.n, local % self.n);
                                self.idx_delta(i, t)
                            }
                        };
                        (global, v)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Joint latent prior precision Q(theta). The sparsity pattern is
    /// independent of theta; assembly reuses a cached scatter map.
    pub fn joint_precision(&self, th: &Theta) -> Result<SparseSym> {
        if !th.admissible() {
            return Err(Error::model(format!("hyperparameters outside admissible region: {th:?}")));
        }
        let vals = self.prior_values(th);
        let mut q = self.prior_proto.clone();
        self.prior_map.refill(&vals, &mut q);
        Ok(q)
    }

    /// Per-triplet prior values for theta, aligned with the cached coords.
    pub(crate) fn prior_values(&self, th: &Theta) -> Vec<f64> {
        let tau = th.tau_xi;
        let lam = th.lambda_xi.clamp(0.0, 1.0 - 1e-8);
        let one_m = 1.0 - lam;
        self.prior_class
            .iter()
            .map(|slot| match *slot {
                PriorSlot::Alpha => self.hyper_prior.intercept_precision,
                PriorSlot::XiDiag => tau / one_m,
                PriorSlot::XiU => -(tau * lam).sqrt() / one_m,
                PriorSlot::UStruct(v) => v,
                PriorSlot::UDiag => lam / one_m,
                PriorSlot::Gamma(v) => th.tau_gamma * v,
                PriorSlot::Delta(v) => th.tau_delta * v,
            })
            .collect()
    }

    pub(crate) fn prior_coords(&self) -> &[(usize, usize)] {
        &self.prior_coords
    }

    /// Analytic theta-dependent log generalized determinant of Q(theta).
    pub fn log_gdet_prior(&self, th: &Theta) -> f64 {
        let n = self.n as f64;
        let c = self.spatial_components as f64;
        let tau = th.tau_xi;
        let lam = th.lambda_xi.clamp(0.0, 1.0 - 1e-8);
        let spatial = (n - c) * (tau.ln() - (1.0 - lam).ln())
            + self.spatial_scaled.log_gdet()
            + c * ((tau + lam) / (1.0 - lam)).ln()
            + self.hyper_prior.intercept_precision.ln();
        let temporal =
            self.temporal.rank() as f64 * th.tau_gamma.ln() + self.temporal.log_gdet();
        let inter = self.interaction_struct.rank() as f64 * th.tau_delta.ln()
            + self.interaction_struct.log_gdet();
        spatial + temporal + inter
    }

    /// Rank of Q(theta) (dimension minus flat prior directions).
    pub fn prior_rank(&self) -> usize {
        let spatial_rank = 2 * self.n - self.spatial_components;
        1 + spatial_rank + self.temporal.rank() + self.interaction_struct.rank()
    }

    pub fn with_likelihood(mut self, lik: Likelihood) -> Result<LatentModel> {
        if let Likelihood::Gaussian { y, variance } = &lik {
            if y.len() != self.n_cells() || variance.len() != self.n_cells() {
                return Err(Error::model("gaussian likelihood vectors must cover all cells"));
            }
            if variance.iter().any(|&v| v <= 0.0) {
                return Err(Error::model("gaussian likelihood variances must be positive"));
            }
        }
        self.likelihood = lik;
        Ok(self)
    }
}

/// Assemble the latent Gaussian model for a (sub)domain graph and its data.
///
/// Structures are built on the given graph and the spatial part is re-scaled
/// here, so subdomain models are self-contained.
pub fn build_model(graph: &AreaGraph, data: &CountData, spec: &ModelSpec) -> Result<LatentModel> {
    let n = graph.n();
    let t_len = data.t_len();
    if n < 2 {
        return Err(Error::model("a model needs at least two areas"));
    }
    if data.n() != n {
        return Err(Error::model(format!("data covers {} areas, graph has {n}", data.n())));
    }
    if graph.ids() != data.area_ids() {
        return Err(Error::model("data areas must match graph order; call align_to first"));
    }
    if t_len < 2 {
        return Err(Error::model("a model needs at least two time periods"));
    }

    let spatial_raw = spatial_structure(graph);
    let scaled = scale_structure(&spatial_raw)?;
    let temporal = rw_structure(t_len, spec.temporal_prior)?;
    let interaction = interaction_structure(&spatial_raw, &temporal, spec.interaction);
    let constraints = constraints_for(spec.interaction, n, t_len);
    let spatial_components = spatial_raw.n_components();

    let offset_log_e: Vec<f64> = data.expected().iter().map(|e| e.ln()).collect();

    // cached prior assembly: coordinates, slot classes, prototype pattern
    let dim = 1 + 2 * n + t_len + n * t_len;
    let idx_xi = |i: usize| 1 + i;
    let idx_u = |i: usize| 1 + n + i;
    let idx_gamma = |t: usize| 1 + 2 * n + t;
    let idx_delta0 = 1 + 2 * n + t_len;

    let mut coords: Vec<(usize, usize)> = Vec::new();
    let mut class: Vec<PriorSlot> = Vec::new();
    coords.push((0, 0));
    class.push(PriorSlot::Alpha);
    for i in 0..n {
        coords.push((idx_xi(i), idx_xi(i)));
        class.push(PriorSlot::XiDiag);
    }
    for i in 0..n {
        coords.push((idx_u(i), idx_xi(i)));
        class.push(PriorSlot::XiU);
    }
    {
        let rs = scaled.matrix.entries();
        for j in 0..n {
            for p in rs.col_ptr()[j]..rs.col_ptr()[j + 1] {
                coords.push((idx_u(rs.row_idx()[p]), idx_u(j)));
                class.push(PriorSlot::UStruct(rs.values()[p]));
            }
        }
    }
    for i in 0..n {
        coords.push((idx_u(i), idx_u(i)));
        class.push(PriorSlot::UDiag);
    }
    {
        let rt = temporal.entries();
        for j in 0..t_len {
            for p in rt.col_ptr()[j]..rt.col_ptr()[j + 1] {
                coords.push((idx_gamma(rt.row_idx()[p]), idx_gamma(j)));
                class.push(PriorSlot::Gamma(rt.values()[p]));
            }
        }
    }
    {
        let rd = interaction.entries();
        for j in 0..n * t_len {
            for p in rd.col_ptr()[j]..rd.col_ptr()[j + 1] {
                coords.push((idx_delta0 + rd.row_idx()[p], idx_delta0 + j));
                class.push(PriorSlot::Delta(rd.values()[p]));
            }
        }
    }
    let mut trip = SymTriplets::new(dim);
    for &(i, j) in &coords {
        trip.push(i, j, 0.0);
    }
    let (proto, map) = trip.build_with_map();

    Ok(LatentModel {
        n,
        t_len,
        area_ids: graph.ids().to_vec(),
        times: data.times().to_vec(),
        interaction: spec.interaction,
        temporal_order: spec.temporal_prior,
        hyper_prior: spec.hyper_prior,
        likelihood: Likelihood::Poisson,
        offset_log_e,
        observed: data.observed().to_vec(),
        expected: data.expected().to_vec(),
        constraints,
        spatial_scaled: scaled.matrix,
        temporal,
        interaction_struct: interaction,
        spatial_components,
        prior_coords: coords,
        prior_proto: proto,
        prior_map: map,
        prior_class: class,
    })
}
