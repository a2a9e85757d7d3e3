//! Approximate Bayesian inference for one latent Gaussian model: Gaussian
//! approximation of the latent field given hyperparameters, grid exploration
//! of the hyperparameter posterior, mixture marginals of the linear
//! predictor, conditional predictive ordinates and the log marginal
//! likelihood.
//!
//! The engine keeps one symbolic factorization per model: the precision
//! pattern never changes across hyperparameter evaluations, only values are
//! refilled. Constraints are enforced by conditioning by kriging; intrinsic
//! priors are regularized with a fixed tiny ridge whose contribution cancels
//! between the determinant terms of the hyperparameter posterior.

mod gaussian;
mod hyper;
mod marginals;

#[cfg(test)]
mod tests;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::EngineSettings;
use crate::density::{GridDensity, Summaries};
use crate::error::{Error, Result};
use crate::lgm::{LatentModel, Likelihood, Theta};
use crate::sparse::{ldl::SparseLdl, rcm_order, Permutation, ScatterMap, SparseSym, SymTriplets};

pub use hyper::{explore_hyper, HyperGrid, HyperMarginal, HyperPoint};
pub use marginals::{compute_cpo, latent_marginals, log_marginal_likelihood};

/// Gaussian approximation of the latent field at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub theta: Theta,
    /// constrained mode of the latent field, natural ordering
    pub mode: Vec<f64>,
    /// prior precision plus likelihood curvature at the mode (natural order)
    pub precision: SparseSym,
    pub converged: bool,
    pub iterations: usize,
    /// infinity norm of the projected gradient at the mode
    pub grad_norm: f64,
    /// infinity norm of A x at the mode, after kriging correction
    pub constraint_residual: f64,
    pub log_det_h: f64,
    pub log_det_s: f64,
}

/// Posterior marginal on a regular grid with summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentMarginal {
    pub density: GridDensity,
    pub summaries: Summaries,
}

impl LatentMarginal {
    pub fn from_gaussian_mixture(
        weights: &[f64],
        means: &[f64],
        sds: &[f64],
        points: usize,
    ) -> LatentMarginal {
        let density = crate::density::gaussian_mixture_density(weights, means, sds, points, 5.0);
        let (mean, var) = crate::density::gaussian_mixture_moments(weights, means, sds);
        let q = |p: f64| crate::density::gaussian_mixture_quantile(weights, means, sds, p);
        LatentMarginal {
            density,
            summaries: Summaries {
                mean,
                sd: var.sqrt(),
                q025: q(0.025),
                median: q(0.5),
                q975: q(0.975),
            },
        }
    }
}

/// Timing and effort breakdown of one fit.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitTiming {
    pub total_secs: f64,
    pub hyper_evals: usize,
    pub grid_points: usize,
    pub newton_iterations: usize,
}

/// Complete result of fitting one (sub)model: everything the merge step and
/// the diagnostics need, serializable as the worker exchange unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub version: u32,
    pub area_ids: Vec<String>,
    pub times: Vec<i64>,
    /// log-risk marginal per cell (t * n + i)
    pub marginals_log_risk: Vec<LatentMarginal>,
    pub hyper_marginals: Vec<HyperMarginal>,
    /// conditional predictive ordinate per cell
    pub cpo: Vec<f64>,
    /// cells where the CPO quadrature overflowed and was clipped
    pub cpo_flagged: Vec<usize>,
    pub log_marginal_likelihood: f64,
    pub mean_deviance: f64,
    /// posterior mean relative risk per cell
    pub fitted_risk_mean: Vec<f64>,
    /// intercept posterior summary (subdomain-level shift diagnostic)
    pub alpha: Summaries,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
    pub timing: FitTiming,
}

pub const FIT_RESULT_VERSION: u32 = 1;

impl FitResult {
    pub fn n(&self) -> usize {
        self.area_ids.len()
    }

    pub fn t_len(&self) -> usize {
        self.times.len()
    }

    pub fn cell(&self, i: usize, t: usize) -> usize {
        t * self.n() + i
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<FitResult> {
        let r: FitResult = serde_json::from_str(text)?;
        if r.version != FIT_RESULT_VERSION {
            return Err(Error::data(format!("fit result version {} unsupported", r.version)));
        }
        Ok(r)
    }
}

/// Fit one latent Gaussian model end to end.
pub fn fit(model: &LatentModel, settings: &EngineSettings) -> Result<FitResult> {
    let start = Instant::now();
    let mut engine = Engine::new(model, settings.clone())?;
    let explored = hyper::explore_internal(&mut engine, true)?;
    let result = marginals::assemble_fit(&mut engine, explored, start)?;
    Ok(result)
}

/// Gaussian approximation at fixed hyperparameters (the inner step of the
/// nested approximation, exposed for diagnostics and validation).
pub fn gaussian_approx(
    model: &LatentModel,
    theta: &Theta,
    settings: &EngineSettings,
) -> Result<GaussianApprox> {
    let mut engine = Engine::new(model, settings.clone())?;
    engine.public_approx(theta)
}

/// Shared per-model machinery: orderings, cached patterns, factorizations.
pub(crate) struct Engine<'m> {
    pub(crate) model: &'m LatentModel,
    pub(crate) settings: EngineSettings,
    pub(crate) dim: usize,
    pub(crate) n_cells: usize,
    pub(crate) perm: Permutation,
    // H = Q + likelihood curvature (+ ridge), permuted pattern
    h_proto: SparseSym,
    h_map: ScatterMap,
    ldl_h: SparseLdl,
    h_vals: Vec<f64>,
    h_cells_at: usize,
    h_ridge_at: usize,
    // Q-only pattern for the prior-side determinants
    q_proto: SparseSym,
    q_map: ScatterMap,
    ldl_q: SparseLdl,
    q_vals: Vec<f64>,
    q_ridge_at: usize,
    // constraints, natural and permuted indexing
    pub(crate) a_rows: Vec<Vec<(usize, f64)>>,
    a_rows_perm: Vec<Vec<(usize, f64)>>,
    aat_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    // linear predictor indices per cell, natural and permuted
    eta_idx: Vec<[usize; 4]>,
    eta_idx_perm: Vec<[usize; 4]>,
    // warm start for the inner Newton iteration
    warm: Vec<f64>,
    pub(crate) start: Instant,
    pub(crate) evals: usize,
    pub(crate) newton_total: usize,
}

impl<'m> Engine<'m> {
    pub(crate) fn new(model: &'m LatentModel, settings: EngineSettings) -> Result<Engine<'m>> {
        let dim = model.dim();
        let n = model.n;
        let t_len = model.t_len;
        let n_cells = model.n_cells();

        // fill-reducing block ordering: interaction first, then the spatial
        // pair blocks interleaved by graph RCM, then the temporal block, the
        // intercept last
        let delta0 = 1 + 2 * n + t_len;
        let delta_adj = model.interaction_struct().entries().pattern_adjacency();
        let delta_perm = rcm_order(&delta_adj);
        let spatial_adj = model.spatial_scaled().entries().pattern_adjacency();
        let spatial_perm = rcm_order(&spatial_adj);
        let mut order: Vec<usize> = Vec::with_capacity(dim);
        for &local in &delta_perm.perm {
            order.push(delta0 + local);
        }
        for &s in &spatial_perm.perm {
            order.push(model.idx_u(s));
            order.push(model.idx_xi(s));
        }
        for t in 0..t_len {
            order.push(model.idx_gamma(t));
        }
        order.push(model.idx_alpha());
        let perm = Permutation::from_new_to_old(order)
            .map_err(|_| Error::numeric("engine ordering is not a bijection"))?;

        // H triplets: prior ++ per-cell likelihood cliques ++ ridge diagonal
        let prior_coords = model.prior_coords();
        let mut trip = SymTriplets::new(dim);
        for &(i, j) in prior_coords {
            trip.push(perm.inv[i], perm.inv[j], 0.0);
        }
        let h_cells_at = trip.len();
        let mut eta_idx = Vec::with_capacity(n_cells);
        let mut eta_idx_perm = Vec::with_capacity(n_cells);
        for t in 0..t_len {
            for i in 0..n {
                let idx = model.eta_indices(i, t);
                let p = [perm.inv[idx[0]], perm.inv[idx[1]], perm.inv[idx[2]], perm.inv[idx[3]]];
                for a in 0..4 {
                    for b in a..4 {
                        trip.push(p[a], p[b], 0.0);
                    }
                }
                eta_idx.push(idx);
                eta_idx_perm.push(p);
            }
        }
        let h_ridge_at = trip.len();
        for k in 0..dim {
            trip.push(k, k, 0.0);
        }
        let (h_proto, h_map) = trip.build_with_map();
        let ldl_h = SparseLdl::analyze(&h_proto);
        let h_vals = vec![0.0; trip.len()];

        // Q-only pattern
        let mut qtrip = SymTriplets::new(dim);
        for &(i, j) in prior_coords {
            qtrip.push(perm.inv[i], perm.inv[j], 0.0);
        }
        let q_ridge_at = qtrip.len();
        for k in 0..dim {
            qtrip.push(k, k, 0.0);
        }
        let (q_proto, q_map) = qtrip.build_with_map();
        let ldl_q = SparseLdl::analyze(&q_proto);
        let q_vals = vec![0.0; qtrip.len()];

        // constraints
        let a_rows = model.constraint_rows();
        let a_rows_perm: Vec<Vec<(usize, f64)>> = a_rows
            .iter()
            .map(|row| {
                let mut r: Vec<(usize, f64)> =
                    row.iter().map(|&(i, v)| (perm.inv[i], v)).collect();
                r.sort_unstable_by_key(|&(i, _)| i);
                r
            })
            .collect();
        let c = a_rows.len();
        let mut aat = nalgebra::DMatrix::zeros(c, c);
        for j in 0..c {
            for k in j..c {
                let dot = sparse_dot(&a_rows_perm[j], &a_rows_perm[k]);
                aat[(j, k)] = dot;
                aat[(k, j)] = dot;
            }
        }
        let aat_chol = nalgebra::Cholesky::new(aat)
            .ok_or_else(|| Error::model("constraint rows are linearly dependent"))?;

        Ok(Engine {
            model,
            settings,
            dim,
            n_cells,
            perm,
            h_proto,
            h_map,
            ldl_h,
            h_vals,
            h_cells_at,
            h_ridge_at,
            q_proto,
            q_map,
            ldl_q,
            q_vals,
            q_ridge_at,
            a_rows,
            a_rows_perm,
            aat_chol,
            eta_idx,
            eta_idx_perm,
            warm: vec![0.0; dim],
            start: Instant::now(),
            evals: 0,
            newton_total: 0,
        })
    }

    pub(crate) fn n_constraints(&self) -> usize {
        self.a_rows.len()
    }

    pub(crate) fn check_budget(&self) -> Result<()> {
        if let Some(budget) = self.settings.time_budget_secs {
            if self.start.elapsed().as_secs_f64() > budget {
                return Err(Error::Budget(format!(
                    "fit exceeded {budget:.0}s (after {} hyperparameter evaluations)",
                    self.evals
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn eta_indices_perm(&self, cell: usize) -> &[usize; 4] {
        &self.eta_idx_perm[cell]
    }

    pub(crate) fn eta_indices_nat(&self, cell: usize) -> &[usize; 4] {
        &self.eta_idx[cell]
    }

    fn fill_h(&mut self, prior_vals: &[f64], curv: &[f64], eps: f64) {
        let p = self.h_cells_at;
        self.h_vals[..p].copy_from_slice(prior_vals);
        for (c, &cv) in curv.iter().enumerate() {
            let base = p + 10 * c;
            for s in 0..10 {
                self.h_vals[base + s] = cv;
            }
        }
        for k in 0..self.dim {
            self.h_vals[self.h_ridge_at + k] = eps;
        }
        self.h_map.refill(&self.h_vals, &mut self.h_proto);
    }

    fn fill_q(&mut self, prior_vals: &[f64], eps: f64) {
        let p = self.q_ridge_at;
        self.q_vals[..p].copy_from_slice(prior_vals);
        for k in 0..self.dim {
            self.q_vals[p + k] = eps;
        }
        self.q_map.refill(&self.q_vals, &mut self.q_proto);
    }

    /// Factor the filled H pattern, escalating the ridge on pivot failure.
    fn factor_h(&mut self, prior_vals: &[f64], curv: &[f64]) -> Result<f64> {
        let mut eps = self.settings.ridge_eps;
        for _ in 0..5 {
            self.fill_h(prior_vals, curv, eps);
            match self.ldl_h.factor(&self.h_proto, true) {
                Ok(()) => return Ok(eps),
                Err(_) => eps *= 100.0,
            }
        }
        Err(Error::numeric("precision not positive definite even with ridge"))
    }

    fn factor_q(&mut self, prior_vals: &[f64]) -> Result<f64> {
        let mut eps = self.settings.ridge_eps;
        for _ in 0..5 {
            self.fill_q(prior_vals, eps);
            match self.ldl_q.factor(&self.q_proto, true) {
                Ok(()) => return Ok(eps),
                Err(_) => eps *= 100.0,
            }
        }
        Err(Error::numeric("prior precision not positive definite even with ridge"))
    }

    pub(crate) fn warm_start(&self) -> &[f64] {
        &self.warm
    }

    pub(crate) fn set_warm(&mut self, x: &[f64]) {
        self.warm.copy_from_slice(x);
    }
}

pub(crate) fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Per-unit likelihood terms at a given linear predictor value.
pub(crate) fn unit_log_lik(model: &LatentModel, cell: usize, eta: f64) -> f64 {
    match &model.likelihood {
        Likelihood::Poisson => {
            let o = model.observed[cell] as f64;
            let log_e = model.offset_log_e[cell];
            let mu = (log_e + eta).exp();
            o * (log_e + eta) - mu - crate::mathutil::ln_gamma(o + 1.0)
        }
        Likelihood::Gaussian { y, variance } => {
            let r = y[cell] - eta;
            -0.5 * (r * r / variance[cell] + (2.0 * std::f64::consts::PI * variance[cell]).ln())
        }
    }
}

pub(crate) fn unit_grad_curv(model: &LatentModel, cell: usize, eta: f64) -> (f64, f64) {
    match &model.likelihood {
        Likelihood::Poisson => {
            let o = model.observed[cell] as f64;
            let mu = (model.offset_log_e[cell] + eta).exp();
            (o - mu, mu)
        }
        Likelihood::Gaussian { y, variance } => {
            ((y[cell] - eta) / variance[cell], 1.0 / variance[cell])
        }
    }
}
