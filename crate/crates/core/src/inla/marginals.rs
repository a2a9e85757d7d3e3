//! Mixture marginals over the hyperparameter grid, conditional predictive
//! ordinates by Gauss-Hermite quadrature, and the assembly of a complete
//! fit result.

use std::time::Instant;

use crate::config::EngineSettings;
use crate::error::Result;
use crate::lgm::LatentModel;
use crate::mathutil::{gauss_hermite, log_sum_exp};

use super::gaussian::Detail;
use super::hyper::{hyper_marginals, Explored, HyperGrid};
use super::{unit_log_lik, Engine, FitResult, FitTiming, LatentMarginal, FIT_RESULT_VERSION};

const GH_NODES: usize = 21;

/// Mixture marginals of each linear predictor over a hyperparameter grid.
///
/// Each marginal is the weight mixture of the per-theta Gaussian
/// approximations N(mean_it(theta), sd_it(theta)^2) evaluated on
/// `settings.marginal_points` abscissae.
pub fn latent_marginals(
    model: &LatentModel,
    grid: &HyperGrid,
    settings: &EngineSettings,
) -> Result<Vec<LatentMarginal>> {
    let mut engine = Engine::new(model, settings.clone())?;
    let stats = reevaluate_grid(&mut engine, grid)?;
    let weights = grid.weights();
    Ok(mixture_marginals(&weights, &stats, model.n_cells(), settings.marginal_points))
}

/// Conditional predictive ordinates per cell, with the indices of cells
/// whose quadrature overflowed and was clipped.
pub fn compute_cpo(
    model: &LatentModel,
    grid: &HyperGrid,
    settings: &EngineSettings,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut engine = Engine::new(model, settings.clone())?;
    let stats = reevaluate_grid(&mut engine, grid)?;
    let weights = grid.weights();
    Ok(cpo_from_stats(model, &weights, &stats))
}

/// Grid-integrated log marginal likelihood (Laplace at each point combined
/// over the exploration grid).
pub fn log_marginal_likelihood(_model: &LatentModel, grid: &HyperGrid) -> f64 {
    grid.log_evidence
}

struct PointStats {
    weight_index: usize,
    unit_mean: Vec<f64>,
    unit_sd: Vec<f64>,
    alpha_mean: f64,
    alpha_sd: f64,
}

fn reevaluate_grid(engine: &mut Engine<'_>, grid: &HyperGrid) -> Result<Vec<PointStats>> {
    let mut out = Vec::with_capacity(grid.points.len());
    for (gi, p) in grid.points.iter().enumerate() {
        let st = engine.approx_at(&p.theta, Detail::Marginals)?;
        out.push(PointStats {
            weight_index: gi,
            unit_mean: st.unit_mean,
            unit_sd: st.unit_sd,
            alpha_mean: st.alpha_mean,
            alpha_sd: st.alpha_sd,
        });
    }
    Ok(out)
}

fn mixture_marginals(
    weights: &[f64],
    stats: &[PointStats],
    n_cells: usize,
    points: usize,
) -> Vec<LatentMarginal> {
    let g = stats.len();
    let mut w = Vec::with_capacity(g);
    for s in stats {
        w.push(weights[s.weight_index]);
    }
    (0..n_cells)
        .map(|c| {
            let means: Vec<f64> = stats.iter().map(|s| s.unit_mean[c]).collect();
            let sds: Vec<f64> = stats.iter().map(|s| s.unit_sd[c]).collect();
            LatentMarginal::from_gaussian_mixture(&w, &means, &sds, points)
        })
        .collect()
}

fn cpo_from_stats(
    model: &LatentModel,
    weights: &[f64],
    stats: &[PointStats],
) -> (Vec<f64>, Vec<usize>) {
    let (nodes, gh_w) = gauss_hermite(GH_NODES);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let n_cells = model.n_cells();
    let mut cpo = Vec::with_capacity(n_cells);
    let mut flagged = Vec::new();
    let mut terms: Vec<f64> = Vec::with_capacity(stats.len() * GH_NODES);
    for c in 0..n_cells {
        terms.clear();
        for s in stats.iter() {
            let wg = weights[s.weight_index];
            if wg <= 0.0 {
                continue;
            }
            let (m, sd) = (s.unit_mean[c], s.unit_sd[c]);
            for k in 0..GH_NODES {
                let eta = m + std::f64::consts::SQRT_2 * sd * nodes[k];
                let ll = unit_log_lik(model, c, eta);
                terms.push(wg.ln() + (gh_w[k] / sqrt_pi).ln() - ll);
            }
        }
        let log_inv = log_sum_exp(&terms);
        let v = (-log_inv).exp();
        if !v.is_finite() || v <= 0.0 {
            flagged.push(c);
            cpo.push(1e-300);
        } else {
            cpo.push(v.min(1.0));
        }
    }
    (cpo, flagged)
}

/// Posterior mean deviance E[-2 log p(O | eta)] under the mixture, by
/// Gauss-Hermite quadrature per cell.
fn mean_deviance(model: &LatentModel, weights: &[f64], stats: &[PointStats]) -> f64 {
    let (nodes, gh_w) = gauss_hermite(GH_NODES);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut total = 0.0;
    for c in 0..model.n_cells() {
        for s in stats.iter() {
            let wg = weights[s.weight_index];
            let (m, sd) = (s.unit_mean[c], s.unit_sd[c]);
            for k in 0..GH_NODES {
                let eta = m + std::f64::consts::SQRT_2 * sd * nodes[k];
                total += wg * gh_w[k] / sqrt_pi * (-2.0 * unit_log_lik(model, c, eta));
            }
        }
    }
    total
}

pub(crate) fn assemble_fit(
    engine: &mut Engine<'_>,
    explored: Explored,
    start: Instant,
) -> Result<FitResult> {
    let model = engine.model;
    let settings = engine.settings.clone();
    let grid = explored.grid;
    let weights = grid.weights();
    let stats: Vec<PointStats> = explored
        .stats
        .into_iter()
        .enumerate()
        .map(|(gi, st)| PointStats {
            weight_index: gi,
            unit_mean: st.unit_mean,
            unit_sd: st.unit_sd,
            alpha_mean: st.alpha_mean,
            alpha_sd: st.alpha_sd,
        })
        .collect();

    let marginals =
        mixture_marginals(&weights, &stats, model.n_cells(), settings.marginal_points);
    let (cpo, cpo_flagged) = cpo_from_stats(model, &weights, &stats);
    let dev = mean_deviance(model, &weights, &stats);
    let fitted: Vec<f64> = (0..model.n_cells())
        .map(|c| {
            stats
                .iter()
                .map(|s| {
                    let (m, sd) = (s.unit_mean[c], s.unit_sd[c]);
                    weights[s.weight_index] * (m + 0.5 * sd * sd).exp()
                })
                .sum()
        })
        .collect();

    let alpha = {
        let w: Vec<f64> = stats.iter().map(|s| weights[s.weight_index]).collect();
        let means: Vec<f64> = stats.iter().map(|s| s.alpha_mean).collect();
        let sds: Vec<f64> = stats.iter().map(|s| s.alpha_sd).collect();
        LatentMarginal::from_gaussian_mixture(&w, &means, &sds, 51).summaries
    };

    let timing = FitTiming {
        total_secs: start.elapsed().as_secs_f64(),
        hyper_evals: engine.evals,
        grid_points: grid.points.len(),
        newton_iterations: engine.newton_total,
    };

    Ok(FitResult {
        version: FIT_RESULT_VERSION,
        area_ids: model.area_ids.clone(),
        times: model.times.clone(),
        marginals_log_risk: marginals,
        hyper_marginals: hyper_marginals(&grid),
        cpo,
        cpo_flagged,
        log_marginal_likelihood: grid.log_evidence,
        mean_deviance: dev,
        fitted_risk_mean: fitted,
        alpha,
        observed: model.observed.clone(),
        expected: model.expected.clone(),
        timing,
    })
}
