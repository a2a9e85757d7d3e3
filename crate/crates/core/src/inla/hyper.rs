//! Hyperparameter exploration: quasi-Newton search for the posterior mode of
//! theta in the internal scale, a finite-difference curvature estimate, and
//! a centered regular grid pruned by log-posterior drop.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::EngineSettings;
use crate::error::{Error, Result};
use crate::lgm::{LatentModel, Theta};
use crate::mathutil::log_sum_exp;

use super::gaussian::{ApproxState, Detail};
use super::Engine;

pub(crate) const HYPER_DIM: usize = 4;
pub(crate) const HYPER_NAMES: [&str; 4] =
    ["log_tau_xi", "logit_lambda_xi", "log_tau_gamma", "log_tau_delta"];

/// One evaluated point of the hyperparameter grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperPoint {
    pub internal: [f64; 4],
    pub theta: Theta,
    /// unnormalized log posterior of theta
    pub log_posterior: f64,
    /// normalized integration weight
    pub weight: f64,
}

/// The explored hyperparameter posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperGrid {
    pub points: Vec<HyperPoint>,
    pub mode_index: usize,
    pub step_sizes: [f64; 4],
    /// grid-integrated log marginal likelihood
    pub log_evidence: f64,
    /// total inner evaluations spent
    pub evals: usize,
}

impl HyperGrid {
    pub fn weights(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.weight).collect()
    }

    /// Posterior mean of the internal-scale hyperparameters.
    pub fn posterior_mean_internal(&self) -> [f64; 4] {
        let mut m = [0.0; 4];
        for p in &self.points {
            for d in 0..4 {
                m[d] += p.weight * p.internal[d];
            }
        }
        m
    }
}

/// Discrete posterior marginal of one hyperparameter (internal scale).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperMarginal {
    pub name: String,
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

pub(crate) struct Explored {
    pub grid: HyperGrid,
    /// per-retained-point state; carries marginal stats when collected
    pub stats: Vec<ApproxState>,
}

fn log_prior_internal(model: &LatentModel, z: &[f64; 4]) -> f64 {
    let hp = &model.hyper_prior;
    hp.log_prior_log_tau(z[0])
        + hp.log_prior_logit_lambda(z[1])
        + hp.log_prior_log_tau(z[2])
        + hp.log_prior_log_tau(z[3])
}

fn in_bounds(settings: &EngineSettings, z: &[f64; 4]) -> bool {
    let tb = |v: f64| v >= settings.log_tau_min && v <= settings.log_tau_max;
    tb(z[0]) && z[1].abs() <= 10.0 && tb(z[2]) && tb(z[3])
}

impl<'m> Engine<'m> {
    /// Evaluate the unnormalized log posterior of theta at internal z.
    fn eval_lp(&mut self, z: &[f64; 4], detail: Detail) -> Result<(f64, ApproxState)> {
        let theta = Theta::from_internal(z);
        let state = self.approx_at(&theta, detail)?;
        let lp = state.lml_lap + log_prior_internal(self.model, z);
        Ok((lp, state))
    }

    /// Like `eval_lp` but maps numerical failures to -inf so the search can
    /// step back; budget overruns still propagate.
    fn eval_lp_soft(&mut self, z: &[f64; 4]) -> Result<f64> {
        if !in_bounds(&self.settings, z) {
            return Ok(f64::NEG_INFINITY);
        }
        match self.eval_lp(z, Detail::Light) {
            Ok((lp, _)) => Ok(if lp.is_finite() { lp } else { f64::NEG_INFINITY }),
            Err(Error::Budget(b)) => Err(Error::Budget(b)),
            Err(_) => Ok(f64::NEG_INFINITY),
        }
    }
}

/// BFGS ascent on the log posterior over the free dimensions.
fn locate_mode(engine: &mut Engine<'_>, z0: [f64; 4], free: &[usize]) -> Result<[f64; 4]> {
    let f = free.len();
    if f == 0 {
        return Ok(z0);
    }
    let assemble = |base: &[f64; 4], zf: &nalgebra::DVector<f64>| {
        let mut z = *base;
        for (k, &d) in free.iter().enumerate() {
            z[d] = zf[k];
        }
        z
    };
    let mut zf = nalgebra::DVector::from_iterator(f, free.iter().map(|&d| z0[d]));
    let mut lp = engine.eval_lp_soft(&assemble(&z0, &zf))?;
    if !lp.is_finite() {
        return Err(Error::NonConvergence(
            "hyperparameter search could not evaluate the starting point".into(),
        ));
    }

    let h = 1e-3;
    let grad = |engine: &mut Engine<'_>,
                zf: &nalgebra::DVector<f64>,
                lp0: f64|
     -> Result<nalgebra::DVector<f64>> {
        let mut g = nalgebra::DVector::zeros(f);
        for k in 0..f {
            let mut zp = zf.clone();
            zp[k] += h;
            let lpp = engine.eval_lp_soft(&assemble(&z0, &zp))?;
            g[k] = if lpp.is_finite() { (lpp - lp0) / h } else { -1.0 };
        }
        Ok(g)
    };

    let mut binv = nalgebra::DMatrix::identity(f, f);
    let mut g = grad(engine, &zf, lp)?;
    for _iter in 0..engine.settings.max_hyper_iter {
        if g.amax() < 1e-2 {
            break;
        }
        let dir = &binv * &g; // ascent direction
        let slope = g.dot(&dir);
        if slope <= 0.0 {
            binv = nalgebra::DMatrix::identity(f, f);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        let mut lp_new = lp;
        let mut zf_new = zf.clone();
        for _ in 0..20 {
            let cand = &zf + &dir * t;
            let lp_c = engine.eval_lp_soft(&assemble(&z0, &cand))?;
            if lp_c.is_finite() && lp_c >= lp + 1e-4 * t * slope {
                zf_new = cand;
                lp_new = lp_c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let g_new = grad(engine, &zf_new, lp_new)?;
        let s = &zf_new - &zf;
        let y = &g - &g_new; // gradient of -lp increases
        let sy = s.dot(&y);
        if sy > 1e-10 {
            // inverse BFGS update for minimizing -lp
            let rho = 1.0 / sy;
            let eye = nalgebra::DMatrix::identity(f, f);
            let left = &eye - &s * y.transpose() * rho;
            binv = &left * binv * left.transpose() + &s * s.transpose() * rho;
        }
        zf = zf_new;
        lp = lp_new;
        g = g_new;
    }
    Ok(assemble(&z0, &zf))
}

/// Axis step sizes from a finite-difference curvature estimate at the mode.
fn axis_steps(
    engine: &mut Engine<'_>,
    z_mode: &[f64; 4],
    free: &[usize],
    lp_mode: f64,
) -> Result<[f64; 4]> {
    let f = free.len();
    let h = 0.15;
    let mut hess = nalgebra::DMatrix::zeros(f, f);
    let probe = |engine: &mut Engine<'_>, offs: &[(usize, f64)]| -> Result<f64> {
        let mut z = *z_mode;
        for &(d, o) in offs {
            z[free[d]] += o;
        }
        engine.eval_lp_soft(&z)
    };
    for a in 0..f {
        let fp = probe(engine, &[(a, h)])?;
        let fm = probe(engine, &[(a, -h)])?;
        let va = if fp.is_finite() && fm.is_finite() {
            -(fp + fm - 2.0 * lp_mode) / (h * h)
        } else {
            1.0
        };
        hess[(a, a)] = va.max(1e-3);
        for b in (a + 1)..f {
            let fpp = probe(engine, &[(a, h), (b, h)])?;
            let fpm = probe(engine, &[(a, h), (b, -h)])?;
            let fmp = probe(engine, &[(a, -h), (b, h)])?;
            let fmm = probe(engine, &[(a, -h), (b, -h)])?;
            let v = if [fpp, fpm, fmp, fmm].iter().all(|x| x.is_finite()) {
                -(fpp - fpm - fmp + fmm) / (4.0 * h * h)
            } else {
                0.0
            };
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    // positive-definite floor
    let eig = hess.clone().symmetric_eigen();
    let mut rebuilt = nalgebra::DMatrix::zeros(f, f);
    for k in 0..f {
        let lam = eig.eigenvalues[k].max(1e-3);
        let v = eig.eigenvectors.column(k);
        rebuilt += nalgebra::DMatrix::from_fn(f, f, |i, j| v[i] * v[j] * lam);
    }
    let cov = rebuilt
        .try_inverse()
        .ok_or_else(|| Error::numeric("hyperparameter curvature not invertible"))?;
    let mut steps = [0.0; 4];
    for (k, &d) in free.iter().enumerate() {
        let sd = cov[(k, k)].max(1e-8).sqrt().min(3.0);
        steps[d] = engine.settings.grid_step_sd * sd;
    }
    Ok(steps)
}

pub(crate) fn explore_internal(
    engine: &mut Engine<'_>,
    collect_marginals: bool,
) -> Result<Explored> {
    let settings = engine.settings.clone();
    let fixed = settings.fixed_internal();
    let free: Vec<usize> = (0..HYPER_DIM).filter(|&d| fixed[d].is_none()).collect();

    // starting point: moderate precisions, even mixing
    let mut z0 = [(10.0f64).ln(), 0.0, (10.0f64).ln(), (10.0f64).ln()];
    for d in 0..HYPER_DIM {
        if let Some(v) = fixed[d] {
            z0[d] = v;
        }
    }

    let z_mode = locate_mode(engine, z0, &free)?;
    let (lp_mode, _) = engine.eval_lp(&z_mode, Detail::Light)?;
    let steps = axis_steps(engine, &z_mode, &free, lp_mode)?;

    // centered regular grid over the free dimensions, pruned by drop from
    // the running maximum; points are visited ring by ring so a pruned
    // parent prunes its outward child without evaluation
    let r = (settings.grid_points_per_axis as i64 - 1) / 2;
    let mut offsets: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..free.len() {
        let mut next = Vec::new();
        for base in &offsets {
            for o in -r..=r {
                let mut b = base.clone();
                b.push(o);
                next.push(b);
            }
        }
        offsets = next;
    }
    offsets.sort_by_key(|o| {
        let ring = o.iter().map(|v| v.abs()).max().unwrap_or(0);
        let manhattan: i64 = o.iter().map(|v| v.abs()).sum();
        (ring, manhattan, o.clone())
    });

    let detail = if collect_marginals { Detail::Marginals } else { Detail::Light };
    let mut evaluated: HashMap<Vec<i64>, Option<(f64, ApproxState)>> = HashMap::new();
    let mut lp_max = f64::NEG_INFINITY;
    for off in &offsets {
        // parent toward the center along the largest coordinate
        if off.iter().any(|&v| v != 0) {
            let ring = off.iter().map(|v| v.abs()).max().unwrap();
            let pa = off.iter().position(|v| v.abs() == ring).unwrap();
            let mut parent = off.clone();
            parent[pa] -= parent[pa].signum();
            match evaluated.get(&parent) {
                Some(Some((lp_p, _))) if lp_max - lp_p <= settings.prune_log_drop => {}
                Some(_) => {
                    evaluated.insert(off.clone(), None);
                    continue;
                }
                None => {}
            }
        }
        let mut z = z_mode;
        for (k, &d) in free.iter().enumerate() {
            z[d] += off[k] as f64 * steps[d];
        }
        if !in_bounds(&settings, &z) {
            evaluated.insert(off.clone(), None);
            continue;
        }
        match engine.eval_lp(&z, detail) {
            Ok((lp, state)) if lp.is_finite() => {
                lp_max = lp_max.max(lp);
                evaluated.insert(off.clone(), Some((lp, state)));
            }
            Err(Error::Budget(b)) => return Err(Error::Budget(b)),
            _ => {
                evaluated.insert(off.clone(), None);
            }
        }
    }

    // retain points within the drop threshold, in deterministic order
    let mut points: Vec<HyperPoint> = Vec::new();
    let mut stats: Vec<ApproxState> = Vec::new();
    for off in &offsets {
        if let Some(Some((lp, state))) = evaluated.remove(off) {
            if lp_max - lp <= settings.prune_log_drop {
                let z = state.theta.to_internal();
                let mut internal = [0.0; 4];
                internal.copy_from_slice(&z);
                points.push(HyperPoint {
                    internal,
                    theta: state.theta,
                    log_posterior: lp,
                    weight: 0.0,
                });
                stats.push(state);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::NonConvergence("no usable hyperparameter grid points".into()));
    }
    let lps: Vec<f64> = points.iter().map(|p| p.log_posterior).collect();
    let lse = log_sum_exp(&lps);
    for p in &mut points {
        p.weight = (p.log_posterior - lse).exp();
    }
    // exact normalization against rounding
    let total: f64 = points.iter().map(|p| p.weight).sum();
    for p in &mut points {
        p.weight /= total;
    }
    let mode_index = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.log_posterior.partial_cmp(&b.1.log_posterior).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let log_volume: f64 = free.iter().map(|&d| steps[d].ln()).sum();
    let log_evidence = lse + log_volume;

    let grid = HyperGrid {
        points,
        mode_index,
        step_sizes: steps,
        log_evidence,
        evals: engine.evals,
    };
    Ok(Explored { grid, stats })
}

/// Explore the hyperparameter posterior of a model (public operation).
pub fn explore_hyper(model: &LatentModel, settings: &EngineSettings) -> Result<HyperGrid> {
    let mut engine = Engine::new(model, settings.clone())?;
    Ok(explore_internal(&mut engine, false)?.grid)
}

/// Discrete marginals of the hyperparameters from a grid.
pub(crate) fn hyper_marginals(grid: &HyperGrid) -> Vec<HyperMarginal> {
    let mut out = Vec::new();
    for d in 0..HYPER_DIM {
        let mut agg: Vec<(f64, f64)> = Vec::new();
        for p in &grid.points {
            let z = p.internal[d];
            match agg.iter_mut().find(|(s, _)| (*s - z).abs() < 1e-12) {
                Some((_, w)) => *w += p.weight,
                None => agg.push((z, p.weight)),
            }
        }
        agg.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mean: f64 = agg.iter().map(|(z, w)| z * w).sum();
        let var: f64 = agg.iter().map(|(z, w)| w * (z - mean) * (z - mean)).sum();
        out.push(HyperMarginal {
            name: HYPER_NAMES[d].to_string(),
            support: agg.iter().map(|(z, _)| *z).collect(),
            weights: agg.iter().map(|(_, w)| *w).collect(),
            mean,
            sd: var.sqrt(),
        });
    }
    out
}
