//! Inner step of the nested approximation: the constrained Gaussian
//! approximation of the latent field at fixed hyperparameters, and the
//! determinant bookkeeping feeding the hyperparameter posterior.

use crate::error::{Error, Result};
use crate::lgm::Theta;
use crate::sparse::selinv::SelectedInverse;

use super::{unit_grad_curv, unit_log_lik, Engine, GaussianApprox};

/// How much of the heavy machinery one evaluation keeps around.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Detail {
    /// mode and determinants only (hyperparameter search)
    Light,
    /// plus selected inverse and per-cell means and variances (grid pass)
    Marginals,
}

/// Output of one Gaussian approximation.
#[derive(Debug, Clone)]
pub(crate) struct ApproxState {
    pub theta: Theta,
    pub mode: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub proj_grad_norm: f64,
    pub constraint_residual: f64,
    pub log_lik: f64,
    pub quad_prior: f64,
    pub logdet_h: f64,
    pub logdet_s_h: f64,
    pub logdet_q: f64,
    pub logdet_s_q: f64,
    /// Laplace estimate of log p(O | theta)
    pub lml_lap: f64,
    // grid-pass extras (empty under Detail::Light)
    pub unit_mean: Vec<f64>,
    pub unit_sd: Vec<f64>,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
}

impl<'m> Engine<'m> {
    /// Q x product from the cached prior triplets (natural indexing).
    fn prior_mul(&self, prior_vals: &[f64], x: &[f64], out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for (k, &(i, j)) in self.model.prior_coords().iter().enumerate() {
            let v = prior_vals[k];
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
    }

    fn objective(&self, prior_vals: &[f64], x: &[f64]) -> f64 {
        let eta = self.model.eta_from_latent(x);
        let mut ll = 0.0;
        for (c, &e) in eta.iter().enumerate() {
            ll += unit_log_lik(self.model, c, e);
        }
        let mut qx = vec![0.0; self.dim];
        self.prior_mul(prior_vals, x, &mut qx);
        let quad: f64 = x.iter().zip(&qx).map(|(a, b)| a * b).sum();
        ll - 0.5 * quad
    }

    /// gradient of the log posterior density in x (natural indexing);
    /// returns (gradient, log likelihood, x'Qx, curvatures per cell)
    fn grad_at(
        &self,
        prior_vals: &[f64],
        x: &[f64],
    ) -> (Vec<f64>, f64, f64, Vec<f64>) {
        let eta = self.model.eta_from_latent(x);
        let mut ll = 0.0;
        let mut g_eta = vec![0.0; self.n_cells];
        let mut curv = vec![0.0; self.n_cells];
        for c in 0..self.n_cells {
            ll += unit_log_lik(self.model, c, eta[c]);
            let (g, h) = unit_grad_curv(self.model, c, eta[c]);
            g_eta[c] = g;
            curv[c] = h;
        }
        let mut grad = vec![0.0; self.dim];
        self.model.add_eta_gradient(&g_eta, &mut grad);
        let mut qx = vec![0.0; self.dim];
        self.prior_mul(prior_vals, x, &mut qx);
        let quad: f64 = x.iter().zip(&qx).map(|(a, b)| a * b).sum();
        for k in 0..self.dim {
            grad[k] -= qx[k];
        }
        (grad, ll, quad, curv)
    }

    /// A x residual, natural indexing.
    fn constraint_apply(&self, x: &[f64]) -> Vec<f64> {
        self.a_rows
            .iter()
            .map(|row| row.iter().map(|&(i, v)| v * x[i]).sum())
            .collect()
    }

    /// Project a gradient onto the constraint tangent space.
    fn project_gradient(&self, g: &[f64]) -> Vec<f64> {
        let ag = nalgebra::DVector::from_vec(self.constraint_apply(g));
        let lam = self.aat_chol.solve(&ag);
        let mut out = g.to_vec();
        for (row, &l) in self.a_rows.iter().zip(lam.iter()) {
            for &(i, v) in row {
                out[i] -= v * l;
            }
        }
        out
    }

    /// W = H^{-1} A' (permuted row indexing) and S = A W with its Cholesky.
    fn kriging_data(&self) -> Result<(Vec<Vec<f64>>, nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
        let c = self.n_constraints();
        let mut w: Vec<Vec<f64>> = Vec::with_capacity(c);
        for row in &self.a_rows_perm {
            let mut rhs = vec![0.0; self.dim];
            for &(i, v) in row {
                rhs[i] = v;
            }
            self.ldl_h.solve_in_place(&mut rhs);
            w.push(rhs);
        }
        let mut s = nalgebra::DMatrix::zeros(c, c);
        for j in 0..c {
            for k in j..c {
                let dot: f64 = self.a_rows_perm[j].iter().map(|&(i, v)| v * w[k][i]).sum();
                s[(j, k)] = dot;
                s[(k, j)] = dot;
            }
        }
        let chol = nalgebra::Cholesky::new(s)
            .ok_or_else(|| Error::numeric("constraint Schur complement not positive definite"))?;
        let logdet = 2.0 * (0..c).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
        Ok((w, chol, logdet))
    }

    /// Kriging correction: x <- x - W S^{-1} A x (all W rows permuted).
    fn kriging_project(
        &self,
        x: &mut [f64],
        w: &[Vec<f64>],
        s_chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ) {
        let r = nalgebra::DVector::from_vec(self.constraint_apply(x));
        let y = s_chol.solve(&r);
        for (wk, &yk) in w.iter().zip(y.iter()) {
            if yk != 0.0 {
                for new in 0..self.dim {
                    x[self.perm.perm[new]] -= wk[new] * yk;
                }
            }
        }
    }

    /// Full evaluation at one hyperparameter point.
    pub(crate) fn approx_at(&mut self, theta: &Theta, detail: Detail) -> Result<ApproxState> {
        self.check_budget()?;
        self.evals += 1;
        if !theta.admissible() {
            return Err(Error::model("hyperparameters outside admissible region"));
        }
        let prior_vals = self.model.prior_values(theta);

        // prior-side determinants (mode-independent)
        let _eps_q = self.factor_q(&prior_vals)?;
        let logdet_q = self.ldl_q.log_det();
        let c_count = self.n_constraints();
        let mut s_q = nalgebra::DMatrix::zeros(c_count, c_count);
        {
            let mut wq: Vec<Vec<f64>> = Vec::with_capacity(c_count);
            for row in &self.a_rows_perm {
                let mut rhs = vec![0.0; self.dim];
                for &(i, v) in row {
                    rhs[i] = v;
                }
                self.ldl_q.solve_in_place(&mut rhs);
                wq.push(rhs);
            }
            for j in 0..c_count {
                for k in j..c_count {
                    let dot: f64 =
                        self.a_rows_perm[j].iter().map(|&(i, v)| v * wq[k][i]).sum();
                    s_q[(j, k)] = dot;
                    s_q[(k, j)] = dot;
                }
            }
        }
        let sq_chol = nalgebra::Cholesky::new(s_q)
            .ok_or_else(|| Error::numeric("prior constraint complement not positive definite"))?;
        let logdet_s_q = 2.0 * (0..c_count).map(|i| sq_chol.l()[(i, i)].ln()).sum::<f64>();

        // phase 1: damped Newton on the unconstrained problem
        let mut x = self.warm_start().to_vec();
        let tol = self.settings.newton_grad_tol;
        let max_iter = self.settings.newton_max_iter;
        let mut iterations = 0usize;
        let mut obj = self.objective(&prior_vals, &x);
        loop {
            let (grad, _ll, _quad, curv) = self.grad_at(&prior_vals, &x);
            let grad_norm = grad.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            if grad_norm <= tol || iterations >= max_iter {
                break;
            }
            self.factor_h(&prior_vals, &curv)?;
            let mut delta = vec![0.0; self.dim];
            self.perm.gather(&grad, &mut delta);
            self.ldl_h.solve_in_place(&mut delta);
            let mut step = vec![0.0; self.dim];
            self.perm.scatter(&delta, &mut step);
            let descent: f64 = grad.iter().zip(&step).map(|(a, b)| a * b).sum();
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> =
                    x.iter().zip(&step).map(|(xi, di)| xi + s * di).collect();
                let trial_obj = self.objective(&prior_vals, &trial);
                if trial_obj.is_finite() && trial_obj >= obj + 1e-4 * s * descent.max(0.0) {
                    x = trial;
                    obj = trial_obj;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            iterations += 1;
            self.newton_total += 1;
            if !accepted {
                break;
            }
        }

        // phase 2: conditioning by kriging and constrained polish
        let curv0 = self.grad_at(&prior_vals, &x).3;
        self.factor_h(&prior_vals, &curv0)?;
        let (mut w, mut s_chol, _) = self.kriging_data()?;
        self.kriging_project(&mut x, &w, &s_chol);
        let mut proj_grad_norm = f64::INFINITY;
        for _polish in 0..6 {
            let (grad, _ll, _quad, curv) = self.grad_at(&prior_vals, &x);
            let gp = self.project_gradient(&grad);
            proj_grad_norm = gp.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            if proj_grad_norm <= tol {
                break;
            }
            if iterations >= max_iter + 6 {
                break;
            }
            self.factor_h(&prior_vals, &curv)?;
            let pair = self.kriging_data()?;
            w = pair.0;
            s_chol = pair.1;
            let mut delta = vec![0.0; self.dim];
            self.perm.gather(&grad, &mut delta);
            self.ldl_h.solve_in_place(&mut delta);
            let mut step = vec![0.0; self.dim];
            self.perm.scatter(&delta, &mut step);
            // constrain the step to the tangent manifold
            let ad = nalgebra::DVector::from_vec(self.constraint_apply(&step));
            let y = s_chol.solve(&ad);
            for (wk, &yk) in w.iter().zip(y.iter()) {
                if yk != 0.0 {
                    for new in 0..self.dim {
                        step[self.perm.perm[new]] -= wk[new] * yk;
                    }
                }
            }
            let descent: f64 = gp.iter().zip(&step).map(|(a, b)| a * b).sum();
            let obj_now = self.objective(&prior_vals, &x);
            let mut s = 1.0;
            for _ in 0..30 {
                let trial: Vec<f64> =
                    x.iter().zip(&step).map(|(xi, di)| xi + s * di).collect();
                let trial_obj = self.objective(&prior_vals, &trial);
                if trial_obj.is_finite() && trial_obj >= obj_now + 1e-4 * s * descent.max(0.0) {
                    x = trial;
                    break;
                }
                s *= 0.5;
            }
            iterations += 1;
            self.newton_total += 1;
            self.kriging_project(&mut x, &w, &s_chol);
        }
        let converged = proj_grad_norm <= tol;

        // final consistent state at the mode
        let (grad_f, ll_f, quad_f, curv_f) = self.grad_at(&prior_vals, &x);
        self.factor_h(&prior_vals, &curv_f)?;
        let logdet_s_h = {
            let pair = self.kriging_data()?;
            w = pair.0;
            s_chol = pair.1;
            pair.2
        };
        self.kriging_project(&mut x, &w, &s_chol);
        let gp = self.project_gradient(&grad_f);
        let proj_grad_norm = gp.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let constraint_residual = self
            .constraint_apply(&x)
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        let logdet_h = self.ldl_h.log_det();
        self.set_warm(&x);

        let lml_lap =
            ll_f - 0.5 * quad_f + 0.5 * (logdet_q + logdet_s_q - logdet_h - logdet_s_h);

        let mut state = ApproxState {
            theta: *theta,
            mode: x,
            converged,
            iterations,
            proj_grad_norm,
            constraint_residual,
            log_lik: ll_f,
            quad_prior: quad_f,
            logdet_h,
            logdet_s_h,
            logdet_q,
            logdet_s_q,
            lml_lap,
            unit_mean: Vec::new(),
            unit_sd: Vec::new(),
            alpha_mean: 0.0,
            alpha_sd: 0.0,
        };

        if detail == Detail::Marginals {
            self.extract_marginal_stats(&mut state, &w, &s_chol)?;
        }
        Ok(state)
    }

    /// Per-cell posterior means and standard deviations of the linear
    /// predictor under the constrained Gaussian approximation.
    fn extract_marginal_stats(
        &self,
        state: &mut ApproxState,
        w: &[Vec<f64>],
        s_chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ) -> Result<()> {
        let z = SelectedInverse::compute(&self.ldl_h);
        let c = self.n_constraints();
        let eta_mode = self.model.eta_from_latent(&state.mode);
        let mut means = Vec::with_capacity(self.n_cells);
        let mut sds = Vec::with_capacity(self.n_cells);
        let mut q = nalgebra::DVector::zeros(c);
        for cell in 0..self.n_cells {
            let idx = self.eta_indices_perm(cell);
            let mut base = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    let v = z.get(idx[a].max(idx[b]), idx[a].min(idx[b])).ok_or_else(|| {
                        Error::numeric("linear predictor pair missing from factor pattern")
                    })?;
                    base += v;
                }
            }
            if c > 0 {
                for k in 0..c {
                    q[k] = idx.iter().map(|&p| w[k][p]).sum();
                }
                let sol = s_chol.solve(&q);
                let corr: f64 = (0..c).map(|k| q[k] * sol[k]).sum();
                base -= corr;
            }
            means.push(eta_mode[cell]);
            sds.push(base.max(0.0).sqrt());
        }
        // intercept summary
        let pa = self.perm.inv[self.model.idx_alpha()];
        let mut va = z
            .get(pa, pa)
            .ok_or_else(|| Error::numeric("intercept missing from factor pattern"))?;
        if c > 0 {
            for k in 0..c {
                q[k] = w[k][pa];
            }
            let sol = s_chol.solve(&q);
            va -= (0..c).map(|k| q[k] * sol[k]).sum::<f64>();
        }
        state.alpha_mean = state.mode[self.model.idx_alpha()];
        state.alpha_sd = va.max(0.0).sqrt();
        state.unit_mean = means;
        state.unit_sd = sds;
        Ok(())
    }

    /// Public single-theta approximation with the natural-order precision.
    pub(crate) fn public_approx(&mut self, theta: &Theta) -> Result<GaussianApprox> {
        let state = self.approx_at(theta, Detail::Light)?;
        if !state.converged {
            return Err(Error::NonConvergence(format!(
                "gaussian approximation: projected gradient {:.3e} after {} iterations",
                state.proj_grad_norm, state.iterations
            )));
        }
        // rebuild H at the mode in natural ordering for the caller
        let prior_vals = self.model.prior_values(theta);
        let eta = self.model.eta_from_latent(&state.mode);
        let mut trip = crate::sparse::SymTriplets::new(self.dim);
        for (k, &(i, j)) in self.model.prior_coords().iter().enumerate() {
            trip.push(i, j, prior_vals[k]);
        }
        for cell in 0..self.n_cells {
            let (_, cv) = unit_grad_curv(self.model, cell, eta[cell]);
            let idx = self.eta_indices_nat(cell);
            for a in 0..4 {
                for b in a..4 {
                    trip.push(idx[a], idx[b], cv);
                }
            }
        }
        Ok(GaussianApprox {
            theta: *theta,
            mode: state.mode.clone(),
            precision: trip.build(),
            converged: state.converged,
            iterations: state.iterations,
            grad_norm: state.proj_grad_norm,
            constraint_residual: state.constraint_residual,
            log_det_h: state.logdet_h,
            log_det_s: state.logdet_s_h,
        })
    }
}
