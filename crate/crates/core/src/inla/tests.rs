use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use crate::config::{EngineSettings, ModelSpec};
use crate::gmrf::InteractionType;
use crate::graph::AreaGraph;
use crate::lgm::{build_model, CountData, LatentModel, Likelihood, Theta};

use super::gaussian::Detail;
use super::*;

fn path(n: usize) -> AreaGraph {
    let ids = (0..n).map(|i| format!("a{i}")).collect();
    let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
    AreaGraph::new(ids, edges).unwrap()
}

fn data(g: &AreaGraph, t_len: usize, observed: Vec<u64>, expected: f64) -> CountData {
    CountData::new(
        g.ids().to_vec(),
        (1..=t_len as i64).collect(),
        observed,
        vec![expected; g.n() * t_len],
    )
    .unwrap()
}

fn theta() -> Theta {
    Theta { tau_xi: 4.0, lambda_xi: 0.4, tau_gamma: 5.0, tau_delta: 8.0 }
}

/// Dense KKT oracle for the constrained Gaussian posterior mode.
fn dense_constrained_mode(model: &LatentModel, th: &Theta) -> Vec<f64> {
    let dim = model.dim();
    let (y, var) = match &model.likelihood {
        Likelihood::Gaussian { y, variance } => (y.clone(), variance.clone()),
        _ => panic!("oracle needs gaussian likelihood"),
    };
    let q = model.joint_precision(th).unwrap().to_dense();
    let n_cells = model.n_cells();
    let mut b = DMatrix::zeros(n_cells, dim);
    for t in 0..model.t_len {
        for i in 0..model.n {
            let c = t * model.n + i;
            for idx in model.eta_indices(i, t) {
                b[(c, idx)] = 1.0;
            }
        }
    }
    let vinv = DMatrix::from_diagonal(&DVector::from_iterator(
        n_cells,
        var.iter().map(|v| 1.0 / v),
    ));
    let h = &q + b.transpose() * &vinv * &b;
    let rows = model.constraint_rows();
    let c_len = rows.len();
    let mut a = DMatrix::zeros(c_len, dim);
    for (r, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            a[(r, i)] = v;
        }
    }
    let mut kkt = DMatrix::zeros(dim + c_len, dim + c_len);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(&h);
    kkt.view_mut((dim, 0), (c_len, dim)).copy_from(&a);
    kkt.view_mut((0, dim), (dim, c_len)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(dim + c_len);
    let bt_viy = b.transpose() * &vinv * DVector::from_vec(y);
    rhs.rows_mut(0, dim).copy_from(&bt_viy);
    let sol = kkt.lu().solve(&rhs).unwrap();
    sol.rows(0, dim).iter().copied().collect()
}

#[test]
fn smr_one_is_a_fixed_point() {
    let g = path(4);
    let t_len = 3;
    let e = 50.0;
    let d = data(&g, t_len, vec![e as u64; 4 * t_len], e);
    let spec = ModelSpec::basic(InteractionType::I, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let ga = gaussian_approx(&m, &theta(), &EngineSettings::default()).unwrap();
    assert!(ga.converged);
    assert!(ga.constraint_residual <= 1e-8, "constraint residual {}", ga.constraint_residual);
    let eta = m.eta_from_latent(&ga.mode);
    for &v in &eta {
        assert!(v.abs() < 0.02, "eta should sit near zero, got {v}");
    }
}

#[test]
fn gaussian_standin_matches_dense_kkt() {
    let g = path(3);
    let t_len = 2;
    let d = data(&g, t_len, vec![1; 6], 1.0);
    let spec = ModelSpec::basic(InteractionType::II, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let y = vec![0.3, -0.2, 0.5, 0.0, 0.4, -0.6];
    let v = vec![0.5; 6];
    let m = m.with_likelihood(Likelihood::Gaussian { y, variance: v }).unwrap();
    let th = theta();
    let oracle = dense_constrained_mode(&m, &th);
    let ga = gaussian_approx(&m, &th, &EngineSettings::default()).unwrap();
    for i in 0..m.dim() {
        assert!(
            (ga.mode[i] - oracle[i]).abs() < 1e-6,
            "latent {i}: {} vs oracle {}",
            ga.mode[i],
            oracle[i]
        );
    }
}

#[test]
fn poisson_mode_matches_independent_optimizer() {
    let g = path(2);
    let t_len = 2;
    let d = data(&g, t_len, vec![12, 7, 9, 15], 10.0);
    let spec = ModelSpec::basic(InteractionType::I, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let th = theta();

    // independent oracle: dense projected Newton on the same objective
    let dim = m.dim();
    let q = m.joint_precision(&th).unwrap().to_dense();
    let rows = m.constraint_rows();
    let mut a = DMatrix::zeros(rows.len(), dim);
    for (r, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            a[(r, i)] = v;
        }
    }
    let mut x = DVector::zeros(dim);
    for _ in 0..100 {
        let eta = m.eta_from_latent(x.as_slice());
        let mut grad = DVector::zeros(dim);
        let mut hess = q.clone();
        for t in 0..m.t_len {
            for i in 0..m.n {
                let c = t * m.n + i;
                let mu = (m.offset_log_e[c] + eta[c]).exp();
                let gval = m.observed[c] as f64 - mu;
                let idx = m.eta_indices(i, t);
                for &p in &idx {
                    grad[p] += gval;
                }
                for &p in &idx {
                    for &r in &idx {
                        hess[(p, r)] += mu;
                    }
                }
            }
        }
        grad -= &q * &x;
        // KKT step
        let c_len = rows.len();
        let mut kkt = DMatrix::zeros(dim + c_len, dim + c_len);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&hess);
        kkt.view_mut((dim, 0), (c_len, dim)).copy_from(&a);
        kkt.view_mut((0, dim), (dim, c_len)).copy_from(&a.transpose());
        let mut rhs = DVector::zeros(dim + c_len);
        rhs.rows_mut(0, dim).copy_from(&grad);
        let resid = -(&a * &x);
        rhs.rows_mut(dim, c_len).copy_from(&resid);
        let sol = kkt.lu().solve(&rhs).unwrap();
        let step = sol.rows(0, dim).into_owned();
        x += &step;
        if step.amax() < 1e-12 {
            break;
        }
    }

    let ga = gaussian_approx(&m, &th, &EngineSettings::default()).unwrap();
    for i in 0..dim {
        assert!(
            (ga.mode[i] - x[i]).abs() < 1e-6,
            "latent {i}: {} vs oracle {}",
            ga.mode[i],
            x[i]
        );
    }
}

#[test]
fn gaussian_evidence_matches_closed_form() {
    let g = path(3);
    let t_len = 2;
    let d = data(&g, t_len, vec![1; 6], 1.0);
    let spec = ModelSpec::basic(InteractionType::I, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let y = vec![0.25, -0.1, 0.05, 0.3, -0.2, 0.15];
    let var = vec![0.7; 6];
    let m = m
        .with_likelihood(Likelihood::Gaussian { y: y.clone(), variance: var.clone() })
        .unwrap();
    let th = theta();

    // closed-form evidence on the constrained subspace
    let dim = m.dim();
    let rows = m.constraint_rows();
    let mut a = DMatrix::zeros(rows.len(), dim);
    for (r, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            a[(r, i)] = v;
        }
    }
    // orthonormal null-space basis of A from the spectrum of A'A
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut null_cols: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] < 1e-10).collect();
    null_cols.sort_unstable();
    let mut z = DMatrix::zeros(dim, null_cols.len());
    for (c, &k) in null_cols.iter().enumerate() {
        z.set_column(c, &eig.eigenvectors.column(k));
    }

    let q = m.joint_precision(&th).unwrap().to_dense();
    let n_cells = m.n_cells();
    let mut b = DMatrix::zeros(n_cells, dim);
    for t in 0..m.t_len {
        for i in 0..m.n {
            let c = t * m.n + i;
            for idx in m.eta_indices(i, t) {
                b[(c, idx)] = 1.0;
            }
        }
    }
    let qz = z.transpose() * &q * &z;
    let vinv = DMatrix::from_diagonal(&DVector::from_iterator(
        n_cells,
        var.iter().map(|v| 1.0 / v),
    ));
    let bz = &b * &z;
    let hz = &qz + bz.transpose() * &vinv * &bz;
    let yv = DVector::from_vec(y.clone());
    let bv = bz.transpose() * &vinv * &yv;
    let hz_inv_bv = hz.clone().lu().solve(&bv).unwrap();
    let log_evidence = -0.5 * (n_cells as f64) * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * var.iter().map(|v| v.ln()).sum::<f64>()
        + 0.5 * qz.clone().lu().determinant().ln()
        - 0.5 * hz.clone().lu().determinant().ln()
        - 0.5 * (yv.transpose() * &vinv * &yv)[(0, 0)]
        + 0.5 * bv.dot(&hz_inv_bv);

    let mut engine = Engine::new(&m, EngineSettings::default()).unwrap();
    let state = engine.approx_at(&th, Detail::Light).unwrap();
    assert!(
        (state.lml_lap - log_evidence).abs() < 1e-5,
        "laplace evidence {} vs closed form {}",
        state.lml_lap,
        log_evidence
    );
}

#[test]
fn prior_determinants_match_analytic_gdet() {
    let g = path(4);
    let t_len = 3;
    let d = data(&g, t_len, vec![5; 12], 5.0);
    for ty in [InteractionType::I, InteractionType::IV] {
        let spec = ModelSpec::basic(ty, 0, 1);
        let m = build_model(&g, &d, &spec).unwrap();
        let th = theta();
        let settings = EngineSettings::default();
        let mut engine = Engine::new(&m, settings.clone()).unwrap();
        let state = engine.approx_at(&th, Detail::Light).unwrap();
        let r_flat = m.dim() - m.prior_rank();
        let expected = m.log_gdet_prior(&th) + r_flat as f64 * settings.ridge_eps.ln();
        assert!(
            (state.logdet_q - expected).abs() < 1e-3,
            "type {ty}: numeric {} vs analytic {}",
            state.logdet_q,
            expected
        );
    }
}

#[test]
fn fit_smoke_and_determinism() {
    let g = path(3);
    let t_len = 3;
    let d = data(&g, t_len, vec![8, 12, 9, 11, 10, 9, 13, 8, 10], 10.0);
    let spec = ModelSpec::basic(InteractionType::I, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let mut settings = EngineSettings::default();
    settings.grid_points_per_axis = 3;
    let r1 = fit(&m, &settings).unwrap();
    let r2 = fit(&m, &settings).unwrap();

    assert_eq!(r1.marginals_log_risk.len(), 9);
    for lm in &r1.marginals_log_risk {
        let integral = lm.density.integral();
        assert!((integral - 1.0).abs() < 1e-2, "marginal integral {integral}");
        assert!(lm.summaries.q025 <= lm.summaries.median);
        assert!(lm.summaries.median <= lm.summaries.q975);
    }
    for &c in &r1.cpo {
        assert!(c > 0.0 && c <= 1.0);
    }
    // bit-identical across runs
    let j1 = serde_json::to_string(&r1.marginals_log_risk).unwrap();
    let j2 = serde_json::to_string(&r2.marginals_log_risk).unwrap();
    assert_eq!(j1, j2);
}

#[test]
fn mixture_mean_identity() {
    let g = path(3);
    let t_len = 2;
    let d = data(&g, t_len, vec![9, 12, 8, 10, 11, 13], 10.0);
    let spec = ModelSpec::basic(InteractionType::I, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let mut settings = EngineSettings::default();
    settings.grid_points_per_axis = 3;
    let grid = explore_hyper(&m, &settings).unwrap();
    let marginals = latent_marginals(&m, &grid, &settings).unwrap();

    // recompute the per-point means independently
    let mut engine = Engine::new(&m, settings).unwrap();
    let mut mix_mean = vec![0.0; m.n_cells()];
    for p in &grid.points {
        let st = engine.approx_at(&p.theta, Detail::Marginals).unwrap();
        for c in 0..m.n_cells() {
            mix_mean[c] += p.weight * st.unit_mean[c];
        }
    }
    for c in 0..m.n_cells() {
        assert_relative_eq!(marginals[c].summaries.mean, mix_mean[c], epsilon = 1e-10);
    }
}

#[test]
fn weights_sum_to_one_and_mode_is_max() {
    let g = path(3);
    let t_len = 2;
    let d = data(&g, t_len, vec![9, 12, 8, 10, 11, 13], 10.0);
    let spec = ModelSpec::basic(InteractionType::I, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let mut settings = EngineSettings::default();
    settings.grid_points_per_axis = 3;
    let grid = explore_hyper(&m, &settings).unwrap();
    let total: f64 = grid.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    let max_lp = grid
        .points
        .iter()
        .map(|p| p.log_posterior)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(grid.points[grid.mode_index].log_posterior, max_lp);
}

#[test]
fn fixed_hypers_give_one_dimensional_stencil() {
    let g = path(3);
    let t_len = 2;
    let d = data(&g, t_len, vec![9, 12, 8, 10, 11, 13], 10.0);
    let spec = ModelSpec::basic(InteractionType::I, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let mut settings = EngineSettings::default();
    settings.grid_points_per_axis = 5;
    settings.fixed_logit_lambda = Some(0.0);
    settings.fixed_log_tau_gamma = Some(2.0);
    settings.fixed_log_tau_delta = Some(2.0);
    let grid = explore_hyper(&m, &settings).unwrap();
    assert!(grid.points.len() <= 5);
    // all variation is along the first axis
    for p in &grid.points {
        assert_eq!(p.internal[1], 0.0);
    }
    // weights unimodal around the mode
    let w = grid.weights();
    let mode = grid.mode_index;
    for k in 1..=mode {
        assert!(w[k] >= w[k - 1] * 0.999);
    }
    for k in mode + 1..w.len() {
        assert!(w[k] <= w[k - 1] * 1.001);
    }
}

#[test]
fn pruning_respects_the_log_drop_rule() {
    let g = path(3);
    let t_len = 2;
    let d = data(&g, t_len, vec![9, 12, 8, 10, 11, 13], 10.0);
    let spec = ModelSpec::basic(InteractionType::I, 0, 1);
    let m = build_model(&g, &d, &spec).unwrap();
    let mut settings = EngineSettings::default();
    settings.grid_points_per_axis = 5;
    let grid = explore_hyper(&m, &settings).unwrap();
    let max_lp = grid.points[grid.mode_index].log_posterior;
    for p in &grid.points {
        assert!(max_lp - p.log_posterior <= settings.prune_log_drop + 1e-12);
        assert!(p.weight >= (-settings.prune_log_drop).exp() * 0.999 / grid.points.len() as f64
            || p.weight <= 1.0);
    }
}
