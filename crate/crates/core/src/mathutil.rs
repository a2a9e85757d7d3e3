//! Small numeric helpers: log-gamma, Poisson log-pmf, the normal
//! distribution, log-sum-exp, and Gauss-Hermite nodes.

/// Lanczos approximation of ln Gamma(x) for x > 0 (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// log P(O = o) for O ~ Poisson(mu).
pub fn poisson_log_pmf(o: u64, mu: f64) -> f64 {
    if mu <= 0.0 {
        return if o == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    o as f64 * mu.ln() - mu - ln_gamma(o as f64 + 1.0)
}

/// Error function, Cody-style rational approximations (about 1e-15 accuracy).
pub fn erf(x: f64) -> f64 {
    1.0 - erfc(x)
}

/// Complementary error function. Maclaurin series in the central region
/// (machine precision), Chebyshev tail fit beyond (fractional error < 1.2e-7
/// on an already tiny tail).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    if z < 3.0 {
        let mut sum = 0.0;
        let mut term = x;
        let x2 = x * x;
        let mut k = 0u32;
        loop {
            sum += term / (2 * k + 1) as f64;
            k += 1;
            term = -term * x2 / k as f64;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) || k > 200 {
                break;
            }
        }
        return 1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum;
    }
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587
                                    + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// log(sum exp(v)) guarded against overflow.
pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = vals.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Gauss-Hermite nodes and weights (physicists' convention: integrates
/// f against exp(-x^2)), by Golub-Welsch on the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = nalgebra::DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jac[(i - 1, i)] = b;
        jac[(i, i - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let node = eig.eigenvalues[k];
            let v0 = eig.eigenvectors[(0, k)];
            let weight = v0 * v0 * std::f64::consts::PI.sqrt();
            (node, weight)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_matches_factorials() {
        for k in 1..15u64 {
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            assert_relative_eq!(ln_gamma(k as f64 + 1.0), fact.ln(), epsilon = 1e-10);
        }
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        let mu = 7.3;
        let total: f64 = (0..200).map(|o| poisson_log_pmf(o, mu).exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(normal_cdf(1.96), 0.9750021048517795, epsilon = 1e-9);
        assert_relative_eq!(normal_cdf(2.0), 0.9772498680518208, epsilon = 1e-9);
        assert_relative_eq!(normal_cdf(-1.0), 0.15865525393145707, epsilon = 1e-9);
    }

    #[test]
    fn gauss_hermite_integrates_polynomials() {
        let (x, w) = gauss_hermite(21);
        // moments of exp(-x^2): int x^2 = sqrt(pi)/2, int x^4 = 3 sqrt(pi)/4
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
        let m4: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(4)).sum();
        let sp = std::f64::consts::PI.sqrt();
        assert_relative_eq!(m0, sp, epsilon = 1e-10);
        assert_relative_eq!(m2, sp / 2.0, epsilon = 1e-10);
        assert_relative_eq!(m4, 3.0 * sp / 4.0, epsilon = 1e-9);
    }

    #[test]
    fn log_sum_exp_stable() {
        let v = [-1000.0, -1000.0];
        assert_relative_eq!(log_sum_exp(&v), -1000.0 + 2.0f64.ln(), epsilon = 1e-12);
    }
}
