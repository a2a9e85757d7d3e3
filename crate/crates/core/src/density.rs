//! One-dimensional posterior densities on regular grids.
//!
//! Marginals move through the system in this representation: p equally
//! spaced abscissae with nonnegative density values that trapezoid-integrate
//! to one. Mixtures, rescaling to the risk scale, tail masses and quantiles
//! all operate on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathutil::{normal_cdf, normal_pdf};

/// Density evaluated on an equally spaced grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Summary statistics attached to a marginal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Summaries {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

impl GridDensity {
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<GridDensity> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::numeric("grid density needs matching grids of length >= 2"));
        }
        if density.iter().any(|&d| d < 0.0 || !d.is_finite()) {
            return Err(Error::numeric("density values must be finite and nonnegative"));
        }
        Ok(GridDensity { grid, density })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn step(&self) -> f64 {
        (self.grid[self.grid.len() - 1] - self.grid[0]) / (self.grid.len() - 1) as f64
    }

    /// Trapezoid integral over the support.
    pub fn integral(&self) -> f64 {
        let h = self.step();
        let inner: f64 = self.density[1..self.density.len() - 1].iter().sum();
        h * (inner + 0.5 * (self.density[0] + self.density[self.density.len() - 1]))
    }

    pub fn normalize(&mut self) {
        let z = self.integral();
        if z > 0.0 {
            for d in &mut self.density {
                *d /= z;
            }
        }
    }

    pub fn mean(&self) -> f64 {
        let h = self.step();
        let f: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, d)| x * d).collect();
        let inner: f64 = f[1..f.len() - 1].iter().sum();
        h * (inner + 0.5 * (f[0] + f[f.len() - 1]))
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let h = self.step();
        let f: Vec<f64> =
            self.grid.iter().zip(&self.density).map(|(x, d)| (x - m) * (x - m) * d).collect();
        let inner: f64 = f[1..f.len() - 1].iter().sum();
        (h * (inner + 0.5 * (f[0] + f[f.len() - 1]))).max(0.0)
    }

    /// CDF at the grid nodes (trapezoid, starting at zero).
    fn cdf_nodes(&self) -> Vec<f64> {
        let h = self.step();
        let mut c = Vec::with_capacity(self.len());
        c.push(0.0);
        for k in 1..self.len() {
            let inc = 0.5 * h * (self.density[k - 1] + self.density[k]);
            c.push(c[k - 1] + inc);
        }
        c
    }

    /// Probability mass above `x` (density treated as zero outside the grid).
    pub fn tail_above(&self, x: f64) -> f64 {
        let total = self.integral();
        if x <= self.grid[0] {
            return total;
        }
        if x >= self.grid[self.len() - 1] {
            return 0.0;
        }
        let h = self.step();
        let k = (((x - self.grid[0]) / h).floor() as usize).min(self.len() - 2);
        let x0 = self.grid[k];
        let d0 = self.density[k];
        let d1 = self.density[k + 1];
        let frac = (x - x0) / h;
        // mass of [x, x1] with linear density
        let dx = d0 + (d1 - d0) * frac;
        let partial = 0.5 * (dx + d1) * (h - (x - x0));
        let cdf = self.cdf_nodes();
        (total - cdf[k + 1]) + partial
    }

    /// Quantile via exact inversion of the piecewise-linear-density CDF.
    pub fn quantile(&self, q: f64) -> f64 {
        let cdf = self.cdf_nodes();
        let total = cdf[self.len() - 1];
        let target = q.clamp(0.0, 1.0) * total;
        let mut k = match cdf.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
            Ok(i) => i.min(self.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.len() - 2),
        };
        while k + 1 < self.len() - 1 && cdf[k + 1] < target {
            k += 1;
        }
        let h = self.step();
        let rem = target - cdf[k];
        let d0 = self.density[k];
        let d1 = self.density[k + 1];
        let slope = (d1 - d0) / h;
        // solve d0 u + slope u^2 / 2 = rem for u in [0, h]
        let u = if slope.abs() < 1e-14 * d0.abs().max(1e-300) {
            if d0 > 0.0 {
                rem / d0
            } else {
                0.0
            }
        } else {
            let disc = (d0 * d0 + 2.0 * slope * rem).max(0.0);
            (-d0 + disc.sqrt()) / slope
        };
        self.grid[k] + u.clamp(0.0, h)
    }

    /// Inverse-CDF sample given a uniform draw.
    pub fn sample(&self, u: f64) -> f64 {
        self.quantile(u)
    }

    pub fn summaries(&self) -> Summaries {
        Summaries {
            mean: self.mean(),
            sd: self.variance().sqrt(),
            q025: self.quantile(0.025),
            median: self.quantile(0.5),
            q975: self.quantile(0.975),
        }
    }

    /// Evaluate the density at arbitrary points by monotone cubic (PCHIP)
    /// interpolation, zero outside the support.
    pub fn eval_pchip(&self, xs: &[f64]) -> Vec<f64> {
        let slopes = pchip_slopes(&self.grid, &self.density);
        xs.iter()
            .map(|&x| {
                if x < self.grid[0] || x > self.grid[self.len() - 1] {
                    return 0.0;
                }
                let h = self.step();
                let k = (((x - self.grid[0]) / h).floor() as usize).min(self.len() - 2);
                let t = (x - self.grid[k]) / h;
                let (y0, y1) = (self.density[k], self.density[k + 1]);
                let (m0, m1) = (slopes[k] * h, slopes[k + 1] * h);
                let t2 = t * t;
                let t3 = t2 * t;
                let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                    + (t3 - 2.0 * t2 + t) * m0
                    + (-2.0 * t3 + 3.0 * t2) * y1
                    + (t3 - t2) * m1;
                v.max(0.0)
            })
            .collect()
    }

    /// Change of variables x -> exp(x) with the exact Jacobian, resampled
    /// onto `p` equally spaced points of the transformed support.
    pub fn exp_transform(&self, p: usize) -> Result<GridDensity> {
        let lo = self.grid[0].exp();
        let hi = self.grid[self.len() - 1].exp();
        let grid: Vec<f64> = linspace(lo, hi, p);
        let logs: Vec<f64> = grid.iter().map(|&r| r.ln()).collect();
        let base = self.eval_pchip(&logs);
        let density: Vec<f64> =
            base.iter().zip(&grid).map(|(d, r)| if *r > 0.0 { d / r } else { 0.0 }).collect();
        let mut out = GridDensity::new(grid, density)?;
        // renormalize the interpolation error away; the Jacobian is exact
        out.normalize();
        Ok(out)
    }
}

pub fn linspace(lo: f64, hi: f64, p: usize) -> Vec<f64> {
    assert!(p >= 2);
    let h = (hi - lo) / (p - 1) as f64;
    (0..p).map(|k| lo + h * k as f64).collect()
}

/// Fritsch-Carlson monotone cubic slopes.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    // clamp to preserve monotonicity on each interval
    for k in 0..n - 1 {
        if delta[k] == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
        } else {
            let a = m[k] / delta[k];
            let b = m[k + 1] / delta[k];
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                m[k] = tau * a * delta[k];
                m[k + 1] = tau * b * delta[k];
            }
        }
    }
    m
}

/// Density of a Gaussian mixture evaluated on `p` points spanning the
/// mixture mean plus/minus `span` mixture standard deviations.
pub fn gaussian_mixture_density(
    weights: &[f64],
    means: &[f64],
    sds: &[f64],
    p: usize,
    span: f64,
) -> GridDensity {
    let (mean, var) = gaussian_mixture_moments(weights, means, sds);
    let sd = var.sqrt().max(1e-12);
    let grid = linspace(mean - span * sd, mean + span * sd, p);
    let density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            weights
                .iter()
                .zip(means)
                .zip(sds)
                .map(|((w, m), s)| w * normal_pdf((x - m) / s) / s)
                .sum()
        })
        .collect();
    GridDensity { grid, density }
}

/// Mean and variance of a Gaussian mixture.
pub fn gaussian_mixture_moments(weights: &[f64], means: &[f64], sds: &[f64]) -> (f64, f64) {
    let mean: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
    let second: f64 =
        weights.iter().zip(means).zip(sds).map(|((w, m), s)| w * (s * s + m * m)).sum();
    (mean, (second - mean * mean).max(0.0))
}

/// Quantile of a Gaussian mixture by bisection on the analytic CDF.
pub fn gaussian_mixture_quantile(weights: &[f64], means: &[f64], sds: &[f64], q: f64) -> f64 {
    let (mean, var) = gaussian_mixture_moments(weights, means, sds);
    let sd = var.sqrt().max(1e-12);
    let mut lo = mean - 12.0 * sd;
    let mut hi = mean + 12.0 * sd;
    let cdf = |x: f64| -> f64 {
        weights
            .iter()
            .zip(means)
            .zip(sds)
            .map(|((w, m), s)| w * normal_cdf((x - m) / s))
            .sum()
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * sd.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian(p: usize, mean: f64, sd: f64) -> GridDensity {
        gaussian_mixture_density(&[1.0], &[mean], &[sd], p, 5.0)
    }

    #[test]
    fn gaussian_grid_integrates_to_one() {
        let g = gaussian(75, 0.3, 0.8);
        assert!((g.integral() - 1.0).abs() < 1e-2);
        let s = g.summaries();
        assert_relative_eq!(s.mean, 0.3, epsilon = 1e-3);
        assert_relative_eq!(s.sd, 0.8, epsilon = 2e-2);
    }

    #[test]
    fn quantiles_of_a_gaussian() {
        let g = gaussian(301, 0.0, 1.0);
        assert_relative_eq!(g.quantile(0.5), 0.0, epsilon = 2e-3);
        assert_relative_eq!(g.quantile(0.975), 1.959964, epsilon = 5e-3);
        // monotone
        assert!(g.quantile(0.1) < g.quantile(0.2));
    }

    #[test]
    fn tail_above_matches_normal_cdf() {
        let g = gaussian(601, 0.1, 0.05);
        // mass above zero on the log scale
        let p = g.tail_above(0.0);
        assert_relative_eq!(p, normal_cdf(2.0), epsilon = 1e-3);
    }

    #[test]
    fn mixture_mean_of_two_components() {
        let d = gaussian_mixture_density(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0], 75, 5.0);
        assert_relative_eq!(d.mean(), 0.5, epsilon = 1e-2);
        assert!((d.integral() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn exp_transform_preserves_quantiles() {
        let g = gaussian(401, 0.2, 0.1);
        let r = g.exp_transform(401).unwrap();
        assert_relative_eq!(r.quantile(0.5), (0.2f64).exp(), epsilon = 2e-3);
        assert!((r.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pchip_stays_nonnegative() {
        let g = GridDensity::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let xs: Vec<f64> = (0..61).map(|k| k as f64 * 0.05).collect();
        for v in g.eval_pchip(&xs) {
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn sampling_inverts_cdf() {
        let g = gaussian(401, -0.4, 0.6);
        let s = g.sample(0.5);
        assert_relative_eq!(s, -0.4, epsilon = 2e-3);
    }
}
