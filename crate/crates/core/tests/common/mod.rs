//! Test-only oracles that share no code with the library's samplers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pamfk::rng::{derive_stream, StreamKey};

/// One-dimensional Brownian motion started at `start` and conditioned on
/// `pins` (time, value), described on `times` by brute-force Gaussian
/// conditioning of the covariance min(s, s').
pub struct ExactPinnedGaussian {
    pub times: Vec<f64>,
    /// Indices of grid times not fixed by a pin.
    pub free: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    /// Pinned value per grid index, when pinned.
    pub fixed: Vec<Option<f64>>,
}

impl ExactPinnedGaussian {
    pub fn new(times: &[f64], start: f64, pins: &[(f64, f64)]) -> Self {
        let fixed: Vec<Option<f64>> = times
            .iter()
            .map(|&s| {
                if s == 0.0 {
                    Some(start)
                } else {
                    pins.iter().find(|p| p.0 == s).map(|p| p.1)
                }
            })
            .collect();
        let free: Vec<usize> = (0..times.len()).filter(|&i| fixed[i].is_none()).collect();
        let ptimes: Vec<f64> = pins.iter().map(|p| p.0).collect();
        let k = |a: f64, b: f64| a.min(b);
        let (m, p) = (free.len(), ptimes.len());
        let sgg = DMatrix::from_fn(m, m, |i, j| k(times[free[i]], times[free[j]]));
        let sgp = DMatrix::from_fn(m, p, |i, j| k(times[free[i]], ptimes[j]));
        let spp = DMatrix::from_fn(p, p, |i, j| k(ptimes[i], ptimes[j]));
        let spp_inv = spp.try_inverse().expect("pin covariance invertible");
        let resid = DVector::from_iterator(p, pins.iter().map(|q| q.1 - start));
        let mean = DVector::from_element(m, start) + &sgp * &spp_inv * resid;
        let cov = &sgg - &sgp * &spp_inv * sgp.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = cov.clone().cholesky().expect("conditional covariance is positive definite").l();
        Self { times: times.to_vec(), free, mean, cov, chol, fixed }
    }

    /// Full path on the grid from the normals of stream (seed, index, lane).
    pub fn sample(&self, seed: u64, index: u64, lane: u32) -> Vec<f64> {
        let mut s = derive_stream(StreamKey::new(seed, index, lane));
        let z = DVector::from_iterator(self.free.len(), (0..self.free.len()).map(|_| s.normal()));
        let v = &self.mean + &self.chol * z;
        let mut out: Vec<f64> = self.fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
        for (j, &i) in self.free.iter().enumerate() {
            out[i] = v[j];
        }
        out
    }
}

/// Uniform grid with `steps` intervals on each consecutive pair of `knots`.
pub fn knot_grid(knots: &[f64], steps: usize) -> Vec<f64> {
    let mut g = vec![knots[0]];
    for w in knots.windows(2) {
        for i in 1..=steps {
            g.push(if i == steps { w[1] } else { w[0] + (w[1] - w[0]) * i as f64 / steps as f64 });
        }
    }
    g
}

pub fn gaussian_density(var: f64, x: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Plain mean and standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn chi2_sf(x: f64, df: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    1.0 - ChiSquared::new(df).unwrap().cdf(x)
}

pub fn chi2_quantile(p: f64, df: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(df).unwrap().inverse_cdf(p)
}

/// Trapezoid ∫ p_var(a(s) − b(s)) ds on `times`.
pub fn trapezoid_gaussian_interaction(times: &[f64], a: &[f64], b: &[f64], var: f64) -> f64 {
    let f: Vec<f64> = a.iter().zip(b).map(|(x, y)| gaussian_density(var, x - y)).collect();
    times.windows(2).enumerate().map(|(i, w)| 0.5 * (w[1] - w[0]) * (f[i] + f[i + 1])).sum()
}
