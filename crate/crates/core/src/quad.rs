//! One-dimensional quadrature rules shared by the deterministic oracles.

use crate::error::{Error, Result};
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Estimated absolute error.
    pub error: f64,
    pub evaluations: usize,
}

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Interval {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss-Kronrod integration on a finite interval.
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate drops below `max(abs_tol, rel_tol * |value|)`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain("adaptive quadrature needs finite limits"));
    }
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Interval {
        a,
        b,
        value: v,
        error: e,
    });
    let mut value = v;
    let mut error = e;
    while error > abs_tol.max(rel_tol * value.abs()) {
        if heap.len() >= max_intervals {
            return Err(Error::numeric_with(
                "adaptive quadrature did not converge",
                format!("value {value:e}, error estimate {error:e}, {} intervals", heap.len()),
            ));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evaluations += 30;
        value += v1 + v2 - worst.value;
        error += e1 + e2 - worst.error;
        if !value.is_finite() {
            return Err(Error::numeric("non-finite integrand in adaptive quadrature"));
        }
        heap.push(Interval {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Interval {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        // Recompute the running sums periodically to avoid drift.
        if heap.len() % 64 == 0 {
            value = heap.iter().map(|i| i.value).sum();
            error = heap.iter().map(|i| i.error).sum();
        }
    }
    Ok(Quadrature {
        value,
        error,
        evaluations,
    })
}

/// Composite trapezoid rule with interval doubling until two successive
/// estimates agree to `rel_tol` (relative) or `abs_tol`.
pub fn trapezoid_refine<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_level: u32,
) -> Result<Quadrature> {
    let h0 = b - a;
    let mut sum = 0.5 * (f(a) + f(b));
    let mut n: usize = 1;
    let mut estimate = sum * h0;
    let mut evaluations = 2;
    for level in 1..=max_level {
        let h = h0 / (2 * n) as f64;
        let mut added = 0.0;
        for i in 0..n {
            added += f(a + (2 * i + 1) as f64 * h);
        }
        evaluations += n;
        sum += added;
        n *= 2;
        let next = sum * h;
        let diff = (next - estimate).abs();
        estimate = next;
        if level >= 4 && diff <= abs_tol.max(rel_tol * estimate.abs()) {
            return Ok(Quadrature {
                value: estimate,
                error: diff,
                evaluations,
            });
        }
    }
    Err(Error::numeric_with(
        "trapezoid refinement did not converge",
        format!("last estimate {estimate:e} after {evaluations} evaluations"),
    ))
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            dp = 1.0;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_polynomial_and_gaussian() {
        let q = adaptive(|x| x * x, 0.0, 3.0, 1e-14, 1e-14, 100).unwrap();
        assert!((q.value - 9.0).abs() < 1e-12);
        let q = adaptive(|x: f64| (-x * x).exp(), -10.0, 10.0, 1e-13, 1e-13, 200).unwrap();
        assert!((q.value - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn adaptive_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2
        let q = adaptive(|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-10, 1e-10, 2000).unwrap();
        assert!((q.value - 2.0).abs() < 1e-8, "{:?}", q);
    }

    #[test]
    fn adaptive_reports_failure() {
        let r = adaptive(|x: f64| 1.0 / x, 0.0, 1.0, 1e-12, 1e-12, 20);
        assert!(matches!(r, Err(Error::Numeric { .. })));
    }

    #[test]
    fn trapezoid_gaussian_is_spectral() {
        let q = trapezoid_refine(|x: f64| (-x * x / 2.0).exp(), -12.0, 12.0, 0.0, 1e-14, 20).unwrap();
        assert!((q.value - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            // exact for degree 2n-1
            let deg = 2 * n - 2;
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            let exact = 2.0 / (deg as f64 + 1.0);
            assert!((q - exact).abs() < 1e-12, "n={n}");
        }
    }
}
