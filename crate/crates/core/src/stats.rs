//! Deterministic reductions for signed, log-domain Monte Carlo samples.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Neumaier-compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// One Monte Carlo sample `sign · exp(log_abs)` together with its interaction
/// log-weight (the exponent of the Feynman–Kac factor).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLogSample {
    pub sign: f64,
    pub log_abs: f64,
    pub log_weight: f64,
}

impl SignedLogSample {
    pub fn zero(log_weight: f64) -> Self {
        Self {
            sign: 0.0,
            log_abs: f64::NEG_INFINITY,
            log_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogWeightStats {
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub standard_error: f64,
    pub samples: usize,
    /// (Σ|v|)² / Σv².
    pub ess: f64,
    pub log_weights: LogWeightStats,
}

/// Running max of log|v| with sums rescaled whenever the max increases.
#[derive(Debug, Clone, Default)]
struct ShiftedAccumulator {
    shift: f64,
    signed: CompensatedSum,
    abs: CompensatedSum,
    started: bool,
}

impl ShiftedAccumulator {
    fn push(&mut self, s: &SignedLogSample) {
        if s.sign == 0.0 {
            return;
        }
        if !self.started {
            self.shift = s.log_abs;
            self.started = true;
        } else if s.log_abs > self.shift {
            let scale = (self.shift - s.log_abs).exp();
            let (v, a) = (self.signed.value() * scale, self.abs.value() * scale);
            self.signed = CompensatedSum::default();
            self.signed.add(v);
            self.abs = CompensatedSum::default();
            self.abs.add(a);
            self.shift = s.log_abs;
        }
        let w = (s.log_abs - self.shift).exp();
        self.signed.add(s.sign * w);
        self.abs.add(w);
    }
}

/// Mean, standard error and diagnostics of `sign · exp(log_abs)` in index order.
pub fn aggregate(samples: &[SignedLogSample]) -> Result<Aggregate> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::domain("cannot aggregate zero samples"));
    }
    let log_weights = log_weight_stats(samples);
    let mut acc = ShiftedAccumulator::default();
    for s in samples {
        if !(s.sign == 0.0 || s.log_abs.is_finite()) || s.sign.is_nan() {
            return Err(non_finite(log_weights));
        }
        acc.push(s);
    }
    if !acc.started {
        return Ok(Aggregate {
            mean: 0.0,
            standard_error: 0.0,
            samples: n,
            ess: 0.0,
            log_weights,
        });
    }
    let shift = acc.shift;
    let scaled_mean = acc.signed.value() / n as f64;
    let mut sq = CompensatedSum::default();
    let mut sq_raw = CompensatedSum::default();
    for s in samples {
        let v = if s.sign == 0.0 {
            0.0
        } else {
            s.sign * (s.log_abs - shift).exp()
        };
        sq.add((v - scaled_mean) * (v - scaled_mean));
        sq_raw.add(v * v);
    }
    let var = if n > 1 { sq.value() / (n - 1) as f64 } else { 0.0 };
    let scale = shift.exp();
    let mean = scaled_mean * scale;
    let standard_error = (var / n as f64).sqrt() * scale;
    let ess = acc.abs.value().powi(2) / sq_raw.value();
    if !(mean.is_finite() && standard_error.is_finite()) {
        return Err(non_finite(log_weights));
    }
    Ok(Aggregate {
        mean,
        standard_error,
        samples: n,
        ess,
        log_weights,
    })
}

fn non_finite(lw: LogWeightStats) -> Error {
    Error::numeric_with(
        "Monte Carlo mean is not finite",
        format!(
            "log-weight max {:e}, mean {:e}, variance {:e}",
            lw.max, lw.mean, lw.variance
        ),
    )
}

fn log_weight_stats(samples: &[SignedLogSample]) -> LogWeightStats {
    let n = samples.len() as f64;
    let mut max = f64::NEG_INFINITY;
    let mut sum = CompensatedSum::default();
    for s in samples {
        max = max.max(s.log_weight);
        sum.add(s.log_weight);
    }
    let mean = sum.value() / n;
    let mut sq = CompensatedSum::default();
    for s in samples {
        sq.add((s.log_weight - mean).powi(2));
    }
    LogWeightStats {
        max,
        mean,
        variance: if samples.len() > 1 { sq.value() / (n - 1.0) } else { 0.0 },
    }
}

/// Sum of independent estimators (e.g. the terms of an exact outer sum).
pub fn combine_independent(parts: &[Aggregate]) -> Result<Aggregate> {
    let first = parts
        .first()
        .ok_or_else(|| Error::domain("nothing to combine"))?;
    let mut mean = CompensatedSum::default();
    let mut var = CompensatedSum::default();
    let mut samples = 0;
    let mut ess = 0.0;
    let mut max = first.log_weights.max;
    let (mut lw_sum, mut lw_sq) = (CompensatedSum::default(), CompensatedSum::default());
    for p in parts {
        mean.add(p.mean);
        var.add(p.standard_error * p.standard_error);
        samples += p.samples;
        ess += p.ess;
        max = max.max(p.log_weights.max);
        let n = p.samples as f64;
        lw_sum.add(n * p.log_weights.mean);
        lw_sq.add((n - 1.0) * p.log_weights.variance + n * p.log_weights.mean.powi(2));
    }
    let n = samples as f64;
    let lw_mean = lw_sum.value() / n;
    let lw_var = if samples > 1 {
        ((lw_sq.value() - n * lw_mean * lw_mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(Aggregate {
        mean: mean.value(),
        standard_error: var.value().sqrt(),
        samples,
        ess,
        log_weights: LogWeightStats {
            max,
            mean: lw_mean,
            variance: lw_var,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(v: f64) -> SignedLogSample {
        if v == 0.0 {
            return SignedLogSample::zero(0.0);
        }
        SignedLogSample {
            sign: v.signum(),
            log_abs: v.abs().ln(),
            log_weight: 0.0,
        }
    }

    #[test]
    fn matches_naive_statistics() {
        let vals = [1.5, -0.5, 2.0, 0.25, 3.0, -1.0];
        let s: Vec<_> = vals.iter().map(|&v| plain(v)).collect();
        let a = aggregate(&s).unwrap();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((a.mean - mean).abs() < 1e-15);
        assert!((a.standard_error - (var / n).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn survives_huge_log_weights() {
        let s: Vec<_> = (0..10)
            .map(|i| SignedLogSample {
                sign: 1.0,
                log_abs: 700.0 + i as f64 * 0.01,
                log_weight: 700.0,
            })
            .collect();
        let a = aggregate(&s).unwrap();
        assert!(a.mean.is_finite() && a.mean > 1e304);
        let overflow: Vec<_> = (0..10)
            .map(|_| SignedLogSample {
                sign: 1.0,
                log_abs: 1000.0,
                log_weight: 1000.0,
            })
            .collect();
        assert!(matches!(aggregate(&overflow), Err(Error::Numeric { .. })));
    }

    #[test]
    fn identical_samples_are_exact() {
        let v = 0.123_456_789_012_345_67;
        let s = vec![plain(v); 100_000];
        let a = aggregate(&s).unwrap();
        assert!((a.mean - v).abs() <= 1e-15 * v);
        assert!(a.standard_error <= 1e-16 * v);
        assert!((a.ess - 100_000.0).abs() < 1e-6);
    }

    #[test]
    fn ess_detects_degenerate_weights() {
        let mut s = vec![plain(1e-30); 999];
        s.push(plain(1.0));
        let a = aggregate(&s).unwrap();
        assert!(a.ess < 1.01);
    }

    #[test]
    fn combine_adds_means_and_variances() {
        let a = aggregate(&[plain(1.0), plain(3.0)]).unwrap();
        let b = aggregate(&[plain(-2.0), plain(0.0)]).unwrap();
        let c = combine_independent(&[a, b]).unwrap();
        assert!((c.mean - (2.0 - 1.0)).abs() < 1e-15);
        let se = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
        assert!((c.standard_error - se).abs() < 1e-15);
        assert_eq!(c.samples, 4);
    }
}
