//! Spatial covariance models described by their spectral measure.
//!
//! Fourier convention: Fν(ξ) = ∫ e^{-iξ·x} ν(dx), so Fδ₀ = 1 and white noise
//! has μ equal to Lebesgue measure. Every model here has a radial spectral
//! density, μ(dξ) = g(|ξ|) dξ, and the mollified covariance is
//!
//! ```text
//! Λ_ε(x) = (2π)^{-d} ∫ e^{i x·ξ - ε|ξ|²} g(|ξ|) dξ.
//! ```

use crate::error::{Error, Result};
use crate::quad;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

const SPECTRAL_REL_TOL: f64 = 1e-9;
/// e^{-εR²} below this is treated as zero when truncating spectral integrals.
const SPECTRAL_TAIL_LOG: f64 = 41.5;

pub type RadialFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A user-supplied radial spectral density g, with μ(dξ) = g(|ξ|) dξ.
#[derive(Clone)]
pub struct RadialDensity {
    pub name: String,
    g: Arc<RadialFn>,
}

impl fmt::Debug for RadialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialDensity").field("name", &self.name).finish()
    }
}

impl RadialDensity {
    pub fn new(name: impl Into<String>, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            g: Arc::new(g),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.g)(r)
    }
}

/// Registry of radial spectral densities available from configuration files.
pub fn named_radial_density(name: &str, param: Option<f64>) -> Result<RadialDensity> {
    match name {
        "lebesgue" => Ok(RadialDensity::new("lebesgue", |_| 1.0)),
        "exponential" => {
            let a = param.unwrap_or(1.0);
            Ok(RadialDensity::new("exponential", move |r| (-a * r).exp()))
        }
        "cauchy" => {
            let a = param.unwrap_or(1.0);
            Ok(RadialDensity::new("cauchy", move |r| 1.0 / (1.0 + (r / a).powi(2))))
        }
        other => Err(Error::config(
            "model.spectral_density",
            format!("unknown radial density `{other}` (known: lebesgue, exponential, cauchy)"),
        )),
    }
}

#[derive(Debug, Clone)]
pub enum CovarianceKind {
    Zero,
    /// Space-time white noise, Λ = δ₀; only admissible in d = 1.
    WhiteNoise,
    /// Λ(x) = |x|^{-β}.
    Riesz { beta: f64 },
    /// Λ = p_σ, μ(dξ) = e^{-σ|ξ|²/2} dξ.
    Gaussian { sigma: f64 },
    RadialSpectral(RadialDensity),
}

impl CovarianceKind {
    pub fn label(&self) -> &'static str {
        match self {
            CovarianceKind::Zero => "zero",
            CovarianceKind::WhiteNoise => "white_noise",
            CovarianceKind::Riesz { .. } => "riesz",
            CovarianceKind::Gaussian { .. } => "gaussian",
            CovarianceKind::RadialSpectral(_) => "radial_spectral",
        }
    }
}

/// Constant c_{d,β} with F(|x|^{-β})(ξ) = c_{d,β} |ξ|^{β-d}:
/// c = π^{d/2} 2^{d-β} Γ((d-β)/2) / Γ(β/2)
/// (Stein, *Singular Integrals*, Ch. V §1; Lieb–Loss, *Analysis*, Thm 5.9).
pub fn riesz_constant(dim: usize, beta: f64) -> f64 {
    let d = dim as f64;
    PI.powf(d / 2.0) * 2f64.powf(d - beta) * gamma((d - beta) / 2.0) / gamma(beta / 2.0)
}

/// Surface area of the unit sphere S^{d-1}.
pub fn sphere_area(dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * PI.powf(d / 2.0) / gamma(d / 2.0)
}

/// Bessel J₀ by the periodic trapezoid rule on its integral representation,
/// which converges geometrically once the node count exceeds |x|.
fn bessel_j0(x: f64) -> f64 {
    let n = 24 + 2 * x.abs().ceil() as usize;
    let h = 2.0 * PI / n as f64;
    (0..n).map(|i| (x * (i as f64 * h).sin()).cos()).sum::<f64>() / n as f64
}

/// ∫_{S^{d-1}} e^{iρ ω₁} dω.
fn angular_factor(dim: usize, rho: f64) -> f64 {
    match dim {
        1 => 2.0 * rho.cos(),
        2 => 2.0 * PI * bessel_j0(rho),
        3 => {
            if rho.abs() < 1e-8 {
                4.0 * PI * (1.0 - rho * rho / 6.0)
            } else {
                4.0 * PI * rho.sin() / rho
            }
        }
        _ => unreachable!("radial quadrature is restricted to d <= 3"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DalangIntegral {
    Finite(f64),
    /// Partial integrals up to radius R grow like R^exponent (0 = logarithmic).
    Divergent { growth_exponent: f64 },
}

impl DalangIntegral {
    pub fn is_finite(&self) -> bool {
        matches!(self, DalangIntegral::Finite(_))
    }
}

/// ∫_0^∞ h(r) dr with shells [0,1], [1,2], [2,4], ...; detects divergence
/// from the ratio of successive shell contributions.
pub(crate) fn radial_shell_integral(h: &dyn Fn(f64) -> f64) -> Result<DalangIntegral> {
    let first = quad::adaptive(h, 0.0, 1.0, 1e-15, 1e-11, 4000)?;
    let mut total = first.value;
    let mut prev_shell = f64::NAN;
    let mut ratios = Vec::new();
    for k in 0..80 {
        let a = 2f64.powi(k);
        let shell = quad::adaptive(h, a, 2.0 * a, 1e-300, 1e-11, 4000)?.value;
        total += shell;
        if shell.abs() <= 1e-15 * total.abs() && k > 2 {
            return Ok(DalangIntegral::Finite(total));
        }
        if prev_shell.is_finite() && prev_shell != 0.0 {
            ratios.push(shell / prev_shell);
        }
        prev_shell = shell;
        if ratios.len() >= 8 {
            let recent = &ratios[ratios.len() - 4..];
            let q = recent.iter().sum::<f64>() / recent.len() as f64;
            let spread = recent.iter().map(|r| (r - q).abs()).fold(0.0, f64::max);
            if q >= 0.98 {
                return Ok(DalangIntegral::Divergent {
                    growth_exponent: q.log2().max(0.0),
                });
            }
            if spread < 1e-3 && q < 0.9 {
                // Power-law tail: shells decay geometrically with ratio q.
                let tail = shell * q / (1.0 - q);
                if tail.abs() <= 1e-13 * total.abs() || k > 40 {
                    return Ok(DalangIntegral::Finite(total + tail));
                }
            }
        }
    }
    Err(Error::numeric_with(
        "radial integral neither converged nor diverged detectably",
        format!("partial value {total:e}"),
    ))
}

/// Spatial covariance model; immutable after construction.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    kind: CovarianceKind,
    dim: usize,
    dalang: f64,
}

impl CovarianceModel {
    pub fn new(kind: CovarianceKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        match &kind {
            CovarianceKind::WhiteNoise if dim != 1 => {
                return Err(Error::domain(format!(
                    "white noise violates Dalang's condition in d = {dim}"
                )))
            }
            CovarianceKind::Riesz { beta } => {
                let upper = (dim as f64).min(2.0);
                if !(*beta > 0.0 && *beta < upper) {
                    return Err(Error::domain(format!(
                        "Riesz exponent must satisfy 0 < beta < min(2, d) = {upper}, got {beta}"
                    )));
                }
                if dim > 3 {
                    return Err(Error::Unsupported("Riesz kernels in d > 3".into()));
                }
            }
            CovarianceKind::Gaussian { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                return Err(Error::domain(format!(
                    "Gaussian covariance scale must be positive, got {sigma}"
                )))
            }
            CovarianceKind::RadialSpectral(g) => {
                if dim > 3 {
                    return Err(Error::Unsupported("radial spectral models in d > 3".into()));
                }
                for i in 0..200 {
                    let r = 0.05 * i as f64 * (1.0 + 0.1 * i as f64);
                    let v = g.eval(r);
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(Error::domain(format!(
                            "spectral density `{}` must be finite and nonnegative; g({r}) = {v}",
                            g.name
                        )));
                    }
                }
            }
            _ => {}
        }
        let dalang = match dalang_integral(&kind, dim)? {
            DalangIntegral::Finite(v) => v,
            DalangIntegral::Divergent { growth_exponent } => {
                return Err(Error::domain(format!(
                    "spectral measure violates Dalang's condition (partial integrals grow like R^{growth_exponent:.3})"
                )))
            }
        };
        Ok(Self { kind, dim, dalang })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            kind: CovarianceKind::Zero,
            dim,
            dalang: 0.0,
        }
    }

    pub fn white_noise() -> Self {
        Self::new(CovarianceKind::WhiteNoise, 1).expect("white noise is admissible in d = 1")
    }

    pub fn gaussian(sigma: f64, dim: usize) -> Result<Self> {
        Self::new(CovarianceKind::Gaussian { sigma }, dim)
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, CovarianceKind::Zero)
    }

    /// ∫ μ(dξ)/(1+|ξ|²), cached at construction.
    pub fn dalang_value(&self) -> f64 {
        self.dalang
    }

    /// Radial spectral density g(r).
    pub fn spectral_density(&self, r: f64) -> f64 {
        spectral_density(&self.kind, self.dim, r)
    }

    /// Λ_ε(x). See [`covariance_at`].
    pub fn at(&self, eps: f64, x: &[f64]) -> Result<f64> {
        covariance_at(self, eps, x)
    }

    /// A fast evaluator of Λ_ε for use inside Monte Carlo loops.
    pub fn mollified(&self, eps: f64) -> Result<Mollified> {
        Mollified::new(self, eps)
    }

    /// D_M = (2π)^{-d} μ(|ξ| ≤ M).
    pub fn spectral_mass_within(&self, m: f64) -> Result<f64> {
        let d = self.dim;
        let norm = sphere_area(d) / (2.0 * PI).powi(d as i32);
        match &self.kind {
            CovarianceKind::Zero => Ok(0.0),
            CovarianceKind::WhiteNoise => Ok(m / PI),
            _ => {
                // dyadic shells so that mass concentrated near 0 is never skipped
                let f = |r: f64| self.spectral_density(r) * r.powi(d as i32 - 1);
                let mut total = 0.0;
                let (mut a, mut b) = (0.0, m.min(1.0));
                while a < m {
                    total += quad::adaptive(f, a, b, 1e-300, 1e-12, 4000)?.value;
                    a = b;
                    b = (2.0 * b).min(m);
                }
                Ok(norm * total)
            }
        }
    }

    /// C_M = (2π)^{-d} ∫_{|ξ| ≥ M} μ(dξ)/|ξ|².
    pub fn spectral_tail_beyond(&self, m: f64) -> Result<f64> {
        let d = self.dim;
        let norm = sphere_area(d) / (2.0 * PI).powi(d as i32);
        match &self.kind {
            CovarianceKind::Zero => Ok(0.0),
            CovarianceKind::WhiteNoise => Ok(1.0 / (PI * m)),
            _ => {
                let h = |u: f64| {
                    let r = m + u;
                    self.spectral_density(r) * r.powi(d as i32 - 3)
                };
                match radial_shell_integral(&h)? {
                    DalangIntegral::Finite(v) => Ok(norm * v),
                    DalangIntegral::Divergent { .. } => Err(Error::numeric(
                        "spectral tail integral diverges; Dalang's condition fails",
                    )),
                }
            }
        }
    }
}

fn spectral_density(kind: &CovarianceKind, dim: usize, r: f64) -> f64 {
    match kind {
        CovarianceKind::Zero => 0.0,
        CovarianceKind::WhiteNoise => 1.0,
        CovarianceKind::Riesz { beta } => riesz_constant(dim, *beta) * r.powf(beta - dim as f64),
        CovarianceKind::Gaussian { sigma } => (-0.5 * sigma * r * r).exp(),
        CovarianceKind::RadialSpectral(g) => g.eval(r),
    }
}

/// ∫ μ(dξ)/(1+|ξ|²), or a divergence verdict.
pub fn dalang_integral(kind: &CovarianceKind, dim: usize) -> Result<DalangIntegral> {
    if dim == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    if let CovarianceKind::Zero = kind {
        return Ok(DalangIntegral::Finite(0.0));
    }
    let area = sphere_area(dim);
    let h = |r: f64| spectral_density(kind, dim, r) * r.powi(dim as i32 - 1) / (1.0 + r * r);
    Ok(match radial_shell_integral(&h)? {
        DalangIntegral::Finite(v) => DalangIntegral::Finite(area * v),
        div => div,
    })
}

/// Λ_ε(x) = (2π)^{-d} ∫ e^{ix·ξ - ε|ξ|²} μ(dξ); at ε = 0 returns Λ(x) where it
/// is a function.
pub fn covariance_at(model: &CovarianceModel, eps: f64, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim {
        return Err(Error::domain("point dimension does not match model"));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::domain(format!("mollification must be >= 0, got {eps}")));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    match &model.kind {
        CovarianceKind::Zero => Ok(0.0),
        CovarianceKind::WhiteNoise => {
            if eps == 0.0 {
                return Err(Error::domain("white noise covariance is not a function; use eps > 0"));
            }
            Ok(crate::kernels::heat_kernel_unchecked(2.0 * eps, r * r, 1))
        }
        CovarianceKind::Gaussian { sigma } => Ok(crate::kernels::heat_kernel_unchecked(
            sigma + 2.0 * eps,
            r * r,
            model.dim,
        )),
        CovarianceKind::Riesz { beta } if eps == 0.0 => {
            if r == 0.0 {
                Err(Error::domain("Riesz kernel is infinite at the origin"))
            } else {
                Ok(r.powf(-beta))
            }
        }
        CovarianceKind::RadialSpectral(_) if eps == 0.0 => Err(Error::domain(
            "radial spectral models are evaluated only for eps > 0",
        )),
        _ => radial_fourier(model, eps, r),
    }
}

/// Radial reduction of the spectral integral with Gaussian damping.
fn radial_fourier(model: &CovarianceModel, eps: f64, r: f64) -> Result<f64> {
    let d = model.dim;
    let cutoff = (SPECTRAL_TAIL_LOG / eps).sqrt();
    let integrand = |s: f64| {
        model.spectral_density(s)
            * (-eps * s * s).exp()
            * s.powi(d as i32 - 1)
            * angular_factor(d, s * r)
    };
    let mut total = 0.0;
    // Split at 1 to isolate the possible singularity at the origin, then at
    // multiples of the oscillation period so each piece is smooth.
    let mut breaks = vec![0.0, 1.0f64.min(cutoff)];
    let period = if r > 0.0 { 2.0 * PI / r } else { f64::INFINITY };
    let step = period.max(cutoff / 64.0).min(cutoff);
    let mut b = breaks[1];
    while b < cutoff {
        b = (b + step).min(cutoff);
        breaks.push(b);
    }
    let scale = radial_fourier_scale(model, eps);
    for w in breaks.windows(2) {
        let q = quad::adaptive(integrand, w[0], w[1], 1e-3 * SPECTRAL_REL_TOL * scale, SPECTRAL_REL_TOL, 4000)
            .map_err(|e| match e {
                Error::Numeric { message, diagnostics } => Error::Numeric {
                    message: format!("Lambda_eps quadrature: {message}"),
                    diagnostics: Some(format!(
                        "eps={eps}, r={r}, piece [{}, {}]; {}",
                        w[0],
                        w[1],
                        diagnostics.unwrap_or_default()
                    )),
                },
                other => other,
            })?;
        total += q.value;
    }
    Ok(total / (2.0 * PI).powi(d as i32))
}

/// Rough magnitude of (2π)^d Λ_ε(0), used as an absolute tolerance floor.
fn radial_fourier_scale(model: &CovarianceModel, eps: f64) -> f64 {
    let d = model.dim;
    let cutoff = (SPECTRAL_TAIL_LOG / eps).sqrt();
    let n = 400;
    let h = cutoff / n as f64;
    let area = sphere_area(d);
    let mut s = 0.0;
    for i in 0..n {
        let r = (i as f64 + 0.5) * h;
        s += model.spectral_density(r) * (-eps * r * r).exp() * r.powi(d as i32 - 1);
    }
    (s * h * area).abs().max(1e-300)
}

/// Fast evaluator for Λ_ε in hot loops; takes squared distances.
#[derive(Debug, Clone)]
pub enum Mollified {
    Zero,
    /// Λ_ε = p_var in dimension `dim`.
    Heat { var: f64, dim: usize, norm: f64 },
    /// Riesz kernel at ε = 0.
    Power { beta: f64 },
    Table(RadialTable),
}

impl Mollified {
    fn new(model: &CovarianceModel, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::domain(format!("mollification must be >= 0, got {eps}")));
        }
        let d = model.dim;
        let heat = |var: f64| Mollified::Heat {
            var,
            dim: d,
            norm: (2.0 * PI * var).powf(-0.5 * d as f64),
        };
        Ok(match &model.kind {
            CovarianceKind::Zero => Mollified::Zero,
            CovarianceKind::WhiteNoise => {
                if eps == 0.0 {
                    return Err(Error::domain("white noise needs eps > 0"));
                }
                heat(2.0 * eps)
            }
            CovarianceKind::Gaussian { sigma } => heat(sigma + 2.0 * eps),
            CovarianceKind::Riesz { beta } if eps == 0.0 => Mollified::Power { beta: *beta },
            _ => Mollified::Table(RadialTable::build(model, eps)?),
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Mollified::Zero)
    }

    /// Λ_ε at a point with squared norm `r2`.
    #[inline]
    pub fn eval_r2(&self, r2: f64) -> f64 {
        match self {
            Mollified::Zero => 0.0,
            Mollified::Heat { var, norm, .. } => norm * (-r2 / (2.0 * var)).exp(),
            Mollified::Power { beta } => r2.powf(-0.5 * beta),
            Mollified::Table(t) => t.eval(r2.sqrt()),
        }
    }

    pub fn at_origin(&self) -> f64 {
        self.eval_r2(0.0)
    }
}

/// Λ_ε(r) tabulated on r = ℓ·sinh(u) with uniform u and cubic Lagrange
/// interpolation; falls back to direct quadrature beyond the table.
#[derive(Debug, Clone)]
pub struct RadialTable {
    scale: f64,
    du: f64,
    values: Vec<f64>,
    r_max: f64,
    model: CovarianceModel,
    eps: f64,
}

impl RadialTable {
    const NODES: usize = 1024;

    fn build(model: &CovarianceModel, eps: f64) -> Result<Self> {
        let scale = eps.sqrt();
        let r_max = 200.0 * scale + 20.0;
        let u_max = (r_max / scale).asinh();
        let du = u_max / (Self::NODES - 1) as f64;
        let values = (0..Self::NODES)
            .map(|i| radial_fourier(model, eps, scale * (i as f64 * du).sinh()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scale,
            du,
            values,
            r_max,
            model: model.clone(),
            eps,
        })
    }

    fn eval(&self, r: f64) -> f64 {
        if r >= self.r_max {
            return radial_fourier(&self.model, self.eps, r).unwrap_or(0.0);
        }
        let u = (r / self.scale).asinh() / self.du;
        let n = self.values.len();
        let i = (u.floor() as usize).clamp(1, n - 3);
        let s = u - i as f64;
        let (p0, p1, p2, p3) = (
            self.values[i - 1],
            self.values[i],
            self.values[i + 1],
            self.values[i + 2],
        );
        // Cubic Lagrange through nodes -1, 0, 1, 2 in local coordinate s.
        -p0 * s * (s - 1.0) * (s - 2.0) / 6.0 + p1 * (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0
            - p2 * (s + 1.0) * s * (s - 2.0) / 2.0
            + p3 * (s + 1.0) * s * (s - 1.0) / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::heat_kernel;

    #[test]
    fn white_noise_is_heat_kernel_at_twice_eps() {
        let m = CovarianceModel::white_noise();
        assert!((m.at(0.5, &[0.0]).unwrap() - 0.398_942_3).abs() < 1e-7);
        for eps in [0.01, 0.1, 0.5] {
            for i in -20..=20 {
                let x = 0.17 * i as f64;
                let a = m.at(eps, &[x]).unwrap();
                let b = heat_kernel(2.0 * eps, &[x]).unwrap();
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!(matches!(m.at(0.0, &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_model_vanishes() {
        let m = CovarianceModel::zero(2);
        assert_eq!(m.at(0.3, &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(m.at(0.0, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn white_noise_rejected_in_two_dimensions() {
        assert!(CovarianceModel::new(CovarianceKind::WhiteNoise, 2).is_err());
    }

    #[test]
    fn riesz_constant_matches_one_dimensional_formula() {
        // In d = 1: ∫ |x|^{-β} e^{-iξx} dx = 2 Γ(1-β) sin(πβ/2) |ξ|^{β-1}.
        for beta in [0.2, 0.5, 0.8] {
            let alt = 2.0 * gamma(1.0 - beta) * (PI * beta / 2.0).sin();
            assert!((riesz_constant(1, beta) - alt).abs() < 1e-12 * alt);
        }
    }

    #[test]
    fn riesz_mollified_matches_physical_space_convolution() {
        // Λ_ε = Λ * p_{2ε}, computed directly in physical space.
        let beta = 0.5;
        let eps = 0.1;
        let m = CovarianceModel::new(CovarianceKind::Riesz { beta }, 1).unwrap();
        for x in [0.0, 0.3, 1.5] {
            // y = x ± v², so |x - y|^{-β} dy = 2 v^{1-2β} dv
            let f = |v: f64, sign: f64| {
                2.0 * v.powf(1.0 - 2.0 * beta) * heat_kernel(2.0 * eps, &[x + sign * v * v]).unwrap()
            };
            let vmax = (40.0 * 2.0 * eps.sqrt() + x.abs()).sqrt();
            let q = quad::adaptive(|v| f(v, 1.0), 0.0, vmax, 1e-14, 1e-12, 4000).unwrap().value
                + quad::adaptive(|v| f(v, -1.0), 0.0, vmax, 1e-14, 1e-12, 4000).unwrap().value;
            let got = m.at(eps, &[x]).unwrap();
            assert!((got - q).abs() < 1e-7 * q, "x={x}: {got} vs {q}");
        }
    }

    #[test]
    fn riesz_regression_value() {
        // Λ_ε(0) = E|√(2ε) Z|^{-β} = (4ε)^{-β/2} Γ((1-β)/2) / √π.
        let m = CovarianceModel::new(CovarianceKind::Riesz { beta: 0.5 }, 1).unwrap();
        let v = m.at(0.1, &[0.0]).unwrap();
        let expected = gamma(0.25) / (PI.sqrt() * (4.0f64 * 0.1).powf(0.25));
        assert!((v - expected).abs() < 1e-8 * expected, "{v} vs {expected}");
    }

    #[test]
    fn gaussian_covariance_closed_form_and_quadrature_agree() {
        let m = CovarianceModel::gaussian(1.0, 1).unwrap();
        let g = RadialDensity::new("gauss", |r: f64| (-0.5 * r * r).exp());
        let radial = CovarianceModel::new(CovarianceKind::RadialSpectral(g), 1).unwrap();
        for x in [0.0, 0.5, 2.0] {
            let a = m.at(0.05, &[x]).unwrap();
            let b = radial.at(0.05, &[x]).unwrap();
            assert!((a - b).abs() < 1e-9 * a.max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn radial_quadrature_in_two_and_three_dimensions() {
        for d in [2usize, 3] {
            let sigma = 0.7;
            let g = RadialDensity::new("gauss", move |r: f64| (-0.5 * sigma * r * r).exp());
            let radial = CovarianceModel::new(CovarianceKind::RadialSpectral(g), d).unwrap();
            let mut x = vec![0.0; d];
            x[0] = 0.6;
            let got = radial.at(0.1, &x).unwrap();
            let expect = heat_kernel(sigma + 0.2, &x).unwrap();
            assert!((got - expect).abs() < 1e-8 * expect, "d={d}: {got} vs {expect}");
        }
    }

    #[test]
    fn dalang_examples() {
        let wn = dalang_integral(&CovarianceKind::WhiteNoise, 1).unwrap();
        match wn {
            DalangIntegral::Finite(v) => assert!((v - PI).abs() < 1e-9, "{v}"),
            _ => panic!("white noise in d=1 must be finite"),
        }
        let leb2 = dalang_integral(
            &CovarianceKind::RadialSpectral(named_radial_density("lebesgue", None).unwrap()),
            2,
        )
        .unwrap();
        match leb2 {
            DalangIntegral::Divergent { growth_exponent } => assert!(growth_exponent < 0.05),
            _ => panic!("Lebesgue measure in d=2 must diverge"),
        }
        // Gaussian σ=1, d=1: 2∫_0^∞ e^{-r²/2}/(1+r²) dr by an independent adaptive rule.
        let oracle = 2.0
            * quad::adaptive(|r: f64| (-0.5 * r * r).exp() / (1.0 + r * r), 0.0, 40.0, 1e-15, 1e-13, 500)
                .unwrap()
                .value;
        match dalang_integral(&CovarianceKind::Gaussian { sigma: 1.0 }, 1).unwrap() {
            DalangIntegral::Finite(v) => assert!((v - oracle).abs() < 1e-10, "{v} vs {oracle}"),
            _ => panic!(),
        }
        let leb3 = dalang_integral(
            &CovarianceKind::RadialSpectral(named_radial_density("lebesgue", None).unwrap()),
            3,
        )
        .unwrap();
        match leb3 {
            DalangIntegral::Divergent { growth_exponent } => {
                assert!((growth_exponent - 1.0).abs() < 0.05)
            }
            _ => panic!(),
        }
        assert!(CovarianceModel::new(
            CovarianceKind::RadialSpectral(named_radial_density("lebesgue", None).unwrap()),
            2
        )
        .is_err());
    }

    #[test]
    fn riesz_parameter_range() {
        assert!(CovarianceModel::new(CovarianceKind::Riesz { beta: 1.0 }, 1).is_err());
        assert!(CovarianceModel::new(CovarianceKind::Riesz { beta: 1.5 }, 2).is_ok());
        assert!(CovarianceModel::new(CovarianceKind::Riesz { beta: 0.0 }, 2).is_err());
    }

    #[test]
    fn table_evaluator_matches_direct() {
        let m = CovarianceModel::new(CovarianceKind::Riesz { beta: 0.5 }, 1).unwrap();
        let fast = m.mollified(0.05).unwrap();
        for r in [0.0, 0.01, 0.1, 0.33, 1.0, 4.0, 15.0] {
            let direct = m.at(0.05, &[r]).unwrap();
            let table = fast.eval_r2(r * r);
            assert!((direct - table).abs() < 1e-6 * direct, "r={r}: {direct} vs {table}");
        }
    }

    #[test]
    fn spectral_tail_and_mass() {
        let wn = CovarianceModel::white_noise();
        assert!((wn.spectral_tail_beyond(2.0).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let g = CovarianceModel::gaussian(1.0, 1).unwrap();
        // total mass (2π)^{-1} ∫ e^{-ξ²/2} dξ = Λ(0) = p_1(0)
        let total = g.spectral_mass_within(40.0).unwrap();
        assert!((total - heat_kernel(1.0, &[0.0]).unwrap()).abs() < 1e-12);
        let c = g.spectral_tail_beyond(1.0).unwrap();
        let oracle = quad::adaptive(|r: f64| (-0.5 * r * r).exp() / (r * r), 1.0, 40.0, 1e-15, 1e-13, 500)
            .unwrap()
            .value
            / PI;
        assert!((c - oracle).abs() < 1e-10, "{c} vs {oracle}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn even_bounded_and_monotone(x in -3.0f64..3.0, eps in 0.01f64..1.0, sigma in 0.1f64..3.0) {
                for m in [CovarianceModel::white_noise(), CovarianceModel::gaussian(sigma, 1).unwrap()] {
                    let a = m.at(eps, &[x]).unwrap();
                    let b = m.at(eps, &[-x]).unwrap();
                    prop_assert_eq!(a, b);
                    let origin = m.at(eps, &[0.0]).unwrap();
                    prop_assert!(a >= 0.0 && a <= origin);
                    prop_assert!(m.at(eps * 1.5, &[0.0]).unwrap() <= origin);
                }
            }
        }
    }
}
