//! Second moment of u(t,x) for u0 ≡ 1 through the Wiener chaos expansion
//! E[u²] = Σ_n n!‖f_n‖², with a certified bound on the truncated tail.
//!
//! With u0 ≡ 1 the n-th term is
//!
//! ```text
//! ∫_{0<s_1<…<s_n<t} ∫ Π_i exp(−(s_{i+1}−s_i)|ξ_1+…+ξ_i|²) Π_i μ(dξ_i)/(2π)^d ds,   s_{n+1} = t,
//! ```
//!
//! independent of x. For white noise in d = 1 the frequency integrals are
//! Gaussian and the term becomes an n-fold convolution of g(w) = (4πw)^{-1/2},
//! computed by product integration. For Gaussian covariance the frequency
//! integral is a Gaussian determinant and the simplex is integrated with a
//! collapsed tensor Gauss–Legendre rule.

use crate::covariance::{radial_shell_integral, sphere_area, CovarianceKind, CovarianceModel, DalangIntegral};
use crate::error::{Error, Result};
use crate::quad;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosTerm {
    pub order: usize,
    /// n!‖f_n‖².
    pub value: f64,
    pub quadrature_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosOptions {
    /// Highest order for models whose terms need simplex quadrature.
    pub max_order_smooth: usize,
    /// Highest order for white noise in d = 1.
    pub max_order_white: usize,
    /// Grid intervals for the white-noise product integration.
    pub white_grid: usize,
    /// Budget of integrand evaluations per simplex rule.
    pub simplex_budget: usize,
}

impl Default for ChaosOptions {
    fn default() -> Self {
        Self {
            max_order_smooth: 8,
            max_order_white: 20,
            white_grid: 4096,
            simplex_budget: 20_000_000,
        }
    }
}

impl ChaosOptions {
    fn max_order(&self, model: &CovarianceModel) -> usize {
        match model.kind() {
            CovarianceKind::Zero => usize::MAX,
            CovarianceKind::WhiteNoise => self.max_order_white,
            _ => self.max_order_smooth,
        }
    }
}

pub fn chaos_term(n: usize, t: f64, x: &[f64], model: &CovarianceModel) -> Result<ChaosTerm> {
    chaos_term_with(n, t, x, model, &ChaosOptions::default())
}

/// n-th chaos contribution n!‖f_{n,t,x}‖² for u0 ≡ 1.
pub fn chaos_term_with(
    n: usize,
    t: f64,
    x: &[f64],
    model: &CovarianceModel,
    opts: &ChaosOptions,
) -> Result<ChaosTerm> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    if x.len() != model.dim() {
        return Err(Error::domain("x and the covariance model differ in dimension"));
    }
    let max = opts.max_order(model);
    if n > max {
        return Err(Error::domain(format!(
            "chaos order {n} exceeds the configured maximum {max} for {} covariance",
            model.kind().label()
        )));
    }
    if n == 0 {
        return Ok(ChaosTerm { order: 0, value: 1.0, quadrature_error: 0.0 });
    }
    let (value, quadrature_error) = match model.kind() {
        CovarianceKind::Zero => (0.0, 0.0),
        CovarianceKind::WhiteNoise => {
            // the product rule converges at order h^{3/2}; one Richardson step
            let fine = white_noise_convolution(n, t, opts.white_grid);
            let coarse = white_noise_convolution(n, t, opts.white_grid / 2);
            let r = 2f64.powf(1.5);
            let extrapolated = (r * fine - coarse) / (r - 1.0);
            (extrapolated, (extrapolated - fine).abs())
        }
        CovarianceKind::Gaussian { sigma } => gaussian_term(n, t, *sigma, model.dim(), opts.simplex_budget)?,
        _ if n == 1 => first_order_radial(t, model)?,
        _ => {
            return Err(Error::Unsupported(format!(
                "chaos terms of order {n} >= 2 are available only for white noise (d = 1) \
                 and Gaussian covariance, not {}",
                model.kind().label()
            )))
        }
    };
    Ok(ChaosTerm { order: n, value, quadrature_error })
}

/// H_n(t) with H_0 ≡ 1 and H_i = H_{i-1} * g, g(w) = (4πw)^{-1/2}, by
/// product integration: H_{i-1} piecewise linear on a uniform grid, the
/// singular factor g integrated exactly.
fn white_noise_convolution(n: usize, t: f64, intervals: usize) -> f64 {
    let m = intervals.max(8);
    let h = t / m as f64;
    let c = (4.0 * PI).powf(-0.5);
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    for j in 0..m {
        let (lo, hi) = (j as f64 * h, (j + 1) as f64 * h);
        let int_g = 2.0 * (hi.sqrt() - lo.sqrt());
        let int_ug = 2.0 / 3.0 * (hi.powf(1.5) - lo.powf(1.5));
        // ∫ g(u)(u - lo)/h du and ∫ g(u)(hi - u)/h du over [lo, hi]
        b[j] = c * (int_ug - lo * int_g) / h;
        a[j] = c * int_g - b[j];
    }
    let mut prev = vec![1.0; m + 1];
    let mut next = vec![0.0; m + 1];
    for _ in 0..n {
        next[0] = 0.0;
        for i in 1..=m {
            let mut acc = 0.0;
            for j in 0..i {
                acc += a[j] * prev[i - j] + b[j] * prev[i - j - 1];
            }
            next[i] = acc;
        }
        std::mem::swap(&mut prev, &mut next);
    }
    prev[m]
}

/// Gaussian covariance Λ = p_σ: the frequency integral equals
/// [(2π)^{-n/2} det(A)^{-1/2}]^d with A = 2 diag(Δ) + σL, L the tridiagonal
/// matrix of Σ|η_i − η_{i−1}|².
fn gaussian_term(n: usize, t: f64, sigma: f64, dim: usize, budget: usize) -> Result<(f64, f64)> {
    let m = ((budget as f64).powf(1.0 / n as f64).floor() as usize).clamp(4, 32);
    let integrand = |gaps: &[f64]| {
        // continuant recursion for the tridiagonal determinant
        let diag = |i: usize| 2.0 * gaps[i] + if i == n - 1 { sigma } else { 2.0 * sigma };
        let (mut f_prev, mut f) = (1.0, diag(0));
        for i in 1..n {
            let next = diag(i) * f - sigma * sigma * f_prev;
            f_prev = f;
            f = next;
        }
        ((2.0 * PI).powi(n as i32) * f).powf(-0.5 * dim as f64)
    };
    let fine = simplex_rule(n, t, m, integrand);
    let coarse = simplex_rule(n, t, m - 2, integrand);
    if !fine.is_finite() {
        return Err(Error::numeric(format!("Gaussian chaos term of order {n} is not finite")));
    }
    Ok((fine, (fine - coarse).abs()))
}

/// ∫ over 0 < s_1 < … < s_n < t of f(Δ_1, …, Δ_n), Δ_i = s_{i+1} − s_i.
/// Uses s_n = t u_n, s_i = s_{i+1} u_i and u_i = 1 − v_i², which turns
/// Δ_i^{-1/2} behaviour at the diagonal into a smooth integrand, then an
/// m-point Gauss–Legendre rule per axis.
fn simplex_rule(n: usize, t: f64, m: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let (nodes, weights) = quad::gauss_legendre(m);
    let v: Vec<f64> = nodes.iter().map(|z| 0.5 * (z + 1.0)).collect();
    let w: Vec<f64> = weights.iter().zip(&v).map(|(w, v)| w * v).collect();
    let mut idx = vec![0usize; n];
    let mut gaps = vec![0.0; n];
    let mut total = 0.0;
    loop {
        // walk from s_{n+1} = t downwards
        let mut upper = t;
        let mut weight = 1.0;
        for i in (0..n).rev() {
            let vi = v[idx[i]];
            weight *= w[idx[i]] * upper;
            gaps[i] = upper * vi * vi;
            upper *= 1.0 - vi * vi;
        }
        total += weight * f(&gaps);
        let mut carry = 0;
        while carry < n {
            idx[carry] += 1;
            if idx[carry] < m {
                break;
            }
            idx[carry] = 0;
            carry += 1;
        }
        if carry == n {
            break;
        }
    }
    total
}

/// First-order term ∫ (1 − e^{−t|ξ|²})/|ξ|² μ(dξ)/(2π)^d for a radial μ.
fn first_order_radial(t: f64, model: &CovarianceModel) -> Result<(f64, f64)> {
    let d = model.dim();
    let norm = sphere_area(d) / (2.0 * PI).powi(d as i32);
    let h = |r: f64| {
        if r == 0.0 {
            return 0.0;
        }
        -(-t * r * r).exp_m1() / (r * r) * model.spectral_density(r) * r.powi(d as i32 - 1)
    };
    match radial_shell_integral(&h)? {
        DalangIntegral::Finite(v) => Ok((norm * v, 1e-10 * norm * v.abs())),
        DalangIntegral::Divergent { .. } => Err(Error::numeric("first chaos term diverges")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    /// Σ_{n ≤ n_max} of the chaos terms.
    pub value: f64,
    pub terms: Vec<ChaosTerm>,
    /// Certified upper bound on Σ_{n > n_max}.
    pub tail_bound: f64,
    pub quadrature_error: f64,
    /// Spectral cutoff used by the tail bound.
    pub cutoff: f64,
    pub c_m: f64,
    pub d_m: f64,
}

impl SeriesResult {
    pub fn n_max(&self) -> usize {
        self.terms.len() - 1
    }
}

/// Σ_{n>n_max} Σ_k C(n,k) (t D)^k / k! (2C)^{n−k}.
pub fn tail_bound(t: f64, n_max: usize, c_m: f64, d_m: f64) -> f64 {
    if d_m == 0.0 && c_m == 0.0 {
        return 0.0;
    }
    let ln_a = (t * d_m).ln();
    let ln_b = (2.0 * c_m).ln();
    let mut total = 0.0;
    let mut n = n_max + 1;
    loop {
        let ln_fact_n = ln_gamma(n as f64 + 1.0);
        let mut term = 0.0;
        for k in 0..=n {
            let kf = k as f64;
            let ln_binom = ln_fact_n - ln_gamma(kf + 1.0) - ln_gamma((n - k) as f64 + 1.0);
            let mut ln_t = ln_binom - ln_gamma(kf + 1.0);
            if k > 0 {
                ln_t += kf * ln_a;
            }
            if k < n {
                ln_t += (n - k) as f64 * ln_b;
            }
            term += ln_t.exp();
        }
        total += term;
        if (term <= 1e-18 * total && n > n_max + 20) || term == 0.0 || n > n_max + 100_000 {
            break;
        }
        n += 1;
    }
    total
}

/// Smallest-bound cutoff M with C_M < 1/4, searched by doubling then a
/// geometric refinement grid.
pub fn choose_cutoff(t: f64, n_max: usize, model: &CovarianceModel) -> Result<(f64, f64, f64, f64)> {
    let mut m = 1.0;
    let mut doublings = 0;
    while model.spectral_tail_beyond(m)? >= 0.25 {
        m *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::numeric("no spectral cutoff M gives C_M < 1/4"));
        }
    }
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..=64 {
        let cand = m * 10f64.powf(i as f64 / 16.0);
        let c = model.spectral_tail_beyond(cand)?;
        if c >= 0.25 {
            continue;
        }
        let dm = model.spectral_mass_within(cand)?;
        let bound = tail_bound(t, n_max, c, dm);
        if best.is_none_or(|b| bound < b.3) {
            best = Some((cand, c, dm, bound));
        }
    }
    best.ok_or_else(|| Error::numeric("no admissible spectral cutoff found"))
}

/// E[u(t,x)²] for u0 ≡ 1, truncated at order `n_max`, with tail certificate.
/// `cutoff` fixes M; otherwise it is chosen to minimise the bound.
pub fn second_moment_series(
    t: f64,
    x: &[f64],
    model: &CovarianceModel,
    n_max: usize,
    cutoff: Option<f64>,
) -> Result<SeriesResult> {
    second_moment_series_with(t, x, model, n_max, cutoff, &ChaosOptions::default())
}

pub fn second_moment_series_with(
    t: f64,
    x: &[f64],
    model: &CovarianceModel,
    n_max: usize,
    cutoff: Option<f64>,
    opts: &ChaosOptions,
) -> Result<SeriesResult> {
    let terms = (0..=n_max)
        .map(|n| chaos_term_with(n, t, x, model, opts))
        .collect::<Result<Vec<_>>>()?;
    let value = terms.iter().map(|c| c.value).sum();
    let quadrature_error = terms.iter().map(|c| c.quadrature_error).sum();
    if model.is_zero() {
        return Ok(SeriesResult { value, terms, tail_bound: 0.0, quadrature_error, cutoff: 0.0, c_m: 0.0, d_m: 0.0 });
    }
    let (m, c_m, d_m, tail) = match cutoff {
        Some(m) => {
            let c = model.spectral_tail_beyond(m)?;
            if c >= 0.25 {
                return Err(Error::domain(format!("cutoff M = {m} gives C_M = {c} >= 1/4")));
            }
            let dm = model.spectral_mass_within(m)?;
            (m, c, dm, tail_bound(t, n_max, c, dm))
        }
        None => choose_cutoff(t, n_max, model)?,
    };
    Ok(SeriesResult { value, terms, tail_bound: tail, quadrature_error, cutoff: m, c_m, d_m })
}

/// Smallest truncation whose certified tail is below `tail_tol`.
pub fn second_moment_to_tolerance(
    t: f64,
    x: &[f64],
    model: &CovarianceModel,
    tail_tol: f64,
    opts: &ChaosOptions,
) -> Result<SeriesResult> {
    let max = opts.max_order(model).min(200);
    for n_max in 0..=max {
        let (_, _, _, tail) = if model.is_zero() { (0.0, 0.0, 0.0, 0.0) } else { choose_cutoff(t, n_max, model)? };
        if tail < tail_tol {
            return second_moment_series_with(t, x, model, n_max, None, opts);
        }
    }
    Err(Error::numeric(format!(
        "certified tail stays above {tail_tol} up to order {max}"
    )))
}
