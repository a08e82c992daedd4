//! Heat kernel, signed-measure initial data and heat-semigroup convolution.

use crate::error::{Error, Result};
use crate::quad;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Half-width of the truncation box in standard deviations. The two-sided
/// Gaussian tail beyond 8σ is about 1.2e-15.
const TAIL_SIGMAS: f64 = 8.0;
const DENSITY_REL_TOL: f64 = 1e-12;

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// p_t(x) = (2πt)^{-d/2} exp(-|x|²/(2t)).
pub fn heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    Ok(log_heat_kernel(t, x)?.exp())
}

pub fn log_heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("heat kernel needs t > 0, got {t}")));
    }
    let d = x.len() as f64;
    Ok(-0.5 * d * (2.0 * PI * t).ln() - norm2(x) / (2.0 * t))
}

/// Unchecked heat kernel for hot loops where `t > 0` is already established.
#[inline]
pub(crate) fn heat_kernel_unchecked(t: f64, x2: f64, dim: usize) -> f64 {
    (2.0 * PI * t).powf(-0.5 * dim as f64) * (-x2 / (2.0 * t)).exp()
}

/// Declared growth class of an initial density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Growth {
    /// |f(x)| ≤ bound.
    Bounded { bound: f64 },
    /// |f(x)| ≤ scale·exp(rate·|x|).
    Exponential { scale: f64, rate: f64 },
    /// |f(x)| ≤ scale·exp(rate·|x|²); violates the initial-data condition for c ≤ rate.
    Gaussian { scale: f64, rate: f64 },
    Uncertified,
}

pub type DensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct Density {
    pub name: String,
    pub growth: Growth,
    f: Arc<DensityFn>,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density")
            .field("name", &self.name)
            .field("growth", &self.growth)
            .finish()
    }
}

impl Density {
    pub fn new(
        name: impl Into<String>,
        growth: Growth,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            growth,
            f: Arc::new(f),
        }
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        (self.f)(y)
    }

    pub fn constant(value: f64) -> Self {
        Self::new("one", Growth::Bounded { bound: value.abs() }, move |_| value)
    }

    fn abs(&self) -> Self {
        let f = self.f.clone();
        Self {
            name: format!("|{}|", self.name),
            growth: self.growth,
            f: Arc::new(move |y| f(y).abs()),
        }
    }
}

/// Look up a density by registry name.
///
/// `param` is the scale for `one`, the rate for `exp_abs` and the frequency
/// for `cosine`; other densities ignore it.
pub fn named_density(name: &str, param: Option<f64>) -> Result<Density> {
    match name {
        "one" | "constant" => Ok(Density::constant(param.unwrap_or(1.0))),
        "exp_abs" => {
            let rate = param.unwrap_or(1.0);
            Ok(Density::new(
                "exp_abs",
                Growth::Exponential { scale: 1.0, rate },
                move |y| (rate * norm2(y).sqrt()).exp(),
            ))
        }
        "exp_square" => Ok(Density::new(
            "exp_square",
            Growth::Gaussian {
                scale: 1.0,
                rate: 1.0,
            },
            |y| norm2(y).exp(),
        )),
        "gaussian_bump" => Ok(Density::new(
            "gaussian_bump",
            Growth::Bounded { bound: 1.0 },
            |y| (-0.5 * norm2(y)).exp(),
        )),
        "cosine" => {
            let freq = param.unwrap_or(1.0);
            Ok(Density::new(
                "cosine",
                Growth::Bounded { bound: 1.0 },
                move |y| (freq * y[0]).cos(),
            ))
        }
        other => Err(Error::config(
            "initial.density.name",
            format!("unknown density `{other}` (known: one, exp_abs, exp_square, gaussian_bump, cosine)"),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub location: Vec<f64>,
    pub weight: f64,
}

/// Initial datum: finitely many Dirac atoms plus an optional density.
#[derive(Debug, Clone)]
pub struct SignedMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    density: Option<Density>,
}

impl SignedMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>, density: Option<Density>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.location.len() != dim {
                return Err(Error::domain(format!(
                    "atom {i} has dimension {} but measure has dimension {dim}",
                    a.location.len()
                )));
            }
            if !a.location.iter().all(|v| v.is_finite()) {
                return Err(Error::domain(format!("atom {i} location is not finite")));
            }
            if !(a.weight.is_finite() && a.weight != 0.0) {
                return Err(Error::domain(format!(
                    "atom {i} weight must be finite and nonzero, got {}",
                    a.weight
                )));
            }
        }
        Ok(Self {
            dim,
            atoms,
            density,
        })
    }

    pub fn dirac(location: Vec<f64>) -> Self {
        let dim = location.len();
        Self::new(
            dim,
            vec![Atom {
                location,
                weight: 1.0,
            }],
            None,
        )
        .expect("unit Dirac mass is valid")
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self {
            dim,
            atoms: Vec::new(),
            density: Some(Density::constant(value)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    /// Total variation measure |u0|.
    pub fn abs(&self) -> Self {
        Self {
            dim: self.dim,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location.clone(),
                    weight: a.weight.abs(),
                })
                .collect(),
            density: self.density.as_ref().map(Density::abs),
        }
    }
}

/// Result of checking ∫ e^{-c|x|²} |u0|(dx) < ∞.
#[derive(Debug, Clone, PartialEq)]
pub struct Admissibility {
    /// Whether the integral is finite for every c > 0.
    pub admissible: bool,
    /// The integral at the requested c, when finite.
    pub integral: Option<f64>,
    pub reason: String,
}

pub fn admissibility_check(u0: &SignedMeasure, c: f64) -> Result<Admissibility> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!("admissibility needs c > 0, got {c}")));
    }
    let atom_part: f64 = u0
        .atoms
        .iter()
        .map(|a| a.weight.abs() * (-c * norm2(&a.location)).exp())
        .sum();
    let Some(density) = &u0.density else {
        return Ok(Admissibility {
            admissible: true,
            integral: Some(atom_part),
            reason: "atoms only".into(),
        });
    };
    let dim = u0.dim;
    // Effective Gaussian envelope of e^{-c|y|²}|f(y)|: centre offset and scale.
    let (admissible, envelope) = match density.growth {
        Growth::Uncertified => {
            return Err(Error::domain(format!(
                "density `{}` carries no growth certificate; declare bounded, exponential or gaussian growth",
                density.name
            )))
        }
        Growth::Bounded { .. } => (true, Some((0.0, (1.0 / (2.0 * c)).sqrt()))),
        Growth::Exponential { rate, .. } => {
            (true, Some((rate / (2.0 * c), (1.0 / (2.0 * c)).sqrt())))
        }
        Growth::Gaussian { rate, .. } => {
            if c > rate {
                (false, Some((0.0, (1.0 / (2.0 * (c - rate))).sqrt())))
            } else {
                (false, None)
            }
        }
    };
    let reason = if admissible {
        format!("{:?} growth is dominated by every Gaussian", density.growth)
    } else {
        format!(
            "{:?} growth is not integrable against e^(-c|x|^2) for small c",
            density.growth
        )
    };
    let integral = match envelope {
        None => None,
        Some((offset, scale)) => {
            let radius = offset + TAIL_SIGMAS * scale;
            let centre = vec![0.0; dim];
            let part = box_integral(
                |y| (-c * norm2(y)).exp() * density.eval(y).abs(),
                &centre,
                radius,
            )?;
            Some(atom_part + part)
        }
    };
    Ok(Admissibility {
        admissible,
        integral,
        reason,
    })
}

/// (p_t * u0)(x).
pub fn heat_convolve(u0: &SignedMeasure, t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("heat_convolve needs t > 0, got {t}")));
    }
    if x.len() != u0.dim {
        return Err(Error::domain("evaluation point dimension mismatch"));
    }
    let dim = u0.dim;
    let mut diff = vec![0.0; dim];
    let mut total = 0.0;
    for a in &u0.atoms {
        for i in 0..dim {
            diff[i] = x[i] - a.location[i];
        }
        total += a.weight * heat_kernel_unchecked(t, norm2(&diff), dim);
    }
    if let Some(density) = &u0.density {
        let shift = match density.growth {
            Growth::Bounded { .. } => 0.0,
            Growth::Exponential { rate, .. } => rate * t,
            Growth::Gaussian { .. } | Growth::Uncertified => {
                return Err(Error::domain(format!(
                    "density `{}` is not admissible initial data",
                    density.name
                )))
            }
        };
        let radius = shift + TAIL_SIGMAS * t.sqrt();
        total += box_integral(
            |y| {
                let mut r2 = 0.0;
                for i in 0..dim {
                    r2 += (x[i] - y[i]).powi(2);
                }
                heat_kernel_unchecked(t, r2, dim) * density.eval(y)
            },
            x,
            radius,
        )?;
    }
    Ok(total)
}

/// Trapezoid integration over the cube `centre ± radius` with interval doubling.
fn box_integral<F: Fn(&[f64]) -> f64>(f: F, centre: &[f64], radius: f64) -> Result<f64> {
    let dim = centre.len();
    match dim {
        1 => {
            let q = quad::trapezoid_refine(
                |y| f(&[y]),
                centre[0] - radius,
                centre[0] + radius,
                1e-300,
                DENSITY_REL_TOL,
                22,
            )?;
            Ok(q.value)
        }
        2 | 3 => {
            let max_level = if dim == 2 { 11 } else { 7 };
            let mut prev = f64::NAN;
            for level in 3..=max_level {
                let n = 1usize << level;
                let h = 2.0 * radius / n as f64;
                let est = tensor_trapezoid(&f, centre, radius, n, h);
                if (est - prev).abs() <= DENSITY_REL_TOL * est.abs().max(1e-300) {
                    return Ok(est);
                }
                prev = est;
            }
            Err(Error::numeric_with(
                "density quadrature did not converge",
                format!("dimension {dim}, last estimate {prev:e}"),
            ))
        }
        _ => Err(Error::Unsupported(format!(
            "density quadrature in dimension {dim} (supported: 1..=3)"
        ))),
    }
}

fn tensor_trapezoid<F: Fn(&[f64]) -> f64>(
    f: &F,
    centre: &[f64],
    radius: f64,
    n: usize,
    h: f64,
) -> f64 {
    let dim = centre.len();
    let mut idx = vec![0usize; dim];
    let mut y = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for i in 0..dim {
            y[i] = centre[i] - radius + idx[i] as f64 * h;
            if idx[i] == 0 || idx[i] == n {
                w *= 0.5;
            }
        }
        total += w * f(&y);
        let mut i = 0;
        loop {
            if i == dim {
                return total * h.powi(dim as i32);
            }
            idx[i] += 1;
            if idx[i] <= n {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}
