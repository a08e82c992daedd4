//! Explicit finite-difference scheme for the one-dimensional stochastic heat
//! equation ∂u/∂t = ½Δu + uẆ driven by space-time white noise on a periodic
//! grid. Used only as an independent cross-check of the Feynman–Kac moments.

use crate::error::{Error, Result};
use crate::moments::{MomentEstimate, Representation};
use crate::rng::{derive_stream, Stream, StreamKey};
use crate::stats::{aggregate, SignedLogSample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridInitial {
    /// u0 ≡ 1.
    One,
    /// Mass 1/Δx at the node nearest the origin.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SheParams {
    pub dx: f64,
    pub dt: f64,
    pub t: f64,
    /// The domain is [−L, L) with periodic wrap-around.
    pub half_width: f64,
    pub initial: GridInitial,
}

impl SheParams {
    /// Checks stability (Δt ≤ Δx²/2), that t is a multiple of Δt and that
    /// the domain holds a whole number of cells.
    pub fn new(dx: f64, dt: f64, t: f64, half_width: f64, initial: GridInitial) -> Result<Self> {
        for (name, v) in [("dx", dx), ("dt", dt), ("t", t), ("half_width", half_width)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if dt > 0.5 * dx * dx * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "explicit scheme unstable: dt = {dt} exceeds dx²/2 = {}",
                0.5 * dx * dx
            )));
        }
        let steps = t / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::domain(format!("t = {t} is not a multiple of dt = {dt}")));
        }
        let cells = 2.0 * half_width / dx;
        if (cells - cells.round()).abs() > 1e-9 * cells || cells.round() < 3.0 {
            return Err(Error::domain(format!(
                "2L / dx = {cells} must be an integer of at least 3"
            )));
        }
        Ok(Self { dx, dt, t, half_width, initial })
    }

    /// Grid with Δt = Δx²/2 (rounded down so that t is a multiple) and the
    /// default half-width 8√t + |x|, widened so that |x| ≤ L/2.
    pub fn with_defaults(dx: f64, t: f64, x: f64, initial: GridInitial) -> Result<Self> {
        let steps = (t / (0.5 * dx * dx)).ceil();
        let wanted = (8.0 * t.sqrt() + x.abs()).max(2.0 * x.abs());
        let half_width = (wanted / dx).ceil() * dx;
        Self::new(dx, t / steps, t, half_width, initial)
    }

    pub fn nodes(&self) -> usize {
        (2.0 * self.half_width / self.dx).round() as usize
    }

    pub fn steps(&self) -> usize {
        (self.t / self.dt).round() as usize
    }

    pub fn node_position(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx
    }

    pub fn nearest_node(&self, x: f64) -> Result<usize> {
        if x.abs() > 0.5 * self.half_width {
            return Err(Error::domain(format!(
                "x = {x} lies outside the central half [-L/2, L/2] of the domain"
            )));
        }
        Ok((((x + self.half_width) / self.dx).round() as usize) % self.nodes())
    }

    fn initial_field(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.nodes()];
        match self.initial {
            GridInitial::One => u.iter_mut().for_each(|v| *v = 1.0),
            GridInitial::Delta => {
                let i0 = ((self.half_width / self.dx).round() as usize) % self.nodes();
                u[i0] = 1.0 / self.dx;
            }
        }
        u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub params: SheParams,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn at(&self, x: f64) -> Result<f64> {
        Ok(self.values[self.params.nearest_node(x)?])
    }
}

fn evolve(params: &SheParams, mut noise: Option<&mut Stream>) -> GridField {
    let n = params.nodes();
    let lap = 0.5 * params.dt / (params.dx * params.dx);
    let amp = (params.dt / params.dx).sqrt();
    let mut u = params.initial_field();
    let mut next = vec![0.0; n];
    for _ in 0..params.steps() {
        for i in 0..n {
            let left = u[(i + n - 1) % n];
            let right = u[(i + 1) % n];
            let mut v = u[i] + lap * (left - 2.0 * u[i] + right);
            if let Some(s) = noise.as_deref_mut() {
                v += u[i] * amp * s.normal();
            }
            next[i] = v;
        }
        std::mem::swap(&mut u, &mut next);
    }
    GridField { params: *params, values: u }
}

/// One realisation of u(t, ·) on the grid.
pub fn simulate_she_1d(params: &SheParams, stream: &mut Stream) -> GridField {
    evolve(params, Some(stream))
}

/// The scheme with the noise switched off: the discrete heat flow of u0.
pub fn simulate_heat_1d(params: &SheParams) -> GridField {
    evolve(params, None)
}

/// Sample k-th moment of the simulated field at the node nearest x, over
/// `reps` independent runs keyed by (seed, replication).
pub fn direct_moment(
    k: usize,
    x: f64,
    params: &SheParams,
    reps: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<MomentEstimate> {
    if !(1..=3).contains(&k) {
        return Err(Error::domain(format!("direct moments support k in 1..=3, got {k}")));
    }
    if reps == 0 {
        return Err(Error::domain("reps must be positive"));
    }
    let node = params.nearest_node(x)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::numeric(format!("cannot start worker pool: {e}")))?;
    let values: Vec<f64> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut stream = derive_stream(StreamKey::new(seed, rep as u64, 0));
                simulate_she_1d(params, &mut stream).values[node].powi(k as i32)
            })
            .collect()
    });
    let samples: Vec<SignedLogSample> = values
        .iter()
        .map(|&v| {
            if v == 0.0 {
                SignedLogSample::zero(0.0)
            } else {
                SignedLogSample { sign: v.signum(), log_abs: v.abs().ln(), log_weight: 0.0 }
            }
        })
        .collect();
    Ok(MomentEstimate::from_aggregate(aggregate(&samples)?, Representation::FiniteDifference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::heat_kernel;

    #[test]
    fn stability_and_grid_checks() {
        assert!(SheParams::new(0.1, 0.006, 0.6, 2.0, GridInitial::One).is_err());
        assert!(SheParams::new(0.1, 0.005, 0.6001, 2.0, GridInitial::One).is_err());
        assert!(SheParams::new(0.1, 0.005, 0.6, 2.03, GridInitial::One).is_err());
        let p = SheParams::new(0.1, 0.005, 0.6, 2.0, GridInitial::One).unwrap();
        assert_eq!(p.nodes(), 40);
        assert_eq!(p.steps(), 120);
        assert!(p.nearest_node(1.5).is_err());
        let d = SheParams::with_defaults(0.05, 0.25, 0.3, GridInitial::One).unwrap();
        assert!(d.half_width >= 8.0 * 0.5 + 0.3);
        assert!(d.dt <= 0.5 * 0.05 * 0.05);
    }

    #[test]
    fn zero_noise_constant_stays_one() {
        let p = SheParams::with_defaults(0.1, 0.5, 0.0, GridInitial::One).unwrap();
        assert!(simulate_heat_1d(&p).values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_noise_delta_converges_to_heat_kernel_at_second_order() {
        let t = 0.5;
        let err = |dx: f64| {
            let p = SheParams::with_defaults(dx, t, 0.0, GridInitial::Delta).unwrap();
            let f = simulate_heat_1d(&p);
            (0..p.nodes())
                .map(|i| (f.values[i] - heat_kernel(t, &[p.node_position(i)]).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(0.1), err(0.05), err(0.025));
        assert!(e1 / e2 > 3.5 && e2 / e3 > 3.5, "{e1} {e2} {e3}");
    }

    #[test]
    fn noisy_mean_is_heat_solution() {
        let p = SheParams::with_defaults(0.1, 0.25, 0.0, GridInitial::One).unwrap();
        let e = direct_moment(1, 0.2, &p, 10_000, 3, None).unwrap();
        assert!((e.mean - 1.0).abs() < 3.0 * e.standard_error, "{e:?}");
        assert_eq!(e.representation, Representation::FiniteDifference);
        assert!(direct_moment(4, 0.0, &p, 10, 1, None).is_err());
    }

    #[test]
    fn noisy_delta_mean_tracks_discrete_heat_kernel() {
        let p = SheParams::with_defaults(0.1, 0.25, 0.0, GridInitial::Delta).unwrap();
        let e = direct_moment(1, 0.3, &p, 10_000, 5, None).unwrap();
        let target = simulate_heat_1d(&p).at(0.3).unwrap();
        assert!((e.mean - target).abs() < 3.0 * e.standard_error, "{} vs {target}", e.mean);
    }

    #[test]
    fn spatial_average_of_mean_field_is_conserved() {
        let p = SheParams::with_defaults(0.1, 0.25, 0.0, GridInitial::One).unwrap();
        let reps = 2000;
        let avgs: Vec<f64> = (0..reps)
            .map(|r| {
                let f = simulate_she_1d(&p, &mut derive_stream(StreamKey::new(9, r, 0)));
                f.values.iter().sum::<f64>() / f.values.len() as f64
            })
            .collect();
        let m = avgs.iter().sum::<f64>() / reps as f64;
        let sd = (avgs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
        assert!((m - 1.0).abs() < 3.0 * sd / (reps as f64).sqrt());
    }

    #[test]
    fn results_independent_of_workers() {
        let p = SheParams::with_defaults(0.1, 0.1, 0.0, GridInitial::One).unwrap();
        let a = direct_moment(2, 0.0, &p, 300, 1, Some(1)).unwrap();
        let b = direct_moment(2, 0.0, &p, 300, 1, Some(8)).unwrap();
        assert_eq!(a, b);
    }
}
