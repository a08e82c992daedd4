//! Brownian motions pinned at finitely many times, sampled on fixed grids.

use crate::error::{Error, Result};
use crate::rng::Stream;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct Pin {
    pub time: f64,
    pub value: Vec<f64>,
}

/// Start point at time 0 plus ordered pins in (0, horizon]. Between pins the
/// path is a Brownian bridge; after the last pin (if it precedes the horizon)
/// it is a free Brownian motion.
#[derive(Debug, Clone, PartialEq)]
pub struct PinSchedule {
    dim: usize,
    horizon: f64,
    start: Vec<f64>,
    pins: Vec<Pin>,
}

impl PinSchedule {
    pub fn new(horizon: f64, start: Vec<f64>, pins: Vec<Pin>) -> Result<Self> {
        let dim = start.len();
        if dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        let mut prev = 0.0;
        for (i, p) in pins.iter().enumerate() {
            if p.value.len() != dim {
                return Err(Error::domain(format!("pin {i} has wrong dimension")));
            }
            if !(p.time > prev) {
                return Err(Error::domain(format!(
                    "pin times must be strictly increasing and positive; pin {i} at {} follows {prev}",
                    p.time
                )));
            }
            if p.time > horizon {
                return Err(Error::domain(format!(
                    "pin {i} at {} lies beyond the horizon {horizon}",
                    p.time
                )));
            }
            prev = p.time;
        }
        Ok(Self {
            dim,
            horizon,
            start,
            pins,
        })
    }

    /// Unpinned Brownian motion from `start` on [0, horizon].
    pub fn free(horizon: f64, start: Vec<f64>) -> Result<Self> {
        Self::new(horizon, start, Vec::new())
    }

    /// Path measure of the derivative-moment formula: start at `x`, pinned at
    /// t-r_N < … < t-r_1 to z_N, …, z_1 and at t to θ. With empty `r` this is a
    /// single bridge from x to θ on [0, t].
    pub fn derivative(x: &[f64], t: f64, r: &[f64], z: &[Vec<f64>], theta: &[f64]) -> Result<Self> {
        if r.len() != z.len() {
            return Err(Error::domain("pin times and pin points differ in length"));
        }
        for w in r.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::domain(format!(
                    "derivative times must be strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let (Some(first), Some(last)) = (r.first(), r.last()) {
            if !(*first > 0.0 && *last < t) {
                return Err(Error::domain("derivative times must lie in (0, t)"));
            }
        }
        let mut pins: Vec<Pin> = r
            .iter()
            .zip(z)
            .rev()
            .map(|(ri, zi)| Pin {
                time: t - ri,
                value: zi.clone(),
            })
            .collect();
        pins.push(Pin {
            time: t,
            value: theta.to_vec(),
        });
        Self::new(t, x.to_vec(), pins)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn pins(&self) -> &[Pin] {
        &self.pins
    }

    /// Same pin times with start and every pin value set to zero.
    pub fn zeroed(&self) -> Self {
        Self {
            dim: self.dim,
            horizon: self.horizon,
            start: vec![0.0; self.dim],
            pins: self
                .pins
                .iter()
                .map(|p| Pin {
                    time: p.time,
                    value: vec![0.0; self.dim],
                })
                .collect(),
        }
    }

    fn has_free_tail(&self) -> bool {
        self.pins.last().is_none_or(|p| p.time < self.horizon)
    }

    /// Uniform grid with `steps_per_segment` steps on each inter-pin segment.
    pub fn grid(&self, steps_per_segment: usize) -> Result<TimeGrid> {
        if steps_per_segment == 0 {
            return Err(Error::domain("steps_per_segment must be at least 1"));
        }
        let mut ends: Vec<f64> = self.pins.iter().map(|p| p.time).collect();
        if self.has_free_tail() {
            ends.push(self.horizon);
        }
        let mut times = vec![0.0];
        let mut a = 0.0;
        for &b in &ends {
            for i in 1..steps_per_segment {
                times.push(a + (b - a) * i as f64 / steps_per_segment as f64);
            }
            times.push(b);
            a = b;
        }
        Ok(TimeGrid {
            times: times.into(),
            steps_per_segment,
        })
    }
}

/// Strictly increasing time points including 0, every pin time and the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Arc<[f64]>,
    steps_per_segment: usize,
}

impl TimeGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps_per_segment(&self) -> usize {
        self.steps_per_segment
    }

    pub(crate) fn shared(&self) -> Arc<[f64]> {
        self.times.clone()
    }
}

/// One realised path; `values` is row-major with `dim` entries per grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    grid: Arc<[f64]>,
    dim: usize,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(grid: &TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::domain("path values do not match grid size"));
        }
        Ok(Self {
            grid: grid.shared(),
            dim,
            values,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.value_at(self.grid.len() - 1)
    }

    pub(crate) fn same_grid(&self, other: &SampledPath) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid[..] == other.grid[..]
    }
}

/// Piecewise-linear interpolation of (0, start) and the pins at time `s`.
pub fn bridge_mean(schedule: &PinSchedule, s: f64) -> Result<Vec<f64>> {
    if !(0.0..=schedule.horizon).contains(&s) {
        return Err(Error::domain(format!(
            "time {s} outside [0, {}]",
            schedule.horizon
        )));
    }
    let mut out = vec![0.0; schedule.dim];
    mean_into(schedule, s, &mut out);
    Ok(out)
}

fn mean_into(schedule: &PinSchedule, s: f64, out: &mut [f64]) {
    let mut a = 0.0;
    let mut x: &[f64] = &schedule.start;
    for p in &schedule.pins {
        if s == p.time {
            out.copy_from_slice(&p.value);
            return;
        }
        if s < p.time {
            let b = p.time;
            let wy = (s - a) / (b - a);
            let wx = (b - s) / (b - a);
            for i in 0..out.len() {
                out[i] = wy * p.value[i] + wx * x[i];
            }
            return;
        }
        a = p.time;
        x = &p.value;
    }
    out.copy_from_slice(x);
}

/// Conditional mean of the pinned path at every grid time (row-major).
pub fn mean_on_grid(schedule: &PinSchedule, grid: &TimeGrid) -> Vec<f64> {
    let d = schedule.dim;
    let mut out = vec![0.0; grid.len() * d];
    for (i, &s) in grid.times().iter().enumerate() {
        mean_into(schedule, s, &mut out[i * d..(i + 1) * d]);
    }
    out
}

pub fn sample_pinned_path(
    schedule: &PinSchedule,
    steps_per_segment: usize,
    stream: &mut Stream,
) -> Result<SampledPath> {
    let grid = schedule.grid(steps_per_segment)?;
    let mut values = vec![0.0; grid.len() * schedule.dim];
    sample_on_grid(schedule, &grid, stream, &mut values);
    SampledPath::new(&grid, schedule.dim, values)
}

/// Fill `out` with one pinned path on `grid`, which must come from
/// `schedule.grid(..)` (or from a schedule with the same pin times).
///
/// Each segment is built by sequential Gaussian conditioning of a zero-to-zero
/// bridge, then shifted by the linear interpolation of its end values.
pub fn sample_on_grid(schedule: &PinSchedule, grid: &TimeGrid, stream: &mut Stream, out: &mut [f64]) {
    let d = schedule.dim;
    let times = grid.times();
    let steps = grid.steps_per_segment;
    debug_assert_eq!(out.len(), times.len() * d);
    out[..d].copy_from_slice(&schedule.start);
    let mut idx = 0;
    let mut x = schedule.start.as_slice();
    for p in &schedule.pins {
        let a = times[idx];
        let b = times[idx + steps];
        let span = b - a;
        for comp in 0..d {
            let mut bridge = 0.0;
            let mut prev = a;
            for i in 1..steps {
                let s = times[idx + i];
                let remaining = b - s;
                let before = b - prev;
                let sd = ((s - prev) * remaining / before).sqrt();
                bridge = bridge * remaining / before + sd * stream.normal();
                let lin = ((s - a) / span) * p.value[comp] + ((b - s) / span) * x[comp];
                out[(idx + i) * d + comp] = bridge + lin;
                prev = s;
            }
        }
        idx += steps;
        out[idx * d..(idx + 1) * d].copy_from_slice(&p.value);
        x = &p.value;
    }
    if idx + 1 < times.len() {
        // free Brownian tail after the last pin
        for comp in 0..d {
            let mut v = x[comp];
            for i in 1..=steps {
                let dt = times[idx + i] - times[idx + i - 1];
                v += dt.sqrt() * stream.normal();
                out[(idx + i) * d + comp] = v;
            }
        }
    }
}
