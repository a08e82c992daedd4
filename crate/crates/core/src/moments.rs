//! Monte Carlo estimators of E[u(t,x)^k] and E[(D^N u(t,x))^k].
//!
//! All three representations share one engine. A sample draws k independent
//! paths (free Brownian motions, or zero-pinned bridges shifted by their
//! conditional means), evaluates the pair functionals in log-domain and
//! multiplies by the initial-data factors. Atoms of u0 enter through an exact
//! outer sum over component tuples; a density part is handled by importance
//! sampling from the Gaussian anchoring the last segment.
//!
//! Sample `i` of tuple `T` uses the streams keyed by
//! `(seed, T * samples + i, lane)`, so results do not depend on scheduling.

use crate::bridges::{sample_on_grid, PinSchedule, TimeGrid};
use crate::covariance::{CovarianceModel, Mollified};
use crate::error::{Error, Result};
use crate::functionals::{extrapolate_ladder, pair_integrals, richardson_sqrt_weights, validate_ladder};
use crate::kernels::{heat_convolve, log_heat_kernel, Growth, SignedMeasure};
use crate::rng::{derive_stream, StreamKey};
use crate::stats::{aggregate, combine_independent, Aggregate, LogWeightStats, SignedLogSample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Lane offset of the streams that draw θ for density components.
const THETA_LANE: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    FreeBm,
    BridgeConditioned,
    Derivative,
    FiniteDifference,
}

impl Representation {
    pub fn tag(&self) -> &'static str {
        match self {
            Representation::FreeBm => "free_bm",
            Representation::BridgeConditioned => "bridge_conditioned",
            Representation::Derivative => "derivative",
            Representation::FiniteDifference => "finite_difference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub samples: usize,
    pub ess: f64,
    /// ESS below 1% of the sample count.
    pub low_ess: bool,
    pub log_weight_stats: LogWeightStats,
    pub representation: Representation,
}

impl MomentEstimate {
    pub(crate) fn from_aggregate(a: Aggregate, representation: Representation) -> Self {
        Self {
            mean: a.mean,
            standard_error: a.standard_error,
            samples: a.samples,
            ess: a.ess,
            low_ess: a.ess < 0.01 * a.samples as f64,
            log_weight_stats: a.log_weights,
            representation,
        }
    }
}

/// Estimate at every level of an ε-ladder (computed on common paths) and the
/// √ε-Richardson extrapolation to ε = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEstimate {
    pub extrapolated: MomentEstimate,
    pub levels: Vec<(f64, MomentEstimate)>,
    pub residual: f64,
    pub log_slope: f64,
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub steps_per_segment: usize,
    pub seed: u64,
    /// Worker threads; `None` uses all cores. Never affects results.
    pub workers: Option<usize>,
    /// Largest admissible number of atom/density component tuples.
    pub max_tuples: usize,
    /// Stream lane used by each path copy; defaults to the copy index.
    pub copy_lanes: Option<Vec<u32>>,
}

impl MonteCarlo {
    pub fn new(samples: usize, steps_per_segment: usize, seed: u64) -> Self {
        Self {
            samples,
            steps_per_segment,
            seed,
            workers: None,
            max_tuples: 64,
            copy_lanes: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    fn lane(&self, copy: usize) -> u32 {
        self.copy_lanes
            .as_ref()
            .map_or(copy as u32, |lanes| lanes[copy])
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::domain("samples must be positive"));
        }
        if self.steps_per_segment == 0 {
            return Err(Error::domain("steps_per_segment must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::domain("workers must be positive"));
        }
        if let Some(lanes) = &self.copy_lanes {
            let mut sorted = lanes.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if lanes.len() != k || sorted.len() != k || lanes.iter().any(|&l| l >= THETA_LANE) {
                return Err(Error::domain("copy_lanes must be k distinct lanes below 1000"));
            }
        }
        Ok(())
    }
}

/// Pins and moment order of a derivative moment E[(D^N_{r,z} u(t,x))^k].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeSpec {
    pub k: usize,
    pub r: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

impl DerivativeSpec {
    pub fn order(&self) -> usize {
        self.r.len()
    }

    pub fn validate(&self, t: f64, dim: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::domain("derivative moments need k >= 2"));
        }
        if self.r.is_empty() {
            return Err(Error::domain("derivative order N must be at least 1"));
        }
        if self.r.len() != self.z.len() {
            return Err(Error::domain("r and z lists differ in length"));
        }
        if self.z.iter().any(|z| z.len() != dim) {
            return Err(Error::domain("pin points must match the spatial dimension"));
        }
        if self.r.iter().any(|&r| !(r > 0.0 && r < t)) {
            return Err(Error::domain(format!("pin times r must lie in (0, {t})")));
        }
        if self.r.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("pin times r must be strictly increasing"));
        }
        Ok(())
    }

    /// log of Π_{m<N} p_{r_{m+1}-r_m}(z_{m+1}-z_m) · p_{t-r_N}(x-z_N), one copy.
    fn log_chain(&self, t: f64, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for m in 0..self.order() - 1 {
            let diff: Vec<f64> = self.z[m + 1].iter().zip(&self.z[m]).map(|(a, b)| a - b).collect();
            total += log_heat_kernel(self.r[m + 1] - self.r[m], &diff)?;
        }
        let last = self.order() - 1;
        let diff: Vec<f64> = x.iter().zip(&self.z[last]).map(|(a, b)| a - b).collect();
        Ok(total + log_heat_kernel(t - self.r[last], &diff)?)
    }
}

fn check_common(k: usize, t: f64, x: &[f64], u0: &SignedMeasure, model: &CovarianceModel) -> Result<()> {
    if k == 0 {
        return Err(Error::domain("moment order k must be at least 1"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    if x.len() != u0.dim() || model.dim() != u0.dim() {
        return Err(Error::domain("x, u0 and the covariance model must share a dimension"));
    }
    Ok(())
}

/// E[u(t,x)^k] from k independent free Brownian motions started at x.
/// Needs u0 given by a bounded density (no atoms).
pub fn moment_u_free(
    k: usize,
    t: f64,
    x: &[f64],
    u0: &SignedMeasure,
    model: &CovarianceModel,
    eps: f64,
    mc: &MonteCarlo,
) -> Result<MomentEstimate> {
    let plan = Plan::free(k, t, x, u0, model, mc)?;
    plan.run(u0, model, &[eps], mc)?.single()
}

pub fn moment_u_free_ladder(
    k: usize,
    t: f64,
    x: &[f64],
    u0: &SignedMeasure,
    model: &CovarianceModel,
    ladder: &[f64],
    mc: &MonteCarlo,
) -> Result<LadderEstimate> {
    validate_ladder(ladder)?;
    let plan = Plan::free(k, t, x, u0, model, mc)?;
    plan.run(u0, model, ladder, mc)?.ladder()
}

/// E[u(t,x)^k] from k Brownian bridges x → θ_j with θ_j distributed by
/// p_t(x - θ) u0(dθ).
pub fn moment_u_bridge(
    k: usize,
    t: f64,
    x: &[f64],
    u0: &SignedMeasure,
    model: &CovarianceModel,
    eps: f64,
    mc: &MonteCarlo,
) -> Result<MomentEstimate> {
    let plan = Plan::pinned(k, t, x, None, u0, model, mc)?;
    plan.run(u0, model, &[eps], mc)?.single()
}

pub fn moment_u_bridge_ladder(
    k: usize,
    t: f64,
    x: &[f64],
    u0: &SignedMeasure,
    model: &CovarianceModel,
    ladder: &[f64],
    mc: &MonteCarlo,
) -> Result<LadderEstimate> {
    validate_ladder(ladder)?;
    let plan = Plan::pinned(k, t, x, None, u0, model, mc)?;
    plan.run(u0, model, ladder, mc)?.ladder()
}

/// E[(D^N_{r,z} u(t,x))^k] through paths started at x and pinned at
/// t - r_N, …, t - r_1 to z_N, …, z_1 and at t to θ.
pub fn moment_derivative(
    spec: &DerivativeSpec,
    t: f64,
    x: &[f64],
    u0: &SignedMeasure,
    model: &CovarianceModel,
    eps: f64,
    mc: &MonteCarlo,
) -> Result<MomentEstimate> {
    let plan = Plan::pinned(spec.k, t, x, Some(spec), u0, model, mc)?;
    plan.run(u0, model, &[eps], mc)?.single()
}

pub fn moment_derivative_ladder(
    spec: &DerivativeSpec,
    t: f64,
    x: &[f64],
    u0: &SignedMeasure,
    model: &CovarianceModel,
    ladder: &[f64],
    mc: &MonteCarlo,
) -> Result<LadderEstimate> {
    validate_ladder(ladder)?;
    let plan = Plan::pinned(spec.k, t, x, Some(spec), u0, model, mc)?;
    plan.run(u0, model, ladder, mc)?.ladder()
}

/// C^{1/k} (p_{r_1} * |u0|)(z_1) Π p_{r_{m+1}-r_m}(z_{m+1}-z_m) p_{t-r_N}(x-z_N).
pub fn corollary_bound(spec: &DerivativeSpec, t: f64, x: &[f64], u0: &SignedMeasure, c: f64) -> Result<f64> {
    spec.validate(t, u0.dim())?;
    if x.len() != u0.dim() {
        return Err(Error::domain("x and u0 differ in dimension"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain("the constant C must be positive"));
    }
    let conv = heat_convolve(&u0.abs(), spec.r[0], &spec.z[0])?;
    Ok(c.powf(1.0 / spec.k as f64) * conv * spec.log_chain(t, x)?.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryPoint {
    pub r1: f64,
    pub z1: Vec<f64>,
    pub estimate: MomentEstimate,
    /// Right side of the corollary bound with C = 1.
    pub unit_bound: f64,
    /// max(estimate, 0)^{1/k} / unit_bound.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryFit {
    pub points: Vec<CorollaryPoint>,
    /// Empirical C^{1/k}: the largest ratio over the grid.
    pub max_ratio: f64,
    /// Empirical C = max_ratio^k.
    pub constant: f64,
}

/// First-order (N = 1) sweep of the corollary ratio over a grid of (r_1, z_1).
#[allow(clippy::too_many_arguments)]
pub fn corollary_sweep(
    k: usize,
    t: f64,
    x: &[f64],
    u0: &SignedMeasure,
    model: &CovarianceModel,
    eps: f64,
    r_grid: &[f64],
    z_grid: &[Vec<f64>],
    mc: &MonteCarlo,
) -> Result<CorollaryFit> {
    if r_grid.is_empty() || z_grid.is_empty() {
        return Err(Error::domain("corollary sweep needs a nonempty grid"));
    }
    let mut points = Vec::with_capacity(r_grid.len() * z_grid.len());
    for &r1 in r_grid {
        for z1 in z_grid {
            let spec = DerivativeSpec {
                k,
                r: vec![r1],
                z: vec![z1.clone()],
            };
            let estimate = moment_derivative(&spec, t, x, u0, model, eps, mc)?;
            let unit_bound = corollary_bound(&spec, t, x, u0, 1.0)?;
            let ratio = estimate.mean.max(0.0).powf(1.0 / k as f64) / unit_bound;
            if !ratio.is_finite() {
                return Err(Error::numeric(format!(
                    "corollary ratio at r1 = {r1}, z1 = {z1:?} is not finite"
                )));
            }
            points.push(CorollaryPoint {
                r1,
                z1: z1.clone(),
                estimate,
                unit_bound,
                ratio,
            });
        }
    }
    let max_ratio = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(CorollaryFit {
        points,
        max_ratio,
        constant: max_ratio.powi(k as i32),
    })
}

/// Which part of u0 a path copy is attached to within one outer tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Component {
    Atom(usize),
    Density,
}

struct Plan {
    k: usize,
    dim: usize,
    x: Vec<f64>,
    grid: TimeGrid,
    /// Schedule of the zero-mean paths actually sampled.
    base: PinSchedule,
    representation: Representation,
    /// Present for bridge and derivative forms.
    pinned: Option<Pinned>,
}

struct Pinned {
    anchor: Vec<f64>,
    var: f64,
    log_prefactor: f64,
    /// Weight of θ in the conditional mean at each grid time.
    ramp: Vec<f64>,
}

impl Plan {
    fn free(
        k: usize,
        t: f64,
        x: &[f64],
        u0: &SignedMeasure,
        model: &CovarianceModel,
        mc: &MonteCarlo,
    ) -> Result<Self> {
        check_common(k, t, x, u0, model)?;
        mc.validate(k)?;
        if !u0.atoms().is_empty() {
            return Err(Error::domain(
                "u0 has atoms and cannot be evaluated along free paths; use moment_u_bridge",
            ));
        }
        if let Some(d) = u0.density() {
            if !matches!(d.growth, Growth::Bounded { .. }) {
                return Err(Error::domain(format!(
                    "density `{}` is not certified bounded; use moment_u_bridge",
                    d.name
                )));
            }
        }
        let base = PinSchedule::free(t, vec![0.0; x.len()])?;
        Ok(Self {
            k,
            dim: x.len(),
            x: x.to_vec(),
            grid: base.grid(mc.steps_per_segment)?,
            base,
            representation: Representation::FreeBm,
            pinned: None,
        })
    }

    fn pinned(
        k: usize,
        t: f64,
        x: &[f64],
        spec: Option<&DerivativeSpec>,
        u0: &SignedMeasure,
        model: &CovarianceModel,
        mc: &MonteCarlo,
    ) -> Result<Self> {
        check_common(k, t, x, u0, model)?;
        mc.validate(k)?;
        let dim = x.len();
        let zeros = vec![0.0; dim];
        let (schedule, anchor, var, log_prefactor, representation) = match spec {
            None => (
                PinSchedule::derivative(x, t, &[], &[], &zeros)?,
                x.to_vec(),
                t,
                0.0,
                Representation::BridgeConditioned,
            ),
            Some(spec) => {
                if spec.k != k {
                    return Err(Error::domain("moment order mismatch"));
                }
                spec.validate(t, dim)?;
                (
                    PinSchedule::derivative(x, t, &spec.r, &spec.z, &zeros)?,
                    spec.z[0].clone(),
                    spec.r[0],
                    k as f64 * spec.log_chain(t, x)?,
                    Representation::Derivative,
                )
            }
        };
        let base = schedule.zeroed();
        let grid = base.grid(mc.steps_per_segment)?;
        let pins = schedule.pins();
        let last_start = if pins.len() >= 2 { pins[pins.len() - 2].time } else { 0.0 };
        let ramp = grid
            .times()
            .iter()
            .map(|&s| if s <= last_start { 0.0 } else { (s - last_start) / (t - last_start) })
            .collect();
        Ok(Self {
            k,
            dim,
            x: x.to_vec(),
            grid,
            base,
            representation,
            pinned: Some(Pinned {
                anchor,
                var,
                log_prefactor,
                ramp,
            }),
        })
    }

    fn tuples(&self, u0: &SignedMeasure, mc: &MonteCarlo) -> Result<Vec<Vec<Component>>> {
        let mut comps: Vec<Component> = (0..u0.atoms().len()).map(Component::Atom).collect();
        if u0.density().is_some() {
            comps.push(Component::Density);
        }
        if comps.is_empty() {
            return Ok(Vec::new());
        }
        let count = (comps.len() as f64).powi(self.k as i32);
        if count > mc.max_tuples as f64 {
            return Err(Error::domain(format!(
                "{} components of u0 give {count} outer tuples for k = {}, above the cap of {}; \
                 merge atoms or raise max_tuples",
                comps.len(),
                self.k,
                mc.max_tuples
            )));
        }
        let mut out = vec![Vec::new()];
        for _ in 0..self.k {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<Component>| {
                    comps.iter().map(move |&c| {
                        let mut v = prefix.clone();
                        v.push(c);
                        v
                    })
                })
                .collect();
        }
        Ok(out)
    }

    fn run(&self, u0: &SignedMeasure, model: &CovarianceModel, eps: &[f64], mc: &MonteCarlo) -> Result<Outcome> {
        let kernels = eps
            .iter()
            .map(|&e| model.mollified(e))
            .collect::<Result<Vec<_>>>()?;
        let interacting = self.k > 1 && !kernels.iter().all(Mollified::is_zero);
        let tuples = self.tuples(u0, mc)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(mc.workers.unwrap_or(0))
            .build()
            .map_err(|e| Error::numeric(format!("cannot start worker pool: {e}")))?;
        let mut per_tuple = Vec::with_capacity(tuples.len());
        for (ti, tuple) in tuples.iter().enumerate() {
            let deterministic = !interacting && !tuple.contains(&Component::Density);
            let n_eval = if deterministic { 1 } else { mc.samples };
            let draws: Vec<Draw> = pool.install(|| {
                (0..n_eval)
                    .into_par_iter()
                    .map_init(
                        || vec![0.0; self.k * self.grid.len() * self.dim],
                        |buf, i| {
                            let index = (ti * mc.samples + i) as u64;
                            self.draw(tuple, index, u0, &kernels, interacting, mc, buf)
                        },
                    )
                    .collect()
            });
            let draws = if deterministic {
                vec![draws[0].clone(); mc.samples]
            } else {
                draws
            };
            per_tuple.push(draws);
        }
        Ok(Outcome {
            eps: eps.to_vec(),
            per_tuple,
            samples: mc.samples,
            representation: self.representation,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn draw(
        &self,
        tuple: &[Component],
        index: u64,
        u0: &SignedMeasure,
        kernels: &[Mollified],
        interacting: bool,
        mc: &MonteCarlo,
        buf: &mut [f64],
    ) -> Draw {
        let (k, d) = (self.k, self.dim);
        let stride = self.grid.len() * d;
        let mut sign = 1.0;
        let mut base = 0.0;
        if interacting || self.pinned.is_none() {
            for j in 0..k {
                let mut stream = derive_stream(StreamKey::new(mc.seed, index, mc.lane(j)));
                sample_on_grid(&self.base, &self.grid, &mut stream, &mut buf[j * stride..(j + 1) * stride]);
            }
        }
        let mut thetas = vec![0.0; k * d];
        match &self.pinned {
            None => {
                let density = u0.density().expect("free plans always carry a density");
                for j in 0..k {
                    let end = &buf[(j + 1) * stride - d..(j + 1) * stride];
                    let y: Vec<f64> = end.iter().zip(&self.x).map(|(b, x)| b + x).collect();
                    let f = density.eval(&y);
                    sign *= f.signum();
                    base += f.abs().ln();
                }
            }
            Some(p) => {
                base += p.log_prefactor;
                for (j, comp) in tuple.iter().enumerate() {
                    let theta = &mut thetas[j * d..(j + 1) * d];
                    match *comp {
                        Component::Atom(a) => {
                            let atom = &u0.atoms()[a];
                            theta.copy_from_slice(&atom.location);
                            let diff: Vec<f64> = p.anchor.iter().zip(theta.iter()).map(|(q, th)| q - th).collect();
                            sign *= atom.weight.signum();
                            base += atom.weight.abs().ln()
                                + log_heat_kernel(p.var, &diff).expect("positive variance");
                        }
                        Component::Density => {
                            let mut stream =
                                derive_stream(StreamKey::new(mc.seed, index, THETA_LANE + mc.lane(j)));
                            let sd = p.var.sqrt();
                            for (c, th) in theta.iter_mut().enumerate() {
                                *th = p.anchor[c] + sd * stream.normal();
                            }
                            let f = u0.density().expect("density component").eval(theta);
                            sign *= f.signum();
                            base += f.abs().ln();
                        }
                    }
                }
            }
        }
        if sign == 0.0 {
            base = f64::NEG_INFINITY;
        }
        let mut g = vec![0.0; kernels.len()];
        if interacting {
            let mut pair = vec![0.0; kernels.len()];
            let mut offset = vec![0.0; if self.pinned.is_some() { stride } else { 0 }];
            for j in 0..k {
                for l in j + 1..k {
                    let off = self.pinned.as_ref().map(|p| {
                        for (i, &w) in p.ramp.iter().enumerate() {
                            for c in 0..d {
                                offset[i * d + c] = w * (thetas[j * d + c] - thetas[l * d + c]);
                            }
                        }
                        &offset[..]
                    });
                    pair_integrals(
                        self.grid.times(),
                        &buf[j * stride..(j + 1) * stride],
                        &buf[l * stride..(l + 1) * stride],
                        off,
                        d,
                        kernels,
                        (0, self.grid.len() - 1),
                        &mut pair,
                    );
                    for (gv, pv) in g.iter_mut().zip(&pair) {
                        *gv += pv;
                    }
                }
            }
        }
        Draw { sign, base, g }
    }
}

#[derive(Debug, Clone)]
struct Draw {
    sign: f64,
    base: f64,
    /// Σ_{j<l} G^{j,l} at each mollification level.
    g: Vec<f64>,
}

struct Outcome {
    eps: Vec<f64>,
    per_tuple: Vec<Vec<Draw>>,
    samples: usize,
    representation: Representation,
}

impl Outcome {
    fn empty_estimate(&self) -> MomentEstimate {
        MomentEstimate {
            mean: 0.0,
            standard_error: 0.0,
            samples: self.samples,
            ess: 0.0,
            low_ess: false,
            log_weight_stats: LogWeightStats {
                max: 0.0,
                mean: 0.0,
                variance: 0.0,
            },
            representation: self.representation,
        }
    }

    fn reduce(&self, value: impl Fn(&Draw) -> SignedLogSample) -> Result<MomentEstimate> {
        if self.per_tuple.is_empty() {
            return Ok(self.empty_estimate());
        }
        let parts = self
            .per_tuple
            .iter()
            .map(|draws| aggregate(&draws.iter().map(&value).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let total = combine_independent(&parts)?;
        Ok(MomentEstimate::from_aggregate(total, self.representation))
    }

    fn level(&self, l: usize) -> Result<MomentEstimate> {
        self.reduce(|d| SignedLogSample {
            sign: d.sign,
            log_abs: d.base + d.g[l],
            log_weight: d.g[l],
        })
    }

    fn single(self) -> Result<MomentEstimate> {
        self.level(0)
    }

    fn ladder(self) -> Result<LadderEstimate> {
        let levels = (0..self.eps.len())
            .map(|l| Ok((self.eps[l], self.level(l)?)))
            .collect::<Result<Vec<_>>>()?;
        let weights = richardson_sqrt_weights(&self.eps);
        let finest = self.eps.len() - 1;
        let extrapolated = self.reduce(|d| {
            let gm = d.g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = weights.iter().zip(&d.g).map(|(c, g)| c * (g - gm).exp()).sum();
            if d.sign == 0.0 || s == 0.0 {
                return SignedLogSample::zero(d.g[finest]);
            }
            SignedLogSample {
                sign: d.sign * s.signum(),
                log_abs: d.base + gm + s.abs().ln(),
                log_weight: d.g[finest],
            }
        })?;
        let means: Vec<f64> = levels.iter().map(|(_, e)| e.mean).collect();
        let diag = extrapolate_ladder(&self.eps, &means)?;
        Ok(LadderEstimate {
            extrapolated,
            levels,
            residual: diag.residual,
            log_slope: diag.log_slope,
            divergent: diag.divergent,
        })
    }
}
