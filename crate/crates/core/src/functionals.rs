//! Pairwise interaction functionals G^{j,l} = ∫ Λ_ε(X^j(s) - X^l(s) + α^{j,l}(s)) ds
//! along sampled paths, evaluated by the trapezoid rule on the sampling grid.

use crate::bridges::{PinSchedule, SampledPath};
use crate::covariance::{CovarianceModel, Mollified};
use crate::error::{Error, Result};

/// Piecewise-linear function of time with values in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetFunction {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl OffsetFunction {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::domain("offset needs matching, nonempty node lists"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("offset node times must be strictly increasing"));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::domain("offset node values differ in dimension"));
        }
        Ok(Self { times, values })
    }

    pub fn zero(dim: usize, horizon: f64) -> Self {
        Self {
            times: vec![0.0, horizon],
            values: vec![vec![0.0; dim], vec![0.0; dim]],
        }
    }

    /// s ↦ s·delta/horizon, the drift offset of two bridges ending at points
    /// that differ by `delta`.
    pub fn linear(horizon: f64, delta: Vec<f64>) -> Self {
        let dim = delta.len();
        Self {
            times: vec![0.0, horizon],
            values: vec![vec![0.0; dim], delta],
        }
    }

    /// Difference of the conditional means of two pinned paths with equal pin times.
    pub fn mean_difference(a: &PinSchedule, b: &PinSchedule) -> Result<Self> {
        let ta: Vec<f64> = a.pins().iter().map(|p| p.time).collect();
        let tb: Vec<f64> = b.pins().iter().map(|p| p.time).collect();
        if ta != tb || a.horizon() != b.horizon() {
            return Err(Error::domain("mean difference needs identical pin times"));
        }
        let sub = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>();
        let mut times = vec![0.0];
        let mut values = vec![sub(a.start(), b.start())];
        for (pa, pb) in a.pins().iter().zip(b.pins()) {
            times.push(pa.time);
            values.push(sub(&pa.value, &pb.value));
        }
        if *times.last().expect("nonempty") < a.horizon() {
            let last = values.last().expect("nonempty").clone();
            times.push(a.horizon());
            values.push(last);
        }
        Self::new(times, values)
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn negated(&self) -> Self {
        Self {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| -x).collect())
                .collect(),
        }
    }

    pub fn eval(&self, s: f64) -> Result<Vec<f64>> {
        let (first, last) = (self.times[0], *self.times.last().expect("nonempty"));
        if s < first || s > last {
            return Err(Error::domain(format!(
                "offset evaluated at {s} outside its window [{first}, {last}]"
            )));
        }
        let i = self.times.partition_point(|&t| t <= s).saturating_sub(1);
        if i + 1 >= self.times.len() || self.times[i] == s {
            return Ok(self.values[i].clone());
        }
        let (a, b) = (self.times[i], self.times[i + 1]);
        let w = (s - a) / (b - a);
        Ok(self.values[i]
            .iter()
            .zip(&self.values[i + 1])
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect())
    }

    /// Values at every grid time, row-major.
    pub fn on_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(grid.len() * self.dim());
        for &s in grid {
            out.extend(self.eval(s)?);
        }
        Ok(out)
    }
}

/// Offsets for every pair j < l of k paths, stored in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTable {
    k: usize,
    offsets: Vec<OffsetFunction>,
}

impl OffsetTable {
    pub fn new(k: usize, offsets: Vec<OffsetFunction>) -> Result<Self> {
        if offsets.len() != k * k.saturating_sub(1) / 2 {
            return Err(Error::domain(format!(
                "{k} paths need {} pair offsets, got {}",
                k * k.saturating_sub(1) / 2,
                offsets.len()
            )));
        }
        Ok(Self { k, offsets })
    }

    pub fn zero(k: usize, dim: usize, horizon: f64) -> Self {
        Self {
            k,
            offsets: vec![OffsetFunction::zero(dim, horizon); k * k.saturating_sub(1) / 2],
        }
    }

    pub fn from_schedules(schedules: &[PinSchedule]) -> Result<Self> {
        let k = schedules.len();
        let mut offsets = Vec::new();
        for j in 0..k {
            for l in j + 1..k {
                offsets.push(OffsetFunction::mean_difference(&schedules[j], &schedules[l])?);
            }
        }
        Self::new(k, offsets)
    }

    pub fn get(&self, j: usize, l: usize) -> &OffsetFunction {
        assert!(j < l && l < self.k);
        // index of (j, l) in the lexicographic list of pairs
        let idx = j * (2 * self.k - j - 1) / 2 + (l - j - 1);
        &self.offsets[idx]
    }
}

/// Trapezoid sums of s ↦ Λ(a(s) - b(s) + α(s)) over grid indices
/// `[from, to]`, one per kernel. Slices are row-major with `dim` columns.
pub(crate) fn pair_integrals(
    times: &[f64],
    a: &[f64],
    b: &[f64],
    offset: Option<&[f64]>,
    dim: usize,
    kernels: &[Mollified],
    (from, to): (usize, usize),
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let r2_at = |i: usize| -> f64 {
        let mut r2 = 0.0;
        for c in 0..dim {
            let mut diff = a[i * dim + c] - b[i * dim + c];
            if let Some(o) = offset {
                diff += o[i * dim + c];
            }
            r2 += diff * diff;
        }
        r2
    };
    let mut prev_r2 = r2_at(from);
    for i in from..to {
        let r2 = r2_at(i + 1);
        let half_dt = 0.5 * (times[i + 1] - times[i]);
        for (o, kern) in out.iter_mut().zip(kernels) {
            *o += half_dt * (kern.eval_r2(prev_r2) + kern.eval_r2(r2));
        }
        prev_r2 = r2;
    }
}

fn check_pair(a: &SampledPath, b: &SampledPath, offset: &OffsetFunction) -> Result<()> {
    if !a.same_grid(b) {
        return Err(Error::domain("paths are sampled on different grids"));
    }
    if a.dim() != b.dim() || offset.dim() != a.dim() {
        return Err(Error::domain("path and offset dimensions differ"));
    }
    Ok(())
}

/// G = ∫ Λ_ε(A(s) - B(s) + α(s)) ds over the whole grid.
pub fn pair_interaction(
    a: &SampledPath,
    b: &SampledPath,
    offset: &OffsetFunction,
    model: &CovarianceModel,
    eps: f64,
) -> Result<f64> {
    let kernel = model.mollified(eps)?;
    let n = a.grid().len();
    pair_interaction_window(a, b, offset, &kernel, 0, n - 1)
}

/// Same as [`pair_interaction`] restricted to grid indices `[from, to]`.
pub fn pair_interaction_window(
    a: &SampledPath,
    b: &SampledPath,
    offset: &OffsetFunction,
    kernel: &Mollified,
    from: usize,
    to: usize,
) -> Result<f64> {
    check_pair(a, b, offset)?;
    if !(from <= to && to < a.grid().len()) {
        return Err(Error::domain("window indices out of range"));
    }
    let off = offset.on_grid(a.grid())?;
    let mut out = [0.0];
    pair_integrals(
        a.grid(),
        a.values(),
        b.values(),
        Some(&off),
        a.dim(),
        std::slice::from_ref(kernel),
        (from, to),
        &mut out,
    );
    Ok(out[0])
}

/// Σ_{j<l} G^{j,l}, the log of the Feynman–Kac weight.
pub fn interaction_log_weight(
    paths: &[SampledPath],
    offsets: &OffsetTable,
    model: &CovarianceModel,
    eps: f64,
) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::domain("need at least one path"));
    }
    if offsets.k != paths.len() {
        return Err(Error::domain("offset table size does not match path count"));
    }
    let kernel = model.mollified(eps)?;
    let mut total = 0.0;
    for j in 0..paths.len() {
        for l in j + 1..paths.len() {
            let n = paths[j].grid().len();
            total += pair_interaction_window(&paths[j], &paths[l], offsets.get(j, l), &kernel, 0, n - 1)?;
        }
    }
    Ok(total)
}

/// Check that a mollification ladder is strictly decreasing and positive.
pub fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 3 {
        return Err(Error::domain("an eps ladder needs at least 3 levels"));
    }
    if ladder.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::domain("eps ladder levels must be positive"));
    }
    if ladder.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::domain("eps ladder must be strictly decreasing"));
    }
    Ok(())
}

/// Weights c_l with Σ c_l V(ε_l) = value at ε = 0 of the polynomial in √ε
/// interpolating the ladder (Lagrange interpolation at h = 0).
pub fn richardson_sqrt_weights(ladder: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = ladder.iter().map(|e| e.sqrt()).collect();
    (0..h.len())
        .map(|l| {
            h.iter()
                .enumerate()
                .filter(|&(m, _)| m != l)
                .map(|(_, &hm)| hm / (hm - h[l]))
                .product()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderExtrapolation {
    /// Estimated ε → 0 limit.
    pub value: f64,
    pub levels: Vec<(f64, f64)>,
    /// |full extrapolation − extrapolation from the finest levels without the coarsest|.
    pub residual: f64,
    /// d ln V / d ln ε between the two finest levels.
    pub log_slope: f64,
    /// Values grow faster than ε^{-1/4}, so the limit is most likely infinite.
    pub divergent: bool,
}

/// Richardson extrapolation in √ε of level values `values[l] = V(ladder[l])`.
pub fn extrapolate_ladder(ladder: &[f64], values: &[f64]) -> Result<LadderExtrapolation> {
    validate_ladder(ladder)?;
    if values.len() != ladder.len() {
        return Err(Error::domain("ladder and values differ in length"));
    }
    let w = richardson_sqrt_weights(ladder);
    let value: f64 = w.iter().zip(values).map(|(c, v)| c * v).sum();
    let w_fine = richardson_sqrt_weights(&ladder[1..]);
    let fine: f64 = w_fine.iter().zip(&values[1..]).map(|(c, v)| c * v).sum();
    let n = ladder.len();
    let (v1, v2) = (values[n - 2], values[n - 1]);
    let log_slope = if v1 > 0.0 && v2 > 0.0 {
        (v2 / v1).ln() / (ladder[n - 1] / ladder[n - 2]).ln()
    } else {
        f64::NAN
    };
    Ok(LadderExtrapolation {
        value,
        levels: ladder.iter().copied().zip(values.iter().copied()).collect(),
        residual: (value - fine).abs(),
        log_slope,
        divergent: log_slope < -0.25,
    })
}

/// ε → 0 limit of the white-noise pair functional, i.e. the local time at 0
/// of A − B + α, by evaluating Λ_ε = p_{2ε} along a ladder and extrapolating.
pub fn whitenoise_pair_interaction(
    a: &SampledPath,
    b: &SampledPath,
    offset: &OffsetFunction,
    ladder: &[f64],
) -> Result<LadderExtrapolation> {
    validate_ladder(ladder)?;
    check_pair(a, b, offset)?;
    if a.dim() != 1 {
        return Err(Error::domain("white-noise interaction is defined only in d = 1"));
    }
    let model = CovarianceModel::white_noise();
    let kernels = ladder
        .iter()
        .map(|&e| model.mollified(e))
        .collect::<Result<Vec<_>>>()?;
    let off = offset.on_grid(a.grid())?;
    let mut values = vec![0.0; ladder.len()];
    pair_integrals(
        a.grid(),
        a.values(),
        b.values(),
        Some(&off),
        1,
        &kernels,
        (0, a.grid().len() - 1),
        &mut values,
    );
    extrapolate_ladder(ladder, &values)
}
