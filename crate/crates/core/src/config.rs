//! Experiment configuration: a versioned JSON document, normalised so that
//! every field is explicit, and validated as a whole before any computation.

use crate::covariance::{named_radial_density, CovarianceKind, CovarianceModel};
use crate::error::{Error, Result};
use crate::functionals::validate_ladder;
use crate::kernels::{admissibility_check, named_density, Atom, Growth, SignedMeasure};
use crate::moments::{DerivativeSpec, MonteCarlo, Representation};
use crate::spde::{GridInitial, SheParams};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Moment,
    DerivativeMoment,
    Chaos,
    Spde,
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Moment => "moment",
            Command::DerivativeMoment => "derivative-moment",
            Command::Chaos => "chaos",
            Command::Spde => "spde",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub command: Option<Command>,
    pub model: ModelConfig,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub moment: Option<MomentConfig>,
    #[serde(default)]
    pub derivative: Option<DerivativeConfig>,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub chaos: Option<ChaosConfig>,
    #[serde(default)]
    pub spde: Option<SpdeConfig>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Zero,
    WhiteNoise,
    Riesz,
    Gaussian,
    RadialSpectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFunction {
    pub name: String,
    #[serde(default)]
    pub param: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub spectral_density: Option<NamedFunction>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub eps_ladder: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub location: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
    #[serde(default)]
    pub density: Option<NamedFunction>,
    /// Growth class of the density; checked against the registry when given.
    #[serde(default)]
    pub growth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub dim: usize,
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentConfig {
    pub k: usize,
    /// `free_bm` or `bridge_conditioned`; chosen from u0 when absent.
    #[serde(default)]
    pub representation: Option<Representation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub r1: Vec<f64>,
    pub z1: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeConfig {
    pub k: usize,
    pub r: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    /// Constant of the corollary bound reported next to the estimate.
    #[serde(default)]
    pub corollary_c: Option<f64>,
    /// First-order grid over which the corollary ratio is swept.
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_steps")]
    pub steps_per_segment: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_tuples")]
    pub max_tuples: usize,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_samples() -> usize {
    10_000
}
fn default_steps() -> usize {
    64
}
fn default_max_tuples() -> usize {
    64
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            steps_per_segment: default_steps(),
            seed: 0,
            max_tuples: default_max_tuples(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosConfig {
    /// Fixed truncation order; chosen from `tail_tolerance` when absent.
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default = "default_tail")]
    pub tail_tolerance: f64,
    /// Spectral cutoff M of the tail bound; optimised when absent.
    #[serde(default)]
    pub cutoff: Option<f64>,
}

fn default_tail() -> f64 {
    1e-6
}

impl Default for ChaosConfig {
    fn default() -> Self {
        Self { n_max: None, tail_tolerance: default_tail(), cutoff: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeConfig {
    pub dx: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_spde_k")]
    pub k: usize,
    #[serde(default = "default_grid_initial")]
    pub initial: GridInitial,
}

fn default_reps() -> usize {
    10_000
}
fn default_spde_k() -> usize {
    2
}
fn default_grid_initial() -> GridInitial {
    GridInitial::One
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub format: Format,
}

/// Mollification requested for Monte Carlo estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum Smoothing {
    Fixed(f64),
    Ladder(Vec<f64>),
}

/// Fully checked experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub command: Command,
    pub model: CovarianceModel,
    pub smoothing: Smoothing,
    pub u0: SignedMeasure,
    pub t: f64,
    pub x: Vec<f64>,
    pub mc: MonteCarlo,
    pub moment: Option<(usize, Representation)>,
    pub derivative: Option<DerivativeSpec>,
    pub chaos: ChaosConfig,
    pub spde: Option<(SheParams, usize, usize)>,
    /// The normalised config, echoed in every record.
    pub echo: ExperimentConfig,
}

/// Parse JSON text, reporting the offending field path on failure.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::config(
            if path == "." { "<root>".to_string() } else { path },
            format!("{inner} (line {}, column {})", inner.line(), inner.column()),
        )
    })
}

fn cfg_err(field: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

fn growth_label(g: &Growth) -> &'static str {
    match g {
        Growth::Bounded { .. } => "bounded",
        Growth::Exponential { .. } => "exponential",
        Growth::Gaussian { .. } => "gaussian",
        Growth::Uncertified => "uncertified",
    }
}

impl ExperimentConfig {
    /// Fill defaults and apply command-line overrides, then validate.
    pub fn prepare(
        mut self,
        command: Command,
        seed: Option<u64>,
        workers: Option<usize>,
        out: Option<String>,
        format: Option<Format>,
    ) -> Result<Experiment> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if let Some(c) = self.command {
            if c != command {
                return Err(Error::config(
                    "command",
                    format!("config is for `{}` but `{}` was requested", c.name(), command.name()),
                ));
            }
        }
        self.command = Some(command);
        let mut mc = self.mc.take().unwrap_or_default();
        if let Some(s) = seed {
            mc.seed = s;
        }
        if workers.is_some() {
            mc.workers = workers;
        }
        self.mc = Some(mc);
        self.initial.get_or_insert_with(|| InitialConfig {
            atoms: Vec::new(),
            density: Some(NamedFunction { name: "one".into(), param: None }),
            growth: None,
        });
        let mut output = self.output.take().unwrap_or_default();
        if out.is_some() {
            output.path = out;
        }
        if let Some(f) = format {
            output.format = f;
        }
        self.output = Some(output);
        if matches!(command, Command::Chaos | Command::Validate) && self.chaos.is_none() {
            self.chaos = Some(ChaosConfig::default());
        }
        self.validate(command)
    }

    fn validate(self, command: Command) -> Result<Experiment> {
        let g = &self.geometry;
        if g.dim == 0 || g.dim > 3 {
            return Err(Error::config("geometry.dim", "dimension must be 1, 2 or 3"));
        }
        if !(g.t > 0.0 && g.t.is_finite()) {
            return Err(Error::config("geometry.t", format!("t must be positive, got {}", g.t)));
        }
        if g.x.len() != g.dim || g.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("geometry.x", format!("x must hold {} finite coordinates", g.dim)));
        }
        let model = self.build_model()?;
        let smoothing = self.smoothing(command)?;
        let u0 = self.build_initial()?;

        let m = self.mc.as_ref().expect("filled by prepare");
        if m.samples == 0 {
            return Err(Error::config("mc.samples", "must be positive"));
        }
        if m.steps_per_segment == 0 {
            return Err(Error::config("mc.steps_per_segment", "must be positive"));
        }
        if m.workers == Some(0) {
            return Err(Error::config("mc.workers", "must be positive"));
        }
        let mc = MonteCarlo {
            samples: m.samples,
            steps_per_segment: m.steps_per_segment,
            seed: m.seed,
            workers: m.workers,
            max_tuples: m.max_tuples,
            copy_lanes: None,
        };

        let moment = match command {
            Command::Moment | Command::Validate => Some(self.moment_choice(&u0, command)?),
            _ => None,
        };
        let derivative = if command == Command::DerivativeMoment {
            Some(self.derivative_spec(&u0)?)
        } else {
            None
        };
        let spde = self.spde_params(command, &model)?;
        let chaos = self.chaos.clone().unwrap_or_default();
        if matches!(command, Command::Chaos | Command::Validate) {
            self.check_chaos(&chaos, &u0)?;
        }
        Ok(Experiment {
            command,
            model,
            smoothing,
            u0,
            t: g.t,
            x: g.x.clone(),
            mc,
            moment,
            derivative,
            chaos,
            spde,
            echo: self,
        })
    }

    fn build_model(&self) -> Result<CovarianceModel> {
        let m = &self.model;
        let need = |v: Option<f64>, field: &str| {
            v.ok_or_else(|| Error::config(field, "required for this covariance kind"))
        };
        let kind = match m.kind {
            ModelKind::Zero => CovarianceKind::Zero,
            ModelKind::WhiteNoise => CovarianceKind::WhiteNoise,
            ModelKind::Riesz => CovarianceKind::Riesz { beta: need(m.beta, "model.beta")? },
            ModelKind::Gaussian => CovarianceKind::Gaussian { sigma: need(m.sigma, "model.sigma")? },
            ModelKind::RadialSpectral => {
                let f = m
                    .spectral_density
                    .as_ref()
                    .ok_or_else(|| Error::config("model.spectral_density", "required for radial_spectral"))?;
                CovarianceKind::RadialSpectral(
                    named_radial_density(&f.name, f.param).map_err(cfg_err("model.spectral_density"))?,
                )
            }
        };
        CovarianceModel::new(kind, self.geometry.dim).map_err(cfg_err("model"))
    }

    fn smoothing(&self, command: Command) -> Result<Smoothing> {
        let m = &self.model;
        match (&m.eps, &m.eps_ladder) {
            (Some(_), Some(_)) => Err(Error::config("model.eps_ladder", "give either eps or eps_ladder, not both")),
            (Some(e), None) => {
                if !(*e >= 0.0 && e.is_finite()) {
                    return Err(Error::config("model.eps", "must be a nonnegative number"));
                }
                if *e == 0.0 && matches!(m.kind, ModelKind::WhiteNoise | ModelKind::RadialSpectral) {
                    return Err(Error::config(
                        "model.eps",
                        "this covariance needs eps > 0 or an eps_ladder",
                    ));
                }
                Ok(Smoothing::Fixed(*e))
            }
            (None, Some(l)) => {
                validate_ladder(l).map_err(cfg_err("model.eps_ladder"))?;
                Ok(Smoothing::Ladder(l.clone()))
            }
            (None, None) => {
                let needs_mc = matches!(command, Command::Moment | Command::DerivativeMoment | Command::Validate);
                if needs_mc && matches!(m.kind, ModelKind::WhiteNoise | ModelKind::RadialSpectral) {
                    Err(Error::config("model.eps", "this covariance needs eps > 0 or an eps_ladder"))
                } else {
                    Ok(Smoothing::Fixed(0.0))
                }
            }
        }
    }

    fn build_initial(&self) -> Result<SignedMeasure> {
        let init = self.initial.as_ref().expect("filled by prepare");
        let atoms = init
            .atoms
            .iter()
            .map(|a| Atom { location: a.location.clone(), weight: a.weight })
            .collect();
        let density = match &init.density {
            Some(f) => Some(named_density(&f.name, f.param).map_err(cfg_err("initial.density"))?),
            None => None,
        };
        if let (Some(want), Some(d)) = (&init.growth, &density) {
            if want != growth_label(&d.growth) {
                return Err(Error::config(
                    "initial.growth",
                    format!("density `{}` has {} growth, not {want}", d.name, growth_label(&d.growth)),
                ));
            }
        }
        let u0 = SignedMeasure::new(self.geometry.dim, atoms, density).map_err(cfg_err("initial.atoms"))?;
        let adm = admissibility_check(&u0, 1.0).map_err(cfg_err("initial.density"))?;
        if !adm.admissible {
            return Err(Error::config("initial.density", format!("not admissible: {}", adm.reason)));
        }
        Ok(u0)
    }

    fn moment_choice(&self, u0: &SignedMeasure, command: Command) -> Result<(usize, Representation)> {
        let m = self
            .moment
            .as_ref()
            .ok_or_else(|| Error::config("moment", "required for this command"))?;
        if m.k == 0 {
            return Err(Error::config("moment.k", "must be at least 1"));
        }
        let free_ok = u0.atoms().is_empty()
            && u0.density().is_none_or(|d| matches!(d.growth, Growth::Bounded { .. }));
        let rep = match m.representation {
            None if free_ok => Representation::FreeBm,
            None => Representation::BridgeConditioned,
            Some(Representation::FreeBm) if !free_ok => {
                return Err(Error::config(
                    "moment.representation",
                    "free_bm needs u0 without atoms and with a bounded density; use bridge_conditioned",
                ))
            }
            Some(r @ (Representation::FreeBm | Representation::BridgeConditioned)) => r,
            Some(other) => {
                return Err(Error::config(
                    "moment.representation",
                    format!("`{}` is not a representation of E[u^k]", other.tag()),
                ))
            }
        };
        if command == Command::Validate && m.k != 2 {
            return Err(Error::config("moment.k", "validate compares second moments; set k = 2"));
        }
        Ok((m.k, rep))
    }

    fn derivative_spec(&self, u0: &SignedMeasure) -> Result<DerivativeSpec> {
        let d = self
            .derivative
            .as_ref()
            .ok_or_else(|| Error::config("derivative", "required for derivative-moment"))?;
        if d.k < 2 {
            return Err(Error::config("derivative.k", "derivative moments need k >= 2"));
        }
        if d.r.is_empty() {
            return Err(Error::config("derivative.r", "need at least one pin time"));
        }
        if d.r.iter().any(|&r| !(r > 0.0 && r < self.geometry.t)) {
            return Err(Error::config("derivative.r", format!("pin times must lie in (0, {})", self.geometry.t)));
        }
        if d.r.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("derivative.r", "pin times must be strictly increasing"));
        }
        if d.z.len() != d.r.len() || d.z.iter().any(|z| z.len() != self.geometry.dim) {
            return Err(Error::config(
                "derivative.z",
                format!("need {} points of dimension {}", d.r.len(), self.geometry.dim),
            ));
        }
        if let Some(c) = d.corollary_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("derivative.corollary_c", "must be positive"));
            }
        }
        if let Some(s) = &d.sweep {
            if s.r1.is_empty() || s.z1.is_empty() {
                return Err(Error::config("derivative.sweep", "grids must be nonempty"));
            }
            if s.r1.iter().any(|&r| !(r > 0.0 && r < self.geometry.t)) {
                return Err(Error::config("derivative.sweep.r1", "values must lie in (0, t)"));
            }
            if s.z1.iter().any(|z| z.len() != self.geometry.dim) {
                return Err(Error::config("derivative.sweep.z1", "points must match the dimension"));
            }
        }
        let spec = DerivativeSpec { k: d.k, r: d.r.clone(), z: d.z.clone() };
        spec.validate(self.geometry.t, u0.dim()).map_err(cfg_err("derivative"))?;
        Ok(spec)
    }

    fn spde_params(&self, command: Command, model: &CovarianceModel) -> Result<Option<(SheParams, usize, usize)>> {
        let Some(s) = &self.spde else {
            if command == Command::Spde {
                return Err(Error::config("spde", "required for the spde command"));
            }
            return Ok(None);
        };
        if !matches!(command, Command::Spde | Command::Validate) {
            return Ok(None);
        }
        if !matches!(model.kind(), CovarianceKind::WhiteNoise) || self.geometry.dim != 1 {
            return Err(Error::config("model.kind", "the finite-difference scheme needs white noise in d = 1"));
        }
        let x = self.geometry.x[0];
        let t = self.geometry.t;
        let mut p = SheParams::with_defaults(s.dx, t, x, s.initial).map_err(cfg_err("spde.dx"))?;
        if s.dt.is_some() || s.half_width.is_some() {
            p = SheParams::new(s.dx, s.dt.unwrap_or(p.dt), t, s.half_width.unwrap_or(p.half_width), s.initial)
                .map_err(cfg_err("spde"))?;
        }
        p.nearest_node(x).map_err(cfg_err("spde.half_width"))?;
        if !(1..=3).contains(&s.k) {
            return Err(Error::config("spde.k", "must be 1, 2 or 3"));
        }
        if s.reps == 0 {
            return Err(Error::config("spde.reps", "must be positive"));
        }
        Ok(Some((p, s.k, s.reps)))
    }

    fn check_chaos(&self, chaos: &ChaosConfig, u0: &SignedMeasure) -> Result<()> {
        let is_one = u0.atoms().is_empty()
            && self.initial.as_ref().and_then(|i| i.density.as_ref()).is_some_and(|d| {
                matches!(d.name.as_str(), "one" | "constant") && d.param.unwrap_or(1.0) == 1.0
            });
        if !is_one {
            return Err(Error::config("initial", "the chaos oracle needs u0 ≡ 1 (density `one`, no atoms)"));
        }
        if !(chaos.tail_tolerance > 0.0) {
            return Err(Error::config("chaos.tail_tolerance", "must be positive"));
        }
        if let Some(m) = chaos.cutoff {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::config("chaos.cutoff", "must be positive"));
            }
        }
        Ok(())
    }
}
