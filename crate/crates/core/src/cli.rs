//! Experiment runner behind the `pamfk` binary.
//!
//! Every record carries the normalised configuration, so a record can be fed
//! back through `--config` to reproduce it.

use crate::chaos::{second_moment_series_with, second_moment_to_tolerance, ChaosOptions, SeriesResult};
use crate::config::{parse_config, Command, Experiment, ExperimentConfig, Format, Smoothing, SCHEMA_VERSION};
use crate::covariance::{CovarianceKind, CovarianceModel};
use crate::error::{Error, Result};
use crate::moments::{
    corollary_bound, corollary_sweep, moment_derivative, moment_derivative_ladder, moment_u_bridge,
    moment_u_bridge_ladder, moment_u_free, moment_u_free_ladder, LadderEstimate, MomentEstimate, Representation,
};
use crate::spde::direct_moment;
use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Feynman–Kac Monte Carlo and oracles for parabolic Anderson model moments.
#[derive(Debug, Parser)]
#[command(name = "pamfk", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON experiment config, or a record file written by an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Append records to this file instead of printing them.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub workers: Option<usize>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub schema_version: u32,
    pub command: String,
    pub quantity: String,
    pub order: Option<usize>,
    pub eps: Option<f64>,
    pub mean: Option<f64>,
    pub standard_error: Option<f64>,
    pub samples: Option<usize>,
    pub ess: Option<f64>,
    pub low_ess: Option<bool>,
    pub log_weight_max: Option<f64>,
    pub log_weight_mean: Option<f64>,
    pub log_weight_variance: Option<f64>,
    pub representation: Option<String>,
    pub extrapolation_residual: Option<f64>,
    pub divergent: Option<bool>,
    pub oracle_value: Option<f64>,
    pub oracle_tail_bound: Option<f64>,
    pub oracle_quadrature_error: Option<f64>,
    pub agreement: Option<bool>,
    pub detail: Option<Value>,
    pub wall_time: f64,
    pub config: ExperimentConfig,
}

pub const CSV_COLUMNS: [&str; 23] = [
    "schema_version",
    "command",
    "quantity",
    "order",
    "eps",
    "mean",
    "standard_error",
    "samples",
    "ess",
    "low_ess",
    "log_weight_max",
    "log_weight_mean",
    "log_weight_variance",
    "representation",
    "extrapolation_residual",
    "divergent",
    "oracle_value",
    "oracle_tail_bound",
    "oracle_quadrature_error",
    "agreement",
    "detail",
    "wall_time",
    "config",
];

impl Record {
    fn new(exp: &Experiment, quantity: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: exp.command.name().to_string(),
            quantity: quantity.to_string(),
            order: None,
            eps: None,
            mean: None,
            standard_error: None,
            samples: None,
            ess: None,
            low_ess: None,
            log_weight_max: None,
            log_weight_mean: None,
            log_weight_variance: None,
            representation: None,
            extrapolation_residual: None,
            divergent: None,
            oracle_value: None,
            oracle_tail_bound: None,
            oracle_quadrature_error: None,
            agreement: None,
            detail: None,
            wall_time: 0.0,
            config: exp.echo.clone(),
        }
    }

    fn with_estimate(mut self, e: &MomentEstimate) -> Self {
        self.mean = Some(e.mean);
        self.standard_error = Some(e.standard_error);
        self.samples = Some(e.samples);
        self.ess = Some(e.ess);
        self.low_ess = Some(e.low_ess);
        self.log_weight_max = Some(e.log_weight_stats.max);
        self.log_weight_mean = Some(e.log_weight_stats.mean);
        self.log_weight_variance = Some(e.log_weight_stats.variance);
        self.representation = Some(e.representation.tag().to_string());
        self
    }

    fn with_series(mut self, s: &SeriesResult) -> Self {
        self.oracle_value = Some(s.value);
        self.oracle_tail_bound = Some(s.tail_bound);
        self.oracle_quadrature_error = Some(s.quadrature_error);
        self
    }

    /// Same record with the timing removed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_time: 0.0, ..self.clone() }
    }

    fn csv_row(&self) -> Result<Vec<String>> {
        fn f(v: Option<f64>) -> String {
            v.map(|x| format!("{x:?}")).unwrap_or_default()
        }
        fn u(v: Option<usize>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        fn b(v: Option<bool>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let config = serde_json::to_string(&self.config)
            .map_err(|e| Error::numeric(format!("cannot serialise config echo: {e}")))?;
        Ok(vec![
            self.schema_version.to_string(),
            self.command.clone(),
            self.quantity.clone(),
            u(self.order),
            f(self.eps),
            f(self.mean),
            f(self.standard_error),
            u(self.samples),
            f(self.ess),
            b(self.low_ess),
            f(self.log_weight_max),
            f(self.log_weight_mean),
            f(self.log_weight_variance),
            self.representation.clone().unwrap_or_default(),
            f(self.extrapolation_residual),
            b(self.divergent),
            f(self.oracle_value),
            f(self.oracle_tail_bound),
            f(self.oracle_quadrature_error),
            b(self.agreement),
            self.detail.as_ref().map(|d| d.to_string()).unwrap_or_default(),
            format!("{:?}", self.wall_time),
            config,
        ])
    }
}

/// Read a config file; record files (JSON arrays/objects with a `config`
/// field, or CSV with a `config` column) yield the config of their first record.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        if let Ok(value) = serde_json::from_str::<Value>(&text) {
            let first = match &value {
                Value::Array(items) => items.first().cloned(),
                other => Some(other.clone()),
            };
            if let Some(Value::Object(obj)) = &first {
                if obj.contains_key("quantity") {
                    if let Some(cfg) = obj.get("config") {
                        return parse_config(&cfg.to_string());
                    }
                }
            }
        }
        return parse_config(&text);
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::config("--config", format!("neither JSON nor a CSV record file: {e}")))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h == "config")
        .ok_or_else(|| Error::config("--config", "CSV record file has no `config` column"))?;
    let row = reader
        .records()
        .next()
        .ok_or_else(|| Error::config("--config", "CSV record file has no rows"))?
        .map_err(|e| Error::config("--config", e.to_string()))?;
    parse_config(&row[col])
}

/// The chaos series describes the mollified model Λ_ε when a single ε > 0 is
/// fixed and the ε → 0 object when a ladder is used.
fn chaos_model(exp: &Experiment) -> Result<(CovarianceModel, Option<f64>)> {
    let eps = match &exp.smoothing {
        Smoothing::Fixed(e) if *e > 0.0 => *e,
        _ => return Ok((exp.model.clone(), None)),
    };
    let dim = exp.model.dim();
    let model = match exp.model.kind() {
        CovarianceKind::Gaussian { sigma } => CovarianceModel::gaussian(sigma + 2.0 * eps, dim)?,
        CovarianceKind::WhiteNoise => CovarianceModel::gaussian(2.0 * eps, dim)?,
        CovarianceKind::Zero => exp.model.clone(),
        _ => {
            return Err(Error::Unsupported(
                "chaos series of mollified Riesz or radial-spectral covariances".into(),
            ))
        }
    };
    Ok((model, Some(eps)))
}

fn series(exp: &Experiment) -> Result<(SeriesResult, Option<f64>)> {
    let (model, eps) = chaos_model(exp)?;
    let opts = ChaosOptions::default();
    let s = match exp.chaos.n_max {
        Some(n) => second_moment_series_with(exp.t, &exp.x, &model, n, exp.chaos.cutoff, &opts)?,
        None => second_moment_to_tolerance(exp.t, &exp.x, &model, exp.chaos.tail_tolerance, &opts)?,
    };
    Ok((s, eps))
}

enum Estimate {
    Single(f64, MomentEstimate),
    Ladder(LadderEstimate),
}

impl Estimate {
    fn headline(&self) -> (&MomentEstimate, f64) {
        match self {
            Estimate::Single(_, e) => (e, 0.0),
            Estimate::Ladder(l) => (&l.extrapolated, l.residual),
        }
    }
}

fn estimate_u(exp: &Experiment) -> Result<Estimate> {
    let (k, rep) = exp.moment.expect("validated");
    let (t, x, u0, model, mc) = (exp.t, &exp.x, &exp.u0, &exp.model, &exp.mc);
    Ok(match (&exp.smoothing, rep) {
        (Smoothing::Fixed(e), Representation::FreeBm) => Estimate::Single(*e, moment_u_free(k, t, x, u0, model, *e, mc)?),
        (Smoothing::Fixed(e), _) => Estimate::Single(*e, moment_u_bridge(k, t, x, u0, model, *e, mc)?),
        (Smoothing::Ladder(l), Representation::FreeBm) => Estimate::Ladder(moment_u_free_ladder(k, t, x, u0, model, l, mc)?),
        (Smoothing::Ladder(l), _) => Estimate::Ladder(moment_u_bridge_ladder(k, t, x, u0, model, l, mc)?),
    })
}

fn estimate_records(exp: &Experiment, quantity: &str, est: &Estimate, elapsed: f64) -> Vec<Record> {
    match est {
        Estimate::Single(eps, e) => {
            let mut r = Record::new(exp, quantity).with_estimate(e);
            r.eps = Some(*eps);
            r.wall_time = elapsed;
            vec![r]
        }
        Estimate::Ladder(l) => {
            let mut out: Vec<Record> = l
                .levels
                .iter()
                .map(|(eps, e)| {
                    let mut r = Record::new(exp, &format!("{quantity}_level")).with_estimate(e);
                    r.eps = Some(*eps);
                    r.wall_time = elapsed;
                    r
                })
                .collect();
            let mut r = Record::new(exp, &format!("{quantity}_extrapolated")).with_estimate(&l.extrapolated);
            r.eps = Some(0.0);
            r.extrapolation_residual = Some(l.residual);
            r.divergent = Some(l.divergent);
            r.detail = Some(json!({ "log_slope": l.log_slope }));
            r.wall_time = elapsed;
            out.push(r);
            out
        }
    }
}

/// Run a validated experiment and return its records.
pub fn run_experiment(exp: &Experiment) -> Result<Vec<Record>> {
    let clock = Instant::now();
    let mut records = Vec::new();
    match exp.command {
        Command::Moment => {
            let est = estimate_u(exp)?;
            records.extend(estimate_records(exp, "moment", &est, clock.elapsed().as_secs_f64()));
        }
        Command::DerivativeMoment => {
            let spec = exp.derivative.as_ref().expect("validated");
            let (t, x, u0, model, mc) = (exp.t, &exp.x, &exp.u0, &exp.model, &exp.mc);
            let est = match &exp.smoothing {
                Smoothing::Fixed(e) => Estimate::Single(*e, moment_derivative(spec, t, x, u0, model, *e, mc)?),
                Smoothing::Ladder(l) => Estimate::Ladder(moment_derivative_ladder(spec, t, x, u0, model, l, mc)?),
            };
            let mut recs = estimate_records(exp, "derivative_moment", &est, clock.elapsed().as_secs_f64());
            let dcfg = exp.echo.derivative.as_ref().expect("validated");
            if let Some(c) = dcfg.corollary_c {
                let bound = corollary_bound(spec, t, x, u0, c)?;
                for r in &mut recs {
                    r.oracle_value = Some(bound);
                    r.agreement = r.mean.map(|m| m.max(0.0).powf(1.0 / spec.k as f64) <= bound);
                }
            }
            records.extend(recs);
            if let Some(sweep) = &dcfg.sweep {
                let eps = match &exp.smoothing {
                    Smoothing::Fixed(e) => *e,
                    Smoothing::Ladder(_) => {
                        return Err(Error::config("derivative.sweep", "the corollary sweep needs a fixed eps"))
                    }
                };
                let start = Instant::now();
                let fit = corollary_sweep(spec.k, t, x, u0, model, eps, &sweep.r1, &sweep.z1, mc)?;
                let elapsed = start.elapsed().as_secs_f64();
                for p in &fit.points {
                    let mut r = Record::new(exp, "corollary_point").with_estimate(&p.estimate);
                    r.eps = Some(eps);
                    r.oracle_value = Some(p.unit_bound);
                    r.detail = Some(json!({ "r1": p.r1, "z1": p.z1, "ratio": p.ratio }));
                    r.wall_time = elapsed;
                    records.push(r);
                }
                let mut r = Record::new(exp, "corollary_constant");
                r.mean = Some(fit.constant);
                r.eps = Some(eps);
                r.detail = Some(json!({ "max_ratio": fit.max_ratio }));
                r.wall_time = elapsed;
                records.push(r);
            }
        }
        Command::Chaos => {
            let (s, eps) = series(exp)?;
            let elapsed = clock.elapsed().as_secs_f64();
            for term in &s.terms {
                let mut r = Record::new(exp, "chaos_term");
                r.order = Some(term.order);
                r.eps = eps;
                r.mean = Some(term.value);
                r.oracle_quadrature_error = Some(term.quadrature_error);
                r.wall_time = elapsed;
                records.push(r);
            }
            let mut r = Record::new(exp, "second_moment_series").with_series(&s);
            r.order = Some(s.n_max());
            r.eps = eps;
            r.mean = Some(s.value);
            r.detail = Some(json!({ "cutoff": s.cutoff, "c_m": s.c_m, "d_m": s.d_m }));
            r.wall_time = elapsed;
            records.push(r);
        }
        Command::Spde => {
            let (params, k, reps) = exp.spde.expect("validated");
            let e = direct_moment(k, exp.x[0], &params, reps, exp.mc.seed, exp.mc.workers)?;
            let mut r = Record::new(exp, "spde_moment").with_estimate(&e);
            r.order = Some(k);
            r.detail = Some(json!({ "dx": params.dx, "dt": params.dt, "half_width": params.half_width }));
            r.wall_time = clock.elapsed().as_secs_f64();
            records.push(r);
        }
        Command::Validate => {
            let est = estimate_u(exp)?;
            let (s, eps) = series(exp)?;
            let (e, residual) = est.headline();
            let mut r = Record::new(exp, "validate").with_estimate(e).with_series(&s);
            r.eps = Some(eps.unwrap_or(0.0));
            let tol = 3.0 * e.standard_error + s.tail_bound + s.quadrature_error + residual;
            r.agreement = Some((e.mean - s.value).abs() <= tol);
            if let Estimate::Ladder(l) = &est {
                r.extrapolation_residual = Some(l.residual);
                r.divergent = Some(l.divergent);
            }
            r.detail = Some(json!({ "tolerance": tol, "n_max": s.n_max() }));
            r.wall_time = clock.elapsed().as_secs_f64();
            records.push(r);
            if let Some((params, _, reps)) = exp.spde {
                let start = Instant::now();
                let d = direct_moment(2, exp.x[0], &params, reps, exp.mc.seed, exp.mc.workers)?;
                let mut r = Record::new(exp, "validate_spde").with_estimate(&d).with_series(&s);
                r.order = Some(2);
                let rel = (d.mean - s.value).abs() / s.value;
                r.agreement = Some(rel <= 0.05);
                r.detail = Some(json!({ "relative_difference": rel, "dx": params.dx }));
                r.wall_time = start.elapsed().as_secs_f64();
                records.push(r);
            }
        }
    }
    Ok(records)
}

fn write_csv(records: &[Record], sink: &mut dyn Write, header: bool) -> Result<()> {
    let io = |e: csv::Error| Error::numeric(format!("cannot write CSV output: {e}"));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    if header {
        w.write_record(CSV_COLUMNS).map_err(io)?;
    }
    for r in records {
        w.write_record(r.csv_row()?).map_err(io)?;
    }
    w.flush().map_err(|e| Error::numeric(format!("cannot write CSV output: {e}")))
}

/// Emit records to `path` (appending to existing output) or stdout.
pub fn write_records(records: &[Record], path: Option<&Path>, format: Format) -> Result<()> {
    let out_err = |e: std::io::Error| Error::config("output.path", e.to_string());
    match (path, format) {
        (None, Format::Csv) => write_csv(records, &mut std::io::stdout().lock(), true),
        (None, Format::Json) => {
            let text = serde_json::to_string_pretty(records).map_err(|e| Error::numeric(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
        (Some(p), Format::Csv) => {
            let existing = std::fs::read_to_string(p).unwrap_or_default();
            let header = existing.lines().next();
            if let Some(h) = header {
                let cols: Vec<&str> = h.split(',').collect();
                if cols != CSV_COLUMNS {
                    return Err(Error::config(
                        "output.path",
                        format!("{} holds CSV with a different header; refusing to append", p.display()),
                    ));
                }
            }
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(p).map_err(out_err)?;
            write_csv(records, &mut file, header.is_none())
        }
        (Some(p), Format::Json) => {
            let mut all: Vec<Value> = match std::fs::read_to_string(p) {
                Ok(text) if !text.trim().is_empty() => serde_json::from_str(&text).map_err(|e| {
                    Error::config("output.path", format!("{} is not a JSON array of records: {e}", p.display()))
                })?,
                _ => Vec::new(),
            };
            for r in records {
                all.push(serde_json::to_value(r).map_err(|e| Error::numeric(e.to_string()))?);
            }
            let text = serde_json::to_string_pretty(&all).map_err(|e| Error::numeric(e.to_string()))?;
            std::fs::write(p, text + "\n").map_err(out_err)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric { .. } => EXIT_NUMERIC,
        Error::Config { .. } | Error::Domain(_) | Error::Unsupported(_) => EXIT_CONFIG,
    }
}

/// Parse a config and apply the command-line overrides.
pub fn prepare(cli: &Cli) -> Result<Experiment> {
    let cfg = load_config(&cli.config)?;
    cfg.prepare(
        cli.command,
        cli.seed,
        cli.workers,
        cli.out.as_ref().map(|p| p.display().to_string()),
        cli.format,
    )
}

/// Full command-line entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = prepare(&cli).and_then(|exp| {
        let records = run_experiment(&exp)?;
        let out = exp.echo.output.clone().unwrap_or_default();
        write_records(&records, out.path.as_deref().map(Path::new), out.format)
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("pamfk: {e}");
            exit_code(&e)
        }
    }
}
