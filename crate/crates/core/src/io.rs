//! Run configurations, trajectory files, manifests and sweep expansion.
//!
//! Configs are JSON objects with flat keys. Unknown keys are rejected and
//! every default is written back explicitly, so a stored config fully
//! describes its run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::CUTOFF_LOSS_LIMIT;
use crate::error::{Error, Result};
use crate::integrator::IntegrationConfig;
use crate::oracle::{CircuitConfig, OracleEstimate, DEFAULT_SEED};
use crate::params::{correlation_from_perturbation, DiluteParams, ModelParams};
use crate::profile::{Echo, Observables, Trajectory, WeightProfile};

pub const SCHEMA_VERSION: &str = "1.0";
const SCHEMA_MAJOR: u32 = 1;

/// Rejects files written by a newer major schema.
pub fn check_schema(version: &str) -> Result<()> {
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok())
        .ok_or_else(|| Error::Parse {
            context: "schema_version".into(),
            message: format!("malformed version `{version}`"),
        })?;
    if major > SCHEMA_MAJOR {
        return Err(Error::UnsupportedSchema {
            found: version.to_string(),
            supported: SCHEMA_MAJOR,
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Dilute,
    Oracle,
    Metastable,
    Crossover,
    Collapse,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Dilute => "dilute",
            Mode::Oracle => "oracle",
            Mode::Metastable => "metastable",
            Mode::Crossover => "crossover",
            Mode::Collapse => "collapse",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// A run description. Mode-specific keys stay `None` until
/// [`RunConfig::materialize`] fills them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: String,
    pub mode: Mode,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n_qubits: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Alternative to `r`; converted and cleared during materialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    /// Number of uniformly spaced output times (including t = 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(rename = "Ncut", default, skip_serializing_if = "Option::is_none")]
    pub n_cut: Option<usize>,
    #[serde(rename = "Neff", default, skip_serializing_if = "Option::is_none")]
    pub n_eff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Relative band around the metastable plateau.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_crit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_grid: Option<Vec<f64>>,
    /// Mode of each run in a sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub output_format: OutputFormat,
    /// Also write `b_w` columns.
    #[serde(default)]
    pub profiles: bool,
}

fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn require<T: Copy>(value: Option<T>, field: &str, mode: Mode) -> Result<T> {
    value.ok_or_else(|| config_err(field, format!("required in {} mode", mode.name())))
}

impl RunConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            schema_version: schema_version(),
            mode,
            n_qubits: None,
            r: None,
            p: None,
            kappa: None,
            gamma: None,
            w0: None,
            t_max: None,
            points: None,
            n_cut: None,
            n_eff: None,
            dt: None,
            samples: None,
            seed: None,
            w_max: None,
            horizon: None,
            plateau_tolerance: None,
            r_crit: None,
            r_grid: None,
            kappa_grid: None,
            sweep_mode: None,
            integration: None,
            output_path: None,
            output_format: OutputFormat::Csv,
            profiles: false,
        }
    }

    /// Fills every default for the mode and validates the result.
    pub fn materialize(mut self) -> Result<Self> {
        check_schema(&self.schema_version)?;
        self.schema_version = schema_version();
        match (self.r, self.p) {
            (Some(_), Some(_)) => return Err(config_err("p", "`r` and `p` are mutually exclusive")),
            (None, Some(p)) => {
                self.r = Some(correlation_from_perturbation(p)?);
                self.p = None;
            }
            _ => {}
        }
        let mode = self.mode;
        match mode {
            Mode::Full => {
                require(self.n_qubits, "N", mode)?;
                self.fill_dynamics(20.0);
            }
            Mode::Dilute => {
                self.n_qubits.get_or_insert(800);
                self.fill_dynamics(10.0);
            }
            Mode::Metastable => {
                self.n_cut.get_or_insert(500);
                let n_cut = self.n_cut.unwrap();
                self.n_eff.get_or_insert(n_cut as f64);
                self.r.get_or_insert(0.8);
                self.w0.get_or_insert(10);
                self.plateau_tolerance.get_or_insert(0.02);
                let t_max = *self.t_max.get_or_insert(40.0);
                let ic = self.integration.get_or_insert_with(|| crate::analysis::lifetime_config(t_max));
                ic.t_max = t_max;
            }
            Mode::Oracle => {
                self.n_qubits.get_or_insert(5);
                self.r.get_or_insert(1.0);
                self.kappa.get_or_insert(0.0);
                self.gamma.get_or_insert(1.0);
                self.t_max.get_or_insert(3.0);
                self.points.get_or_insert(11);
                self.dt.get_or_insert(0.01);
                self.samples.get_or_insert(500);
                self.seed.get_or_insert(DEFAULT_SEED);
            }
            Mode::Crossover => {
                if self.w_max.is_none() && self.horizon.is_none() {
                    self.w_max = Some(5000.0);
                }
            }
            Mode::Collapse => {
                self.r_grid.get_or_insert_with(|| vec![0.9, 0.95, 0.99, 0.999]);
                self.r_crit.get_or_insert(0.9956);
                self.kappa.get_or_insert(0.0);
                self.w0.get_or_insert(1);
                self.t_max.get_or_insert(10.0);
                self.points.get_or_insert(201);
            }
            Mode::Sweep => {
                let inner = self.sweep_mode.get_or_insert(Mode::Dilute);
                if matches!(inner, Mode::Sweep | Mode::Crossover | Mode::Collapse) {
                    return Err(config_err("sweep_mode", "must be full, dilute, oracle or metastable"));
                }
                if self.r_grid.as_ref().is_none_or(|g| g.is_empty()) {
                    return Err(config_err("r_grid", "required and non-empty in sweep mode"));
                }
                self.kappa_grid.get_or_insert_with(|| vec![0.0]);
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn fill_dynamics(&mut self, t_max: f64) {
        self.r.get_or_insert(1.0);
        self.kappa.get_or_insert(0.0);
        self.gamma.get_or_insert(1.0);
        self.w0.get_or_insert(1);
        self.t_max.get_or_insert(t_max);
        self.points.get_or_insert(101);
        let (t, n) = (self.t_max.unwrap(), self.points.unwrap());
        self.integration.get_or_insert_with(|| IntegrationConfig {
            t_max: t,
            ..Default::default()
        });
        if let Some(ic) = self.integration.as_mut() {
            ic.t_max = t;
            if ic.sample_times.is_empty() && n >= 2 {
                ic.sample_times = crate::integrator::uniform_times(t, n);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(r) = self.r {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid("r", r, "must lie in [0, 1]"));
            }
        }
        if let Some(k) = self.kappa {
            if !(k.is_finite() && k >= 0.0) {
                return Err(Error::invalid("kappa", k, "must be non-negative"));
            }
        }
        if let Some(t) = self.t_max {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::invalid("t_max", t, "must be positive"));
            }
        }
        if let Some(n) = self.points {
            if n < 2 {
                return Err(Error::invalid("points", n, "must be at least 2"));
            }
        }
        for r in self.r_grid.iter().flatten() {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::invalid("r_grid", r, "entries must lie in [0, 1]"));
            }
        }
        for k in self.kappa_grid.iter().flatten() {
            if !(k.is_finite() && *k >= 0.0) {
                return Err(Error::invalid("kappa_grid", k, "entries must be non-negative"));
            }
        }
        if let Some(ic) = &self.integration {
            ic.validate()?;
        }
        match self.mode {
            Mode::Full => {
                self.model_params()?;
                let w0 = self.w0.unwrap();
                let n = self.n_qubits.unwrap();
                if w0 < 1 || w0 > n {
                    return Err(Error::invalid("w0", w0, "must lie in 1..=N"));
                }
            }
            Mode::Dilute => {
                self.dilute_params()?;
                self.model_params()?;
            }
            Mode::Oracle => {
                self.circuit_config()?;
            }
            Mode::Metastable => {
                self.metastable_spec()?;
            }
            Mode::Crossover => {
                if let Some(w) = self.w_max {
                    if !(w.is_finite() && w > 2.0) {
                        return Err(Error::invalid("w_max", w, "must exceed 2"));
                    }
                }
                if let Some(t) = self.horizon {
                    if !(t.is_finite() && t > 0.0) {
                        return Err(Error::invalid("horizon", t, "must be positive"));
                    }
                }
            }
            Mode::Collapse => {
                let rc = self.r_crit.unwrap();
                if !(rc > 0.0 && rc < 1.0) {
                    return Err(Error::invalid("r_crit", rc, "must lie in (0, 1)"));
                }
            }
            Mode::Sweep => {}
        }
        Ok(())
    }

    pub fn metastable_spec(&self) -> Result<crate::analysis::MetastableSpec> {
        crate::analysis::MetastableSpec::with_tolerance(
            require(self.n_cut, "Ncut", self.mode)?,
            require(self.n_eff, "Neff", self.mode)?,
            self.r.unwrap_or(0.8),
            self.w0.unwrap_or(10),
            self.plateau_tolerance.unwrap_or(0.02),
        )
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let n = require(self.n_qubits, "N", self.mode)?;
        ModelParams::with_gamma(n, self.r.unwrap_or(1.0), self.kappa.unwrap_or(0.0), self.gamma.unwrap_or(1.0))
    }

    pub fn dilute_params(&self) -> Result<DiluteParams> {
        DiluteParams::new(self.r.unwrap_or(1.0), self.kappa.unwrap_or(0.0), self.w0.unwrap_or(1))
    }

    pub fn circuit_config(&self) -> Result<CircuitConfig> {
        let cfg = CircuitConfig {
            n_qubits: require(self.n_qubits, "N", self.mode)?,
            dt: self.dt.unwrap_or(0.01),
            total_time: self.t_max.unwrap_or(3.0),
            correlation: self.r.unwrap_or(1.0),
            noise_rate: self.kappa.unwrap_or(0.0),
            n_samples: self.samples.unwrap_or(500),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            gamma: self.gamma.unwrap_or(1.0),
            couplings_enabled: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Output times for oracle runs, rounded onto the `dt` grid.
    pub fn oracle_times(&self) -> Vec<f64> {
        let (t, n, dt) = (self.t_max.unwrap_or(3.0), self.points.unwrap_or(11), self.dt.unwrap_or(0.01));
        (0..n)
            .map(|k| ((t * k as f64 / (n - 1) as f64) / dt).round() * dt)
            .collect()
    }

    /// Short content hash used to name output files.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// `<mode>_<hash>.<ext>` inside `dir`.
    pub fn output_file(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_{}.{}", self.mode.name(), self.hash(), self.output_format.extension()))
    }
}

/// Parses a config string without filling defaults, so that callers can
/// layer overrides before [`RunConfig::materialize`].
pub fn parse_raw_config(text: &str, context: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })
}

/// Parses a config string; `context` names the source in diagnostics.
pub fn parse_config(text: &str, context: &str) -> Result<RunConfig> {
    parse_raw_config(text, context)?.materialize()
}

pub fn read_raw_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_raw_config(&text, &path.display().to_string())
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    read_raw_config(path)?.materialize()
}

pub fn write_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    write_json(path, cfg)
}

/// Cartesian product `r_grid × kappa_grid` (r outer) of materialized runs.
pub fn expand_sweep(cfg: &RunConfig) -> Result<Vec<RunConfig>> {
    if cfg.mode != Mode::Sweep {
        return Err(config_err("mode", "sweep expansion requires mode = sweep"));
    }
    let inner = cfg.sweep_mode.unwrap_or(Mode::Dilute);
    let mut runs = Vec::new();
    for &r in cfg.r_grid.iter().flatten() {
        for &kappa in cfg.kappa_grid.iter().flatten() {
            let mut run = cfg.clone();
            run.mode = inner;
            run.sweep_mode = None;
            run.r_grid = None;
            run.kappa_grid = None;
            run.r = Some(r);
            run.p = None;
            run.kappa = Some(kappa);
            if let Some(ic) = run.integration.as_mut() {
                ic.sample_times.clear();
            }
            runs.push(run.materialize()?);
        }
    }
    Ok(runs)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 && x.is_sign_positive() {
        "0".to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn parse_f64(s: &str, context: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        context: context.to_string(),
        message: format!("not a number: `{s}`"),
    })
}

/// A named column appended after the standard trajectory columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<Column>,
}

pub const TRAJECTORY_COLUMNS: [&str; 6] = ["t", "echo_mantissa", "echo_log10", "mean_weight", "rotoc", "dressed_otoc"];

/// CSV text: standard columns, then `b_1..b_N` if `profiles`, then `extra`.
pub fn trajectory_csv(traj: &Trajectory, profiles: bool, extra: &[Column]) -> Result<String> {
    for c in extra {
        if c.values.len() != traj.len() {
            return Err(Error::LengthMismatch {
                expected: traj.len(),
                got: c.values.len(),
            });
        }
    }
    let width = traj.profiles().first().map_or(0, WeightProfile::len);
    let mut header: Vec<String> = TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()).collect();
    if profiles {
        header.extend((1..=width).map(|w| format!("b_{w}")));
    }
    header.extend(extra.iter().map(|c| c.name.clone()));
    let mut out = header.join(",");
    out.push('\n');
    for (i, ((t, p), o)) in traj.times().iter().zip(traj.profiles()).zip(traj.observables()).enumerate() {
        let mut row = vec![
            fmt_f64(*t),
            fmt_f64(o.echo.mantissa),
            fmt_f64(o.echo.log10()),
            fmt_f64(o.mean_weight),
            fmt_f64(o.rotoc),
            fmt_f64(o.dressed_otoc),
        ];
        if profiles {
            row.extend((1..=p.len()).map(|w| fmt_f64(p.get(w))));
        }
        row.extend(extra.iter().map(|c| fmt_f64(c.values[i])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trajectory(
    path: &Path,
    traj: &Trajectory,
    format: OutputFormat,
    profiles: bool,
    config: Option<&RunConfig>,
    extra: &[Column],
) -> Result<()> {
    match format {
        OutputFormat::Csv => write_text(path, &trajectory_csv(traj, profiles, extra)?),
        OutputFormat::Json => write_json(
            path,
            &TrajectoryFile {
                schema_version: schema_version(),
                config: config.cloned(),
                trajectory: traj.clone(),
                extra: extra.to_vec(),
            },
        ),
    }
}

pub fn read_trajectory_json(path: &Path) -> Result<TrajectoryFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    let version = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("");
    check_schema(version)?;
    serde_json::from_value(value).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })
}

/// One parsed CSV row of observables.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub observables: Observables,
    pub rest: Vec<f64>,
}

/// Reads a trajectory CSV back; columns after the six standard ones land in
/// `rest` in file order.
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<String>, Vec<CsvRow>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    if header.len() < 6 || header[..6] != TRAJECTORY_COLUMNS {
        return Err(Error::Parse {
            context: "trajectory csv".into(),
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let ctx = format!("trajectory csv line {}", k + 2);
        let f: Vec<f64> = line.split(',').map(|s| parse_f64(s, &ctx)).collect::<Result<_>>()?;
        if f.len() != header.len() {
            return Err(Error::Parse {
                context: ctx,
                message: format!("expected {} fields, got {}", header.len(), f.len()),
            });
        }
        let log10 = f[2];
        rows.push(CsvRow {
            t: f[0],
            observables: Observables {
                echo: Echo {
                    mantissa: f[1],
                    exponent: if f[1] == 0.0 { 0.0 } else { log10.floor() },
                },
                mean_weight: f[3],
                rotoc: f[4],
                dressed_otoc: f[5],
            },
            rest: f[6..].to_vec(),
        });
    }
    Ok((header, rows))
}

/// Oracle statistics as CSV: means and standard errors per column.
pub fn oracle_csv(est: &OracleEstimate) -> String {
    let n = est.config.n_qubits;
    let mut header = vec![
        "t".to_string(),
        "echo_mean".into(),
        "echo_stderr".into(),
        "dressed_otoc_mean".into(),
        "dressed_otoc_stderr".into(),
        "autocorrelator_mean".into(),
        "autocorrelator_stderr".into(),
    ];
    for w in 1..=n {
        header.push(format!("b_{w}_mean"));
        header.push(format!("b_{w}_stderr"));
    }
    let mut out = header.join(",");
    out.push('\n');
    for k in 0..est.times.len() {
        let mut row = vec![fmt_f64(est.times[k])];
        for e in [est.echo[k], est.dressed_otoc[k], est.autocorrelator[k]] {
            row.push(fmt_f64(e.mean));
            row.push(fmt_f64(e.stderr));
        }
        for e in &est.weights[k][1..] {
            row.push(fmt_f64(e.mean));
            row.push(fmt_f64(e.stderr));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_oracle(path: &Path, est: &OracleEstimate, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => write_text(path, &oracle_csv(est)),
        OutputFormat::Json => write_json(
            path,
            &Versioned {
                schema_version: SCHEMA_VERSION,
                body: est,
            },
        ),
    }
}

/// Writes a plain table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes any serializable result with a `schema_version` field.
pub fn write_versioned<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(
        path,
        &Versioned {
            schema_version: SCHEMA_VERSION,
            body: value,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_loss: Option<f64>,
}

/// Index of the files produced by one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub command: String,
    pub config: RunConfig,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(command: impl Into<String>, config: RunConfig) -> Self {
        Self {
            schema_version: schema_version(),
            command: command.into(),
            config,
            files: Vec::new(),
        }
    }

    pub fn push(&mut self, file: PathBuf, config: RunConfig, cutoff_loss: Option<f64>) {
        self.files.push(ManifestEntry {
            file,
            config,
            cutoff_loss: cutoff_loss.filter(|l| *l > CUTOFF_LOSS_LIMIT),
        });
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        check_schema(&m.schema_version)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trajectory() -> Trajectory {
        let mut traj = Trajectory::new();
        for (k, t) in [0.0, 0.5, 1.25].iter().enumerate() {
            let p = WeightProfile::with_offset(vec![0.5, 0.25 + 0.1 * k as f64, 1.0 / 3.0], -700.0 * k as f64).unwrap();
            let o = Observables::from_profile(&p, 3.0);
            traj.push(*t, p, o).unwrap();
        }
        traj
    }

    #[test]
    fn minimal_dilute_config_fills_defaults() {
        let cfg = parse_config(r#"{"mode": "dilute", "r": 0.8}"#, "inline").unwrap();
        assert_eq!(cfg.kappa, Some(0.0));
        assert_eq!(cfg.w0, Some(1));
        assert_eq!(cfg.t_max, Some(10.0));
        assert_eq!(cfg.integration.as_ref().unwrap().sample_times.len(), 101);
        // written back and re-read unchanged
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text, "round trip").unwrap(), cfg);
    }

    #[test]
    fn invalid_values_name_field() {
        let err = parse_config(r#"{"mode": "dilute", "r": 1.2}"#, "inline").unwrap_err();
        assert!(err.to_string().contains("`r`"), "{err}");
        assert!(err.is_usage());
        let err = parse_config(r#"{"mode": "dilute", "rr": 0.5}"#, "inline").unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
        let err = parse_config("{\"mode\": \"full\",\n \"r\": 0.5}", "inline").unwrap_err();
        assert!(err.to_string().contains("`N`"), "{err}");
        assert!(parse_config(r#"{"mode": "full", "N": 10, "r": 0.5, "p": 0.1}"#, "x").is_err());
        let err = parse_config("{\"mode\": \"full\",\n \"N\": }", "inline").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn perturbation_is_converted() {
        let cfg = parse_config(r#"{"mode": "full", "N": 10, "p": 0.5}"#, "x").unwrap();
        assert_eq!(cfg.p, None);
        assert!((cfg.r.unwrap() - 0.5 / 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn schema_versions() {
        assert!(check_schema("1.0").is_ok());
        assert!(check_schema("1.7").is_ok());
        assert!(matches!(check_schema("2.0"), Err(Error::UnsupportedSchema { .. })));
        assert!(check_schema("x").is_err());
        let err = parse_config(r#"{"schema_version": "3.1", "mode": "dilute"}"#, "x").unwrap_err();
        assert!(matches!(err, Error::UnsupportedSchema { .. }));
    }

    #[test]
    fn sweep_is_ordered_cartesian_product() {
        let cfg = parse_config(
            r#"{"mode": "sweep", "sweep_mode": "full", "N": 20, "r_grid": [1.0, 0.9], "kappa_grid": [0.0, 0.1, 0.2]}"#,
            "x",
        )
        .unwrap();
        let runs = expand_sweep(&cfg).unwrap();
        let pairs: Vec<(f64, f64)> = runs.iter().map(|r| (r.r.unwrap(), r.kappa.unwrap())).collect();
        assert_eq!(pairs, vec![(1.0, 0.0), (1.0, 0.1), (1.0, 0.2), (0.9, 0.0), (0.9, 0.1), (0.9, 0.2)]);
        assert!(runs.iter().all(|r| r.mode == Mode::Full && r.n_qubits == Some(20)));
        let names: std::collections::HashSet<String> = runs.iter().map(|r| r.hash()).collect();
        assert_eq!(names.len(), runs.len());
        assert_eq!(expand_sweep(&cfg).unwrap(), runs);
        assert!(parse_config(r#"{"mode": "sweep"}"#, "x").is_err());
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let csv = trajectory_csv(&Trajectory::new(), true, &[]).unwrap();
        assert_eq!(csv, "t,echo_mantissa,echo_log10,mean_weight,rotoc,dressed_otoc\n");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.json");
        let traj = sample_trajectory();
        let cfg = parse_config(r#"{"mode": "full", "N": 3}"#, "x").unwrap();
        let extra = vec![Column {
            name: "closed_form".into(),
            values: vec![1.0 / 3.0, 0.1, 2e-300],
        }];
        write_trajectory(&path, &traj, OutputFormat::Json, true, Some(&cfg), &extra).unwrap();
        let back = read_trajectory_json(&path).unwrap();
        assert_eq!(back.trajectory, traj);
        assert_eq!(back.config.unwrap(), cfg);
        assert_eq!(back.extra, extra);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let traj = sample_trajectory();
        let csv = trajectory_csv(&traj, true, &[]).unwrap();
        let (header, rows) = parse_trajectory_csv(&csv).unwrap();
        assert_eq!(header.len(), 9);
        assert_eq!(header[6], "b_1");
        for ((row, o), (t, p)) in rows.iter().zip(traj.observables()).zip(traj.times().iter().zip(traj.profiles())) {
            assert_eq!(row.t, *t);
            assert_eq!(row.observables.mean_weight, o.mean_weight);
            assert_eq!(row.observables.rotoc, o.rotoc);
            assert_eq!(row.observables.dressed_otoc, o.dressed_otoc);
            assert_eq!(row.observables.echo.mantissa, o.echo.mantissa);
            assert_eq!(row.observables.echo.exponent, o.echo.exponent);
            assert_eq!(row.rest, (1..=3).map(|w| p.get(w)).collect::<Vec<_>>());
        }
        // echo far below the double range survives through mantissa/log10
        assert!(rows[2].observables.echo.exponent < -600.0);
    }

    #[test]
    fn extra_column_length_checked() {
        let bad = [Column {
            name: "x".into(),
            values: vec![1.0],
        }];
        assert!(trajectory_csv(&sample_trajectory(), false, &bad).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(r#"{"mode": "sweep", "r_grid": [0.8, 0.9], "kappa_grid": [0.0]}"#, "x").unwrap();
        let mut m = Manifest::new("sweep", cfg.clone());
        for run in expand_sweep(&cfg).unwrap() {
            m.push(run.output_file(dir.path()), run, Some(0.0));
        }
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
        assert!(m.files[0].file.to_string_lossy().starts_with(&*dir.path().to_string_lossy()));
        assert!(m.files.iter().all(|f| f.cutoff_loss.is_none()));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = write_trajectory(&blocker.join("sub/out.csv"), &sample_trajectory(), OutputFormat::Csv, false, None, &[])
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
