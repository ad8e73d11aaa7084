//! `scramble`: command-line driver for the operator-weight simulator.
//!
//! Every subcommand reads an optional JSON config, applies flag overrides,
//! materializes defaults and writes its data files plus a manifest into
//! `--out`. Exit codes: 0 success, 1 numerical failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use scrambling::acceptance::{self, Scale};
use scrambling::analysis::{
    critical_horizon, crossover_r_star, escape_time, lifetime_estimate, lifetime_measure, scaling_collapse,
    CollapseInput, CrossoverSpec, MetastableSpec, SolverMode,
};
use scrambling::dilute::DiluteSolution;
use scrambling::integrator::{integrate, uniform_times};
use scrambling::io::{
    self, write_oracle, write_table, write_trajectory, write_versioned, Column, Manifest, Mode, OutputFormat,
    RunConfig,
};
use scrambling::oracle::pauli::single_site;
use scrambling::oracle::{estimate_observables, Pauli};
use scrambling::{perturbation_from_correlation, Error, RateOperator, Result, WeightProfile};

/// Largest dilute cutoff chosen automatically; beyond it the manifest
/// records the truncated tail mass instead.
const MAX_AUTO_CUTOFF: usize = 100_000;

#[derive(Parser)]
#[command(name = "scramble", version, about = "Operator growth under imperfect time reversal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the master equation (`--mode full` or `--mode dilute`).
    Simulate(RunArgs),
    /// Dilute-limit integration with the closed form alongside.
    Dilute(RunArgs),
    /// Monte Carlo simulation of the Brownian circuit (N <= 6).
    Oracle(RunArgs),
    /// Metastable plateau entry, exit and escape times.
    Metastable(MetastableArgs),
    /// Finite-time crossover correlation r* and perturbation p*.
    Crossover(RunArgs),
    /// Scaling collapse of <w>_c curves around r_crit.
    Collapse(CollapseArgs),
    /// Cartesian sweep over --r-grid x --kappa-grid.
    Sweep(RunArgs),
    /// Run the acceptance criteria at reduced scale.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Dilute,
    Oracle,
    Metastable,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Dilute => Mode::Dilute,
            ModeArg::Oracle => Mode::Oracle,
            ModeArg::Metastable => Mode::Metastable,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dynamics for `simulate`; inner mode for `sweep`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "Ncut")]
    n_cut: Option<usize>,
    #[arg(long = "Neff")]
    n_eff: Option<f64>,
    /// Forward/backward coupling correlation.
    #[arg(long, conflicts_with = "p")]
    r: Option<f64>,
    /// Backward-coupling perturbation strength, mapped onto r.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    w0: Option<usize>,
    #[arg(long)]
    tmax: Option<f64>,
    /// Number of output times.
    #[arg(long)]
    points: Option<usize>,
    /// Circuit time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Circuit samples.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest reachable weight for the crossover.
    #[arg(long)]
    wmax: Option<f64>,
    /// Experiment horizon T for the crossover.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long = "r-grid", value_delimiter = ',')]
    r_grid: Option<Vec<f64>>,
    #[arg(long = "kappa-grid", value_delimiter = ',')]
    kappa_grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative plateau band for metastable runs.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Worker threads for sweeps and oracle sampling.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write b_1..b_N columns.
    #[arg(long)]
    profiles: bool,
}

#[derive(Args, Clone)]
struct MetastableArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Repeat with N_eff doubled this many times.
    #[arg(long, default_value_t = 0)]
    doublings: u32,
}

#[derive(Args, Clone)]
struct CollapseArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long = "r-crit")]
    r_crit: Option<f64>,
}

#[derive(Args, Clone)]
struct SelftestArgs {
    /// Criterion group: all, dilute, full, metastable, crossover, oracle, or a number.
    #[arg(long, default_value = "all")]
    only: String,
    /// Full-scale oracle sampling instead of the reduced selftest scale.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = match &cli.command {
        Command::Selftest(a) => a.jobs,
        Command::Metastable(a) => a.run.jobs,
        Command::Collapse(a) => a.run.jobs,
        Command::Simulate(a)
        | Command::Dilute(a)
        | Command::Oracle(a)
        | Command::Crossover(a)
        | Command::Sweep(a) => a.jobs,
    };
    let outcome = match jobs {
        Some(0) => Err(Error::invalid("jobs", 0, "must be at least 1")),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => {
                eprintln!("error: cannot start thread pool: {e}");
                return ExitCode::from(1);
            }
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate(a) => {
            let mode = a.mode.map_or(Mode::Full, Mode::from);
            if !matches!(mode, Mode::Full | Mode::Dilute) {
                return Err(config_err("mode", "simulate takes full or dilute"));
            }
            single("simulate", &a, mode, None)
        }
        Command::Dilute(a) => single("dilute", &a, Mode::Dilute, None),
        Command::Oracle(a) => single("oracle", &a, Mode::Oracle, None),
        Command::Metastable(a) => single("metastable", &a.run, Mode::Metastable, Some(a.doublings)),
        Command::Crossover(a) => single("crossover", &a, Mode::Crossover, None),
        Command::Collapse(a) => {
            let mut cfg = load(&a.run, Mode::Collapse)?;
            if a.r_crit.is_some() {
                cfg.r_crit = a.r_crit;
            }
            let cfg = cfg.materialize()?;
            finish("collapse", &cfg, run_collapse(&cfg)?)
        }
        Command::Sweep(a) => {
            let cfg = load(&a, Mode::Sweep)?.materialize()?;
            finish("sweep", &cfg, run_sweep(&cfg)?)
        }
        Command::Selftest(a) => selftest(&a),
    }
}

fn config_err(field: &str, message: &str) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Config file (or a blank config) with the flags layered on top.
fn load(a: &RunArgs, mode: Mode) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => io::read_raw_config(path)?,
        None => RunConfig::new(mode),
    };
    if mode == Mode::Sweep {
        if cfg.mode != Mode::Sweep {
            cfg.sweep_mode = Some(cfg.mode);
        }
        if let Some(m) = a.mode {
            cfg.sweep_mode = Some(m.into());
        }
    }
    cfg.mode = mode;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag.clone() { cfg.$field = Some(v); })*
        };
    }
    set!(n => n_qubits, n_cut => n_cut, n_eff => n_eff, kappa => kappa, gamma => gamma, w0 => w0,
         tmax => t_max, points => points, dt => dt, samples => samples, seed => seed, wmax => w_max,
         horizon => horizon, tolerance => plateau_tolerance, r_grid => r_grid, kappa_grid => kappa_grid);
    if let Some(r) = a.r {
        cfg.r = Some(r);
        cfg.p = None;
    }
    if let Some(p) = a.p {
        cfg.p = Some(p);
        cfg.r = None;
    }
    if a.wmax.is_some() {
        cfg.horizon = None;
    }
    if a.horizon.is_some() {
        cfg.w_max = None;
    }
    if a.tmax.is_some() {
        if let Some(ic) = cfg.integration.as_mut() {
            ic.sample_times.clear();
        }
    }
    if let Some(f) = a.format {
        cfg.output_format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        };
    }
    if let Some(out) = &a.out {
        cfg.output_path = Some(out.clone());
    }
    cfg.output_path.get_or_insert_with(|| PathBuf::from("out"));
    cfg.profiles |= a.profiles;
    Ok(cfg)
}

fn single(command: &str, a: &RunArgs, mode: Mode, doublings: Option<u32>) -> Result<ExitCode> {
    let mut cfg = load(a, mode)?;
    if mode == Mode::Crossover && cfg.w_max.is_none() && cfg.horizon.is_none() {
        if let Some(n) = cfg.n_qubits {
            // horizon set by the peak acceleration of the ideal N-qubit curve
            cfg.horizon = Some(critical_horizon(n, cfg.t_max.unwrap_or(10.0), cfg.points.unwrap_or(2001))?);
        }
    }
    let mut cfg = cfg.materialize()?;
    let outputs = match mode {
        Mode::Full | Mode::Dilute => vec![run_dynamics(&mut cfg)?],
        Mode::Oracle => vec![run_oracle(&cfg)?],
        Mode::Metastable => run_metastable(&cfg, doublings.unwrap_or(0))?,
        Mode::Crossover => vec![run_crossover(&cfg)?],
        Mode::Collapse | Mode::Sweep => unreachable!("handled in dispatch"),
    };
    finish(command, &cfg, outputs)
}

/// One written file with the config that produced it.
struct Output {
    file: PathBuf,
    config: RunConfig,
    cutoff_loss: Option<f64>,
    /// Row for the sweep summary.
    summary: Vec<f64>,
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_path.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn finish(command: &str, cfg: &RunConfig, outputs: Vec<Output>) -> Result<ExitCode> {
    let dir = out_dir(cfg)?;
    let mut manifest = Manifest::new(command, cfg.clone());
    for o in outputs {
        println!("{}", o.file.display());
        manifest.push(o.file, o.config, o.cutoff_loss);
    }
    let path = dir.join(format!("manifest_{}_{}.json", command, cfg.hash()));
    manifest.write(&path)?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

/// Writes a numeric table as CSV or as versioned JSON columns.
fn write_rows(path: &Path, format: OutputFormat, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    match format {
        OutputFormat::Csv => write_table(path, header, rows),
        OutputFormat::Json => {
            let columns: serde_json::Map<String, serde_json::Value> = header
                .iter()
                .enumerate()
                .map(|(j, name)| (name.to_string(), json!(rows.iter().map(|r| r[j]).collect::<Vec<_>>())))
                .collect();
            write_versioned(path, &json!({ "columns": columns }))
        }
    }
}

fn run_dynamics(cfg: &mut RunConfig) -> Result<Output> {
    let params = cfg.model_params()?;
    let w0 = cfg.w0.unwrap_or(1);
    let ic = cfg.integration.clone().unwrap_or_default();
    let (traj, extra, loss) = if cfg.mode == Mode::Dilute {
        let sol = DiluteSolution::new(cfg.dilute_params()?);
        let n_cut = *cfg
            .n_cut
            .get_or_insert_with(|| sol.recommended_cutoff(ic.t_max).clamp(w0 + 1, MAX_AUTO_CUTOFF.max(w0 + 1)));
        let op = RateOperator::dilute(params, n_cut)?;
        let traj = integrate(&op, &WeightProfile::delta(n_cut, w0)?, &ic)?;
        let closed: Vec<f64> = traj.times().iter().map(|&t| sol.mean_weight(t)).collect();
        let deviation = traj.mean_weights().iter().zip(&closed).map(|(a, b)| a - b).collect();
        let loss = (1.0 - sol.coefficients(ic.t_max, n_cut).iter().sum::<f64>()).max(0.0);
        if loss > 1e-6 {
            eprintln!("warning: closed-form mass beyond Ncut={n_cut} at t={}: {loss:.2e}", ic.t_max);
        }
        let extra = vec![
            Column {
                name: "closed_form_mean_weight".into(),
                values: closed,
            },
            Column {
                name: "deviation".into(),
                values: deviation,
            },
        ];
        (traj, extra, Some(loss))
    } else {
        let op = RateOperator::full(params);
        let n = params.n_qubits();
        (integrate(&op, &WeightProfile::delta(n, w0)?, &ic)?, Vec::new(), None)
    };
    let file = cfg.output_file(&out_dir(cfg)?);
    write_trajectory(&file, &traj, cfg.output_format, cfg.profiles, Some(cfg), &extra)?;
    let weights = traj.mean_weights();
    let summary = vec![
        cfg.r.unwrap_or(1.0),
        cfg.kappa.unwrap_or(0.0),
        *traj.times().last().unwrap_or(&0.0),
        *weights.last().unwrap_or(&f64::NAN),
        weights.iter().copied().fold(f64::NAN, f64::max),
    ];
    Ok(Output {
        file,
        config: cfg.clone(),
        cutoff_loss: loss,
        summary,
    })
}

fn run_oracle(cfg: &RunConfig) -> Result<Output> {
    let circuit = cfg.circuit_config()?;
    let est = estimate_observables(
        &circuit,
        single_site(0, Pauli::X),
        single_site(1, Pauli::Z),
        &cfg.oracle_times(),
    )?;
    let file = cfg.output_file(&out_dir(cfg)?);
    write_oracle(&file, &est, cfg.output_format)?;
    let last = est.times.len() - 1;
    Ok(Output {
        file,
        config: cfg.clone(),
        cutoff_loss: None,
        summary: vec![
            circuit.correlation,
            circuit.noise_rate,
            est.times[last],
            est.echo[last].mean,
            est.dressed_otoc[last].mean,
        ],
    })
}

const METASTABLE_COLUMNS: [&str; 10] = [
    "n_eff",
    "t_enter",
    "t_exit",
    "duration",
    "peak_weight",
    "cutoff_loss",
    "t_peak",
    "t_escape",
    "lifetime_estimate",
    "plateau_value",
];

/// Plateau measurements for `N_eff · 2^ℓ`, `ℓ = 0..=doublings`, plus the
/// `<w>_c` trajectory of each.
fn run_metastable(cfg: &RunConfig, doublings: u32) -> Result<Vec<Output>> {
    let dir = out_dir(cfg)?;
    let base = cfg.n_eff.unwrap_or(500.0);
    let lifetime_cfg = cfg.integration.clone().unwrap_or_default();
    let (n_cut, r, w0) = (cfg.n_cut.unwrap_or(500), cfg.r.unwrap_or(0.8), cfg.w0.unwrap_or(10));
    let tolerance = cfg.plateau_tolerance.unwrap_or(0.02);
    let results: Vec<Result<(Output, Vec<f64>)>> = (0..=doublings)
        .into_par_iter()
        .map(|ell| {
            let mut run = cfg.clone();
            run.n_eff = Some(base * 2f64.powi(ell as i32));
            let spec = MetastableSpec::with_tolerance(n_cut, run.n_eff.unwrap(), r, w0, tolerance)?;
            let mut ic = lifetime_cfg.clone();
            ic.sample_times = uniform_times(ic.t_max, cfg.points.unwrap_or(401));
            let traj = integrate(&spec.operator()?, &WeightProfile::delta(n_cut, w0)?, &ic)?;
            let file = run.output_file(&dir);
            write_trajectory(&file, &traj, run.output_format, run.profiles, Some(&run), &[])?;
            let plateau = soft(lifetime_measure(&spec, &lifetime_cfg))?;
            let escape = if w0 >= 2 { soft(escape_time(&spec, &lifetime_cfg))? } else { None };
            let row = vec![
                spec.n_eff(),
                plateau.map_or(f64::NAN, |p| p.t_enter),
                plateau.map_or(f64::NAN, |p| p.t_exit),
                plateau.map_or(f64::NAN, |p| p.duration()),
                plateau.map_or(f64::NAN, |p| p.peak_weight),
                plateau.map_or(f64::NAN, |p| p.cutoff_loss),
                escape.map_or(f64::NAN, |e| e.t_peak),
                escape.map_or(f64::NAN, |e| e.t_escape),
                lifetime_estimate(&spec).unwrap_or(f64::NAN),
                spec.plateau_value(),
            ];
            let output = Output {
                file,
                config: run,
                cutoff_loss: plateau.map(|p| p.cutoff_loss),
                summary: Vec::new(),
            };
            Ok((output, row))
        })
        .collect();
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for res in results {
        let (o, row) = res?;
        outputs.push(o);
        rows.push(row);
    }
    let table = dir.join(format!("metastable_times_{}.{}", cfg.hash(), cfg.output_format.extension()));
    write_rows(&table, cfg.output_format, &METASTABLE_COLUMNS, &rows)?;
    let summary = rows.first().map_or_else(Vec::new, |row| vec![r, 0.0, row[1], row[2], row[6], row[7]]);
    outputs.push(Output {
        file: table,
        config: cfg.clone(),
        cutoff_loss: None,
        summary,
    });
    Ok(outputs)
}

/// A missing plateau is a result, not a failure.
fn soft<T>(res: Result<T>) -> Result<Option<T>> {
    match res {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::PlateauNeverEntered | Error::PlateauNeverExited { .. })) => {
            eprintln!("note: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn run_crossover(cfg: &RunConfig) -> Result<Output> {
    let spec = match (cfg.horizon, cfg.w_max) {
        (Some(t), _) => CrossoverSpec::from_horizon(t)?,
        (None, Some(w)) => CrossoverSpec::from_max_weight(w)?,
        (None, None) => return Err(config_err("w_max", "need w_max, horizon or N")),
    };
    let asym = crossover_r_star(&spec, SolverMode::Asymptotic)?;
    let exact = crossover_r_star(&spec, SolverMode::Exact)?;
    let row = vec![
        spec.horizon_time(),
        spec.max_weight(),
        asym,
        exact,
        perturbation_from_correlation(asym)?,
        perturbation_from_correlation(exact)?,
    ];
    println!(
        "T = {:.6}, w_max = {:.6e}: r* = {asym:.10} (asymptotic), {exact:.10} (exact); p* = {:.6}, {:.6}",
        row[0], row[1], row[4], row[5]
    );
    let file = cfg.output_file(&out_dir(cfg)?);
    write_rows(
        &file,
        cfg.output_format,
        &["horizon", "w_max", "r_star_asymptotic", "r_star_exact", "p_star_asymptotic", "p_star_exact"],
        &[row.clone()],
    )?;
    Ok(Output {
        file,
        config: cfg.clone(),
        cutoff_loss: None,
        summary: row,
    })
}

/// Collapse of the r-grid curves. With `--N` the curves come from the full
/// equation cut at the peak-acceleration horizon; otherwise from the
/// dilute closed form on `[0, tmax]`.
fn run_collapse(cfg: &RunConfig) -> Result<Vec<Output>> {
    let r_crit = cfg.r_crit.unwrap_or(0.9956);
    let mut rs = cfg.r_grid.clone().unwrap_or_default();
    if !rs.iter().any(|r| (r - r_crit).abs() <= 1e-12) {
        rs.push(r_crit);
    }
    let (t_max, points, w0) = (cfg.t_max.unwrap_or(10.0), cfg.points.unwrap_or(201), cfg.w0.unwrap_or(1));
    let kappa = cfg.kappa.unwrap_or(0.0);
    let inputs: Vec<CollapseInput> = match cfg.n_qubits {
        Some(n) => {
            let horizon = critical_horizon(n, t_max, points.max(2001))?;
            let times: Vec<f64> = uniform_times(t_max, points).into_iter().filter(|&t| t <= horizon).collect();
            let ic = scrambling::IntegrationConfig::with_samples(*times.last().unwrap_or(&0.0), times.clone())?;
            eprintln!("note: collapse horizon T = {horizon:.6}");
            rs.par_iter()
                .map(|&r| {
                    let op = RateOperator::full(scrambling::ModelParams::new(n, r, kappa)?);
                    let traj = integrate(&op, &WeightProfile::delta(n, w0)?, &ic)?;
                    Ok(CollapseInput {
                        correlation: r,
                        times: traj.times().to_vec(),
                        mean_weights: traj.mean_weights(),
                    })
                })
                .collect::<Result<_>>()?
        }
        None => {
            let times = uniform_times(t_max, points);
            rs.iter()
                .map(|&r| {
                    let sol = DiluteSolution::new(scrambling::DiluteParams::new(r, kappa, w0)?);
                    Ok(CollapseInput {
                        correlation: r,
                        times: times.clone(),
                        mean_weights: times.iter().map(|&t| sol.mean_weight(t)).collect(),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let points = scaling_collapse(&inputs, r_crit)?;
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let branch = match p.branch {
                scrambling::analysis::Branch::Below => -1.0,
                scrambling::analysis::Branch::Critical => 0.0,
                scrambling::analysis::Branch::Above => 1.0,
            };
            vec![p.correlation, p.t, p.x, p.y, branch, p.branch_value(), p.residual()]
        })
        .collect();
    let file = cfg.output_file(&out_dir(cfg)?);
    write_rows(&file, cfg.output_format, &["r", "t", "x", "y", "branch", "branch_curve", "residual"], &rows)?;
    Ok(vec![Output {
        file,
        config: cfg.clone(),
        cutoff_loss: None,
        summary: Vec::new(),
    }])
}

fn run_sweep(cfg: &RunConfig) -> Result<Vec<Output>> {
    let runs = io::expand_sweep(cfg)?;
    let inner = cfg.sweep_mode.unwrap_or(Mode::Dilute);
    let results: Vec<Result<Vec<Output>>> = runs
        .into_par_iter()
        .map(|mut run| match inner {
            Mode::Full | Mode::Dilute => Ok(vec![run_dynamics(&mut run)?]),
            Mode::Oracle => Ok(vec![run_oracle(&run)?]),
            Mode::Metastable => run_metastable(&run, 0),
            _ => Err(config_err("sweep_mode", "must be full, dilute, oracle or metastable")),
        })
        .collect();
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for res in results {
        let group = res?;
        // the last file of each run (trajectory or times table) carries the summary
        rows.extend(group.last().map(|o| o.summary.clone()));
        outputs.extend(group);
    }
    let header: &[&str] = match inner {
        Mode::Full | Mode::Dilute => &["r", "kappa", "t_final", "mean_weight_final", "mean_weight_max"],
        Mode::Oracle => &["r", "kappa", "t_final", "echo_final", "dressed_otoc_final"],
        _ => &["r", "kappa", "t_enter", "t_exit", "t_peak", "t_escape"],
    };
    let file = out_dir(cfg)?.join(format!("sweep_{}.{}", cfg.hash(), cfg.output_format.extension()));
    write_rows(&file, cfg.output_format, header, &rows)?;
    outputs.push(Output {
        file,
        config: cfg.clone(),
        cutoff_loss: None,
        summary: Vec::new(),
    });
    Ok(outputs)
}

fn selftest(a: &SelftestArgs) -> Result<ExitCode> {
    let ids = acceptance::select(&a.only).ok_or_else(|| config_err("only", "unknown criterion group"))?;
    let scale = if a.full_scale { Scale::Full } else { Scale::Reduced };
    let mut failed = 0;
    for id in &ids {
        let report = acceptance::run(*id, scale);
        println!("{report}");
        failed += usize::from(!report.passed);
    }
    println!("SUMMARY {} passed, {failed} failed", ids.len() - failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
