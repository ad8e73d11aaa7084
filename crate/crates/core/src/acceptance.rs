//! The eleven acceptance checks, shared by the `acceptance` test target and
//! the `selftest` subcommand.
//!
//! Each check returns a [`Report`] instead of panicking so that callers can
//! print one line per criterion and decide how to fail.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::Serialize;

use crate::analysis::{
    crossover_r_star, escape_time, lifetime_config, lifetime_shift_per_doubling, max_collapse_residual,
    scaling_collapse, shift_per_step, CollapseInput, CrossoverSpec, MetastableSpec, SolverMode,
};
use crate::dilute::{delta_expansion, eigenvector, DiluteSolution};
use crate::error::Result;
use crate::integrator::{integrate, steady_state_mean_weight, uniform_times, IntegrationConfig};
use crate::io::{write_oracle, OutputFormat};
use crate::oracle::pauli::{single_site, Pauli};
use crate::oracle::{autocorrelator_rate, estimate_observables, fit_decay_rate, CircuitConfig, OracleEstimate};
use crate::params::{perturbation_from_correlation, DiluteParams, ModelParams};
use crate::profile::WeightProfile;
use crate::rate::RateOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Scale {
    /// Every parameter exactly as in the criteria.
    Full,
    /// Fewer Monte Carlo samples; all deterministic checks unchanged.
    Reduced,
}

impl Scale {
    fn oracle_samples(self) -> usize {
        match self {
            Scale::Full => 500,
            Scale::Reduced => 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} criterion {:>2} ({}): {}", self.id, self.title, self.detail)
    }
}

fn report(id: u8, title: &'static str, result: Result<(bool, String)>) -> Report {
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Report {
        id,
        title,
        passed,
        detail,
    }
}

/// Criterion ids belonging to a named group, or the id itself.
pub fn select(only: &str) -> Option<Vec<u8>> {
    match only {
        "all" => Some((1..=11).collect()),
        "dilute" => Some(vec![1, 3, 4, 5]),
        "full" => Some(vec![2]),
        "metastable" => Some(vec![6]),
        "crossover" => Some(vec![7, 8]),
        "oracle" => Some(vec![9, 10, 11]),
        _ => only.parse::<u8>().ok().filter(|id| (1..=11).contains(id)).map(|id| vec![id]),
    }
}

pub fn run(id: u8, scale: Scale) -> Report {
    match id {
        1 => dilute_vs_integrator(),
        2 => conservation_and_saturation(),
        3 => rotoc_closed_form(),
        4 => eigenstructure(),
        5 => total_mass_law(),
        6 => metastability_scaling(),
        7 => crossover(),
        8 => scaling_collapse_check(),
        9 => oracle_vs_master_equation(scale),
        10 => depolarizing_unit_check(),
        11 => determinism(scale),
        _ => Report {
            id,
            title: "unknown",
            passed: false,
            detail: "no such criterion".into(),
        },
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Integrated `⟨w⟩_c` of the dilute equation against the closed form.
///
/// When `r = r_eff(1+κ)` exceeds one the pair has no physical `(r, κ)`; the
/// dilute equation with `(r_eff, 0)` on the rescaled clock `(1+κ)t` is
/// integrated instead, which is the same ODE.
pub fn dilute_vs_integrator() -> Report {
    report(1, "dilute analytic vs integrator", (|| {
        let times = uniform_times(10.0, 50);
        let mut worst = 0.0f64;
        let mut rescaled = 0;
        for r_eff in [0.0, 0.3, 0.8, 0.99] {
            for kappa in [0.0, 0.25] {
                for w0 in [1usize, 3] {
                    let physical = r_eff * (1.0 + kappa) <= 1.0;
                    let (r, k, clock) = if physical {
                        (r_eff * (1.0 + kappa), kappa, 1.0)
                    } else {
                        rescaled += 1;
                        (r_eff, 0.0, 1.0 + kappa)
                    };
                    let n_cut = DiluteSolution::new(DiluteParams::new(r_eff, 0.0, w0)?).recommended_cutoff(10.0 * (1.0 + kappa));
                    let op = RateOperator::dilute(ModelParams::new(n_cut, r, k)?, n_cut)?;
                    let cfg = IntegrationConfig::with_samples(10.0 * clock, times.iter().map(|t| t * clock).collect())?;
                    let traj = integrate(&op, &WeightProfile::delta(n_cut, w0)?, &cfg)?;
                    let exact = |t: f64| w0 as f64 / (1.0 - r_eff + r_eff * (-2.0 * (1.0 + kappa) * t).exp());
                    for (t, w) in times.iter().zip(traj.mean_weights()) {
                        worst = worst.max(rel(w, exact(*t)));
                    }
                }
            }
        }
        Ok((
            worst < 1e-6,
            format!("max relative error {worst:.2e} over 16 cases ({rescaled} on the rescaled clock), bound 1e-6"),
        ))
    })())
}

pub fn conservation_and_saturation() -> Report {
    report(2, "conservation and saturation", (|| {
        let mut parts = Vec::new();
        let mut ok = true;
        for n in [40usize, 100] {
            let op = RateOperator::full(ModelParams::new(n, 1.0, 0.0)?);
            let b0 = WeightProfile::delta(n, 1)?;
            let traj = integrate(&op, &b0, &IntegrationConfig::uniform(20.0, 201)?)?;
            let drift = traj.profiles().iter().map(|p| (p.log_mass().exp() - 1.0).abs()).fold(0.0, f64::max);
            let steady = steady_state_mean_weight(
                &op,
                &b0,
                &IntegrationConfig {
                    t_max: 200.0,
                    ..Default::default()
                },
            )?;
            let target = 0.75 * n as f64;
            let dev = rel(steady, target);
            ok &= drift < 1e-9 && dev < 0.01;
            parts.push(format!("N={n}: mass drift {drift:.1e}, steady <w> {steady:.4} vs {target} ({:.2}%)", 100.0 * dev));
        }
        Ok((ok, parts.join("; ")))
    })())
}

/// ROTOC of the integrated dilute pipeline against `(8/3N)/(1−g)`.
pub fn rotoc_closed_form() -> Report {
    report(3, "ROTOC closed form", (|| {
        let n = 800usize;
        let mut worst = 0.0f64;
        for (r, kappa) in [(0.8, 0.0), (0.95, 0.05), (1.0, 0.0)] {
            let params = ModelParams::new(n, r, kappa)?;
            let (r_eff, _) = crate::params::effective_params(&params);
            let n_cut = 2000;
            let op = RateOperator::dilute(params, n_cut)?;
            let t_max = if r == 1.0 { 2.0 } else { 10.0 };
            let traj = integrate(&op, &WeightProfile::delta(n_cut, 1)?, &IntegrationConfig::uniform(t_max, 51)?)?;
            for (t, o) in traj.times().iter().zip(traj.observables()) {
                let expected = (8.0 / (3.0 * n as f64)) / (1.0 - r_eff + r_eff * (-2.0 * (1.0 + kappa) * t).exp());
                worst = worst.max(rel(o.rotoc, expected));
            }
        }
        Ok((worst < 1e-5, format!("max relative error {worst:.2e} at N=800, bound 1e-5")))
    })())
}

pub fn eigenstructure() -> Report {
    report(4, "eigenstructure", (|| {
        let n_cut = 60;
        let mut eig = 0.0f64;
        let mut series = 0.0f64;
        for r in [0.2, 0.5, 0.8] {
            let op = RateOperator::dilute(ModelParams::new(n_cut, r, 0.0)?, n_cut)?;
            for ell in 1..=10 {
                let v = eigenvector(ell, r, n_cut)?;
                let mut mv = vec![0.0; n_cut];
                op.apply_into(&v, &mut mv);
                let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let res = mv[..n_cut - 1]
                    .iter()
                    .zip(&v)
                    .fold(0.0f64, |m, (a, b)| m.max((a + 2.0 * ell as f64 * b).abs()));
                eig = eig.max(res / scale);
            }
            let a = delta_expansion(r, 11)?;
            let mut term = 1.0;
            for (l, v) in a.iter().enumerate() {
                if l > 0 {
                    term *= -r / l as f64;
                }
                series = series.max((v - term).abs());
            }
        }
        Ok((
            eig < 1e-12 && series < 1e-12,
            format!("eigen residual {eig:.1e}, exp(-r) series error {series:.1e}, bound 1e-12"),
        ))
    })())
}

pub fn total_mass_law() -> Report {
    report(5, "total-mass law", (|| {
        let mut worst = 0.0f64;
        for r in [0.2, 0.8] {
            let exact = DiluteSolution::new(DiluteParams::new(r, 0.0, 1)?);
            let n_cut = exact.recommended_cutoff(8.0);
            let op = RateOperator::dilute(ModelParams::new(n_cut, r, 0.0)?, n_cut)?;
            let traj = integrate(&op, &WeightProfile::delta(n_cut, 1)?, &IntegrationConfig::uniform(8.0, 81)?)?;
            for (t, p) in traj.times().iter().zip(traj.profiles()) {
                let e = (-2.0 * t).exp();
                let ln_expected = -2.0 * t - (1.0 - r + r * e).ln();
                worst = worst.max((p.log_mass() - ln_expected).exp_m1().abs());
            }
        }
        Ok((worst < 1e-6, format!("max relative error {worst:.2e} for t <= 8, bound 1e-6")))
    })())
}

pub fn metastability_scaling() -> Report {
    report(6, "metastability scaling", (|| {
        let (n_cut, r, w0) = (500usize, 0.8, 10usize);
        let cfg = lifetime_config(40.0);
        let mut exits = Vec::new();
        let mut worst_peak = 0.0f64;
        for ell in 0..=6 {
            let spec = MetastableSpec::new(n_cut, n_cut as f64 * 2f64.powi(ell), r, w0)?;
            let esc = escape_time(&spec, &cfg)?;
            worst_peak = worst_peak.max(rel(esc.peak_weight, spec.plateau_value()));
            exits.push(esc.t_escape);
        }
        let shift = shift_per_step(&exits);
        let predicted = lifetime_shift_per_doubling(w0);
        let dev = rel(shift, predicted);
        Ok((
            dev < 0.2 && worst_peak < 0.05,
            format!(
                "exit times {:?}; shift per doubling {shift:.4} vs {predicted:.4} ({:.1}%, bound 20%); plateau deviation {:.2}% (bound 5%)",
                exits.iter().map(|t| (t * 1e3).round() / 1e3).collect::<Vec<_>>(),
                100.0 * dev,
                100.0 * worst_peak
            ),
        ))
    })())
}

pub fn crossover() -> Report {
    report(7, "crossover", (|| {
        let spec = CrossoverSpec::from_max_weight(5e3)?;
        let r_star = crossover_r_star(&spec, SolverMode::Asymptotic)?;
        let gap_ok = rel(1.0 - r_star, 4e-4) < 1e-9;
        let p_star = perturbation_from_correlation(r_star)?;
        let p_ok = (p_star - 0.028).abs() <= 0.001;
        let mut exact_ok = true;
        let mut worst = String::new();
        for horizon in [3.0, 4.0, 5.0, 6.0, 8.0] {
            let s = CrossoverSpec::from_horizon(horizon)?;
            let exact = crossover_r_star(&s, SolverMode::Exact)?;
            let asym = crossover_r_star(&s, SolverMode::Asymptotic)?;
            let d = rel(exact, asym);
            let bound = 10.0 * (-4.0 * horizon).exp();
            if d > bound {
                exact_ok = false;
                if worst.is_empty() {
                    worst = format!("T={horizon}: exact {exact:.10} vs asymptotic {asym:.10}, rel {d:.2e} > {bound:.2e}");
                }
            }
        }
        let detail = format!(
            "1-r* = {:.6e} (target 4e-4): {}; p* = {p_star:.5} (0.028 ± 0.001): {}; exact vs asymptotic within 10e^(-4T): {}",
            1.0 - r_star,
            ok_word(gap_ok),
            ok_word(p_ok),
            if exact_ok { "ok".to_string() } else { format!("violated, {worst}") }
        );
        Ok((gap_ok && p_ok && exact_ok, detail))
    })())
}

fn ok_word(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "violated"
    }
}

pub fn scaling_collapse_check() -> Report {
    report(8, "scaling collapse", (|| {
        let times = uniform_times(10.0, 201);
        let mut parts = Vec::new();
        let mut ok = true;
        for r_crit in [0.9956, 0.9862, 0.9988] {
            let inputs: Vec<CollapseInput> = [0.9, 0.95, 0.99, 0.999, r_crit]
                .iter()
                .map(|&r| {
                    let sol = DiluteSolution::new(DiluteParams::new(r, 0.0, 1)?);
                    Ok(CollapseInput {
                        correlation: r,
                        times: times.clone(),
                        mean_weights: times.iter().map(|&t| sol.mean_weight(t)).collect(),
                    })
                })
                .collect::<Result<_>>()?;
            let res = max_collapse_residual(&scaling_collapse(&inputs, r_crit)?);
            ok &= res < 1e-6;
            parts.push(format!("r_crit={r_crit}: max residual {res:.1e}"));
        }
        Ok((ok, format!("{} (bound 1e-6)", parts.join(", "))))
    })())
}

/// Sample times of the oracle comparison.
pub fn oracle_times() -> Vec<f64> {
    (1..=10).map(|k| (0.3 * k as f64 * 100.0).round() / 100.0).collect()
}

pub const ORACLE_CASES: [(f64, f64); 3] = [(1.0, 0.0), (0.8, 0.0), (0.8, 0.2)];

/// Runs the three oracle configurations of criterion 9.
pub fn oracle_runs(scale: Scale) -> Result<Vec<OracleEstimate>> {
    let w = single_site(0, Pauli::X);
    let v = single_site(1, Pauli::Z);
    ORACLE_CASES
        .iter()
        .map(|&(r, kappa)| {
            let cfg = CircuitConfig::new(5, r, kappa)?.with_samples(scale.oracle_samples())?;
            estimate_observables(&cfg, w, v, &oracle_times())
        })
        .collect()
}

fn cached_oracle_runs(scale: Scale) -> &'static std::result::Result<Vec<OracleEstimate>, String> {
    static FULL: OnceLock<std::result::Result<Vec<OracleEstimate>, String>> = OnceLock::new();
    static REDUCED: OnceLock<std::result::Result<Vec<OracleEstimate>, String>> = OnceLock::new();
    let cell = match scale {
        Scale::Full => &FULL,
        Scale::Reduced => &REDUCED,
    };
    cell.get_or_init(|| oracle_runs(scale).map_err(|e| e.to_string()))
}

/// Absolute slack added to the 3σ band so that quantities with zero sample
/// variance (the echo at r = 1) are compared at round-off level.
const ORACLE_FLOOR: f64 = 1e-10;

pub fn oracle_vs_master_equation(scale: Scale) -> Report {
    report(9, "Monte Carlo oracle vs master equation", (|| {
        let runs = cached_oracle_runs(scale).as_ref().map_err(|e| crate::error::Error::Config {
            field: "oracle".into(),
            message: e.clone(),
        })?;
        let times = oracle_times();
        let mut parts = Vec::new();
        let mut ok = true;
        for (est, &(r, kappa)) in runs.iter().zip(&ORACLE_CASES) {
            let n = est.config.n_qubits;
            let op = RateOperator::full(ModelParams::new(n, r, kappa)?);
            let traj = integrate(&op, &WeightProfile::delta(n, 1)?, &IntegrationConfig::with_samples(3.0, times.clone())?)?;
            let (mut echo_bad, mut otoc_bad, mut bins_bad) = (0, 0, 0);
            let mut worst_otoc = 0.0f64;
            let mut worst_bin = 0.0f64;
            let mut worst_sym = 0.0f64;
            for k in 0..times.len() {
                let p = &traj.profiles()[k];
                let o = &traj.observables()[k];
                let z = |mean: f64, se: f64, model: f64| (mean - model).abs() / (se + ORACLE_FLOOR / 3.0);
                if z(est.echo[k].mean, est.echo[k].stderr, o.echo.value()) > 3.0 {
                    echo_bad += 1;
                }
                let zo = z(est.dressed_otoc[k].mean, est.dressed_otoc[k].stderr, o.dressed_otoc);
                worst_otoc = worst_otoc.max(zo);
                if zo > 3.0 {
                    otoc_bad += 1;
                }
                let s = est.site_averaged_otoc[k];
                worst_sym = worst_sym.max(z(s.mean, s.stderr, o.dressed_otoc));
                for wt in 1..=n {
                    let b = est.weights[k][wt];
                    let zb = z(b.mean, b.stderr, p.get(wt));
                    worst_bin = worst_bin.max(zb);
                    if zb > 3.0 {
                        bins_bad += 1;
                    }
                }
            }
            ok &= echo_bad == 0 && otoc_bad == 0 && bins_bad == 0;
            parts.push(format!(
                "(r={r}, κ={kappa}): echo {echo_bad}/10 outside 3σ, dressed OTOC {otoc_bad}/10 (max {worst_otoc:.1}σ), b_w {bins_bad}/{} (max {worst_bin:.1}σ), site-averaged OTOC max {worst_sym:.1}σ",
                10 * n
            ));
        }
        // the forward branch does not depend on r, so the κ = 0 runs share it
        let fit = fit_decay_rate(&runs[0].times, &runs[0].autocorrelator)?;
        let target = autocorrelator_rate(1, runs[0].config.n_qubits, runs[0].config.gamma);
        let fit_ok = rel(fit.rate, target) < 0.05;
        ok &= fit_ok;
        parts.push(format!(
            "weight-1 autocorrelator rate {:.4} ± {:.4} vs {target} ({:.1}%, bound 5%)",
            fit.rate,
            fit.stderr,
            100.0 * rel(fit.rate, target)
        ));
        Ok((ok, parts.join("; ")))
    })())
}

pub fn depolarizing_unit_check() -> Report {
    report(10, "depolarizing unit check", (|| {
        let kappa = 0.5;
        let cfg = CircuitConfig::new(5, 1.0, kappa)?.with_samples(100)?.without_couplings();
        let times = oracle_times();
        let est = estimate_observables(&cfg, single_site(0, Pauli::X), single_site(1, Pauli::Z), &times)?;
        let mut worst = 0.0f64;
        for (k, t) in times.iter().enumerate() {
            worst = worst.max((est.weights[k][1].mean - (-2.0 * kappa * t).exp()).abs());
            for wt in 2..=5 {
                worst = worst.max(est.weights[k][wt].mean.abs());
            }
        }
        Ok((worst < 1e-10, format!("max |b_1 - e^(-2κt)| and stray weight {worst:.1e}, bound 1e-10")))
    })())
}

/// Writes one CSV per oracle configuration into `dir`.
pub fn write_oracle_outputs(runs: &[OracleEstimate], dir: &Path) -> Result<Vec<PathBuf>> {
    runs.iter()
        .zip(&ORACLE_CASES)
        .map(|(est, (r, kappa))| {
            let path = dir.join(format!("oracle_r{r}_kappa{kappa}.csv"));
            write_oracle(&path, est, OutputFormat::Csv)?;
            Ok(path)
        })
        .collect()
}

pub fn determinism(scale: Scale) -> Report {
    report(11, "determinism", (|| {
        let first = cached_oracle_runs(scale).as_ref().map_err(|e| crate::error::Error::Config {
            field: "oracle".into(),
            message: e.clone(),
        })?;
        let second = oracle_runs(scale)?;
        let root = std::env::temp_dir().join(format!("scrambling-determinism-{}", std::process::id()));
        let a = write_oracle_outputs(first, &root.join("a"))?;
        let b = write_oracle_outputs(&second, &root.join("b"))?;
        let mut identical = true;
        for (x, y) in a.iter().zip(&b) {
            let bx = std::fs::read(x).map_err(|e| crate::error::Error::io(x, e))?;
            let by = std::fs::read(y).map_err(|e| crate::error::Error::io(y, e))?;
            identical &= bx == by;
        }
        let _ = std::fs::remove_dir_all(&root);
        Ok((identical, format!("{} output files from two seeded runs are {}", a.len(), if identical { "byte-identical" } else { "different" })))
    })())
}
