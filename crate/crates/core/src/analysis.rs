//! Metastable lifetimes, the finite-time crossover and scaling collapse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate_with_stats, scan_mean_weight, IntegrationConfig};
use crate::params::ModelParams;
use crate::profile::WeightProfile;
use crate::rate::RateOperator;

/// Cutoff loss above which a lifetime measurement is considered truncation-limited.
pub const CUTOFF_LOSS_LIMIT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetastableSpec {
    n_cut: usize,
    n_eff: f64,
    correlation: f64,
    initial_weight: usize,
    plateau_tolerance: f64,
}

impl MetastableSpec {
    pub fn new(n_cut: usize, n_eff: f64, correlation: f64, initial_weight: usize) -> Result<Self> {
        Self::with_tolerance(n_cut, n_eff, correlation, initial_weight, 0.02)
    }

    pub fn with_tolerance(
        n_cut: usize,
        n_eff: f64,
        correlation: f64,
        initial_weight: usize,
        plateau_tolerance: f64,
    ) -> Result<Self> {
        if n_cut < 2 {
            return Err(Error::invalid("n_cut", n_cut, "must be at least 2"));
        }
        if !(n_eff.is_finite() && n_eff >= n_cut as f64) {
            return Err(Error::invalid("n_eff", n_eff, "must be finite and >= n_cut"));
        }
        if !(0.0..=1.0).contains(&correlation) {
            return Err(Error::invalid("correlation", correlation, "must lie in [0, 1]"));
        }
        if initial_weight < 1 || initial_weight > n_cut {
            return Err(Error::invalid("initial_weight", initial_weight, "must lie in 1..=n_cut"));
        }
        if !(plateau_tolerance > 0.0 && plateau_tolerance < 1.0) {
            return Err(Error::invalid("plateau_tolerance", plateau_tolerance, "must lie in (0, 1)"));
        }
        Ok(Self {
            n_cut,
            n_eff,
            correlation,
            initial_weight,
            plateau_tolerance,
        })
    }

    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    pub fn n_eff(&self) -> f64 {
        self.n_eff
    }

    pub fn correlation(&self) -> f64 {
        self.correlation
    }

    pub fn initial_weight(&self) -> usize {
        self.initial_weight
    }

    pub fn plateau_tolerance(&self) -> f64 {
        self.plateau_tolerance
    }

    /// Plateau level `w₀ / (1 − r)`.
    pub fn plateau_value(&self) -> f64 {
        self.initial_weight as f64 / (1.0 - self.correlation)
    }

    pub fn operator(&self) -> Result<RateOperator> {
        let params = ModelParams::new(self.n_cut, self.correlation, 0.0)?;
        RateOperator::metastable(params, self.n_cut, self.n_eff)
    }
}

/// Integration settings for lifetime runs. The absolute tolerance is far
/// below the default so that integration noise in the empty tail does not
/// masquerade as current through the cutoff.
pub fn lifetime_config(t_max: f64) -> IntegrationConfig {
    IntegrationConfig {
        t_max,
        abs_tol: 1e-16,
        ..IntegrationConfig::default()
    }
}

/// `τ ≈ w₀/(2(w₀−1)) · ln(3eN_eff/(r w₀))`.
pub fn lifetime_estimate(spec: &MetastableSpec) -> Result<f64> {
    let w0 = spec.initial_weight as f64;
    if spec.initial_weight < 2 {
        return Err(Error::invalid("initial_weight", spec.initial_weight, "needs w0 >= 2 for a metastable state"));
    }
    if spec.correlation <= 0.0 {
        return Err(Error::invalid("correlation", spec.correlation, "must be > 0"));
    }
    let arg = 3.0 * std::f64::consts::E * spec.n_eff / (spec.correlation * w0);
    Ok(w0 / (2.0 * (w0 - 1.0)) * arg.ln())
}

/// Predicted change of the lifetime per doubling of `N_eff`.
pub fn lifetime_shift_per_doubling(initial_weight: usize) -> f64 {
    let w0 = initial_weight as f64;
    w0 / (2.0 * (w0 - 1.0)) * std::f64::consts::LN_2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub t_enter: f64,
    pub t_exit: f64,
    /// Largest `⟨w⟩_c` seen before the exit.
    pub peak_weight: f64,
    pub cutoff_loss: f64,
}

impl Plateau {
    pub fn duration(&self) -> f64 {
        self.t_exit - self.t_enter
    }

    pub fn truncation_reliable(&self) -> bool {
        self.cutoff_loss <= CUTOFF_LOSS_LIMIT
    }
}

/// Integrates the metastable equations from `δ_{w,w₀}` and locates the plateau.
///
/// For `w₀ ≥ 2` the plateau is entered when `⟨w⟩_c` is within the tolerance
/// band around `w₀/(1−r)` and changes by less than the tolerance per unit
/// time; it is exited when `⟨w⟩_c` next leaves the band. For `w₀ = 1` the
/// entry time is the time of maximal `⟨w⟩_c` and the band is centred on
/// that maximum.
pub fn lifetime_measure(spec: &MetastableSpec, cfg: &IntegrationConfig) -> Result<Plateau> {
    let op = spec.operator()?;
    let b0 = WeightProfile::delta(spec.n_cut, spec.initial_weight)?;
    let tol = spec.plateau_tolerance;
    if spec.initial_weight == 1 {
        return measure_from_peak(&op, &b0, cfg, tol);
    }
    if spec.correlation >= 1.0 {
        return Err(Error::PlateauNeverEntered);
    }
    let target = spec.plateau_value();
    let band = tol * target;
    let mut t_enter: Option<f64> = None;
    let mut t_exit: Option<f64> = None;
    let mut peak = f64::NEG_INFINITY;
    let mut prev = (0.0, 0.0);
    scan_mean_weight(&op, &b0, cfg, |t, w, dw| {
        match t_enter {
            None => {
                if (w - target).abs() <= band && dw.abs() <= band {
                    t_enter = Some(t);
                    peak = w;
                }
            }
            Some(_) => {
                if (w - target).abs() > band {
                    t_exit = Some(crossing(prev, (t, w), target, band));
                    return false;
                }
                peak = peak.max(w);
            }
        }
        prev = (t, w);
        true
    })?;
    let t_enter = t_enter.ok_or(Error::PlateauNeverEntered)?;
    let t_exit = t_exit.ok_or(Error::PlateauNeverExited { t_enter })?;
    Ok(Plateau {
        t_enter,
        t_exit,
        peak_weight: peak,
        cutoff_loss: cutoff_loss(&op, &b0, cfg, t_exit)?,
    })
}

fn measure_from_peak(op: &RateOperator, b0: &WeightProfile, cfg: &IntegrationConfig, tol: f64) -> Result<Plateau> {
    let mut history = Vec::new();
    scan_mean_weight(op, b0, cfg, |t, w, _| {
        history.push((t, w));
        true
    })?;
    let (i_peak, &(t_enter, peak)) = history
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("scan visits t = 0");
    let band = tol * peak;
    for k in i_peak + 1..history.len() {
        let (t, w) = history[k];
        if (w - peak).abs() > band {
            let t_exit = crossing(history[k - 1], (t, w), peak, band);
            return Ok(Plateau {
                t_enter,
                t_exit,
                peak_weight: peak,
                cutoff_loss: cutoff_loss(op, b0, cfg, t_exit)?,
            });
        }
    }
    Err(Error::PlateauNeverExited { t_enter })
}

/// Time at which probability has moved from the metastable state to the
/// true stable state: `⟨w⟩_c` falls back through the midpoint between the
/// plateau `w₀/(1−r)` and the stable value `1/(1−r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Escape {
    pub t_escape: f64,
    pub peak_weight: f64,
    pub t_peak: f64,
}

pub fn escape_time(spec: &MetastableSpec, cfg: &IntegrationConfig) -> Result<Escape> {
    if spec.initial_weight < 2 {
        return Err(Error::invalid("initial_weight", spec.initial_weight, "needs w0 >= 2 for a metastable state"));
    }
    if spec.correlation >= 1.0 {
        return Err(Error::PlateauNeverEntered);
    }
    let op = spec.operator()?;
    let b0 = WeightProfile::delta(spec.n_cut, spec.initial_weight)?;
    let level = 0.5 * (spec.initial_weight as f64 + 1.0) / (1.0 - spec.correlation);
    let mut above = false;
    let mut peak = (0.0, f64::NEG_INFINITY);
    let mut escape = None;
    let mut prev = (0.0, 0.0);
    scan_mean_weight(&op, &b0, cfg, |t, w, _| {
        if w > peak.1 {
            peak = (t, w);
        }
        if w >= level {
            above = true;
        } else if above {
            let (t0, w0) = prev;
            escape = Some(t0 + (level - w0) / (w - w0) * (t - t0));
            return false;
        }
        prev = (t, w);
        true
    })?;
    if !above {
        return Err(Error::PlateauNeverEntered);
    }
    let t_escape = escape.ok_or(Error::PlateauNeverExited { t_enter: peak.0 })?;
    Ok(Escape {
        t_escape,
        peak_weight: peak.1,
        t_peak: peak.0,
    })
}

/// Least-squares slope of `values` against their index.
pub fn shift_per_step(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = values.iter().sum::<f64>() / n;
    let sxy: f64 = values.iter().enumerate().map(|(k, v)| (k as f64 - mx) * (v - my)).sum();
    let sxx: f64 = (0..values.len()).map(|k| (k as f64 - mx).powi(2)).sum();
    sxy / sxx
}

/// Linear interpolation of the time at which `w` leaves `target ± band`.
fn crossing(inside: (f64, f64), outside: (f64, f64), target: f64, band: f64) -> f64 {
    let edge = if outside.1 > target { target + band } else { target - band };
    let (t0, w0) = inside;
    let (t1, w1) = outside;
    if w1 == w0 {
        return t1;
    }
    (t0 + (edge - w0) / (w1 - w0) * (t1 - t0)).clamp(t0, t1)
}

fn cutoff_loss(op: &RateOperator, b0: &WeightProfile, cfg: &IntegrationConfig, t_end: f64) -> Result<f64> {
    let cfg = IntegrationConfig {
        t_max: t_end,
        sample_times: vec![t_end],
        ..cfg.clone()
    };
    Ok(integrate_with_stats(op, b0, &cfg)?.1.cutoff_loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolverMode {
    Asymptotic,
    Exact,
}

/// Experiment horizon `T`, equivalently `w_max = e^{2T}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverSpec {
    horizon_time: f64,
}

impl CrossoverSpec {
    pub fn from_horizon(horizon_time: f64) -> Result<Self> {
        if !(horizon_time.is_finite() && horizon_time > 0.0) {
            return Err(Error::invalid("horizon_time", horizon_time, "must be positive and finite"));
        }
        Ok(Self { horizon_time })
    }

    pub fn from_max_weight(max_weight: f64) -> Result<Self> {
        if !(max_weight.is_finite() && max_weight > 1.0) {
            return Err(Error::invalid("max_weight", max_weight, "must be finite and > 1"));
        }
        Self::from_horizon(0.5 * max_weight.ln())
    }

    pub fn horizon_time(&self) -> f64 {
        self.horizon_time
    }

    pub fn max_weight(&self) -> f64 {
        (2.0 * self.horizon_time).exp()
    }
}

/// `(1−g) ∂²g + 2(∂g)²` at `t = T` for `g = r(1 − e^{−2t})`; zero at the
/// inflection of `⟨w⟩_c = 1/(1−g)`.
pub fn inflection_residual(r: f64, horizon_time: f64) -> f64 {
    let e = (-2.0 * horizon_time).exp();
    let one_minus_g = (1.0 - r) + r * e;
    let dg = 2.0 * r * e;
    let ddg = -4.0 * r * e;
    one_minus_g * ddg + 2.0 * dg * dg
}

pub fn crossover_r_star(spec: &CrossoverSpec, mode: SolverMode) -> Result<f64> {
    let horizon = spec.horizon_time;
    match mode {
        SolverMode::Asymptotic => {
            let r = 1.0 - 2.0 / spec.max_weight();
            if r <= 0.0 {
                return Err(Error::RootNotBracketed { horizon });
            }
            Ok(r)
        }
        SolverMode::Exact => {
            let f = |r: f64| inflection_residual(r, horizon);
            // r = 0 is a trivial root; start the bracket just above it
            let mut lo = 1e-9;
            let mut hi = 1.0;
            let (flo, fhi) = (f(lo), f(hi));
            if flo.signum() == fhi.signum() || flo == 0.0 || fhi == 0.0 {
                return Err(Error::RootNotBracketed { horizon });
            }
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 {
                    return Ok(mid);
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// Time of maximal `∂²⟨w⟩_c/∂t²` along a sampled curve, refined by a
/// parabola through the neighbouring second differences.
pub fn peak_acceleration_time(times: &[f64], mean_weights: &[f64]) -> Result<f64> {
    if times.len() != mean_weights.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            got: mean_weights.len(),
        });
    }
    if times.len() < 5 {
        return Err(Error::invalid("times", times.len(), "need at least 5 samples"));
    }
    let acc: Vec<(f64, f64)> = (1..times.len() - 1)
        .map(|i| {
            let (t0, t1, t2) = (times[i - 1], times[i], times[i + 1]);
            let (w0, w1, w2) = (mean_weights[i - 1], mean_weights[i], mean_weights[i + 1]);
            let d = 2.0 * (w0 / ((t1 - t0) * (t2 - t0)) - w1 / ((t1 - t0) * (t2 - t1)) + w2 / ((t2 - t1) * (t2 - t0)));
            (t1, d)
        })
        .collect();
    let k = (0..acc.len()).max_by(|&a, &b| acc[a].1.total_cmp(&acc[b].1)).unwrap();
    if k == 0 || k + 1 == acc.len() {
        return Ok(acc[k].0);
    }
    let (ta, fa) = acc[k - 1];
    let (tb, fb) = acc[k];
    let (tc, fc) = acc[k + 1];
    let denom = (tb - ta) * (fb - fc) - (tb - tc) * (fb - fa);
    if denom == 0.0 {
        return Ok(tb);
    }
    let num = (tb - ta).powi(2) * (fb - fc) - (tb - tc).powi(2) * (fb - fa);
    Ok((tb - 0.5 * num / denom).clamp(ta, tc))
}

/// Horizon `T` of an `N`-qubit system: the peak-acceleration time of the
/// full `r = 1` trajectory started at weight 1.
pub fn critical_horizon(n_qubits: usize, t_max: f64, n_samples: usize) -> Result<f64> {
    let op = RateOperator::full(ModelParams::new(n_qubits, 1.0, 0.0)?);
    let cfg = IntegrationConfig::uniform(t_max, n_samples)?;
    let traj = crate::integrator::integrate(&op, &WeightProfile::delta(n_qubits, 1)?, &cfg)?;
    peak_acceleration_time(traj.times(), &traj.mean_weights())
}

/// A mean-weight curve at correlation `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseInput {
    pub correlation: f64,
    pub times: Vec<f64>,
    pub mean_weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `r < r_crit`: `y = 1/(1+x)`.
    Below,
    /// `r > r_crit`: `y = 1/(1−x)`.
    Above,
    Critical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapsePoint {
    pub correlation: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub branch: Branch,
}

impl CollapsePoint {
    /// Value of the branch curve at `x`.
    pub fn branch_value(&self) -> f64 {
        match self.branch {
            Branch::Below => 1.0 / (1.0 + self.x),
            Branch::Above => 1.0 / (1.0 - self.x),
            Branch::Critical => 1.0,
        }
    }

    pub fn residual(&self) -> f64 {
        (self.y - self.branch_value()).abs()
    }
}

/// `(x, y) = (|A| w_crit / B, B w / w_crit)` with `A = 1 − r/r_crit`, `B = r/r_crit`.
pub fn scaling_collapse(trajectories: &[CollapseInput], r_crit: f64) -> Result<Vec<CollapsePoint>> {
    if !(r_crit > 0.0 && r_crit <= 1.0) {
        return Err(Error::invalid("r_crit", r_crit, "must lie in (0, 1]"));
    }
    let critical = trajectories
        .iter()
        .find(|c| (c.correlation - r_crit).abs() <= 1e-12)
        .ok_or(Error::MissingCriticalTrajectory { r_crit })?;
    let mut points = Vec::new();
    for traj in trajectories {
        if traj.times != critical.times || traj.mean_weights.len() != traj.times.len() {
            return Err(Error::MismatchedSampleTimes);
        }
        let b = traj.correlation / r_crit;
        let a = 1.0 - b;
        let branch = if traj.correlation == critical.correlation {
            Branch::Critical
        } else if a > 0.0 {
            Branch::Below
        } else {
            Branch::Above
        };
        for ((&t, &w), &wc) in traj.times.iter().zip(&traj.mean_weights).zip(&critical.mean_weights) {
            let x = if branch == Branch::Critical { 0.0 } else { a.abs() * wc / b };
            let y = if branch == Branch::Critical { 1.0 } else { b * w / wc };
            points.push(CollapsePoint {
                correlation: traj.correlation,
                t,
                x,
                y,
                branch,
            });
        }
    }
    Ok(points)
}

pub fn max_collapse_residual(points: &[CollapsePoint]) -> f64 {
    points.iter().map(CollapsePoint::residual).fold(0.0, f64::max)
}
