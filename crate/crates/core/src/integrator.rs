//! Adaptive Dormand–Prince 5(4) integration of `db/dt = M b`.
//!
//! The linear equation is integrated for the unnormalized profile and the
//! normalized distribution is read off afterwards. Total mass is kept near
//! one by moving `ln Σb` into the profile's log offset, so echoes far below
//! the double range are still tracked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{weighted_sum, Observables, Trajectory, WeightProfile};
use crate::rate::RateOperator;

/// Window over which `⟨w⟩_c` must stay flat to count as stationary.
pub const STATIONARY_DWELL: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub dt_init: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub t_max: f64,
    pub sample_times: Vec<f64>,
    pub positivity_clamp: f64,
    pub renorm_threshold: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-3,
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            t_max: 10.0,
            sample_times: Vec::new(),
            positivity_clamp: 1e-14,
            renorm_threshold: 1e-3,
        }
    }
}

impl IntegrationConfig {
    /// `n_samples` equally spaced sample times on `[0, t_max]`, endpoints included.
    pub fn uniform(t_max: f64, n_samples: usize) -> Result<Self> {
        let cfg = Self {
            t_max,
            sample_times: uniform_times(t_max, n_samples),
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_samples(t_max: f64, sample_times: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            t_max,
            sample_times,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(field, v, "must be positive and finite"))
            }
        };
        positive("dt_init", self.dt_init)?;
        positive("rel_tol", self.rel_tol)?;
        positive("abs_tol", self.abs_tol)?;
        positive("t_max", self.t_max)?;
        if !(self.positivity_clamp >= 0.0 && self.positivity_clamp.is_finite()) {
            return Err(Error::invalid("positivity_clamp", self.positivity_clamp, "must be >= 0"));
        }
        if !(self.renorm_threshold > 0.0 && self.renorm_threshold < 1.0) {
            return Err(Error::invalid("renorm_threshold", self.renorm_threshold, "must lie in (0, 1)"));
        }
        for pair in self.sample_times.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::invalid("sample_times", pair[1], "must be strictly increasing"));
            }
        }
        if let Some(&t) = self.sample_times.first() {
            if t < 0.0 {
                return Err(Error::invalid("sample_times", t, "must be >= 0"));
            }
        }
        if let Some(&t) = self.sample_times.last() {
            if t > self.t_max {
                return Err(Error::invalid("sample_times", t, "must not exceed t_max"));
            }
        }
        Ok(())
    }

    /// Same config with both tolerances tightened by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            ..self.clone()
        }
    }
}

pub fn uniform_times(t_max: f64, n_samples: usize) -> Vec<f64> {
    match n_samples {
        0 => Vec::new(),
        1 => vec![t_max],
        n => (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Bookkeeping collected alongside a trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub renormalizations: usize,
    /// `∫ j_cut / Σb dt`: fraction of mass that left through the truncation edge.
    pub cutoff_loss: f64,
}

// Dormand–Prince tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th order weights minus embedded 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One adaptive RK45 trajectory of an autonomous system.
struct Stepper<F> {
    rhs: F,
    t: f64,
    h: f64,
    y: Vec<f64>,
    k: [Vec<f64>; 7],
    ynew: Vec<f64>,
    /// Components `0..nonneg` must stay nonnegative.
    nonneg: usize,
    rel_tol: f64,
    abs_tol: f64,
    clamp: f64,
    accepted: usize,
    rejected: usize,
}

impl<F: Fn(&[f64], &mut [f64])> Stepper<F> {
    fn new(rhs: F, y: Vec<f64>, h: f64, nonneg: usize, cfg: &IntegrationConfig) -> Self {
        let n = y.len();
        let k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
        let mut s = Self {
            rhs,
            t: 0.0,
            h,
            y,
            k,
            ynew: vec![0.0; n],
            nonneg,
            rel_tol: cfg.rel_tol,
            abs_tol: cfg.abs_tol,
            clamp: cfg.positivity_clamp,
            accepted: 0,
            rejected: 0,
        };
        s.refresh_derivative();
        s
    }

    fn refresh_derivative(&mut self) {
        let (k0, _) = self.k.split_at_mut(1);
        (self.rhs)(&self.y, &mut k0[0]);
    }

    /// Current derivative `f(y)`.
    fn derivative(&self) -> &[f64] {
        &self.k[0]
    }

    /// Multiplies the state by `s`; only valid for homogeneous linear systems.
    fn scale(&mut self, s: f64) {
        self.y.iter_mut().for_each(|v| *v *= s);
        self.k[0].iter_mut().for_each(|v| *v *= s);
    }

    /// Takes one accepted step, never passing `t_stop`.
    fn step(&mut self, t_stop: f64) -> Result<()> {
        let n = self.y.len();
        let mut ytmp = vec![0.0; n];
        loop {
            let remaining = t_stop - self.t;
            let landing = self.h * 1.001 >= remaining;
            let h = if landing { remaining } else { self.h };
            if h <= 1e-15 * self.t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { t: self.t, dt: h });
            }

            for s in 1..7 {
                for i in 0..n {
                    let mut acc = self.y[i];
                    for (j, a) in A[s][..s].iter().enumerate() {
                        if *a != 0.0 {
                            acc += h * a * self.k[j][i];
                        }
                    }
                    ytmp[i] = acc;
                }
                let (_, rest) = self.k.split_at_mut(s);
                (self.rhs)(&ytmp, &mut rest[0]);
            }
            // the last stage is evaluated at the 5th-order solution (FSAL)
            self.ynew.copy_from_slice(&ytmp);

            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for (j, ej) in E.iter().enumerate() {
                    if *ej != 0.0 {
                        e += ej * self.k[j][i];
                    }
                }
                let sc = self.abs_tol + self.rel_tol * self.y[i].abs().max(self.ynew[i].abs());
                err = err.max((h * e).abs() / sc);
            }
            if !err.is_finite() {
                self.rejected += 1;
                self.h = h * 0.2;
                continue;
            }

            let negative = self.ynew[..self.nonneg].iter().any(|&v| v < -self.clamp);
            if err > 1.0 || negative {
                self.rejected += 1;
                self.h = if negative {
                    h * 0.5
                } else {
                    h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)
                };
                continue;
            }

            let mut clamped = false;
            for v in &mut self.ynew[..self.nonneg] {
                if *v < 0.0 {
                    *v = 0.0;
                    clamped = true;
                }
            }
            std::mem::swap(&mut self.y, &mut self.ynew);
            self.k.swap(0, 6);
            if clamped {
                self.refresh_derivative();
            }
            self.t = if landing { t_stop } else { self.t + h };
            self.accepted += 1;

            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            // Keep the controller's proposal when a landing step was artificially short.
            self.h = if landing { self.h.max(h * grow) } else { h * grow };
            return Ok(());
        }
    }
}

fn initial_step(op: &RateOperator, cfg: &IntegrationConfig) -> f64 {
    let p = op.params();
    let stiff = 2.0 * op.len() as f64 * (1.0 + p.noise_rate()) * p.gamma();
    cfg.dt_init.min(0.05 / stiff)
}

fn check_initial(op: &RateOperator, b0: &WeightProfile) -> Result<()> {
    if b0.len() != op.len() {
        return Err(Error::LengthMismatch {
            expected: op.len(),
            got: b0.len(),
        });
    }
    if let Some(v) = b0.values().iter().find(|&&v| v < 0.0) {
        return Err(Error::invalid("b0", v, "entries must be nonnegative"));
    }
    if b0.scaled_mass() <= 0.0 {
        return Err(Error::invalid("b0", b0.scaled_mass(), "total mass must be positive"));
    }
    Ok(())
}

/// Linear-equation driver with log-mass renormalization.
struct LinearRun<'a> {
    op: &'a RateOperator,
    stepper: Stepper<Box<dyn Fn(&[f64], &mut [f64]) + 'a>>,
    log_offset: f64,
    threshold: f64,
    stats: IntegrationStats,
}

impl<'a> LinearRun<'a> {
    fn new(op: &'a RateOperator, b0: &WeightProfile, cfg: &IntegrationConfig) -> Result<Self> {
        cfg.validate()?;
        check_initial(op, b0)?;
        let mut values = b0.values().to_vec();
        let mass: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= mass);
        let rhs: Box<dyn Fn(&[f64], &mut [f64]) + 'a> = Box::new(move |y, out| op.apply_into(y, out));
        let n = values.len();
        Ok(Self {
            op,
            stepper: Stepper::new(rhs, values, initial_step(op, cfg), n, cfg),
            log_offset: b0.log_mass_offset() + mass.ln(),
            threshold: cfg.renorm_threshold,
            stats: IntegrationStats::default(),
        })
    }

    fn t(&self) -> f64 {
        self.stepper.t
    }

    fn step(&mut self, t_stop: f64) -> Result<()> {
        let t0 = self.stepper.t;
        self.stepper.step(t_stop)?;
        let dt = self.stepper.t - t0;
        self.stats.cutoff_loss += dt * self.op.cutoff_current(&self.stepper.y);
        let mass: f64 = self.stepper.y.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::StepSizeUnderflow {
                t: self.stepper.t,
                dt,
            });
        }
        if mass < self.threshold || mass > 1.0 / self.threshold {
            self.stepper.scale(1.0 / mass);
            self.log_offset += mass.ln();
            self.stats.renormalizations += 1;
        }
        Ok(())
    }

    fn advance_to(&mut self, t: f64) -> Result<()> {
        while self.stepper.t < t {
            self.step(t)?;
        }
        Ok(())
    }

    fn profile(&self) -> WeightProfile {
        WeightProfile::with_offset(self.stepper.y.clone(), self.log_offset)
            .expect("integrator state stays finite")
    }

    fn mean_weight(&self) -> f64 {
        weighted_sum(&self.stepper.y) / self.stepper.y.iter().sum::<f64>()
    }

    /// `d⟨w⟩_c/dt` from the current derivative.
    fn mean_weight_rate(&self) -> f64 {
        let y = &self.stepper.y;
        let k = self.stepper.derivative();
        let m: f64 = y.iter().sum();
        let dm: f64 = k.iter().sum();
        (weighted_sum(k) - self.mean_weight() * dm) / m
    }

    fn stats(&self) -> IntegrationStats {
        IntegrationStats {
            accepted: self.stepper.accepted,
            rejected: self.stepper.rejected,
            ..self.stats
        }
    }
}

/// Integrates the linear master equation and records observables at
/// `cfg.sample_times` (hit exactly).
pub fn integrate(op: &RateOperator, b0: &WeightProfile, cfg: &IntegrationConfig) -> Result<Trajectory> {
    integrate_with_stats(op, b0, cfg).map(|(traj, _)| traj)
}

pub fn integrate_with_stats(
    op: &RateOperator,
    b0: &WeightProfile,
    cfg: &IntegrationConfig,
) -> Result<(Trajectory, IntegrationStats)> {
    let mut run = LinearRun::new(op, b0, cfg)?;
    let mut traj = Trajectory::new();
    for &ts in &cfg.sample_times {
        run.advance_to(ts)?;
        let profile = run.profile();
        let obs = Observables::from_profile(&profile, op.qubits());
        traj.push(ts, profile, obs)?;
    }
    Ok((traj, run.stats()))
}

/// Integrates `dc/dt = Mc + μc` together with `d ln(echo)/dt = -μ` directly.
/// Slower and less robust than [`integrate`]; kept as a cross-check.
pub fn integrate_normalized(op: &RateOperator, b0: &WeightProfile, cfg: &IntegrationConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_initial(op, b0)?;
    let n = op.len();
    let mut y = b0.normalized();
    y.push(b0.log_mass());
    let rhs = move |y: &[f64], out: &mut [f64]| {
        let c = &y[..n];
        op.apply_into(c, &mut out[..n]);
        let flow: f64 = out[..n].iter().sum();
        let mass: f64 = c.iter().sum();
        for i in 0..n {
            out[i] -= c[i] * flow / mass;
        }
        out[n] = flow / mass;
    };
    let mut stepper = Stepper::new(rhs, y, initial_step(op, cfg), n, cfg);
    let mut traj = Trajectory::new();
    for &ts in &cfg.sample_times {
        while stepper.t < ts {
            stepper.step(ts)?;
        }
        let profile = WeightProfile::with_offset(stepper.y[..n].to_vec(), stepper.y[n])?;
        let obs = Observables::from_profile(&profile, op.qubits());
        traj.push(ts, profile, obs)?;
    }
    Ok(traj)
}

/// `⟨w⟩_c` once its relative change per unit time stays below `cfg.rel_tol`
/// for [`STATIONARY_DWELL`] time units.
///
/// The change is measured across whole unit intervals rather than from the
/// instantaneous derivative: at large steps the stiff tail of the profile
/// carries tolerance-level noise that swamps `d⟨w⟩/dt` near stationarity.
pub fn steady_state_mean_weight(op: &RateOperator, b0: &WeightProfile, cfg: &IntegrationConfig) -> Result<f64> {
    let mut run = LinearRun::new(op, b0, cfg)?;
    let mut prev = run.mean_weight();
    let mut flat = 0usize;
    let mut k = 0usize;
    while (k + 1) as f64 <= cfg.t_max {
        k += 1;
        run.advance_to(k as f64)?;
        let w = run.mean_weight();
        if (w - prev).abs() <= cfg.rel_tol * w {
            flat += 1;
            if flat as f64 >= STATIONARY_DWELL {
                return Ok(w);
            }
        } else {
            flat = 0;
        }
        prev = w;
    }
    Err(Error::NotConverged { t_max: cfg.t_max })
}

/// Advances step by step, calling `visit(t, ⟨w⟩_c, d⟨w⟩_c/dt)` after every
/// accepted step; stops when `visit` returns false or at `t_max`.
pub fn scan_mean_weight<V>(op: &RateOperator, b0: &WeightProfile, cfg: &IntegrationConfig, mut visit: V) -> Result<f64>
where
    V: FnMut(f64, f64, f64) -> bool,
{
    let mut run = LinearRun::new(op, b0, cfg)?;
    loop {
        if !visit(run.t(), run.mean_weight(), run.mean_weight_rate()) || run.t() >= cfg.t_max {
            return Ok(run.t());
        }
        run.step(cfg.t_max)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;

    fn dilute(r: f64, kappa: f64, n_cut: usize) -> RateOperator {
        RateOperator::dilute(ModelParams::new(n_cut.max(2), r, kappa).unwrap(), n_cut).unwrap()
    }

    #[test]
    fn pure_decay_matches_exponential() {
        // r = 0: each weight decays on its own
        let op = dilute(0.0, 0.0, 4);
        let b0 = WeightProfile::new(vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let cfg = IntegrationConfig::uniform(3.0, 7).unwrap();
        let traj = integrate(&op, &b0, &cfg).unwrap();
        for (t, p) in traj.times().iter().zip(traj.profiles()) {
            for w in 1..=4 {
                let exact = (-2.0 * w as f64 * t).exp();
                // absolute error is measured against the dominant weight-1 entry
                assert!((p.get(w) - exact).abs() <= 1e-8 * (-2.0 * t).exp(), "t={t} w={w}");
            }
        }
    }

    #[test]
    fn single_mode_stays_put() {
        let op = dilute(0.0, 0.0, 10);
        let cfg = IntegrationConfig::uniform(5.0, 6).unwrap();
        let traj = integrate(&op, &WeightProfile::delta(10, 1).unwrap(), &cfg).unwrap();
        for (o, p) in traj.observables().iter().zip(traj.profiles()) {
            assert_eq!(o.mean_weight, 1.0);
            assert_eq!(p.normalized()[0], 1.0);
        }
    }

    #[test]
    fn dilute_mean_weight_tracks_closed_form() {
        let op = dilute(0.8, 0.0, 400);
        let cfg = IntegrationConfig::uniform(10.0, 21).unwrap();
        let traj = integrate(&op, &WeightProfile::delta(400, 1).unwrap(), &cfg).unwrap();
        for (t, o) in traj.times().iter().zip(traj.observables()) {
            let exact = 1.0 / (0.2 + 0.8 * (-2.0 * t).exp());
            assert!((o.mean_weight - exact).abs() <= 1e-8 * exact * 10.0, "t={t}");
        }
        assert!((traj.last().unwrap().2.mean_weight - 5.0).abs() < 1e-6);
    }

    #[test]
    fn sample_times_are_hit_exactly() {
        let op = dilute(0.5, 0.0, 50);
        let times = vec![0.0, 0.1, 0.3333333333333333, 1.7, 2.0];
        let cfg = IntegrationConfig::with_samples(2.0, times.clone()).unwrap();
        let traj = integrate(&op, &WeightProfile::delta(50, 1).unwrap(), &cfg).unwrap();
        assert_eq!(traj.times(), &times[..]);
    }

    #[test]
    fn renormalization_keeps_tiny_echo() {
        // r = 0, w0 = 1: echo = exp(-2t); at t = 400 this is e^{-800}
        let op = dilute(0.0, 0.0, 3);
        let cfg = IntegrationConfig::with_samples(400.0, vec![400.0]).unwrap();
        let (traj, stats) = integrate_with_stats(&op, &WeightProfile::delta(3, 1).unwrap(), &cfg).unwrap();
        let echo = traj.observables()[0].echo;
        assert!(stats.renormalizations > 0);
        assert_eq!(echo.value(), 0.0);
        assert!((echo.ln() + 800.0).abs() < 1e-5);
    }

    #[test]
    fn normalized_path_agrees() {
        let op = RateOperator::full(ModelParams::new(60, 0.7, 0.1).unwrap());
        let cfg = IntegrationConfig::uniform(4.0, 9).unwrap();
        let b0 = WeightProfile::delta(60, 2).unwrap();
        let a = integrate(&op, &b0, &cfg).unwrap();
        let b = integrate_normalized(&op, &b0, &cfg).unwrap();
        for (x, y) in a.observables().iter().zip(b.observables()) {
            assert!((x.mean_weight - y.mean_weight).abs() < 1e-6);
            assert!((x.echo.ln() - y.echo.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn steady_state_of_trivial_and_geometric_cases() {
        let cfg = IntegrationConfig {
            t_max: 200.0,
            ..IntegrationConfig::default()
        };
        let w = steady_state_mean_weight(&dilute(0.0, 0.0, 5), &WeightProfile::delta(5, 1).unwrap(), &cfg).unwrap();
        assert_eq!(w, 1.0);
        let op = dilute(0.9, 0.0, 600);
        let w = steady_state_mean_weight(&op, &WeightProfile::delta(600, 1).unwrap(), &cfg).unwrap();
        assert!((w - 10.0).abs() <= 1e-7 * 10.0, "{w}");
    }

    #[test]
    fn not_converged_is_reported() {
        let cfg = IntegrationConfig {
            t_max: 0.5,
            ..IntegrationConfig::default()
        };
        let op = dilute(0.9, 0.0, 600);
        assert!(matches!(
            steady_state_mean_weight(&op, &WeightProfile::delta(600, 1).unwrap(), &cfg),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(IntegrationConfig::with_samples(1.0, vec![0.5, 0.2]).is_err());
        assert!(IntegrationConfig::with_samples(1.0, vec![2.0]).is_err());
        let bad = IntegrationConfig {
            renorm_threshold: 1.5,
            ..IntegrationConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(uniform_times(2.0, 3), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_initial_profiles() {
        let op = dilute(0.5, 0.0, 4);
        let cfg = IntegrationConfig::uniform(1.0, 2).unwrap();
        assert!(integrate(&op, &WeightProfile::new(vec![1.0, -1.0, 0.0, 0.0]).unwrap(), &cfg).is_err());
        assert!(integrate(&op, &WeightProfile::new(vec![0.0; 4]).unwrap(), &cfg).is_err());
        assert!(integrate(&op, &WeightProfile::delta(5, 1).unwrap(), &cfg).is_err());
    }
}
