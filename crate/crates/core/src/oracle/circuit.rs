//! Monte Carlo simulation of the discrete Brownian cluster circuit.
//!
//! Each step draws Gaussian couplings for all `9·N(N−1)/2` two-site terms,
//! builds `U = exp(−iΔt Σ_A J_A O_A)` densely, conjugates the operator in the
//! Heisenberg picture and then applies the depolarizing channel as exact
//! weight-dependent damping. The backward branch uses the correlated
//! couplings `J̃_A = ((1−p)J_A + pX_A)/S` on the same time grid.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dense::{depolarize, unitary_step_eigen, CMat};
use super::pauli::{self, add_string, anticommute, to_xz, Pauli, PauliOperator};
use crate::error::{Error, Result};
use crate::params::{correlation_from_perturbation, normalization, perturbation_from_correlation};

pub const DEFAULT_SEED: u64 = 20250602;

/// Relative drift of `Σ_P c_P²` across one unitary step that is treated as a
/// linear-algebra failure.
pub const NORM_DRIFT_LIMIT: f64 = 1e-8;

fn default_dt() -> f64 {
    0.01
}
fn default_total_time() -> f64 {
    3.0
}
fn default_samples() -> usize {
    500
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_gamma() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitConfig {
    pub n_qubits: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_total_time")]
    pub total_time: f64,
    pub correlation: f64,
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// When false the unitary part is skipped and only the noise acts.
    #[serde(default = "default_true")]
    pub couplings_enabled: bool,
}

impl CircuitConfig {
    pub fn new(n_qubits: usize, correlation: f64, noise_rate: f64) -> Result<Self> {
        let cfg = Self {
            n_qubits,
            dt: default_dt(),
            total_time: default_total_time(),
            correlation,
            noise_rate,
            n_samples: default_samples(),
            seed: DEFAULT_SEED,
            gamma: 1.0,
            couplings_enabled: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_perturbation(n_qubits: usize, p: f64, noise_rate: f64) -> Result<Self> {
        Self::new(n_qubits, correlation_from_perturbation(p)?, noise_rate)
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        self.dt = dt;
        self.validate().map(|_| self)
    }

    pub fn with_total_time(mut self, total_time: f64) -> Result<Self> {
        self.total_time = total_time;
        self.validate().map(|_| self)
    }

    pub fn with_samples(mut self, n_samples: usize) -> Result<Self> {
        self.n_samples = n_samples;
        self.validate().map(|_| self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validate().map(|_| self)
    }

    pub fn without_couplings(mut self) -> Self {
        self.couplings_enabled = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=6).contains(&self.n_qubits) {
            return Err(Error::invalid("n_qubits", self.n_qubits, "must lie in 2..=6"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid("gamma", self.gamma, "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= 0.05 / self.gamma) {
            return Err(Error::invalid("dt", self.dt, "must lie in (0, 0.05/gamma]"));
        }
        if !(self.total_time.is_finite() && self.total_time > 0.0) {
            return Err(Error::invalid("total_time", self.total_time, "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::invalid("correlation", self.correlation, "must lie in [0, 1]"));
        }
        if !(self.noise_rate.is_finite() && self.noise_rate >= 0.0) {
            return Err(Error::invalid("noise_rate", self.noise_rate, "must be non-negative"));
        }
        if self.n_samples < 100 {
            return Err(Error::invalid("n_samples", self.n_samples, "must be at least 100"));
        }
        Ok(())
    }

    pub fn perturbation(&self) -> f64 {
        perturbation_from_correlation(self.correlation).expect("validated correlation")
    }

    /// `σ_J² = γ / (12 (N−1) Δt)`.
    pub fn coupling_variance(&self) -> f64 {
        self.gamma / (12.0 * (self.n_qubits as f64 - 1.0) * self.dt)
    }

    pub fn n_steps(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }
}

/// One two-site term `σ^a_i σ^b_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CouplingTerm {
    pub sites: (usize, usize),
    pub paulis: (Pauli, Pauli),
    pub string: u64,
}

pub fn coupling_terms(n_qubits: usize) -> Vec<CouplingTerm> {
    let kinds = [Pauli::X, Pauli::Y, Pauli::Z];
    let mut terms = Vec::with_capacity(9 * n_qubits * (n_qubits - 1) / 2);
    for i in 0..n_qubits {
        for j in i + 1..n_qubits {
            for a in kinds {
                for b in kinds {
                    terms.push(CouplingTerm {
                        sites: (i, j),
                        paulis: (a, b),
                        string: pauli::two_site(i, a, j, b),
                    });
                }
            }
        }
    }
    terms
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepCouplings {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

impl StepCouplings {
    pub fn zeros(n_qubits: usize) -> Self {
        let m = 9 * n_qubits * (n_qubits - 1) / 2;
        Self {
            forward: vec![0.0; m],
            backward: vec![0.0; m],
        }
    }
}

/// Draws `J_A` and `X_A` for every term (in that order per term) and mixes
/// them into `J̃_A`.
pub fn sample_step_couplings<R: Rng + ?Sized>(cfg: &CircuitConfig, rng: &mut R) -> StepCouplings {
    let m = 9 * cfg.n_qubits * (cfg.n_qubits - 1) / 2;
    let sigma = cfg.coupling_variance().sqrt();
    let p = cfg.perturbation();
    let s = normalization(p);
    let mut forward = Vec::with_capacity(m);
    let mut backward = Vec::with_capacity(m);
    for _ in 0..m {
        let j: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
        let x: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
        forward.push(j);
        backward.push(((1.0 - p) * j + p * x) / s);
    }
    StepCouplings { forward, backward }
}

/// Independent random stream for one sample.
pub fn sample_rng(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Precomputed per-size data for the dense step.
struct Stepper {
    n_qubits: usize,
    masks: Vec<(usize, usize)>,
}

impl Stepper {
    fn new(n_qubits: usize) -> Self {
        let masks = coupling_terms(n_qubits).iter().map(|t| to_xz(t.string, n_qubits)).collect();
        Self { n_qubits, masks }
    }

    fn hamiltonian(&self, couplings: &[f64]) -> CMat {
        let mut h = CMat::zeros(1 << self.n_qubits);
        for (&(x, z), &j) in self.masks.iter().zip(couplings) {
            add_string(&mut h, x, z, j);
        }
        h
    }

    /// Conjugation by the step unitary followed by damping.
    fn step(&self, w: &CMat, couplings: Option<&[f64]>, dt: f64, kappa: f64) -> Result<CMat> {
        let mut out = match couplings {
            Some(j) => {
                let u = unitary_step_eigen(&self.hamiltonian(j), dt);
                let next = w.conjugate_by(&u);
                let before = w.frobenius_sq();
                let drift = (next.frobenius_sq() - before).abs() / before.max(f64::MIN_POSITIVE);
                if drift > NORM_DRIFT_LIMIT {
                    return Err(Error::NormDrift { drift });
                }
                next
            }
            None => w.clone(),
        };
        if kappa > 0.0 {
            depolarize(&mut out, self.n_qubits, (-kappa * dt).exp());
        }
        Ok(out)
    }
}

/// Advances `w` by one step of the chosen branch.
pub fn evolve_step(
    w: &PauliOperator,
    couplings: &StepCouplings,
    dt: f64,
    kappa: f64,
    direction: Direction,
) -> Result<PauliOperator> {
    let n = w.n_qubits();
    if n > 6 {
        return Err(Error::invalid("n_qubits", n, "dense conjugation requires at most 6 qubits"));
    }
    let j = match direction {
        Direction::Forward => &couplings.forward,
        Direction::Backward => &couplings.backward,
    };
    let expected = 9 * n * (n - 1) / 2;
    if j.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: j.len(),
        });
    }
    let stepper = Stepper::new(n);
    let next = stepper.step(&w.to_dense(), Some(j), dt, kappa)?;
    Ok(PauliOperator::from_dense(&next, n, 1e-15))
}

fn check_weight_one(n_qubits: usize, index: u64, field: &'static str) -> Result<()> {
    if index as usize >= pauli::num_strings(n_qubits) || pauli::weight(index, n_qubits) != 1 {
        return Err(Error::invalid(field, index, "must be a single-site Pauli"));
    }
    Ok(())
}

/// Evolves `V` along both branches of sample `sample` up to `total_time`.
fn evolve_branches(cfg: &CircuitConfig, v: u64, sample: u64) -> Result<(CMat, CMat)> {
    let n = cfg.n_qubits;
    let stepper = Stepper::new(n);
    let mut rng = sample_rng(cfg.seed, sample);
    let mut fwd = PauliOperator::single(n, v)?.to_dense();
    let mut bwd = fwd.clone();
    for _ in 0..cfg.n_steps() {
        let c = cfg.couplings_enabled.then(|| sample_step_couplings(cfg, &mut rng));
        fwd = stepper.step(&fwd, c.as_ref().map(|c| c.forward.as_slice()), cfg.dt, cfg.noise_rate)?;
        bwd = stepper.step(&bwd, c.as_ref().map(|c| c.backward.as_slice()), cfg.dt, cfg.noise_rate)?;
    }
    Ok((fwd, bwd))
}

/// One sample of `f(φ) = ⟨D_Ũ(V) e^{iφW} D_U(V) e^{−iφW}⟩` at `total_time`.
pub fn run_protocol(cfg: &CircuitConfig, w: u64, v: u64, phi: f64, sample: u64) -> Result<f64> {
    cfg.validate()?;
    check_weight_one(cfg.n_qubits, w, "W")?;
    check_weight_one(cfg.n_qubits, v, "V")?;
    let (fwd, bwd) = evolve_branches(cfg, v, sample)?;
    let d = 1usize << cfg.n_qubits;
    // e^{iφW} = cos φ + i sin φ W for a Pauli W
    let wm = PauliOperator::single(cfg.n_qubits, w)?.to_dense();
    let rot = CMat::identity(d).scale(phi.cos()).add(&CMat {
        re: -&wm.im * phi.sin(),
        im: &wm.re * phi.sin(),
    });
    let kicked = rot.mul(&fwd).mul(&rot.adjoint());
    Ok(bwd.trace_product_re(&kicked) / d as f64)
}

/// `⟨[W, D_Ũ(V)][W, D_U(V)]⟩` for the same sample as [`run_protocol`].
pub fn protocol_commutator(cfg: &CircuitConfig, w: u64, v: u64, sample: u64) -> Result<f64> {
    cfg.validate()?;
    check_weight_one(cfg.n_qubits, w, "W")?;
    check_weight_one(cfg.n_qubits, v, "V")?;
    let (fwd, bwd) = evolve_branches(cfg, v, sample)?;
    let wm = PauliOperator::single(cfg.n_qubits, w)?.to_dense();
    let cf = wm.mul(&fwd).sub(&fwd.mul(&wm));
    let cb = wm.mul(&bwd).sub(&bwd.mul(&wm));
    Ok(cb.trace_product_re(&cf) / (1usize << cfg.n_qubits) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Sample mean and standard error (two-pass, in iteration order).
    pub fn from_samples(values: impl Iterator<Item = f64> + Clone) -> Self {
        let nf = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / nf;
        let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        Self {
            mean,
            stderr: (var / nf).sqrt(),
        }
    }
}

/// Ensemble statistics at each sample time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub config: CircuitConfig,
    pub w: u64,
    pub v: u64,
    pub times: Vec<f64>,
    pub echo: Vec<Estimate>,
    pub dressed_otoc: Vec<Estimate>,
    /// `weights[k][w]` is the binned overlap at `times[k]`, `w = 0..=N`.
    pub weights: Vec<Vec<Estimate>>,
    /// Coefficient of `W` in the forward branch `W(t)`.
    pub autocorrelator: Vec<Estimate>,
    /// Dressed OTOC averaged over all single-site `V`, `(8/3N) Σ_w w b_w`
    /// per sample. Unlike the fixed-`V` value it does not rely on the
    /// ensemble being symmetric under site permutations.
    pub site_averaged_otoc: Vec<Estimate>,
}

fn grid_steps(cfg: &CircuitConfig, times: &[f64]) -> Result<Vec<usize>> {
    let mut steps = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let s = (t / cfg.dt).round();
        if !(t >= 0.0) || (s * cfg.dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::invalid("sample_times", t, "must be non-negative multiples of dt"));
        }
        if t > cfg.total_time * (1.0 + 1e-12) {
            return Err(Error::invalid("sample_times", t, "must not exceed total_time"));
        }
        if k > 0 && t <= times[k - 1] {
            return Err(Error::invalid("sample_times", t, "must be strictly increasing"));
        }
        steps.push(s as usize);
    }
    Ok(steps)
}

/// Per-time raw values of one sample: echo, dressed OTOC, autocorrelator,
/// then one bin per weight.
fn simulate_sample(cfg: &CircuitConfig, stepper: &Stepper, tables: &Tables, w: u64, steps: &[usize], sample: u64) -> Result<Vec<Vec<f64>>> {
    let n = cfg.n_qubits;
    let mut rng = sample_rng(cfg.seed, sample);
    let mut fwd = PauliOperator::single(n, w)?.to_dense();
    let mut bwd = fwd.clone();
    // with p = 0 the backward couplings equal the forward ones bit for bit
    let mirrored = !cfg.couplings_enabled || cfg.perturbation() == 0.0;
    let mut out = Vec::with_capacity(steps.len());
    let mut current = 0;
    for &target in steps {
        while current < target {
            let c = cfg.couplings_enabled.then(|| sample_step_couplings(cfg, &mut rng));
            fwd = stepper.step(&fwd, c.as_ref().map(|c| c.forward.as_slice()), cfg.dt, cfg.noise_rate)?;
            bwd = if mirrored {
                fwd.clone()
            } else {
                stepper.step(&bwd, c.as_ref().map(|c| c.backward.as_slice()), cfg.dt, cfg.noise_rate)?
            };
            current += 1;
        }
        let cf = pauli::coefficients(&fwd, n);
        let cb = pauli::coefficients(&bwd, n);
        let mut row = vec![0.0; ROW_BINS + n + 1];
        for (index, (a, b)) in cf.iter().zip(&cb).enumerate() {
            let prod = a * b;
            row[0] += prod;
            if tables.anticommutes_v[index] {
                row[1] += 4.0 * prod;
            }
            row[ROW_BINS + tables.weight[index]] += prod;
        }
        row[2] = cf[w as usize];
        // average of the dressed OTOC over all 3N single-site V
        row[3] = (1..=n).map(|wt| 8.0 * wt as f64 * row[ROW_BINS + wt]).sum::<f64>() / (3 * n) as f64;
        out.push(row);
    }
    Ok(out)
}

const ROW_BINS: usize = 4;

struct Tables {
    weight: Vec<usize>,
    anticommutes_v: Vec<bool>,
}

/// Means and standard errors of echo, dressed OTOC, `b_w` and the
/// autocorrelator over `cfg.n_samples` samples.
///
/// Samples run in parallel on the current rayon pool; results are merged in
/// sample order so the output does not depend on the thread count.
pub fn estimate_observables(cfg: &CircuitConfig, w: u64, v: u64, sample_times: &[f64]) -> Result<OracleEstimate> {
    cfg.validate()?;
    let n = cfg.n_qubits;
    check_weight_one(n, w, "W")?;
    check_weight_one(n, v, "V")?;
    let steps = grid_steps(cfg, sample_times)?;
    let stepper = Stepper::new(n);
    let tables = Tables {
        weight: (0..pauli::num_strings(n) as u64).map(|p| pauli::weight(p, n)).collect(),
        anticommutes_v: (0..pauli::num_strings(n) as u64).map(|p| anticommute(p, v, n)).collect(),
    };
    let samples: Vec<Vec<Vec<f64>>> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|s| simulate_sample(cfg, &stepper, &tables, w, &steps, s))
        .collect::<Result<_>>()?;

    let est = |k: usize, i: usize| Estimate::from_samples(samples.iter().map(move |s| s[k][i]));
    let m = steps.len();
    Ok(OracleEstimate {
        config: cfg.clone(),
        w,
        v,
        times: sample_times.to_vec(),
        echo: (0..m).map(|k| est(k, 0)).collect(),
        dressed_otoc: (0..m).map(|k| est(k, 1)).collect(),
        autocorrelator: (0..m).map(|k| est(k, 2)).collect(),
        site_averaged_otoc: (0..m).map(|k| est(k, 3)).collect(),
        weights: (0..m).map(|k| (0..=n).map(|wt| est(k, ROW_BINS + wt)).collect()).collect(),
    })
}

/// Decay rate `γ w (3(N−w) + (w−1)) / (3(N−1))` of a weight-`w` autocorrelator.
pub fn autocorrelator_rate(weight: usize, n_qubits: usize, gamma: f64) -> f64 {
    let (w, n) = (weight as f64, n_qubits as f64);
    gamma * w * (3.0 * (n - w) + (w - 1.0)) / (3.0 * (n - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Weighted least-squares fit of `ln mean = a − rate·t`, with weights
/// `(mean/stderr)²`, over points resolved at more than three standard errors.
pub fn fit_decay_rate(times: &[f64], values: &[Estimate]) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            got: values.len(),
        });
    }
    let pts: Vec<(f64, f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, e)| e.stderr > 0.0 && e.mean > 3.0 * e.stderr)
        .map(|(&t, e)| (t, e.mean.ln(), (e.mean / e.stderr).powi(2)))
        .collect();
    if pts.len() < 3 {
        return Err(Error::invalid("values", pts.len(), "need at least 3 resolved points"));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let tm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let stt: f64 = pts.iter().map(|p| p.2 * (p.0 - tm).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| p.2 * (p.0 - tm) * (p.1 - ym)).sum();
    Ok(DecayFit {
        rate: -sty / stt,
        stderr: (1.0 / stt).sqrt(),
        points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::pauli::single_site;

    fn small(n: usize, r: f64, kappa: f64) -> CircuitConfig {
        CircuitConfig::new(n, r, kappa).unwrap().with_samples(100).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(CircuitConfig::new(1, 1.0, 0.0).is_err());
        assert!(CircuitConfig::new(7, 1.0, 0.0).is_err());
        assert!(CircuitConfig::new(3, 1.2, 0.0).is_err());
        assert!(CircuitConfig::new(3, 1.0, -0.1).is_err());
        let cfg = CircuitConfig::new(3, 1.0, 0.0).unwrap();
        assert!(cfg.clone().with_dt(0.06).is_err());
        assert!(cfg.clone().with_gamma(2.0).unwrap().with_dt(0.03).is_err());
        assert!(cfg.clone().with_samples(99).is_err());
        assert_eq!(cfg.n_steps(), 300);
        assert_eq!(coupling_terms(5).len(), 90);
    }

    #[test]
    fn coupling_limits() {
        let mut rng = sample_rng(1, 0);
        let exact = CircuitConfig::new(3, 1.0, 0.0).unwrap();
        let c = sample_step_couplings(&exact, &mut rng);
        assert_eq!(c.forward, c.backward);
        let indep = CircuitConfig::from_perturbation(3, 1.0, 0.0).unwrap();
        let mut a = sample_rng(1, 0);
        let mut b = sample_rng(1, 0);
        let c = sample_step_couplings(&indep, &mut a);
        // the second draw of each pair is X_A
        let _: f64 = b.sample(StandardNormal);
        let x: f64 = b.sample(StandardNormal);
        assert!((c.backward[0] - x * indep.coupling_variance().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn coupling_correlation_matches_mapping() {
        let p = 0.3;
        let cfg = CircuitConfig::from_perturbation(2, p, 0.0).unwrap();
        let mut rng = sample_rng(7, 3);
        let var = cfg.coupling_variance();
        let (mut sxy, mut sxx, mut syy, mut n) = (0.0, 0.0, 0.0, 0.0f64);
        while n < 1e5 {
            let c = sample_step_couplings(&cfg, &mut rng);
            for (a, b) in c.forward.iter().zip(&c.backward) {
                sxy += a * b;
                sxx += a * a;
                syy += b * b;
                n += 1.0;
            }
        }
        let corr = sxy / (sxx * syy).sqrt();
        let target = 0.7 / 0.58f64.sqrt();
        // standard error of a sample correlation
        let se = (1.0 - target * target) / n.sqrt();
        assert!((corr - target).abs() < 3.0 * se, "{corr} vs {target}");
        assert!((sxx / n / var - 1.0).abs() < 0.02);
        assert!((syy / n / var - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_couplings_are_identity_and_noise_damps() {
        let n = 3;
        let w = PauliOperator::single(n, single_site(1, Pauli::Y)).unwrap();
        let zero = StepCouplings::zeros(n);
        let same = evolve_step(&w, &zero, 0.01, 0.0, Direction::Forward).unwrap();
        assert!((same.coefficient(single_site(1, Pauli::Y)) - 1.0).abs() < 1e-14);
        assert!((same.norm_sq() - 1.0).abs() < 1e-14);
        let damped = evolve_step(&w, &zero, 0.01, 0.5, Direction::Backward).unwrap();
        assert!((damped.coefficient(single_site(1, Pauli::Y)) - (-0.005f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn unitary_step_preserves_norm() {
        let cfg = CircuitConfig::new(4, 0.8, 0.0).unwrap();
        let mut rng = sample_rng(11, 0);
        let mut w = PauliOperator::single(4, single_site(0, Pauli::X)).unwrap();
        for _ in 0..20 {
            let c = sample_step_couplings(&cfg, &mut rng);
            w = evolve_step(&w, &c, cfg.dt, 0.0, Direction::Backward).unwrap();
            assert!((w.norm_sq() - 1.0).abs() < 1e-10);
        }
        assert!(w.iter().count() > 1);
        let bad = StepCouplings {
            forward: vec![0.0; 3],
            backward: vec![0.0; 3],
        };
        assert!(matches!(
            evolve_step(&w, &bad, 0.01, 0.0, Direction::Forward),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn protocol_trivial_cases() {
        let w = single_site(0, Pauli::X);
        let v = single_site(1, Pauli::Z);
        let echo = small(3, 1.0, 0.0).with_total_time(0.5).unwrap();
        for s in 0..3 {
            assert!((run_protocol(&echo, w, v, 0.0, s).unwrap() - 1.0).abs() < 1e-12);
        }
        let t0 = small(3, 0.5, 0.3).with_total_time(0.01).unwrap();
        let t0 = CircuitConfig { total_time: 0.0, ..t0 };
        // zero steps: W and V on different sites commute
        let (fwd, bwd) = evolve_branches(&t0, v, 0).unwrap();
        assert_eq!(fwd, bwd);
        assert!(run_protocol(&t0, w, v, 0.7, 0).is_err());
        assert!(run_protocol(&echo, two(), v, 0.1, 0).is_err());
    }

    fn two() -> u64 {
        pauli::two_site(0, Pauli::X, 1, Pauli::X)
    }

    #[test]
    fn protocol_curvature_matches_commutator() {
        let cfg = small(3, 0.8, 0.2).with_total_time(0.6).unwrap();
        let w = single_site(0, Pauli::X);
        let v = single_site(2, Pauli::Z);
        let phi = 1e-3;
        for s in 0..4 {
            let f0 = run_protocol(&cfg, w, v, 0.0, s).unwrap();
            let fp = run_protocol(&cfg, w, v, phi, s).unwrap();
            let fm = run_protocol(&cfg, w, v, -phi, s).unwrap();
            let fd = (fp - 2.0 * f0 + fm) / (phi * phi);
            let direct = protocol_commutator(&cfg, w, v, s).unwrap();
            assert!((fd - direct).abs() < 1e-6, "{fd} vs {direct}");
            assert!(direct.abs() > 1e-3);
        }
    }

    #[test]
    fn estimate_initial_values_and_perfect_echo() {
        let cfg = small(4, 1.0, 0.0).with_total_time(2.0).unwrap();
        let w = single_site(0, Pauli::X);
        let v = single_site(1, Pauli::Z);
        let est = estimate_observables(&cfg, w, v, &[0.0, 2.0]).unwrap();
        assert_eq!(est.echo[0].mean, 1.0);
        assert_eq!(est.dressed_otoc[0].mean, 0.0);
        assert_eq!(est.weights[0][1].mean, 1.0);
        assert!((est.echo[1].mean - 1.0).abs() < 1e-10);
        assert!(est.echo[1].stderr < 1e-10);
        assert!(est.dressed_otoc[1].mean > 0.1);
        let total: f64 = est.weights[1].iter().map(|e| e.mean).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn site_average_matches_explicit_average_over_v() {
        let cfg = small(3, 0.8, 0.1).with_total_time(0.5).unwrap();
        let w = single_site(0, Pauli::X);
        let times = [0.2, 0.5];
        let mut avg = [0.0; 2];
        let mut reported = [0.0; 2];
        for site in 0..3 {
            for kind in [Pauli::X, Pauli::Y, Pauli::Z] {
                let est = estimate_observables(&cfg, w, single_site(site, kind), &times).unwrap();
                for k in 0..2 {
                    avg[k] += est.dressed_otoc[k].mean / 9.0;
                    reported[k] = est.site_averaged_otoc[k].mean;
                }
            }
        }
        for k in 0..2 {
            assert!((avg[k] - reported[k]).abs() < 1e-12, "{avg:?} {reported:?}");
        }
    }

    #[test]
    fn sample_time_validation() {
        let cfg = small(2, 1.0, 0.0);
        let w = single_site(0, Pauli::X);
        let v = single_site(1, Pauli::Z);
        assert!(estimate_observables(&cfg, w, v, &[0.005]).is_err());
        assert!(estimate_observables(&cfg, w, v, &[0.5, 0.2]).is_err());
        assert!(estimate_observables(&cfg, w, v, &[3.5]).is_err());
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = small(3, 0.8, 0.1).with_total_time(0.3).unwrap();
        let w = single_site(0, Pauli::X);
        let v = single_site(1, Pauli::Z);
        let times = [0.1, 0.3];
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = serial.install(|| estimate_observables(&cfg, w, v, &times)).unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = wide.install(|| estimate_observables(&cfg, w, v, &times)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn autocorrelator_rate_counting() {
        assert_eq!(autocorrelator_rate(1, 5, 1.0), 1.0);
        assert!((autocorrelator_rate(2, 3, 1.0) - 2.0 * 4.0 / 6.0).abs() < 1e-15);
        let times = [0.0, 1.0, 2.0, 3.0];
        let vals: Vec<Estimate> = times
            .iter()
            .map(|t: &f64| Estimate {
                mean: (-0.7 * *t).exp(),
                stderr: 0.01,
            })
            .collect();
        let fit = fit_decay_rate(&times, &vals).unwrap();
        assert!((fit.rate - 0.7).abs() < 1e-12);
    }

    #[test]
    fn weight_one_autocorrelator_decays_at_gamma() {
        let cfg = CircuitConfig::new(3, 1.0, 0.0).unwrap().with_total_time(2.0).unwrap();
        let w = single_site(0, Pauli::X);
        let v = single_site(1, Pauli::Z);
        let times: Vec<f64> = (1..=8).map(|k| 0.25 * k as f64).collect();
        let est = estimate_observables(&cfg, w, v, &times).unwrap();
        let fit = fit_decay_rate(&est.times, &est.autocorrelator).unwrap();
        let target = autocorrelator_rate(1, 3, 1.0);
        assert!((fit.rate / target - 1.0).abs() < 0.05, "{fit:?}");
    }
}
