//! Closed-form solution of the dilute (N → ∞) master equation.
//!
//! With `τ = (1+κ)t` and `g(t) = r_eff (1 − e^{−2τ})`, a delta start at
//! weight `w₀` evolves into a negative binomial distribution
//!
//! ```text
//! c_{w₀+k}(t) = C(w₀+k−1, k) g^k (1−g)^{w₀},      ⟨w⟩_c = w₀ / (1 − g)
//! ```
//!
//! and the unnormalized mass is `Σ b_w = (e^{−2τ} / (1−g))^{w₀}`.

use crate::error::{Error, Result};
use crate::params::DiluteParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiluteSolution {
    params: DiluteParams,
}

impl DiluteSolution {
    pub fn new(params: DiluteParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &DiluteParams {
        &self.params
    }

    fn w0(&self) -> f64 {
        self.params.initial_weight() as f64
    }

    /// `1 − e^{−2τ}` without cancellation at small t.
    fn spread(&self, t: f64) -> f64 {
        -(-2.0 * self.params.time_scale() * t).exp_m1()
    }

    /// Growth parameter `g(t) = r_eff (1 − e^{−2(1+κ)t})`.
    pub fn growth(&self, t: f64) -> f64 {
        self.params.r_eff() * self.spread(t)
    }

    pub fn mean_weight(&self, t: f64) -> f64 {
        self.w0() / (1.0 - self.growth(t))
    }

    /// `Var_c(w) = w₀ g / (1−g)²`.
    pub fn variance(&self, t: f64) -> f64 {
        let g = self.growth(t);
        self.w0() * g / ((1.0 - g) * (1.0 - g))
    }

    pub fn rotoc(&self, t: f64, n_qubits: usize) -> f64 {
        8.0 * self.mean_weight(t) / (3.0 * n_qubits as f64)
    }

    /// `ln Σ_w b_w(t)`.
    pub fn log_total_mass(&self, t: f64) -> f64 {
        let tau = self.params.time_scale() * t;
        let one_minus_g = (-self.growth(t)).ln_1p();
        -self.w0() * (2.0 * tau + one_minus_g)
    }

    pub fn total_mass(&self, t: f64) -> f64 {
        self.log_total_mass(t).exp()
    }

    /// `exp(−∫₀ᵗ μ)` with `μ = 2(1+κ−r)⟨w⟩_c`, integrated numerically.
    pub fn total_mass_by_quadrature(&self, t: f64) -> f64 {
        let p = &self.params;
        let rate = 2.0 * (1.0 + p.noise_rate() - p.correlation());
        if t <= 0.0 || rate == 0.0 {
            return 1.0;
        }
        let f = |s: f64| self.mean_weight(s);
        (-rate * adaptive_simpson(&f, 0.0, t, 1e-13)).exp()
    }

    /// Normalized `c_w(t)` for `w = 1..=n_cut`.
    pub fn coefficients(&self, t: f64, n_cut: usize) -> Vec<f64> {
        let w0 = self.params.initial_weight();
        let mut c = vec![0.0; n_cut];
        if n_cut < w0 {
            return c;
        }
        let g = self.growth(t);
        if g == 0.0 {
            c[w0 - 1] = 1.0;
            return c;
        }
        let ln_g = g.ln();
        // log space keeps (1−g)^{w₀} and the binomials representable
        let mut ln_c = self.w0() * (-g).ln_1p();
        c[w0 - 1] = ln_c.exp();
        for k in 0..(n_cut - w0) {
            ln_c += ln_g + ((w0 + k) as f64 / (k + 1) as f64).ln();
            c[w0 + k] = ln_c.exp();
        }
        c
    }

    pub fn coefficient(&self, w: usize, t: f64) -> Result<f64> {
        if w < 1 {
            return Err(Error::invalid("w", w, "weights start at 1"));
        }
        Ok(self.coefficients(t, w)[w - 1])
    }

    /// Normalized generating function `Σ_w c_w z^w = ((1−g) z / (1 − g z))^{w₀}`.
    pub fn generating_function(&self, z: f64, t: f64) -> f64 {
        let g = self.growth(t);
        ((1.0 - g) * z / (1.0 - g * z)).powf(self.w0())
    }

    /// Smallest cutoff whose neglected tail stays below about 1e-12 for all
    /// times up to `t_max`.
    pub fn recommended_cutoff(&self, t_max: f64) -> usize {
        let g = self.growth(t_max);
        (self.w0() + 60.0 / (1.0 - g)).ceil() as usize
    }
}

/// `v_ℓ = ∂_r^{ℓ−1} (1, r, r², …)`, i.e. `v_{ℓ,w} = (w−1)!/(w−ℓ)! r^{w−ℓ}`,
/// truncated to `n_cut` weights. Eigenvector of the κ = 0 dilute generator
/// with eigenvalue `−2ℓ`.
pub fn eigenvector(ell: usize, r: f64, n_cut: usize) -> Result<Vec<f64>> {
    if ell < 1 {
        return Err(Error::invalid("ell", ell, "must be at least 1"));
    }
    if n_cut < ell {
        return Err(Error::invalid("n_cut", n_cut, "must be at least ell"));
    }
    let mut v = vec![0.0; n_cut];
    for w in ell..=n_cut {
        let falling: f64 = ((w - ell + 1)..w).map(|k| k as f64).product();
        v[w - 1] = falling * r.powi((w - ell) as i32);
    }
    Ok(v)
}

/// Coefficients `a_ℓ`, `ℓ = 1..=n`, with `Σ_ℓ a_ℓ v_ℓ = δ_{w,1}` on the first
/// `n` weights, by forward substitution in the triangular eigenbasis.
pub fn delta_expansion(r: f64, n: usize) -> Result<Vec<f64>> {
    let basis: Vec<Vec<f64>> = (1..=n).map(|l| eigenvector(l, r, n)).collect::<Result<_>>()?;
    let mut a = vec![0.0; n];
    for w in 1..=n {
        let target = if w == 1 { 1.0 } else { 0.0 };
        let known: f64 = (1..w).map(|l| a[l - 1] * basis[l - 1][w - 1]).sum();
        a[w - 1] = (target - known) / basis[w - 1][w - 1];
    }
    Ok(a)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, IntegrationConfig};
    use crate::params::ModelParams;
    use crate::profile::WeightProfile;
    use crate::rate::RateOperator;
    use proptest::prelude::*;

    fn sol(r: f64, kappa: f64, w0: usize) -> DiluteSolution {
        DiluteSolution::new(DiluteParams::new(r, kappa, w0).unwrap())
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn mean_weight_examples() {
        assert_eq!(sol(0.8, 0.0, 1).mean_weight(0.0), 1.0);
        assert!(close(sol(0.8, 0.0, 1).mean_weight(60.0), 5.0, 1e-14));
        for t in [0.1, 0.5, 2.0] {
            assert!(close(sol(1.0, 0.0, 1).mean_weight(t), (2.0 * t).exp(), 1e-12));
            let s = sol(0.9, 0.125, 3);
            assert!(close(s.mean_weight(t), 3.0 / (0.2 + 0.8 * (-2.25 * t).exp()), 1e-14));
        }
    }

    #[test]
    fn total_mass_examples() {
        assert_eq!(sol(0.4, 0.3, 2).total_mass(0.0), 1.0);
        assert!(close(sol(0.0, 0.0, 1).total_mass(1.7), (-3.4f64).exp(), 1e-14));
        let e = (-2.0f64).exp();
        let expected = e / (0.2 + 0.8 * e);
        assert!(close(sol(0.8, 0.0, 1).total_mass(1.0), expected, 1e-14));
        // evaluated independently in double precision
        assert!(close(expected, 0.4390179446450758, 1e-14));
    }

    #[test]
    fn total_mass_two_routes_agree() {
        for (r, kappa, w0) in [(0.8, 0.0, 1), (0.8, 0.0, 4), (0.5, 0.3, 7), (1.0, 0.5, 2), (0.95, 0.0, 10)] {
            let s = sol(r, kappa, w0);
            for t in [0.2, 1.0, 3.0, 6.0] {
                let a = s.log_total_mass(t);
                let b = s.total_mass_by_quadrature(t).ln();
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "r={r} κ={kappa} w0={w0} t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn total_mass_matches_integrator_for_larger_w0() {
        let s = sol(0.7, 0.2, 3);
        let n = s.recommended_cutoff(5.0);
        let op = RateOperator::dilute(ModelParams::new(n, 0.7, 0.2).unwrap(), n).unwrap();
        let cfg = IntegrationConfig::uniform(5.0, 11).unwrap();
        let traj = integrate(&op, &WeightProfile::delta(n, 3).unwrap(), &cfg).unwrap();
        for (t, o) in traj.times().iter().zip(traj.observables()) {
            assert!((o.echo.ln() - s.log_total_mass(*t)).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn rotoc_examples() {
        assert!(close(sol(0.8, 0.0, 1).rotoc(0.0, 800), 1.0 / 300.0, 1e-15));
        assert!(close(sol(0.8, 0.0, 1).rotoc(80.0, 800), 1.0 / 60.0, 1e-14));
        assert!(close(sol(0.8, 0.0, 3).rotoc(0.0, 800), 3.0 / 300.0, 1e-15));
    }

    #[test]
    fn coefficient_limits() {
        let s = sol(0.8, 0.0, 1);
        let c = s.coefficients(0.0, 5);
        assert_eq!(c, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let late = s.coefficients(100.0, 50);
        for (i, v) in late.iter().enumerate() {
            assert!(close(*v, 0.2 * 0.8f64.powi(i as i32), 1e-13));
        }
        assert!(s.coefficient(0, 1.0).is_err());
        assert_eq!(sol(0.8, 0.0, 3).coefficient(2, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn early_time_coefficients() {
        // g ≈ 2rt, so c_3 ≈ w₀ g = 4rt at w₀ = 2
        let r = 0.6;
        let t = 1e-3;
        let s = sol(r, 0.0, 2);
        let c2 = s.coefficient(2, t).unwrap();
        let c3 = s.coefficient(3, t).unwrap();
        assert!((1.0 - c2 - 4.0 * r * t).abs() < 10.0 * t * t);
        assert!((c3 - 4.0 * r * t).abs() < 10.0 * t * t);

        let op = RateOperator::dilute(ModelParams::new(40, r, 0.0).unwrap(), 40).unwrap();
        let cfg = IntegrationConfig::with_samples(t, vec![t]).unwrap();
        let traj = integrate(&op, &WeightProfile::delta(40, 2).unwrap(), &cfg).unwrap();
        let c = traj.profiles()[0].normalized();
        assert!(close(c[2], c3, 1e-7));
    }

    #[test]
    fn coefficients_match_integrator() {
        let s = sol(0.6, 0.25, 4);
        let n = s.recommended_cutoff(3.0);
        let op = RateOperator::dilute(ModelParams::new(n, 0.6, 0.25).unwrap(), n).unwrap();
        let cfg = IntegrationConfig::with_samples(3.0, vec![0.5, 3.0]).unwrap();
        let traj = integrate(&op, &WeightProfile::delta(n, 4).unwrap(), &cfg).unwrap();
        for (t, p) in traj.times().iter().zip(traj.profiles()) {
            let exact = s.coefficients(*t, n);
            for (a, b) in p.normalized().iter().zip(&exact) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn generating_function_normalized() {
        let s = sol(0.7, 0.1, 3);
        assert!(close(s.generating_function(1.0, 2.0), 1.0, 1e-15));
        let z: f64 = 0.6;
        let c = s.coefficients(2.0, 400);
        let series: f64 = c.iter().enumerate().map(|(i, v)| v * z.powi(i as i32 + 1)).sum();
        assert!(close(series, s.generating_function(z, 2.0), 1e-13));
    }

    #[test]
    fn eigenvector_examples() {
        assert_eq!(eigenvector(1, 0.5, 4).unwrap(), vec![1.0, 0.5, 0.25, 0.125]);
        assert_eq!(eigenvector(2, 0.5, 4).unwrap(), vec![0.0, 1.0, 1.0, 0.75]);
        assert!(eigenvector(0, 0.5, 4).is_err());
        assert!(eigenvector(5, 0.5, 4).is_err());
    }

    #[test]
    fn eigen_relation() {
        for r in [0.2, 0.8] {
            let op = RateOperator::dilute(ModelParams::new(60, r, 0.0).unwrap(), 60).unwrap();
            for ell in 1..=10 {
                let v = eigenvector(ell, r, 60).unwrap();
                let mut mv = vec![0.0; 60];
                op.apply_into(&v, &mut mv);
                let norm = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let res = mv[..59]
                    .iter()
                    .zip(&v)
                    .fold(0.0f64, |m, (a, b)| m.max((a + 2.0 * ell as f64 * b).abs()));
                assert!(res / norm < 1e-12, "ℓ={ell} r={r}: {}", res / norm);
            }
        }
    }

    #[test]
    fn delta_expansion_is_exponential_series() {
        for r in [0.2, 0.8] {
            let a = delta_expansion(r, 12).unwrap();
            let mut term = 1.0;
            for (l, v) in a.iter().enumerate() {
                if l > 0 {
                    term *= -r / l as f64;
                }
                assert!((v - term).abs() < 1e-12, "ℓ={} r={r}", l + 1);
            }
        }
    }

    proptest! {
        #[test]
        fn coefficients_sum_to_one(r in 0.0f64..0.99, kappa in 0.0f64..1.0, w0 in 1usize..6, t in 0.0f64..8.0) {
            let s = sol(r, kappa, w0);
            let c = s.coefficients(t, s.recommended_cutoff(t));
            let total: f64 = c.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let mean: f64 = c.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
            prop_assert!(close(mean, s.mean_weight(t), 1e-11));
        }

        #[test]
        fn mean_weight_moment_equation(r in 0.0f64..0.99, t in 0.05f64..6.0, w0 in 1usize..4) {
            // d⟨w⟩_c/dt = 2r⟨w⟩_c − 2(1−r) Var_c(w) at κ = 0, moments from the coefficients
            let s = sol(r, 0.0, w0);
            let c = s.coefficients(t, s.recommended_cutoff(t));
            let m1: f64 = c.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
            let m2: f64 = c.iter().enumerate().map(|(i, v)| ((i + 1) as f64).powi(2) * v).sum();
            let rhs = 2.0 * r * m1 - 2.0 * (1.0 - r) * (m2 - m1 * m1);
            // fourth-order central difference; h balances roundoff in 1/(1−g)
            let h = 1e-3;
            let f = |x: f64| s.mean_weight(x);
            let lhs = (8.0 * (f(t + h) - f(t - h)) - (f(t + 2.0 * h) - f(t - 2.0 * h))) / (12.0 * h);
            prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn kappa_rescaling(r in 0.0f64..=1.0, kappa in 0.0f64..2.0, t in 0.0f64..5.0, w0 in 1usize..5) {
            let a = sol(r, kappa, w0);
            let b = DiluteSolution::new(DiluteParams::new(r / (1.0 + kappa), 0.0, w0).unwrap());
            prop_assert!(close(a.mean_weight(t), b.mean_weight((1.0 + kappa) * t), 1e-14));
        }

        #[test]
        fn mean_weight_monotone(r in 0.0f64..=1.0, kappa in 0.0f64..2.0, t in 0.0f64..5.0, dt in 0.0f64..1.0) {
            let s = sol(r, kappa, 2);
            prop_assert!(s.mean_weight(t + dt) >= s.mean_weight(t));
        }
    }
}
