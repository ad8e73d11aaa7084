//! Matrix-free generators of the weight-profile master equation.
//!
//! Three stencils share one operator type:
//!
//! * `Full`: the finite-N tridiagonal generator on weights `1..=N`.
//! * `Dilute`: the N → ∞ lower-bidiagonal generator truncated at `n_cut`.
//! * `Metastable`: the dilute stencil plus the `1/N_eff`-suppressed
//!   weight-decreasing flow, with the state length `n_cut` and the `N_eff`
//!   in the coefficients chosen independently.
//!
//! Boundary conventions: `b_0 ≡ 0` and `b_{len+1} ≡ 0`. For the truncated
//! stencils the upward flow out of `w = n_cut` is dropped; see
//! [`RateOperator::cutoff_current`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::profile::{weighted_sum, WeightProfile};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Form {
    Full,
    Dilute { n_cut: usize },
    Metastable { n_cut: usize, n_eff: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateOperator {
    params: ModelParams,
    form: Form,
}

impl RateOperator {
    pub fn full(params: ModelParams) -> Self {
        Self {
            params,
            form: Form::Full,
        }
    }

    /// Dilute generator on weights `1..=n_cut`. `params.n_qubits()` only
    /// enters the ROTOC normalization.
    pub fn dilute(params: ModelParams, n_cut: usize) -> Result<Self> {
        if n_cut < 1 {
            return Err(Error::invalid("n_cut", n_cut, "must be at least 1"));
        }
        Ok(Self {
            params,
            form: Form::Dilute { n_cut },
        })
    }

    pub fn metastable(params: ModelParams, n_cut: usize, n_eff: f64) -> Result<Self> {
        if n_cut < 1 {
            return Err(Error::invalid("n_cut", n_cut, "must be at least 1"));
        }
        if !(n_eff.is_finite() && n_eff > 1.0) {
            return Err(Error::invalid("n_eff", n_eff, "must be finite and > 1"));
        }
        Ok(Self {
            params,
            form: Form::Metastable { n_cut, n_eff },
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn form(&self) -> Form {
        self.form
    }

    /// Number of weights in the state vector.
    pub fn len(&self) -> usize {
        match self.form {
            Form::Full => self.params.n_qubits(),
            Form::Dilute { n_cut } | Form::Metastable { n_cut, .. } => n_cut,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The N appearing in the ROTOC factor `8/(3N)`.
    pub fn qubits(&self) -> f64 {
        match self.form {
            Form::Metastable { n_eff, .. } => n_eff,
            _ => self.params.n_qubits() as f64,
        }
    }

    /// Total loss rate of `b_w` (positive number).
    pub fn decay(&self, w: usize) -> f64 {
        let p = &self.params;
        let wf = w as f64;
        let scramble = match self.form {
            Form::Full => {
                let n = p.n_qubits() as f64;
                2.0 * wf * ((wf - 1.0) + 3.0 * (n - wf)) / (3.0 * (n - 1.0))
            }
            Form::Dilute { .. } | Form::Metastable { .. } => 2.0 * wf,
        };
        p.gamma() * (scramble + 2.0 * wf * p.noise_rate())
    }

    /// Coefficient of `b_{w-1}` in `db_w/dt`.
    pub fn gain_from_below(&self, w: usize) -> f64 {
        if w <= 1 {
            return 0.0;
        }
        let p = &self.params;
        let wf = w as f64;
        let rate = match self.form {
            Form::Full => {
                let n = p.n_qubits() as f64;
                2.0 * (n - wf + 1.0) * (wf - 1.0) / (n - 1.0)
            }
            Form::Dilute { .. } | Form::Metastable { .. } => 2.0 * (wf - 1.0),
        };
        p.gamma() * p.correlation() * rate
    }

    /// Coefficient of `b_{w+1}` in `db_w/dt`.
    pub fn gain_from_above(&self, w: usize) -> f64 {
        let p = &self.params;
        let wf = w as f64;
        let rate = match self.form {
            Form::Full => {
                let n = p.n_qubits() as f64;
                2.0 * wf * (wf + 1.0) / (3.0 * (n - 1.0))
            }
            Form::Dilute { .. } => 0.0,
            Form::Metastable { n_eff, .. } => 2.0 * wf * (wf + 1.0) / (3.0 * (n_eff - 1.0)),
        };
        p.gamma() * p.correlation() * rate
    }

    /// Writes `M b` into `out`. Both slices hold weights `1..=len`.
    pub fn apply_into(&self, b: &[f64], out: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(b.len(), n);
        debug_assert_eq!(out.len(), n);
        let g = self.params.gamma();
        let r = self.params.correlation();
        let kappa = self.params.noise_rate();
        match self.form {
            Form::Full => {
                let nf = n as f64;
                let inv = 1.0 / (nf - 1.0);
                for i in 0..n {
                    let w = (i + 1) as f64;
                    let decay = 2.0 * w * ((w - 1.0) + 3.0 * (nf - w)) * inv / 3.0 + 2.0 * w * kappa;
                    let mut d = -decay * b[i];
                    if i > 0 {
                        d += 2.0 * r * (nf - w + 1.0) * (w - 1.0) * inv * b[i - 1];
                    }
                    if i + 1 < n {
                        d += 2.0 * r * w * (w + 1.0) * inv / 3.0 * b[i + 1];
                    }
                    out[i] = g * d;
                }
            }
            Form::Dilute { .. } => {
                for i in 0..n {
                    let w = (i + 1) as f64;
                    let mut d = -2.0 * w * (1.0 + kappa) * b[i];
                    if i > 0 {
                        d += 2.0 * r * (w - 1.0) * b[i - 1];
                    }
                    out[i] = g * d;
                }
            }
            Form::Metastable { n_eff, .. } => {
                let inv = 1.0 / (3.0 * (n_eff - 1.0));
                for i in 0..n {
                    let w = (i + 1) as f64;
                    let mut d = -2.0 * w * (1.0 + kappa) * b[i];
                    if i > 0 {
                        d += 2.0 * r * (w - 1.0) * b[i - 1];
                    }
                    if i + 1 < n {
                        d += 2.0 * r * w * (w + 1.0) * inv * b[i + 1];
                    }
                    out[i] = g * d;
                }
            }
        }
    }

    /// `db/dt` for a profile, in units where the stored values are the state.
    pub fn apply(&self, b: &WeightProfile) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        let mut out = vec![0.0; b.len()];
        self.apply_into(b.values(), &mut out);
        Ok(out)
    }

    /// Same as [`apply`](Self::apply) but insists on the full stencil.
    pub fn apply_full(&self, b: &WeightProfile) -> Result<Vec<f64>> {
        if self.form != Form::Full {
            return Err(Error::invalid("form", format!("{:?}", self.form), "apply_full needs the Full stencil"));
        }
        self.apply(b)
    }

    pub fn apply_dilute(&self, b: &WeightProfile) -> Result<Vec<f64>> {
        if !matches!(self.form, Form::Dilute { .. }) {
            return Err(Error::invalid("form", format!("{:?}", self.form), "apply_dilute needs the Dilute stencil"));
        }
        self.apply(b)
    }

    /// `μ = -uᵀ M c` for a normalized distribution `c`.
    pub fn mass_loss_rate(&self, c: &[f64]) -> Result<f64> {
        self.check_len(c.len())?;
        let sum: f64 = c.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Unnormalized { sum });
        }
        Ok(self.mass_loss_rate_unchecked(c))
    }

    pub(crate) fn mass_loss_rate_unchecked(&self, c: &[f64]) -> f64 {
        // uᵀ M c column by column: each column's entries sum to
        // -decay + upward gain + downward gain (where in range).
        let n = self.len();
        let mut total = 0.0;
        for (i, &cw) in c.iter().enumerate() {
            let w = i + 1;
            let mut col = -self.decay(w);
            if w < n {
                col += self.gain_from_below(w + 1);
            }
            if w > 1 {
                col += self.gain_from_above(w - 1);
            }
            total += col * cw;
        }
        -total
    }

    /// Dilute closed form `μ = 2γ(1+κ-r)⟨w⟩_c`, valid when nothing sits at the cutoff.
    pub fn dilute_mass_loss_rate(&self, c: &[f64]) -> f64 {
        let p = &self.params;
        2.0 * p.gamma() * (1.0 + p.noise_rate() - p.correlation()) * weighted_sum(c) / c.iter().sum::<f64>()
    }

    /// Probability current dropped at the truncation edge, relative to the
    /// current total mass. Zero for the full stencil.
    pub fn cutoff_current(&self, b: &[f64]) -> f64 {
        match self.form {
            Form::Full => 0.0,
            Form::Dilute { n_cut } | Form::Metastable { n_cut, .. } => {
                let total: f64 = b.iter().sum();
                if total <= 0.0 {
                    return 0.0;
                }
                self.gain_from_below(n_cut + 1) * b[n_cut - 1] / total
            }
        }
    }

    /// Largest decay rate, a bound on the stiffest mode.
    pub fn stiffness(&self) -> f64 {
        (1..=self.len()).map(|w| self.decay(w)).fold(0.0, f64::max)
    }

    /// Dense copy, for tests and small-N cross checks.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        for w in 1..=n {
            m[w - 1][w - 1] = -self.decay(w);
            if w > 1 {
                m[w - 1][w - 2] = self.gain_from_below(w);
            }
            if w < n {
                m[w - 1][w] = self.gain_from_above(w);
            }
        }
        m
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full(n: usize, r: f64, kappa: f64) -> RateOperator {
        RateOperator::full(ModelParams::new(n, r, kappa).unwrap())
    }

    fn dilute(n_cut: usize, r: f64, kappa: f64) -> RateOperator {
        RateOperator::dilute(ModelParams::new(n_cut.max(2), r, kappa).unwrap(), n_cut).unwrap()
    }

    #[test]
    fn two_qubit_hand_evaluation() {
        let op = full(2, 1.0, 0.0);
        let d = op.apply_full(&WeightProfile::delta(2, 1).unwrap()).unwrap();
        assert_eq!(d, vec![-2.0, 2.0]);
    }

    #[test]
    fn column_sums_vanish_at_perfect_echo() {
        for n in 2..=200 {
            let m = full(n, 1.0, 0.0).to_dense();
            for col in 0..n {
                let s: f64 = (0..n).map(|row| m[row][col]).sum();
                let scale = (0..n).map(|row| m[row][col].abs()).sum::<f64>();
                assert!(s.abs() <= 1e-14 * scale, "N={n} col={col} sum={s:e}");
            }
        }
    }

    #[test]
    fn apply_matches_dense_and_conserves_mass() {
        let op = full(30, 1.0, 0.0);
        let b: Vec<f64> = (1..=30).map(|w| ((w * 7919) % 13) as f64 / 13.0).collect();
        let out = op.apply(&WeightProfile::new(b.clone()).unwrap()).unwrap();
        let m = op.to_dense();
        for i in 0..30 {
            let dense: f64 = (0..30).map(|j| m[i][j] * b[j]).sum();
            assert!((dense - out[i]).abs() < 1e-12);
        }
        assert!(out.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn hole_in_profile_refills() {
        let op = full(12, 0.7, 0.3);
        let mut b = vec![0.5; 12];
        b[5] = 0.0;
        let d = op.apply(&WeightProfile::new(b).unwrap()).unwrap();
        assert!(d[5] >= 0.0);
    }

    #[test]
    fn dilute_stencil() {
        let kappa = 0.3;
        let op = dilute(6, 0.8, kappa);
        let d = op.apply_dilute(&WeightProfile::delta(6, 1).unwrap()).unwrap();
        assert!((d[0] + 2.0 * (1.0 + kappa)).abs() < 1e-15);
        assert!((d[1] - 2.0 * 0.8).abs() < 1e-15);
        assert!(d[2..].iter().all(|&x| x == 0.0));

        // r = 0: no coupling between weights
        let op = dilute(5, 0.0, 0.0);
        let b = WeightProfile::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let d = op.apply(&b).unwrap();
        for (i, v) in d.iter().enumerate() {
            let w = (i + 1) as f64;
            assert_eq!(*v, -2.0 * w * b.values()[i]);
        }
    }

    #[test]
    fn geometric_profile_is_slowest_eigenvector() {
        let r = 0.6;
        let op = dilute(40, r, 0.0);
        let v: Vec<f64> = (0..40).map(|k| r.powi(k)).collect();
        let d = op.apply(&WeightProfile::new(v.clone()).unwrap()).unwrap();
        for i in 0..40 {
            assert!((d[i] + 2.0 * v[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_stencil_or_length_is_rejected() {
        let op = full(4, 1.0, 0.0);
        assert!(op.apply_dilute(&WeightProfile::delta(4, 1).unwrap()).is_err());
        assert!(matches!(
            op.apply(&WeightProfile::delta(3, 1).unwrap()),
            Err(Error::LengthMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn mass_loss_rates() {
        let op = full(20, 1.0, 0.0);
        let c: Vec<f64> = (0..20).map(|_| 0.05).collect();
        assert!(op.mass_loss_rate(&c).unwrap().abs() < 1e-13);

        let mut delta = vec![0.0; 10];
        delta[0] = 1.0;
        let mu = dilute(10, 0.8, 0.0).mass_loss_rate(&delta).unwrap();
        assert!((mu - 0.4).abs() < 1e-14);
        let mu = dilute(10, 1.0, 1.0).mass_loss_rate(&delta).unwrap();
        assert!((mu - 2.0).abs() < 1e-14);

        assert!(matches!(
            op.mass_loss_rate(&vec![0.1; 20]),
            Err(Error::Unnormalized { .. })
        ));
    }

    #[test]
    fn cutoff_current_flags_mass_at_edge() {
        let op = dilute(5, 0.9, 0.0);
        assert_eq!(op.cutoff_current(&[1.0, 0.0, 0.0, 0.0, 0.0]), 0.0);
        let c = op.cutoff_current(&[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((c - 2.0 * 0.9 * 5.0).abs() < 1e-14);
    }

    #[test]
    fn dilute_diagonal_is_spectrum() {
        let op = dilute(12, 0.4, 0.5);
        let m = op.to_dense();
        for l in 1..=12 {
            assert_eq!(m[l - 1][l - 1], -2.0 * l as f64 * 1.5);
            for j in l..12 {
                assert_eq!(m[l - 1][j], 0.0, "dilute generator must be lower triangular");
            }
        }
    }

    #[test]
    fn full_tends_to_dilute_at_large_n() {
        let w = 5usize;
        let dil = dilute(10, 0.7, 0.2);
        let mut prev = f64::INFINITY;
        for &n in &[100usize, 1000, 10000, 100000] {
            let f = full(n, 0.7, 0.2);
            let diff = (f.decay(w) - dil.decay(w))
                .abs()
                .max((f.gain_from_below(w) - dil.gain_from_below(w)).abs())
                .max(f.gain_from_above(w).abs());
            assert!(diff <= 4.0 * (w * w) as f64 / n as f64, "N={n}: {diff}");
            assert!(diff < prev);
            prev = diff;
        }
    }

    #[test]
    fn gamma_rescales_generator() {
        let a = RateOperator::full(ModelParams::with_gamma(8, 0.6, 0.1, 2.5).unwrap());
        let b = full(8, 0.6, 0.1);
        let x = WeightProfile::new((1..=8).map(|w| 1.0 / w as f64).collect()).unwrap();
        let da = a.apply(&x).unwrap();
        let db = b.apply(&x).unwrap();
        for (u, v) in da.iter().zip(&db) {
            assert!((u - 2.5 * v).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn generator_matches_rate_matrix_decomposition(
            n in 2usize..=50, r in 0.0f64..=1.0, kappa in 0.0f64..3.0
        ) {
            // M(r,κ) = r M(1,0) − diag(2wκ) − diag((1−r) 2w((w−1)+3(N−w))/(3(N−1)))
            let m = full(n, r, kappa).to_dense();
            let m1 = full(n, 1.0, 0.0).to_dense();
            let nf = n as f64;
            for i in 0..n {
                for j in 0..n {
                    let w = (i + 1) as f64;
                    let mut expected = r * m1[i][j];
                    if i == j {
                        expected -= 2.0 * w * kappa;
                        expected -= (1.0 - r) * 2.0 * w * ((w - 1.0) + 3.0 * (nf - w)) / (3.0 * (nf - 1.0));
                    }
                    prop_assert!((m[i][j] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
                }
            }
        }

        #[test]
        fn off_diagonals_nonnegative(n in 2usize..=60, r in 0.0f64..=1.0, kappa in 0.0f64..3.0) {
            let m = full(n, r, kappa).to_dense();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        prop_assert!(m[i][j] >= 0.0);
                    }
                }
            }
        }

        #[test]
        fn mass_loss_is_nonnegative(n in 2usize..=40, r in 0.0f64..=1.0, kappa in 0.0f64..2.0, seed in 0u64..1000) {
            let raw: Vec<f64> = (0..n).map(|i| (((i as u64 + 1) * (seed + 7)) % 17) as f64 + 0.1).collect();
            let s: f64 = raw.iter().sum();
            let c: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let mu = full(n, r, kappa).mass_loss_rate(&c).unwrap();
            prop_assert!(mu >= -1e-12);
        }

        #[test]
        fn dilute_mass_loss_closed_form(r in 0.0f64..=1.0, kappa in 0.0f64..2.0, seed in 0u64..1000) {
            let n = 30;
            let mut raw: Vec<f64> = (0..n).map(|i| (((i as u64 + 3) * (seed + 11)) % 19) as f64).collect();
            raw[n - 1] = 0.0;
            raw[0] += 1.0;
            let s: f64 = raw.iter().sum();
            let c: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let op = dilute(n, r, kappa);
            let mu = op.mass_loss_rate(&c).unwrap();
            let closed = 2.0 * (1.0 + kappa - r) * c.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum::<f64>();
            prop_assert!((mu - closed).abs() <= 1e-12 * (1.0 + closed.abs()));
            prop_assert!((op.dilute_mass_loss_rate(&c) - closed).abs() <= 1e-12 * (1.0 + closed.abs()));
        }
    }
}
