//! Model parameters and the perturbation-strength / correlation map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the full operator-weight master equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    n_qubits: usize,
    correlation: f64,
    noise_rate: f64,
    gamma: f64,
}

impl ModelParams {
    pub fn new(n_qubits: usize, correlation: f64, noise_rate: f64) -> Result<Self> {
        Self::with_gamma(n_qubits, correlation, noise_rate, 1.0)
    }

    pub fn with_gamma(n_qubits: usize, correlation: f64, noise_rate: f64, gamma: f64) -> Result<Self> {
        if n_qubits < 2 {
            return Err(Error::invalid("n_qubits", n_qubits, "must be at least 2"));
        }
        check_correlation(correlation)?;
        check_noise(noise_rate)?;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid("gamma", gamma, "must be a positive finite rate"));
        }
        Ok(Self {
            n_qubits,
            correlation,
            noise_rate,
            gamma,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn correlation(&self) -> f64 {
        self.correlation
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_eff(&self) -> f64 {
        self.correlation / (1.0 + self.noise_rate)
    }
}

/// Parameters of the dilute (N → ∞) limit with a weight-`w₀` initial operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiluteParams {
    correlation: f64,
    noise_rate: f64,
    initial_weight: usize,
}

impl DiluteParams {
    pub fn new(correlation: f64, noise_rate: f64, initial_weight: usize) -> Result<Self> {
        check_correlation(correlation)?;
        check_noise(noise_rate)?;
        if initial_weight < 1 {
            return Err(Error::invalid("initial_weight", initial_weight, "must be at least 1"));
        }
        Ok(Self {
            correlation,
            noise_rate,
            initial_weight,
        })
    }

    /// Dilute parameters with a prescribed `r_eff = r/(1+κ)`.
    pub fn from_effective(r_eff: f64, noise_rate: f64, initial_weight: usize) -> Result<Self> {
        Self::new(r_eff * (1.0 + noise_rate), noise_rate, initial_weight)
    }

    pub fn correlation(&self) -> f64 {
        self.correlation
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    pub fn initial_weight(&self) -> usize {
        self.initial_weight
    }

    pub fn r_eff(&self) -> f64 {
        self.correlation / (1.0 + self.noise_rate)
    }

    /// Factor converting physical time into effective time, `t_eff = (1+κ) t`.
    pub fn time_scale(&self) -> f64 {
        1.0 + self.noise_rate
    }
}

fn check_correlation(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid("correlation", r, "must lie in [0, 1]"));
    }
    Ok(())
}

fn check_noise(kappa: f64) -> Result<()> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::invalid("noise_rate", kappa, "must be finite and >= 0"));
    }
    Ok(())
}

/// Correlation between forward and backward couplings when the backward
/// couplings are `((1-p) J + p X) / S` with independent `X`.
pub fn correlation_from_perturbation(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("perturbation", p, "must lie in [0, 1]"));
    }
    Ok((1.0 - p) / normalization(p))
}

/// Inverse of [`correlation_from_perturbation`].
pub fn perturbation_from_correlation(r: f64) -> Result<f64> {
    check_correlation(r)?;
    // r²(q² + p²) = q² with q = 1 - p  =>  p/q = √(1-r²)/r
    let s = ((1.0 - r) * (1.0 + r)).sqrt();
    Ok(s / (r + s))
}

/// `S = √(1 - 2p + 2p²)`, the variance-restoring normalization.
pub fn normalization(p: f64) -> f64 {
    (1.0 - 2.0 * p + 2.0 * p * p).sqrt()
}

/// Returns `(r_eff, time_scale) = (r/(1+κ), 1+κ)`.
pub fn effective_params(params: &ModelParams) -> (f64, f64) {
    (params.r_eff(), 1.0 + params.noise_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perturbation_endpoints() {
        assert_eq!(correlation_from_perturbation(0.0).unwrap(), 1.0);
        assert_eq!(correlation_from_perturbation(1.0).unwrap(), 0.0);
        assert!(correlation_from_perturbation(-0.1).is_err());
        assert!(correlation_from_perturbation(1.5).is_err());
    }

    #[test]
    fn small_perturbation_series() {
        // 1 - r = p²/2 + p³ + (9/8) p⁴ + ...
        let p: f64 = 0.028;
        let r = correlation_from_perturbation(p).unwrap();
        assert!(((1.0 - r) - 3.92e-4).abs() < 2.0 * p.powi(3));
        for &p in &[1e-3, 5e-3, 0.01, 0.028, 0.05, 0.1_f64] {
            let r = correlation_from_perturbation(p).unwrap();
            let resid = (1.0 - r) - p * p / 2.0 - p.powi(3);
            assert!(resid.abs() <= 2.0 * p.powi(4), "p = {p}: {resid:e}");
        }
    }

    #[test]
    fn effective_parameters() {
        let eff = |r, k| effective_params(&ModelParams::new(10, r, k).unwrap());
        assert_eq!(eff(1.0, 0.0), (1.0, 1.0));
        assert_eq!(eff(1.0, 1.0), (0.5, 2.0));
        let (r_eff, scale) = eff(0.8, 0.25);
        assert!((r_eff - 0.64).abs() < 1e-15);
        assert_eq!(scale, 1.25);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ModelParams::new(1, 0.5, 0.0).is_err());
        assert!(ModelParams::new(4, 1.2, 0.0).is_err());
        assert!(ModelParams::new(4, -0.1, 0.0).is_err());
        assert!(ModelParams::new(4, 0.5, -1.0).is_err());
        assert!(ModelParams::new(4, 0.5, f64::NAN).is_err());
        assert!(ModelParams::with_gamma(4, 0.5, 0.0, 0.0).is_err());
        assert!(DiluteParams::new(0.5, 0.0, 0).is_err());
        assert!(DiluteParams::from_effective(0.99, 0.25, 1).is_err());
    }

    proptest! {
        #[test]
        fn perturbation_map_is_a_bijection(p in 1e-3f64..=1.0) {
            // below p ~ 1e-4 the map sits within a few ulps of r = 1 and p is
            // no longer recoverable to 1e-12 from a double
            let r = correlation_from_perturbation(p).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            let back = perturbation_from_correlation(r).unwrap();
            prop_assert!((back - p).abs() < 1e-12);
        }

        #[test]
        fn correlation_decreases_with_perturbation(p in 0.0f64..0.999, dp in 1e-6f64..1e-3) {
            let a = correlation_from_perturbation(p).unwrap();
            let b = correlation_from_perturbation((p + dp).min(1.0)).unwrap();
            prop_assert!(b < a);
        }

        #[test]
        fn r_eff_never_exceeds_r(r in 0.0f64..=1.0, kappa in 0.0f64..5.0) {
            let params = ModelParams::new(8, r, kappa).unwrap();
            let (r_eff, _) = effective_params(&params);
            prop_assert!(r_eff <= r);
            if kappa > 0.0 && r > 0.0 {
                prop_assert!(r_eff < r);
            }
        }
    }
}
