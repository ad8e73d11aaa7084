//! Weight profiles, echo bookkeeping and trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unnormalized branch overlap `b_w` for `w = 1..=len`.
///
/// The true profile is `exp(log_mass_offset) * values`; the integrator moves
/// mass into the offset whenever `Σ values` drifts far from one so that
/// exponentially small echoes stay representable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    values: Vec<f64>,
    log_mass_offset: f64,
}

impl WeightProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_offset(values, 0.0)
    }

    pub fn with_offset(values: Vec<f64>, log_mass_offset: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("profile", "[]", "must contain at least one weight"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("profile", v, "entries must be finite"));
        }
        if !log_mass_offset.is_finite() {
            return Err(Error::invalid("log_mass_offset", log_mass_offset, "must be finite"));
        }
        Ok(Self {
            values,
            log_mass_offset,
        })
    }

    /// `b_w = δ_{w,w₀}` on `len` weights.
    pub fn delta(len: usize, initial_weight: usize) -> Result<Self> {
        if initial_weight < 1 || initial_weight > len {
            return Err(Error::invalid(
                "initial_weight",
                initial_weight,
                "must lie in 1..=number of weights",
            ));
        }
        let mut values = vec![0.0; len];
        values[initial_weight - 1] = 1.0;
        Self::new(values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stored (scaled) values; index 0 is weight 1.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_mass_offset(&self) -> f64 {
        self.log_mass_offset
    }

    /// True `b_w` (may underflow for tiny echoes).
    pub fn get(&self, w: usize) -> f64 {
        self.values[w - 1] * self.log_mass_offset.exp()
    }

    pub fn scaled_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Natural logarithm of the true total mass `Σ_w b_w`.
    pub fn log_mass(&self) -> f64 {
        self.scaled_mass().ln() + self.log_mass_offset
    }

    pub fn echo(&self) -> Echo {
        Echo::from_ln(self.log_mass())
    }

    /// Normalized distribution `c_w = b_w / Σ b`.
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.scaled_mass();
        self.values.iter().map(|v| v / total).collect()
    }

    pub fn mean_weight(&self) -> f64 {
        let total = self.scaled_mass();
        weighted_sum(&self.values) / total
    }

    pub fn into_parts(self) -> (Vec<f64>, f64) {
        (self.values, self.log_mass_offset)
    }
}

/// `Σ_w w x_w` with weights starting at 1.
pub(crate) fn weighted_sum(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum()
}

/// A positive number stored as `mantissa × 10^exponent` so that echoes far
/// below `f64::MIN_POSITIVE` remain representable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    pub mantissa: f64,
    pub exponent: f64,
}

impl Echo {
    pub fn from_ln(ln_value: f64) -> Self {
        if ln_value == f64::NEG_INFINITY {
            return Echo {
                mantissa: 0.0,
                exponent: 0.0,
            };
        }
        let log10 = ln_value / std::f64::consts::LN_10;
        let exponent = log10.floor();
        Echo {
            mantissa: 10f64.powf(log10 - exponent),
            exponent,
        }
    }

    pub fn log10(&self) -> f64 {
        self.mantissa.log10() + self.exponent
    }

    pub fn ln(&self) -> f64 {
        self.log10() * std::f64::consts::LN_10
    }

    /// Plain value; underflows to zero below the double range.
    pub fn value(&self) -> f64 {
        self.mantissa * 10f64.powf(self.exponent)
    }
}

/// Observables recorded at one sample time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub echo: Echo,
    pub mean_weight: f64,
    pub rotoc: f64,
    pub dressed_otoc: f64,
}

impl Observables {
    /// `qubits` is the N in the `8/(3N)` counting factor.
    pub fn from_profile(profile: &WeightProfile, qubits: f64) -> Self {
        let echo = profile.echo();
        let mean_weight = profile.mean_weight();
        let rotoc = 8.0 * mean_weight / (3.0 * qubits);
        Observables {
            echo,
            mean_weight,
            rotoc,
            dressed_otoc: rotoc * echo.value(),
        }
    }
}

/// Samples of a master-equation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    profiles: Vec<WeightProfile>,
    observables: Vec<Observables>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, profile: WeightProfile, observables: Observables) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::invalid("time", t, "sample times must be strictly increasing"));
            }
        }
        self.times.push(t);
        self.profiles.push(profile);
        self.observables.push(observables);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn profiles(&self) -> &[WeightProfile] {
        &self.profiles
    }

    pub fn observables(&self) -> &[Observables] {
        &self.observables
    }

    pub fn mean_weights(&self) -> Vec<f64> {
        self.observables.iter().map(|o| o.mean_weight).collect()
    }

    pub fn last(&self) -> Option<(f64, &WeightProfile, &Observables)> {
        let i = self.times.len().checked_sub(1)?;
        Some((self.times[i], &self.profiles[i], &self.observables[i]))
    }
}
