//! Physical constants, field configuration and the derived frequencies every
//! other module works in.
//!
//! All energies are carried as angular frequencies (rad/s). Conversion to
//! joules (`× ħ`) and to thermal units (`÷ k_B T`) happens only when results
//! are reported.
//!
//! The ²⁹Si gyromagnetic ratio is physically negative. It is stored here as a
//! magnitude, so ²⁹Si Larmor frequencies are positive and a spin-down ²⁹Si
//! nucleus is the lower-energy state, exactly like ³¹P.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio `b_x / b_z` at or below which a drive counts as weak.
pub const DEFAULT_WEAK_THRESHOLD: f64 = 1e-2;

/// `α_n` at or above which first-order small-rotation theory is considered degraded.
pub const PERTURBATION_WARN_LEVEL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Boltzmann constant, J/K.
    pub k_boltzmann: f64,
    /// Vacuum permeability, T·m/A.
    pub mu0: f64,
    /// Donor-electron gyromagnetic ratio, rad/s/T.
    pub gamma_e: f64,
    /// ³¹P nuclear gyromagnetic ratio, rad/s/T.
    pub gamma_p: f64,
    /// ²⁹Si nuclear gyromagnetic ratio magnitude, rad/s/T.
    pub gamma_si: f64,
    /// Silicon cubic lattice constant, nm.
    pub lattice_constant: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: 1.054_571_817e-34,
            k_boltzmann: 1.380_649e-23,
            mu0: 1.256_637_062_12e-6,
            // Si:P donor electron, g ≈ 1.9985.
            gamma_e: 2.0 * PI * 27.97e9,
            gamma_p: 2.0 * PI * 17.235e6,
            gamma_si: 2.0 * PI * 8.465e6,
            lattice_constant: 0.5431,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("hbar", self.hbar),
            ("k_boltzmann", self.k_boltzmann),
            ("mu0", self.mu0),
            ("gamma_e", self.gamma_e),
            ("gamma_p", self.gamma_p),
            ("gamma_si", self.gamma_si),
            ("lattice_constant", self.lattice_constant),
        ];
        for (key, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{key} must be positive and finite, got {value}")));
            }
        }
        if !(self.gamma_e > self.gamma_p && self.gamma_p > self.gamma_si) {
            return Err(Error::Config(format!(
                "gyromagnetic ratios must satisfy gamma_e > gamma_p > gamma_si, got {} > {} > {}",
                self.gamma_e, self.gamma_p, self.gamma_si
            )));
        }
        Ok(())
    }

    /// Energy in joules of an angular frequency.
    pub fn joules(&self, omega: f64) -> f64 {
        self.hbar * omega
    }

    /// Angular frequency of an energy in joules.
    pub fn angular_frequency(&self, joules: f64) -> f64 {
        joules / self.hbar
    }

    /// `ħω / (k_B T)`.
    pub fn in_kt(&self, omega: f64, temperature: f64) -> f64 {
        self.hbar * omega / (self.k_boltzmann * temperature)
    }

    /// Thermal energy `k_B T` in joules.
    pub fn kt(&self, temperature: f64) -> f64 {
        self.k_boltzmann * temperature
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Weak,
    Strong,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Weak => "weak",
            Regime::Strong => "strong",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Static field along Z, T.
    pub b_z: f64,
    /// AC drive amplitude along X, T.
    pub b_x: f64,
    /// Drive angular frequency, rad/s. `None` drives at the bare ³¹P Larmor frequency.
    pub omega_d: Option<f64>,
    /// Bath temperature, K.
    pub temperature: f64,
    pub weak_threshold: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            b_z: 1.0,
            b_x: 0.1,
            omega_d: None,
            temperature: 0.25,
            weak_threshold: DEFAULT_WEAK_THRESHOLD,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_z.is_finite() && self.b_z > 0.0) {
            return Err(Error::Config(format!("b_z must be > 0, got {}", self.b_z)));
        }
        if !(self.b_x.is_finite() && self.b_x >= 0.0) {
            return Err(Error::Config(format!("b_x must be >= 0, got {}", self.b_x)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.weak_threshold.is_finite() && self.weak_threshold > 0.0) {
            return Err(Error::Config(format!("weak_threshold must be > 0, got {}", self.weak_threshold)));
        }
        if let Some(w) = self.omega_d {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("omega_d must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn regime(&self) -> Regime {
        if self.b_x / self.b_z <= self.weak_threshold {
            Regime::Weak
        } else {
            Regime::Strong
        }
    }

    /// Fails with a regime error naming both field values unless the drive is in `required`.
    pub fn require_regime(&self, required: Regime, operation: &'static str) -> Result<()> {
        let actual = self.regime();
        if actual == required {
            Ok(())
        } else {
            Err(Error::Regime {
                operation,
                required: required.as_str(),
                actual: actual.as_str(),
                b_x: self.b_x,
                b_z: self.b_z,
                threshold: self.weak_threshold,
            })
        }
    }
}

/// Larmor (or Rabi) angular frequency `γ·b`.
pub fn larmor(gamma: f64, b: f64) -> f64 {
    debug_assert!(b >= 0.0);
    gamma * b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedFrequencies {
    /// Electron Larmor frequency Ω_e.
    pub omega_e: f64,
    /// ³¹P Larmor frequency ω_P.
    pub omega_p: f64,
    /// ²⁹Si Larmor frequency ω_n.
    pub omega_si: f64,
    pub omega_x_e: f64,
    pub omega_x_p: f64,
    pub omega_x_si: f64,
    /// Δ = Ω_e − ω_P − ω_n.
    pub delta: f64,
    /// Drive angular frequency actually used.
    pub omega_d: f64,
}

pub fn derive_frequencies(constants: &PhysicalConstants, fields: &FieldConfig) -> Result<DerivedFrequencies> {
    constants.validate()?;
    fields.validate()?;
    let omega_e = larmor(constants.gamma_e, fields.b_z);
    let omega_p = larmor(constants.gamma_p, fields.b_z);
    let omega_si = larmor(constants.gamma_si, fields.b_z);
    let delta = omega_e - omega_p - omega_si;
    if delta <= 0.0 {
        return Err(Error::Config(format!("detuning delta must be positive, got {delta} rad/s")));
    }
    Ok(DerivedFrequencies {
        omega_e,
        omega_p,
        omega_si,
        omega_x_e: larmor(constants.gamma_e, fields.b_x),
        omega_x_p: larmor(constants.gamma_p, fields.b_x),
        omega_x_si: larmor(constants.gamma_si, fields.b_x),
        delta,
        omega_d: fields.omega_d.unwrap_or(omega_p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationParameter {
    pub value: f64,
    /// Set when `value ≥ 0.1`.
    pub degraded: bool,
}

/// `α_n = a_n / Δ`.
///
/// Panics if `delta` is not positive.
pub fn perturbation_parameter(a_n: f64, delta: f64) -> PerturbationParameter {
    assert!(delta > 0.0, "perturbation_parameter: delta must be positive, got {delta}");
    let value = a_n / delta;
    let degraded = value.abs() >= PERTURBATION_WARN_LEVEL;
    if degraded {
        log::warn!("alpha = {value:.3e} >= {PERTURBATION_WARN_LEVEL}: small-rotation expansion is degrading");
    }
    PerturbationParameter { value, degraded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MHZ: f64 = 2.0 * PI * 1e6;
    const GHZ: f64 = 2.0 * PI * 1e9;

    #[test]
    fn larmor_examples() {
        let c = PhysicalConstants::default();
        let omega_e = larmor(c.gamma_e, 1.0);
        assert!((omega_e / GHZ - 28.0).abs() < 0.1);
        assert_eq!(larmor(c.gamma_p, 0.0), 0.0);
        assert_relative_eq!(larmor(c.gamma_p, 1.0), 17.235 * MHZ, max_relative = 1e-12);
    }

    #[test]
    fn derived_frequencies_defaults() {
        let c = PhysicalConstants::default();
        let f = derive_frequencies(&c, &FieldConfig::default()).unwrap();
        assert!((f.delta / GHZ - 28.0).abs() < 0.1, "delta/2pi = {}", f.delta / GHZ);
        assert_eq!(f.delta, f.omega_e - f.omega_p - f.omega_si);
        assert_eq!(f.omega_d, f.omega_p);
        assert_relative_eq!(f.omega_x_e / f.omega_e, 0.1, max_relative = 1e-14);
        assert_relative_eq!(f.omega_x_p / f.omega_p, 0.1, max_relative = 1e-14);
    }

    #[test]
    fn zero_drive_and_field_doubling() {
        let c = PhysicalConstants::default();
        let f0 = FieldConfig { b_x: 0.0, ..FieldConfig::default() };
        let d1 = derive_frequencies(&c, &f0).unwrap();
        assert_eq!((d1.omega_x_e, d1.omega_x_p, d1.omega_x_si), (0.0, 0.0, 0.0));
        let d2 = derive_frequencies(&c, &FieldConfig { b_z: 2.0, ..f0 }).unwrap();
        assert_eq!(d2.delta, 2.0 * d1.delta);
    }

    #[test]
    fn scale_covariance() {
        let c = PhysicalConstants::default();
        let base = derive_frequencies(&c, &FieldConfig::default()).unwrap();
        for s in [0.5, 3.0, 7.25] {
            let f = FieldConfig { b_z: s, ..FieldConfig::default() };
            let d = derive_frequencies(&c, &f).unwrap();
            assert_eq!(d.omega_e, c.gamma_e * s);
            assert_relative_eq!(d.omega_e, s * base.omega_e, max_relative = 1e-15);
            assert_relative_eq!(d.omega_p, s * base.omega_p, max_relative = 1e-15);
            assert_relative_eq!(d.omega_si, s * base.omega_si, max_relative = 1e-15);
        }
    }

    #[test]
    fn perturbation_examples() {
        let p = perturbation_parameter(117.0 * MHZ, 28.0 * GHZ);
        assert_relative_eq!(p.value, 4.18e-3, max_relative = 1e-2);
        assert!(!p.degraded);
        assert_eq!(perturbation_parameter(0.0, 1.0).value, 0.0);
        let p = perturbation_parameter(10.0 * MHZ, 28.0 * GHZ);
        assert_relative_eq!(p.value, 3.57e-4, max_relative = 1e-2);
        assert!(!p.degraded);
        assert!(perturbation_parameter(0.2, 1.0).degraded);
    }

    #[test]
    #[should_panic]
    fn perturbation_rejects_nonpositive_delta() {
        perturbation_parameter(1.0, 0.0);
    }

    #[test]
    fn regime_classification() {
        let weak = FieldConfig { b_x: 1e-3, ..FieldConfig::default() };
        assert_eq!(weak.regime(), Regime::Weak);
        assert_eq!(FieldConfig::default().regime(), Regime::Strong);
        let err = weak.require_regime(Regime::Strong, "sweep-angle").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0.001") && msg.contains("b_z = 1"), "{msg}");
    }

    #[test]
    fn unit_round_trip() {
        let c = PhysicalConstants::default();
        for omega in [1.0, 2.0 * PI * 8.465e6, 1.7e11] {
            let back = c.angular_frequency(c.joules(omega));
            assert!(((back - omega) / omega).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let c = PhysicalConstants::default();
        assert!(derive_frequencies(&c, &FieldConfig { b_z: 0.0, ..FieldConfig::default() }).is_err());
        assert!(derive_frequencies(&c, &FieldConfig { temperature: 0.0, ..FieldConfig::default() }).is_err());
        let swapped = PhysicalConstants { gamma_p: 1.0, ..c };
        assert!(swapped.validate().is_err());
    }
}
