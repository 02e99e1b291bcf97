//! Fermi-contact couplings of the donor electron to ²⁹Si nuclei.
//!
//! The electron density is modelled as an exponential envelope whose overall
//! normalization is calibrated so that the donor-site ³¹P coupling equals the
//! measured `a_P`. Si couplings are clamped to a configurable ceiling.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ImpurityPlacement, LatticeSite};
use crate::model::{DerivedFrequencies, PhysicalConstants};

/// Donor ³¹P hyperfine constant, 2π × 117 MHz.
pub const DEFAULT_A_P: f64 = 2.0 * PI * 117.0e6;
/// Ceiling applied to ²⁹Si couplings, 2π × 10 MHz.
pub const DEFAULT_COUPLING_CEILING: f64 = 2.0 * PI * 10.0e6;
pub const DEFAULT_BOHR_RADIUS: f64 = 2.5;

/// Unnormalized electron density shape, equal to 1 at the donor.
pub trait Envelope: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    /// Shape value at `position` (nm); must be positive and at most 1.
    fn shape(&self, position: [f64; 3]) -> f64;
}

/// `exp(−2r/a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicEnvelope {
    pub bohr_radius: f64,
}

impl Envelope for IsotropicEnvelope {
    fn name(&self) -> &'static str {
        "isotropic"
    }

    fn shape(&self, p: [f64; 3]) -> f64 {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        (-2.0 * r / self.bohr_radius).exp()
    }
}

/// `exp(−2√((x²+y²)/a² + z²/b²))` with transverse radius `a` and longitudinal `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisotropicEnvelope {
    pub transverse: f64,
    pub longitudinal: f64,
}

impl Envelope for AnisotropicEnvelope {
    fn name(&self) -> &'static str {
        "anisotropic"
    }

    fn shape(&self, p: [f64; 3]) -> f64 {
        let rho2 = (p[0] * p[0] + p[1] * p[1]) / (self.transverse * self.transverse);
        let z2 = p[2] * p[2] / (self.longitudinal * self.longitudinal);
        (-2.0 * (rho2 + z2).sqrt()).exp()
    }
}

pub const ENVELOPES: &[&str] = &["isotropic", "anisotropic"];

/// Builds an envelope by registered name. The longitudinal radius is only
/// read by `anisotropic`.
pub fn envelope_by_name(name: &str, bohr_radius_a: f64, bohr_radius_b: f64) -> Result<Arc<dyn Envelope>> {
    for (key, r) in [("bohr_radius_a", bohr_radius_a), ("bohr_radius_b", bohr_radius_b)] {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("{key} must be > 0, got {r}")));
        }
    }
    match name {
        "isotropic" => Ok(Arc::new(IsotropicEnvelope { bohr_radius: bohr_radius_a })),
        "anisotropic" => Ok(Arc::new(AnisotropicEnvelope {
            transverse: bohr_radius_a,
            longitudinal: bohr_radius_b,
        })),
        other => Err(Error::UnknownStrategy {
            family: "wavefunction",
            name: other.to_string(),
            available: ENVELOPES.join(", "),
        }),
    }
}

/// Contact-coupling prefactor `(2ħμ₀/3)·γ_e·γ_n` for a density in nm⁻³, giving rad/s.
fn contact_prefactor(constants: &PhysicalConstants, gamma_n: f64) -> f64 {
    2.0 * constants.hbar * constants.mu0 / 3.0 * constants.gamma_e * gamma_n * 1e27
}

/// An envelope with its density normalization fixed. Only this type exposes
/// `density`, so an uncalibrated density cannot be evaluated.
#[derive(Debug, Clone)]
pub struct CalibratedModel {
    envelope: Arc<dyn Envelope>,
    /// nm⁻³
    normalization: f64,
    pub coupling_ceiling: f64,
}

impl CalibratedModel {
    /// Chooses the normalization so that the ³¹P coupling at the donor equals `a_p`.
    pub fn calibrate(
        constants: &PhysicalConstants,
        envelope: Arc<dyn Envelope>,
        a_p: f64,
        coupling_ceiling: f64,
    ) -> Result<Self> {
        if !(a_p > 0.0 && a_p.is_finite()) {
            return Err(Error::Config(format!("a_p must be > 0, got {a_p}")));
        }
        if !(coupling_ceiling > 0.0) {
            return Err(Error::Config(format!("coupling_ceiling must be > 0, got {coupling_ceiling}")));
        }
        let peak = envelope.shape([0.0; 3]);
        let normalization = a_p / (contact_prefactor(constants, constants.gamma_p) * peak);
        Ok(Self { envelope, normalization, coupling_ceiling })
    }

    pub fn envelope(&self) -> &dyn Envelope {
        self.envelope.as_ref()
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// `|Ψ(R)|²` in nm⁻³.
    pub fn density(&self, position: [f64; 3]) -> f64 {
        self.normalization * self.envelope.shape(position)
    }

    /// Unclamped contact coupling for a nucleus of gyromagnetic ratio `gamma_n`.
    pub fn contact_coupling(&self, constants: &PhysicalConstants, gamma_n: f64, position: [f64; 3]) -> f64 {
        contact_prefactor(constants, gamma_n) * self.density(position)
    }

    /// ²⁹Si coupling at a site, clamped to the ceiling.
    pub fn coupling(&self, constants: &PhysicalConstants, site: &LatticeSite) -> f64 {
        self.contact_coupling(constants, constants.gamma_si, site.position)
            .min(self.coupling_ceiling)
    }

    /// Donor ³¹P coupling (never clamped).
    pub fn donor_coupling(&self, constants: &PhysicalConstants) -> f64 {
        self.contact_coupling(constants, constants.gamma_p, [0.0; 3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledSpin {
    pub site: LatticeSite,
    /// rad/s
    pub a_n: f64,
    /// rad/s
    pub omega_n: f64,
}

/// One disorder realization with its derived frequencies.
///
/// Basis slots: 0 electron, 1 donor ³¹P, 2.. ²⁹Si in descending coupling order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinBathConfig {
    pub coupled_spins: Vec<CoupledSpin>,
    pub a_p: f64,
    pub frequencies: DerivedFrequencies,
}

pub const ELECTRON_SLOT: usize = 0;
pub const DONOR_SLOT: usize = 1;
pub const FIRST_BATH_SLOT: usize = 2;
/// Basis indices are `u64` bit patterns.
pub const MAX_SLOTS: usize = 64;

impl SpinBathConfig {
    pub fn n_bath(&self) -> usize {
        self.coupled_spins.len()
    }

    pub fn n_slots(&self) -> usize {
        self.n_bath() + 2
    }

    /// Full Hilbert-space dimension `2^(N+2)`; panics beyond `MAX_SLOTS`.
    pub fn dim(&self) -> u64 {
        assert!(self.n_slots() < MAX_SLOTS, "bath too large for a u64 basis index");
        1u64 << self.n_slots()
    }

    /// Hyperfine coupling of a nuclear slot (donor or Si).
    pub fn coupling(&self, slot: usize) -> f64 {
        match slot {
            DONOR_SLOT => self.a_p,
            s if s >= FIRST_BATH_SLOT => self.coupled_spins[s - FIRST_BATH_SLOT].a_n,
            _ => panic!("slot {slot} is not nuclear"),
        }
    }

    /// Larmor frequency of any slot.
    pub fn larmor(&self, slot: usize) -> f64 {
        match slot {
            ELECTRON_SLOT => self.frequencies.omega_e,
            DONOR_SLOT => self.frequencies.omega_p,
            s => self.coupled_spins[s - FIRST_BATH_SLOT].omega_n,
        }
    }

    /// Drive Rabi amplitude `Ω^x` of any slot.
    pub fn drive_amplitude(&self, slot: usize) -> f64 {
        match slot {
            ELECTRON_SLOT => self.frequencies.omega_x_e,
            DONOR_SLOT => self.frequencies.omega_x_p,
            _ => self.frequencies.omega_x_si,
        }
    }

    /// Largest `a_n/Δ` over donor and bath.
    pub fn max_alpha(&self) -> f64 {
        (DONOR_SLOT..self.n_slots())
            .map(|s| self.coupling(s) / self.frequencies.delta)
            .fold(0.0, f64::max)
    }

    /// CSV dump `x_nm,y_nm,z_nm,a_n_MHz` in slot order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_nm", "y_nm", "z_nm", "a_n_MHz"])?;
        for s in &self.coupled_spins {
            let p = s.site.position;
            w.write_record([
                format!("{:.6}", p[0]),
                format!("{:.6}", p[1]),
                format!("{:.6}", p[2]),
                format!("{:.9}", s.a_n / (2.0 * PI * 1e6)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Couples every impurity of a placement, sorted by descending `a_n` with
/// ties broken by position.
pub fn build_bath(
    constants: &PhysicalConstants,
    frequencies: &DerivedFrequencies,
    model: &CalibratedModel,
    placement: &ImpurityPlacement,
) -> SpinBathConfig {
    let mut coupled_spins: Vec<CoupledSpin> = placement
        .sites
        .iter()
        .map(|site| CoupledSpin {
            site: *site,
            a_n: model.coupling(constants, site),
            omega_n: frequencies.omega_si,
        })
        .collect();
    coupled_spins.sort_by(|a, b| {
        b.a_n
            .total_cmp(&a.a_n)
            .then_with(|| a.site.position.partial_cmp(&b.site.position).expect("finite positions"))
    });
    SpinBathConfig {
        coupled_spins,
        a_p: model.donor_coupling(constants),
        frequencies: *frequencies,
    }
}

/// A bath with explicit couplings, mainly for tests and oracle checks.
pub fn bath_from_couplings(frequencies: &DerivedFrequencies, a_p: f64, couplings: &[f64]) -> SpinBathConfig {
    let mut coupled_spins: Vec<CoupledSpin> = couplings
        .iter()
        .map(|&a_n| CoupledSpin {
            site: LatticeSite { position: [0.0; 3] },
            a_n,
            omega_n: frequencies.omega_si,
        })
        .collect();
    coupled_spins.sort_by(|a, b| b.a_n.total_cmp(&a.a_n));
    SpinBathConfig { coupled_spins, a_p, frequencies: *frequencies }
}
