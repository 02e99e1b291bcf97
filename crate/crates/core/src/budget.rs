//! Thermal-budget arithmetic: weak-drive gate rate and the operation rate a
//! given cooling capacity can absorb.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::SweepResult;
use crate::model::{derive_frequencies, FieldConfig, PhysicalConstants, Regime};

/// π rotations per second in the weak regime, `Ω^x_P/π`.
pub fn weak_gate_rate(constants: &PhysicalConstants, fields: &FieldConfig) -> Result<f64> {
    fields.require_regime(Regime::Weak, "weak_gate_rate")?;
    let f = derive_frequencies(constants, fields)?;
    Ok(f.omega_x_p / std::f64::consts::PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingSpec {
    /// W at the operating temperature.
    pub capacity: f64,
    /// K
    pub temperature: f64,
}

impl CoolingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::Config(format!("capacity must be > 0 W, got {}", self.capacity)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0 K, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Upper bounds ignoring every other heat load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpsBudget {
    pub total: f64,
    pub per_qubit: f64,
}

pub fn max_ops_per_second(cooling: &CoolingSpec, per_gate: f64, qubit_count: u64) -> Result<OpsBudget> {
    cooling.validate()?;
    if !(per_gate.is_finite() && per_gate > 0.0) {
        return Err(Error::Config(format!("per-gate energy must be > 0 J, got {per_gate}")));
    }
    if qubit_count == 0 {
        return Err(Error::Config("qubit_count must be >= 1".into()));
    }
    let total = cooling.capacity / per_gate;
    Ok(OpsBudget { total, per_qubit: total / qubit_count as f64 })
}

/// Per-gate dissipation read off a sequence sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerGateEstimate {
    /// J, never negative.
    pub joules: f64,
    /// Mean `ΔE/kT` divided by length at the longest sequence.
    pub per_gate_over_kt: f64,
    pub sequence_length: f64,
    /// True when a cooling mean was clamped to zero.
    pub clamped: bool,
}

/// Average energy deposited per gate over the longest sequence in `rows`.
/// Cooling means clamp to zero, since budgets are worst-case.
pub fn per_gate_from_sequence(rows: &[SweepResult], constants: &PhysicalConstants, temperature: f64) -> Result<PerGateEstimate> {
    let last = rows
        .iter()
        .max_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value))
        .ok_or_else(|| Error::Config("sequence CSV has no rows".into()))?;
    if !(last.sweep_value >= 1.0) {
        return Err(Error::Config(format!("sequence length must be >= 1, got {}", last.sweep_value)));
    }
    let per_gate_over_kt = last.mean / last.sweep_value;
    let clamped = per_gate_over_kt < 0.0;
    if clamped {
        log::warn!("sequence mean {per_gate_over_kt:e} kT per gate is cooling; clamping to 0 for the budget");
    }
    Ok(PerGateEstimate {
        joules: per_gate_over_kt.max(0.0) * constants.kt(temperature),
        per_gate_over_kt,
        sequence_length: last.sweep_value,
        clamped,
    })
}

/// Budget for an estimate that may have been clamped to zero: zero
/// dissipation leaves the rate unbounded.
pub fn budget_for_estimate(cooling: &CoolingSpec, estimate: &PerGateEstimate, qubit_count: u64) -> Result<OpsBudget> {
    if estimate.joules == 0.0 {
        cooling.validate()?;
        return Ok(OpsBudget { total: f64::INFINITY, per_qubit: f64::INFINITY });
    }
    max_ops_per_second(cooling, estimate.joules, qubit_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn weak(b_x: f64) -> FieldConfig {
        FieldConfig { b_x, ..FieldConfig::default() }
    }

    #[test]
    fn gate_rate_at_one_millitesla() {
        let c = PhysicalConstants::default();
        let r = weak_gate_rate(&c, &weak(1e-3)).unwrap();
        assert!((5e3..=5e4).contains(&r), "{r}");
        assert_eq!(weak_gate_rate(&c, &weak(0.0)).unwrap(), 0.0);
        let r2 = weak_gate_rate(&c, &weak(2e-3)).unwrap();
        assert_relative_eq!(r2, 2.0 * r, max_relative = 1e-12);
        assert!(matches!(weak_gate_rate(&c, &FieldConfig::default()), Err(Error::Regime { .. })));
    }

    #[test]
    fn gate_time_is_continuous_across_regimes() {
        let c = PhysicalConstants::default();
        let f = FieldConfig::default();
        let edge = weak(f.b_z * f.weak_threshold);
        let rate = weak_gate_rate(&c, &edge).unwrap();
        let strong = derive_frequencies(&c, &FieldConfig { b_x: edge.b_x * (1.0 + 1e-9), ..edge }).unwrap();
        let t_strong = crate::evolution::gate_time(std::f64::consts::PI, strong.omega_x_p);
        assert_relative_eq!(1.0 / rate, t_strong, max_relative = 1e-8);
    }

    #[test]
    fn ops_arithmetic() {
        let cool = CoolingSpec { capacity: 1e-6, temperature: 0.25 };
        let b = max_ops_per_second(&cool, 1e-22, 1).unwrap();
        assert_relative_eq!(b.total, 1e16, max_relative = 1e-12);
        let b2 = max_ops_per_second(&cool, 1e-22, 2).unwrap();
        assert_relative_eq!(b2.per_qubit, b.per_qubit / 2.0, max_relative = 1e-12);
        for k in [0.5, 3.0, 10.0] {
            let c2 = CoolingSpec { capacity: cool.capacity * k, ..cool };
            assert_relative_eq!(max_ops_per_second(&c2, 1e-22, 1).unwrap().total, k * b.total, max_relative = 1e-12);
            assert_relative_eq!(max_ops_per_second(&cool, 1e-22 * k, 1).unwrap().total, b.total / k, max_relative = 1e-12);
        }
        assert!(max_ops_per_second(&cool, 0.0, 1).is_err());
        assert!(max_ops_per_second(&cool, -1.0, 1).is_err());
        assert!(max_ops_per_second(&cool, 1e-22, 0).is_err());
        assert!(max_ops_per_second(&CoolingSpec { capacity: 0.0, temperature: 0.25 }, 1e-22, 1).is_err());
    }

    fn row(len: f64, mean: f64) -> SweepResult {
        SweepResult {
            sweep_value: len,
            mean,
            min: mean,
            max: mean,
            variance: 0.0,
            n_configs: 1,
            n_states: 1,
            master_seed: 0,
            runtime_s: 0.0,
        }
    }

    #[test]
    fn per_gate_from_longest_sequence() {
        let c = PhysicalConstants::default();
        let e = per_gate_from_sequence(&[row(1.0, -1e-6), row(100.0, 2e-4)], &c, 0.25).unwrap();
        assert_relative_eq!(e.per_gate_over_kt, 2e-6, max_relative = 1e-12);
        assert_relative_eq!(e.joules, 2e-6 * c.kt(0.25), max_relative = 1e-12);
        assert!(!e.clamped);

        let cooling = per_gate_from_sequence(&[row(10.0, -1e-5)], &c, 0.25).unwrap();
        assert!(cooling.clamped);
        assert_eq!(cooling.joules, 0.0);
        let b = budget_for_estimate(&CoolingSpec { capacity: 1e-4, temperature: 0.25 }, &cooling, 10).unwrap();
        assert!(b.total.is_infinite());
        assert!(per_gate_from_sequence(&[], &c, 0.25).is_err());
    }
}
