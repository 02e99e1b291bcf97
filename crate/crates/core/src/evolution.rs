//! Gate evolution in the rotated, ZZ-interaction frame and the bath-energy readout.

use std::fmt::Debug;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonians::{
    apply_small_rotation, build_weak_effective, phase_integral, si_zeeman_energy, FrameConvention, OperatorMatrix,
    PhasedSparseHamiltonian, StrongFrame,
};
use crate::hyperfine::{SpinBathConfig, DONOR_SLOT, ELECTRON_SLOT, FIRST_BATH_SLOT};
use crate::model::PhysicalConstants;
use crate::sparse::{Accumulator, SparseVector};

/// Relative slack on the norm bounds checked after every gate.
const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockPolicy {
    /// One global clock; gaps advance the drive phase.
    Continuous,
    /// Every gate integrates from t = 0; gaps are no-ops.
    Reset,
}

impl FromStr for ClockPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "reset" => Ok(Self::Reset),
            other => Err(Error::UnknownStrategy {
                family: "clock policy",
                name: other.to_string(),
                available: "continuous, reset".into(),
            }),
        }
    }
}

impl ClockPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Continuous => "continuous",
            Self::Reset => "reset",
        }
    }
}

/// Gate time `φ/Ω^x_P`.
pub fn gate_time(angle: f64, omega_x_p: f64) -> f64 {
    if angle == 0.0 {
        0.0
    } else {
        angle / omega_x_p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatePlan {
    pub angles: Vec<f64>,
    /// Free evolution between gates, s.
    pub gap: f64,
    pub clock_policy: ClockPolicy,
}

impl GatePlan {
    /// Gap `τ = π/Ω^x_P`.
    pub fn with_pi_gaps(angles: Vec<f64>, omega_x_p: f64, clock_policy: ClockPolicy) -> Self {
        Self { angles, gap: std::f64::consts::PI / omega_x_p, clock_policy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Rotated by `U_r` and moved to the interaction picture of `H₀ + H_ZZ`.
    InteractionZz,
}

/// Frame state stored as a unit vector plus the log of its true squared norm,
/// since the truncated propagator is not norm preserving.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub amplitudes: SparseVector,
    pub log_norm_sqr: f64,
    /// Elapsed time, s.
    pub clock: f64,
    /// Σ ln(1 + w²) over applied gates; `log_norm_sqr` never exceeds it.
    pub log_norm_budget: f64,
    /// Σ w² over applied gates.
    pub w_sqr_sum: f64,
    pub gates: usize,
    pub frame: Frame,
}

impl SystemState {
    pub fn new(amplitudes: SparseVector) -> Self {
        Self {
            amplitudes,
            log_norm_sqr: 0.0,
            clock: 0.0,
            log_norm_budget: 0.0,
            w_sqr_sum: 0.0,
            gates: 0,
            frame: Frame::InteractionZz,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.log_norm_sqr.exp()
    }
}

/// Index of `|↑⟩_e |⇓⟩_P |b⟩` with bath bit `i` in slot `2 + i`.
pub fn product_state_index(bath_state: u64) -> u64 {
    (1u64 << ELECTRON_SLOT) | (bath_state << FIRST_BATH_SLOT)
}

/// `U_r† |↑⟩_e |⇓⟩_P |b⟩`.
pub fn prepare_initial(bath: &SpinBathConfig, convention: &dyn FrameConvention, bath_state: u64) -> Result<SystemState> {
    let n = bath.n_bath();
    if n < 64 && bath_state >> n != 0 {
        return Err(Error::Config(format!("bath state {bath_state} out of range for {n} spins")));
    }
    let basis = SparseVector::basis(product_state_index(bath_state));
    debug_assert!(!crate::hamiltonians::is_up(basis.entries()[0].0, DONOR_SLOT));
    let mut v = apply_small_rotation(bath, convention, &basis, true);
    let norm = v.norm_sqr();
    v.scale(1.0 / norm.sqrt());
    Ok(SystemState::new(v))
}

/// Result of one propagation step.
#[derive(Debug, Clone)]
pub struct Step {
    pub vector: SparseVector,
    /// Upper bound on `‖W‖`; zero for norm-preserving propagators.
    pub w_norm: f64,
}

/// How a gate interval of the frame Hamiltonian is propagated.
pub trait Propagation: Send + Sync + Debug {
    fn name(&self) -> &'static str;
    fn propagate(&self, frame: &StrongFrame, v: &SparseVector, t0: f64, t1: f64) -> Result<Step>;
}

/// First-order Dyson: `U = 1 − i∫V'`, not re-unitarized.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dyson1;

impl Propagation for Dyson1 {
    fn name(&self) -> &'static str {
        "dyson1"
    }

    fn propagate(&self, frame: &StrongFrame, v: &SparseVector, t0: f64, t1: f64) -> Result<Step> {
        Ok(Step { vector: frame.apply_dyson1(v, t0, t1), w_norm: frame.w_norm_bound(t0, t1) })
    }
}

/// Time-stepped integration of the same frame Hamiltonian (commutator-free
/// fourth-order Magnus steps), for small systems.
#[derive(Debug, Clone, Copy)]
pub struct ExactFrame {
    /// Steps per period of the fastest phase rate.
    pub steps_per_period: f64,
}

impl Default for ExactFrame {
    fn default() -> Self {
        Self { steps_per_period: 50.0 }
    }
}

pub const MAX_EXACT_FRAME_SLOTS: usize = 8;

impl Propagation for ExactFrame {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn propagate(&self, frame: &StrongFrame, v: &SparseVector, t0: f64, t1: f64) -> Result<Step> {
        if frame.n_slots() > MAX_EXACT_FRAME_SLOTS {
            return Err(Error::Cap(format!(
                "exact propagation is limited to {MAX_EXACT_FRAME_SLOTS} spins, got {}",
                frame.n_slots()
            )));
        }
        let ham = frame.materialize()?;
        let dim = ham.dim as usize;
        let mut psi = v.to_dense(dim);
        if t1 > t0 && !ham.is_empty() {
            let fastest = ham.entries.iter().map(|e| e.phase_rate.abs()).fold(0.0, f64::max);
            let period_steps = ((t1 - t0) * fastest / (2.0 * std::f64::consts::PI) * self.steps_per_period).ceil();
            let amp_steps = ((t1 - t0) * ham.entries.iter().map(|e| e.amplitude.norm()).sum::<f64>() / 0.05).ceil();
            let steps = period_steps.max(amp_steps).max(1.0) as usize;
            let h = (t1 - t0) / steps as f64;
            for k in 0..steps {
                cf4_step(&mut psi, h, t0 + k as f64 * h, |ts, x, out| phased_apply(&ham, ts, x, out));
            }
        }
        Ok(Step { vector: SparseVector::from_dense(&psi), w_norm: 0.0 })
    }
}

fn phased_apply(ham: &PhasedSparseHamiltonian, ts: &[(f64, f64); 2], x: &[Complex64], out: &mut [Complex64]) {
    out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
    for e in &ham.entries {
        let phasor: Complex64 = ts.iter().map(|&(t, w)| Complex64::from_polar(w, e.phase_rate * t)).sum();
        out[e.row as usize] += e.amplitude * phasor * x[e.col as usize];
    }
}

const CF4_A1: f64 = (3.0 - 2.0 * 1.732_050_807_568_877_2) / 12.0;
const CF4_A2: f64 = (3.0 + 2.0 * 1.732_050_807_568_877_2) / 12.0;
const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // √3/6

/// One commutator-free fourth-order Magnus step for `i ψ' = H(t) ψ`, with each
/// exponential applied by Taylor series and the result renormalized.
///
/// `apply_mix(ts, x, out)` must write `Σ_k w_k H(t_k) x` for the two
/// `(t_k, w_k)` pairs in `ts`.
pub(crate) fn cf4_step(
    psi: &mut [Complex64],
    h: f64,
    t: f64,
    apply_mix: impl Fn(&[(f64, f64); 2], &[Complex64], &mut [Complex64]),
) {
    let ta = t + (0.5 - GAUSS_OFFSET) * h;
    let tb = t + (0.5 + GAUSS_OFFSET) * h;
    let norm0: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    for (wa, wb) in [(CF4_A1, CF4_A2), (CF4_A2, CF4_A1)] {
        let ts = [(ta, wa), (tb, wb)];
        taylor_exp_apply(psi, h, |x, out| apply_mix(&ts, x, out));
    }
    let norm1: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    let fix = (norm0 / norm1).sqrt();
    psi.iter_mut().for_each(|c| *c *= fix);
}

/// `ψ ← exp(−i h M) ψ` by Taylor series until terms drop below 10⁻¹⁷ relative.
pub(crate) fn taylor_exp_apply(psi: &mut [Complex64], h: f64, apply_m: impl Fn(&[Complex64], &mut [Complex64])) {
    let scale: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut term = psi.to_vec();
    let mut next = vec![Complex64::new(0.0, 0.0); psi.len()];
    for order in 1..40 {
        apply_m(&term, &mut next);
        let f = Complex64::new(0.0, -h / order as f64);
        let mut size = 0.0;
        for (t, n) in term.iter_mut().zip(&next) {
            *t = *n * f;
            size += t.norm_sqr();
        }
        for (p, t) in psi.iter_mut().zip(&term) {
            *p += *t;
        }
        if size.sqrt() <= 1e-17 * scale {
            break;
        }
    }
}

pub const PROPAGATIONS: &[&str] = &["dyson1", "exact"];

pub fn propagation_by_name(name: &str) -> Result<Arc<dyn Propagation>> {
    match name {
        "dyson1" => Ok(Arc::new(Dyson1)),
        "exact" => Ok(Arc::new(ExactFrame::default())),
        other => Err(Error::UnknownStrategy {
            family: "propagation",
            name: other.to_string(),
            available: PROPAGATIONS.join(", "),
        }),
    }
}

/// Record of one applied gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateRecord {
    pub t0: f64,
    pub t1: f64,
    pub w_norm: f64,
    /// ln of the squared-norm growth factor of this gate.
    pub log_growth: f64,
}

/// Applies one X gate of `angle` and advances the clock.
///
/// Fails with a numerical-contract error if the norm change falls outside
/// `[1, 1 + w²]`, which bounds `U†U = 1 + W²` for Hermitian `W`.
pub fn apply_gate(
    state: &mut SystemState,
    frame: &StrongFrame,
    propagation: &dyn Propagation,
    omega_x_p: f64,
    angle: f64,
    policy: ClockPolicy,
) -> Result<GateRecord> {
    let duration = gate_time(angle, omega_x_p);
    let t0 = match policy {
        ClockPolicy::Continuous => state.clock,
        ClockPolicy::Reset => 0.0,
    };
    let t1 = t0 + duration;
    if duration == 0.0 {
        return Ok(GateRecord { t0, t1, w_norm: 0.0, log_growth: 0.0 });
    }
    let step = propagation.propagate(frame, &state.amplitudes, t0, t1)?;
    let growth = step.vector.norm_sqr();
    let log_growth = growth.ln();
    let w2 = step.w_norm * step.w_norm;
    let upper = w2.ln_1p() + NORM_TOLERANCE;
    if !(log_growth.is_finite() && log_growth >= -NORM_TOLERANCE && log_growth <= upper) {
        return Err(Error::Numerical(format!(
            "gate norm growth {growth} outside [1, 1 + w²] with w = {} ({} propagation)",
            step.w_norm,
            propagation.name()
        )));
    }
    let mut v = step.vector;
    v.scale(1.0 / growth.sqrt());
    state.amplitudes = v;
    state.log_norm_sqr += log_growth;
    state.log_norm_budget += w2.ln_1p();
    state.w_sqr_sum += w2;
    state.clock += duration;
    state.gates += 1;
    Ok(GateRecord { t0, t1, w_norm: step.w_norm, log_growth })
}

/// Free evolution: amplitudes are constant in this frame; under the
/// continuous policy the clock advances.
pub fn apply_free_gap(state: &mut SystemState, gap: f64, policy: ClockPolicy) {
    if policy == ClockPolicy::Continuous {
        state.clock += gap;
    }
}

/// Applies every gate of a plan with gaps in between (none after the last).
/// `after_gate` sees the state after each gate.
pub fn run_plan(
    state: &mut SystemState,
    frame: &StrongFrame,
    propagation: &dyn Propagation,
    omega_x_p: f64,
    plan: &GatePlan,
    mut after_gate: impl FnMut(usize, &SystemState, &GateRecord) -> Result<()>,
) -> Result<()> {
    for (i, &angle) in plan.angles.iter().enumerate() {
        if i > 0 {
            apply_free_gap(state, plan.gap, plan.clock_policy);
        }
        let record = apply_gate(state, frame, propagation, omega_x_p, angle, plan.clock_policy)?;
        after_gate(i, state, &record)?;
    }
    Ok(())
}

/// Converts an evolved state into the reported bath energy `⟨H_Si⟩`.
pub trait Readout: Send + Sync + Debug {
    fn name(&self) -> &'static str;
    /// rad/s
    fn bath_energy(&self, bath: &SpinBathConfig, state: &SystemState) -> f64;
}

/// `⟨ψ|H_Si|ψ⟩` of the unnormalized state produced by the truncated propagator.
#[derive(Debug, Clone, Copy, Default)]
pub struct RawReadout;

impl Readout for RawReadout {
    fn name(&self) -> &'static str {
        "raw"
    }

    fn bath_energy(&self, bath: &SpinBathConfig, state: &SystemState) -> f64 {
        state.norm_sqr() * state.amplitudes.diagonal_expectation(|x| si_zeeman_energy(bath, x))
    }
}

/// `⟨ψ|H_Si|ψ⟩ / ⟨ψ|ψ⟩`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedReadout;

impl Readout for NormalizedReadout {
    fn name(&self) -> &'static str {
        "normalized"
    }

    fn bath_energy(&self, bath: &SpinBathConfig, state: &SystemState) -> f64 {
        state.amplitudes.diagonal_expectation(|x| si_zeeman_energy(bath, x))
    }
}

pub const READOUTS: &[&str] = &["raw", "normalized"];

pub fn readout_by_name(name: &str) -> Result<Arc<dyn Readout>> {
    match name {
        "raw" => Ok(Arc::new(RawReadout)),
        "normalized" => Ok(Arc::new(NormalizedReadout)),
        other => Err(Error::UnknownStrategy {
            family: "readout",
            name: other.to_string(),
            available: READOUTS.join(", "),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyChange {
    pub rad_per_s: f64,
    pub over_kt: f64,
}

impl EnergyChange {
    pub fn new(constants: &PhysicalConstants, temperature: f64, rad_per_s: f64) -> Self {
        Self { rad_per_s, over_kt: constants.in_kt(rad_per_s, temperature) }
    }
}

/// `ΔE_Si` between a prepared state and a state evolved from it. Both live
/// in the interaction frame, where `H_Si` commutes with the frame rotations.
pub fn zeeman_energy(
    readout: &dyn Readout,
    bath: &SpinBathConfig,
    prepared: &SystemState,
    evolved: &SystemState,
    constants: &PhysicalConstants,
    temperature: f64,
) -> Result<EnergyChange> {
    if prepared.frame != evolved.frame {
        return Err(Error::Numerical("zeeman_energy: states live in different frames".into()));
    }
    let de = readout.bath_energy(bath, evolved) - readout.bath_energy(bath, prepared);
    Ok(EnergyChange::new(constants, temperature, de))
}

/// Exact evolution under the weak-drive RWA Hamiltonian for a gate of `angle`.
pub fn apply_weak_gate(bath: &SpinBathConfig, state: &SystemState, angle: f64) -> Result<SystemState> {
    let v = build_weak_effective(bath)?;
    let t = gate_time(angle, bath.frequencies.omega_x_p);
    let u: OperatorMatrix = (v * Complex64::new(0.0, -t)).exp();
    let dim = u.nrows();
    let psi = nalgebra::DVector::from_vec(state.amplitudes.to_dense(dim));
    let out = u * psi;
    let mut next = state.clone();
    next.amplitudes = SparseVector::from_dense(out.as_slice());
    next.clock += t;
    next.gates += 1;
    Ok(next)
}

/// Per-gate trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub gate_index: usize,
    pub clock_s: f64,
    pub de_over_kt: f64,
    pub w_norm_accum: f64,
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gate_index", "clock_s", "dE_over_kT", "w_norm_accum"])?;
    for r in rows {
        w.write_record([
            r.gate_index.to_string(),
            format!("{:e}", r.clock_s),
            format!("{:e}", r.de_over_kt),
            format!("{:e}", r.w_norm_accum),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Integrated propagator of a materialized phased Hamiltonian.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub matrix: OperatorMatrix,
    pub t0: f64,
    pub t1: f64,
    /// ∞-norm of `W`, an upper bound on its spectral norm.
    pub w_norm: f64,
    pub kind: &'static str,
}

/// `1 − i∫_{t0}^{t1} V'` assembled entrywise.
pub fn integrate_phased(ham: &PhasedSparseHamiltonian, t0: f64, t1: f64) -> Propagator {
    assert!(t1 >= t0, "integrate_phased: t1 < t0");
    let dim = ham.dim as usize;
    let mut w = OperatorMatrix::zeros(dim, dim);
    for e in &ham.entries {
        w[(e.row as usize, e.col as usize)] += e.amplitude * phase_integral(e.phase_rate, t0, t1);
    }
    let w_norm = (0..dim)
        .map(|i| w.row(i).iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let matrix = OperatorMatrix::identity(dim, dim) - w * Complex64::new(0.0, 1.0);
    Propagator { matrix, t0, t1, w_norm, kind: "dyson1" }
}

/// Applies a dense operator to a sparse vector.
pub fn apply_dense(m: &OperatorMatrix, v: &SparseVector) -> SparseVector {
    let mut acc = Accumulator::with_capacity(m.nrows());
    for &(j, c) in v.entries() {
        for i in 0..m.nrows() {
            let mij = m[(i, j as usize)];
            if mij != Complex64::new(0.0, 0.0) {
                acc.add(i as u64, mij * c);
            }
        }
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{build_si_zeeman, build_strong_phased, convention_by_name, max_abs, SpinHalfConvention};
    use crate::hyperfine::{bath_from_couplings, DEFAULT_A_P};
    use crate::model::{derive_frequencies, FieldConfig};
    use std::f64::consts::PI;

    const MHZ: f64 = 2.0 * PI * 1e6;

    fn bath_with(fields: FieldConfig, couplings_mhz: &[f64]) -> SpinBathConfig {
        let f = derive_frequencies(&PhysicalConstants::default(), &fields).unwrap();
        let a: Vec<f64> = couplings_mhz.iter().map(|x| x * MHZ).collect();
        bath_from_couplings(&f, DEFAULT_A_P, &a)
    }

    fn bath(couplings_mhz: &[f64]) -> SpinBathConfig {
        bath_with(FieldConfig::default(), couplings_mhz)
    }

    fn frame(b: &SpinBathConfig) -> StrongFrame {
        StrongFrame::new(b, Arc::new(SpinHalfConvention))
    }

    #[test]
    fn prepared_state_is_normalized_rotation() {
        let b = bath(&[]);
        let s = prepare_initial(&b, &SpinHalfConvention, 0).unwrap();
        assert!((s.amplitudes.norm_sqr() - 1.0).abs() < 1e-12);
        // support on |↑⇓⟩ (index 1) and its flip-flop partner |↓⇑⟩ (index 2)
        assert!(s.amplitudes.get(1).norm() > 0.99);
        assert!(s.amplitudes.get(2).norm() > 0.0);
        assert!(prepare_initial(&b, &SpinHalfConvention, 1).is_err());

        let mut no_hf = bath(&[]);
        no_hf.a_p = 0.0;
        let s = prepare_initial(&no_hf, &SpinHalfConvention, 0).unwrap();
        assert_eq!(s.amplitudes, SparseVector::basis(1));
    }

    #[test]
    fn zero_angle_gate_is_identity() {
        let b = bath(&[5.0]);
        let mut s = prepare_initial(&b, &SpinHalfConvention, 1).unwrap();
        let before = s.clone();
        apply_gate(&mut s, &frame(&b), &Dyson1, b.frequencies.omega_x_p, 0.0, ClockPolicy::Continuous).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn undriven_gate_is_identity() {
        let b = bath_with(FieldConfig { b_x: 0.0, ..FieldConfig::default() }, &[]);
        let mut s = prepare_initial(&b, &SpinHalfConvention, 0).unwrap();
        let before = s.amplitudes.clone();
        // any positive duration; Ω^x_P = 0 so use an explicit interval
        let step = Dyson1.propagate(&frame(&b), &s.amplitudes, 0.0, 1e-7).unwrap();
        assert_eq!(step.w_norm, 0.0);
        s.amplitudes = step.vector;
        assert_eq!(s.amplitudes.to_dense(4), before.to_dense(4));
    }

    #[test]
    fn sparse_dyson_matches_integrated_propagator() {
        let b = bath(&[9.0, 2.0]);
        let fr = frame(&b);
        let ham = build_strong_phased(&b, Arc::new(SpinHalfConvention), true).unwrap();
        let (t0, t1) = (3.0e-8, 2.1e-7);
        let p = integrate_phased(&ham, t0, t1);
        let s = prepare_initial(&b, &SpinHalfConvention, 2).unwrap();
        let dense = apply_dense(&p.matrix, &s.amplitudes).to_dense(16);
        let sparse = fr.apply_dyson1(&s.amplitudes, t0, t1).to_dense(16);
        for (a, c) in dense.iter().zip(&sparse) {
            assert!((a - c).norm() < 1e-12);
        }
        assert!(p.w_norm <= fr.w_norm_bound(t0, t1) * (1.0 + 1e-12));
        let defect = max_abs(&(p.matrix.adjoint() * &p.matrix - OperatorMatrix::identity(16, 16)));
        assert!(defect <= p.w_norm * p.w_norm);
    }

    #[test]
    fn integrate_phased_edge_cases() {
        let empty = PhasedSparseHamiltonian::empty(4);
        let p = integrate_phased(&empty, 0.0, 1e-6);
        assert_eq!(p.w_norm, 0.0);
        assert_eq!(p.matrix, OperatorMatrix::identity(4, 4));
        let b = bath(&[3.0]);
        let ham = build_strong_phased(&b, Arc::new(SpinHalfConvention), true).unwrap();
        let p = integrate_phased(&ham, 2e-7, 2e-7);
        assert_eq!(p.matrix, OperatorMatrix::identity(8, 8));
    }

    #[test]
    fn gaps_matter_only_under_continuous_clock() {
        let b = bath(&[6.0]);
        let fr = frame(&b);
        let oxp = b.frequencies.omega_x_p;
        let run = |policy: ClockPolicy, gap: f64, angles: &[f64]| {
            let mut s = prepare_initial(&b, &SpinHalfConvention, 1).unwrap();
            let plan = GatePlan { angles: angles.to_vec(), gap, clock_policy: policy };
            run_plan(&mut s, &fr, &Dyson1, oxp, &plan, |_, _, _| Ok(())).unwrap();
            s
        };
        let tau = PI / oxp;
        let gapped = run(ClockPolicy::Continuous, tau, &[1.0, 1.0]);
        let packed = run(ClockPolicy::Continuous, 0.0, &[1.0, 1.0]);
        assert!((gapped.amplitudes.inner(&packed.amplitudes).norm() - 1.0).abs() > 1e-9);
        assert!((gapped.clock - packed.clock - tau).abs() < 1e-18);

        let reset_gapped = run(ClockPolicy::Reset, tau, &[0.7, 2.0]);
        let reset_packed = run(ClockPolicy::Reset, 0.0, &[0.7, 2.0]);
        assert_eq!(reset_gapped.amplitudes, reset_packed.amplitudes);

        let mut s = prepare_initial(&b, &SpinHalfConvention, 0).unwrap();
        let before = s.clone();
        apply_free_gap(&mut s, 0.0, ClockPolicy::Continuous);
        assert_eq!(s, before);
    }

    #[test]
    fn energy_change_basics() {
        let c = PhysicalConstants::default();
        let b = bath(&[4.0, 1.0]);
        let s0 = prepare_initial(&b, &SpinHalfConvention, 2).unwrap();
        for r in READOUTS {
            let r = readout_by_name(r).unwrap();
            assert_eq!(zeeman_energy(r.as_ref(), &b, &s0, &s0, &c, 0.25).unwrap().rad_per_s, 0.0);
        }
        let empty = bath(&[]);
        let e0 = prepare_initial(&empty, &SpinHalfConvention, 0).unwrap();
        let mut e1 = e0.clone();
        apply_gate(&mut e1, &frame(&empty), &Dyson1, empty.frequencies.omega_x_p, PI, ClockPolicy::Continuous).unwrap();
        assert_eq!(zeeman_energy(&RawReadout, &empty, &e0, &e1, &c, 0.25).unwrap().rad_per_s, 0.0);

        let e = EnergyChange::new(&c, 0.25, 1e6);
        assert_eq!(e.over_kt, c.hbar * 1e6 / (c.k_boltzmann * 0.25));
    }

    #[test]
    fn readouts_differ_by_norm() {
        let b = bath(&[8.0, 3.0]);
        let mut s = prepare_initial(&b, &SpinHalfConvention, 1).unwrap();
        apply_gate(&mut s, &frame(&b), &Dyson1, b.frequencies.omega_x_p, PI, ClockPolicy::Continuous).unwrap();
        assert!(s.norm_sqr() > 1.0);
        let raw = RawReadout.bath_energy(&b, &s);
        let norm = NormalizedReadout.bath_energy(&b, &s);
        assert!((raw / norm - s.norm_sqr()).abs() < 1e-12);
        // the state records its own bound
        assert!(s.log_norm_sqr <= s.log_norm_budget + 1e-12);
    }

    #[test]
    fn weak_gate_conserves_bath_energy() {
        let fields = FieldConfig { b_x: 1e-3, ..FieldConfig::default() };
        let b = bath_with(fields, &[9.0, 4.0, 4.0, 0.7]);
        let c = PhysicalConstants::default();
        let h = build_si_zeeman(&b).unwrap();
        assert!(h.nrows() == 64);
        for state in [0u64, 5, 15] {
            let s0 = prepare_initial(&b, &SpinHalfConvention, state).unwrap();
            for angle in [0.3, PI, 5.0] {
                let s1 = apply_weak_gate(&b, &s0, angle).unwrap();
                let de = zeeman_energy(&NormalizedReadout, &b, &s0, &s1, &c, 0.25).unwrap();
                assert!(de.over_kt.abs() < 1e-12, "{}", de.over_kt);
            }
        }
    }

    #[test]
    fn exact_frame_is_close_to_dyson_for_short_gates() {
        let b = bath(&[5.0]);
        let fr = frame(&b);
        let s = prepare_initial(&b, &SpinHalfConvention, 1).unwrap();
        let t1 = 2e-9;
        let d = Dyson1.propagate(&fr, &s.amplitudes, 0.0, t1).unwrap();
        let e = ExactFrame::default().propagate(&fr, &s.amplitudes, 0.0, t1).unwrap();
        assert!((e.vector.norm_sqr() - 1.0).abs() < 1e-12);
        let overlap = d.vector.inner(&e.vector).norm_sqr() / d.vector.norm_sqr();
        assert!(overlap >= 1.0 - 2.0 * d.w_norm * d.w_norm, "{overlap}");
        assert!(propagation_by_name("rk4").is_err());
        assert!(convention_by_name("printed").is_ok());
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[TraceRecord { gate_index: 0, clock_s: 1e-7, de_over_kt: -2e-6, w_norm_accum: 0.1 }]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("gate_index,clock_s,dE_over_kT,w_norm_accum\n0,"));
    }
}
