//! Exact lab-frame time stepping of the full Hamiltonian for tiny baths, and
//! its comparison against the perturbative gate pipeline.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{
    apply_gate, cf4_step, gate_time, prepare_initial, zeeman_energy, ClockPolicy, Dyson1, EnergyChange, Readout,
};
use crate::hamiltonians::{
    apply_small_rotation, build_drive, build_free, build_hyperfine, free_energy, si_zeeman_energy, zz_energy,
    FrameConvention, OperatorMatrix, StrongFrame,
};
use crate::hyperfine::SpinBathConfig;
use crate::model::PhysicalConstants;
use crate::sparse::SparseVector;

/// Largest bath the oracle accepts.
pub const MAX_ORACLE_BATH: usize = 2;
/// Largest accepted estimate of the accumulated local error.
pub const MAX_ORACLE_ERROR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    /// s
    pub duration: f64,
    pub drive: bool,
}

/// Consecutive drive-on and drive-off intervals starting at t = 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Schedule {
    pub segments: Vec<Segment>,
}

impl Schedule {
    pub fn single_gate(duration: f64) -> Self {
        Self { segments: vec![Segment { duration, drive: true }] }
    }

    pub fn total_time(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// Largest step that resolves the electron precession, `1/(50·Ω_e/2π)`.
pub fn max_oracle_dt(bath: &SpinBathConfig) -> f64 {
    2.0 * PI / (50.0 * bath.frequencies.omega_e.abs())
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    /// Lab-frame state at the end of the schedule.
    pub state: Vec<Complex64>,
    /// `(t, ⟨H_Si⟩)` samples, rad/s.
    pub trajectory: Vec<(f64, f64)>,
    pub steps: usize,
    pub dt: f64,
    pub error_estimate: f64,
}

/// Sparse `(row, col, value)` form of a dense matrix.
fn triplets(m: &OperatorMatrix) -> Vec<(usize, usize, Complex64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != Complex64::new(0.0, 0.0) {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

fn inf_norm(m: &OperatorMatrix) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|c| c.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Integrates `i ψ' = [H₀ + H_hf + cos(ω_d t)·X] ψ` from `initial` at t = 0.
///
/// Steps are commutator-free fourth-order Magnus with per-step
/// renormalization. `dt` is shrunk so each segment holds a whole number of
/// steps. `record_every` sets the trajectory sampling in steps (0: endpoints only).
pub fn exact_oracle(
    bath: &SpinBathConfig,
    schedule: &Schedule,
    initial: &SparseVector,
    dt: f64,
    record_every: usize,
) -> Result<OracleRun> {
    if bath.n_bath() > MAX_ORACLE_BATH {
        return Err(Error::Cap(format!(
            "exact oracle is limited to {MAX_ORACLE_BATH} bath spins, got {}",
            bath.n_bath()
        )));
    }
    let dt_max = max_oracle_dt(bath);
    if !(dt > 0.0 && dt <= dt_max * (1.0 + 1e-12)) {
        return Err(Error::Numerical(format!("oracle step {dt:e} s outside (0, {dt_max:e}]")));
    }
    let static_h = build_free(bath)? + build_hyperfine(bath)?;
    let drive = build_drive(bath)?;
    let h_norm = inf_norm(&static_h) + inf_norm(&drive.x_sum);

    let plan: Vec<(usize, f64, bool)> = schedule
        .segments
        .iter()
        .map(|s| {
            let n = (s.duration / dt).ceil().max(if s.duration > 0.0 { 1.0 } else { 0.0 }) as usize;
            let h = if n == 0 { 0.0 } else { s.duration / n as f64 };
            (n, h, s.drive)
        })
        .collect();
    let steps: usize = plan.iter().map(|p| p.0).sum();
    let error_estimate: f64 = plan.iter().map(|&(n, h, _)| n as f64 * (h_norm * h).powi(5) / 720.0).sum();
    if error_estimate > MAX_ORACLE_ERROR {
        return Err(Error::Numerical(format!(
            "oracle step too coarse: estimated phase error {error_estimate:.2e} > {MAX_ORACLE_ERROR:e}"
        )));
    }

    let dim = static_h.nrows();
    let static_t = triplets(&static_h);
    let drive_t = triplets(&drive.x_sum);
    let omega_d = drive.omega_d;
    let mut psi = initial.to_dense(dim);
    let h_si: Vec<f64> = (0..dim as u64).map(|x| si_zeeman_energy(bath, x)).collect();
    let expect = |psi: &[Complex64]| -> f64 {
        let n: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        psi.iter().zip(&h_si).map(|(c, e)| c.norm_sqr() * e).sum::<f64>() / n
    };
    let mut trajectory = vec![(0.0, expect(&psi))];
    let mut t = 0.0;
    let mut counter = 0usize;
    for &(n, h, driven) in &plan {
        for _ in 0..n {
            cf4_step(&mut psi, h, t, |ts, x, out| {
                let w_static: f64 = ts.iter().map(|p| p.1).sum();
                let w_drive: f64 = if driven { ts.iter().map(|&(tk, wk)| wk * (omega_d * tk).cos()).sum() } else { 0.0 };
                out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
                for &(i, j, v) in &static_t {
                    out[i] += v * w_static * x[j];
                }
                if w_drive != 0.0 {
                    for &(i, j, v) in &drive_t {
                        out[i] += v * w_drive * x[j];
                    }
                }
            });
            t += h;
            counter += 1;
            if record_every > 0 && counter.is_multiple_of(record_every) {
                trajectory.push((t, expect(&psi)));
            }
        }
    }
    if trajectory.last().map(|p| p.0) != Some(t) {
        trajectory.push((t, expect(&psi)));
    }
    Ok(OracleRun { state: psi, trajectory, steps, dt, error_estimate })
}

/// Lab-frame image of a frame state at time `t`:
/// `U_r† e^{−iH₀t} e^{−iH_ZZ t} χ`.
pub fn frame_to_lab(bath: &SpinBathConfig, convention: &dyn FrameConvention, chi: &SparseVector, t: f64) -> SparseVector {
    let mut acc = crate::sparse::Accumulator::with_capacity(chi.len());
    for &(x, c) in chi.entries() {
        let phase = -(free_energy(bath, x) + zz_energy(bath, x)) * t;
        acc.add(x, c * Complex64::from_polar(1.0, phase));
    }
    apply_small_rotation(bath, convention, &acc.finish(), true)
}

/// One gate evaluated by the frame pipeline and by the exact oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleComparison {
    pub bath_state: u64,
    pub angle: f64,
    pub dyson_over_kt: f64,
    pub exact_over_kt: f64,
    /// `|⟨ψ_exact|ψ_dyson⟩|²` with both normalized.
    pub overlap: f64,
    pub w_norm: f64,
    pub error_estimate: f64,
}

impl OracleComparison {
    pub fn sign_agrees(&self) -> bool {
        self.dyson_over_kt.signum() == self.exact_over_kt.signum()
    }

    pub fn relative_difference(&self) -> f64 {
        ((self.dyson_over_kt - self.exact_over_kt) / self.exact_over_kt).abs()
    }

    /// `overlap ≥ 1 − 2·w²`.
    pub fn overlap_within_bound(&self) -> bool {
        self.overlap >= 1.0 - 2.0 * self.w_norm * self.w_norm
    }
}

/// Runs a single gate from `U_r†|↑⇓b⟩` through the frame pipeline and the oracle.
///
/// The oracle starts from the lab image of the same prepared frame state, so
/// the two agree exactly at t = 0. `dt` defaults to half the resolving step.
#[allow(clippy::too_many_arguments)]
pub fn compare_single_gate(
    constants: &PhysicalConstants,
    temperature: f64,
    bath: &SpinBathConfig,
    convention: Arc<dyn FrameConvention>,
    readout: &dyn Readout,
    bath_state: u64,
    angle: f64,
    dt: Option<f64>,
) -> Result<OracleComparison> {
    let omega_x_p = bath.frequencies.omega_x_p;
    let frame = StrongFrame::new(bath, convention.clone());
    let prepared = prepare_initial(bath, convention.as_ref(), bath_state)?;
    let mut evolved = prepared.clone();
    let record = apply_gate(&mut evolved, &frame, &Dyson1, omega_x_p, angle, ClockPolicy::Continuous)?;
    let dyson = zeeman_energy(readout, bath, &prepared, &evolved, constants, temperature)?;

    let duration = gate_time(angle, omega_x_p);
    let lab0 = frame_to_lab(bath, convention.as_ref(), &prepared.amplitudes, 0.0);
    let run = exact_oracle(bath, &Schedule::single_gate(duration), &lab0, dt.unwrap_or(max_oracle_dt(bath) / 2.0), 0)?;
    let (e0, e1) = (run.trajectory[0].1, run.trajectory.last().unwrap().1);
    let exact = EnergyChange::new(constants, temperature, e1 - e0);

    let mapped = frame_to_lab(bath, convention.as_ref(), &evolved.amplitudes, duration);
    let exact_vec = SparseVector::from_dense(&run.state);
    let overlap = exact_vec.inner(&mapped).norm_sqr() / (exact_vec.norm_sqr() * mapped.norm_sqr());

    Ok(OracleComparison {
        bath_state,
        angle,
        dyson_over_kt: dyson.over_kt,
        exact_over_kt: exact.over_kt,
        overlap,
        w_norm: record.w_norm,
        error_estimate: run.error_estimate,
    })
}
