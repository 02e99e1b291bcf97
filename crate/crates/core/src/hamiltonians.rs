//! Spin operators on electron ⊗ ³¹P ⊗ N×²⁹Si and the Hamiltonians built from them.
//!
//! Basis index `x` is a bit pattern: bit `k` describes slot `k` (0 electron,
//! 1 donor, 2.. bath), and a set bit means spin up (`m = +½`).

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hyperfine::{SpinBathConfig, DONOR_SLOT, ELECTRON_SLOT, FIRST_BATH_SLOT};
use crate::model::{perturbation_parameter, PERTURBATION_WARN_LEVEL};
use crate::sparse::{Accumulator, SparseVector};

pub type OperatorMatrix = DMatrix<Complex64>;

/// Dense operators are only built up to this many slots (dimension 1024).
pub const MAX_DENSE_SLOTS: usize = 10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[inline]
pub fn is_up(x: u64, slot: usize) -> bool {
    (x >> slot) & 1 == 1
}

/// `m = ±½` of a slot in basis state `x`.
#[inline]
pub fn magnetization(x: u64, slot: usize) -> f64 {
    if is_up(x, slot) {
        0.5
    } else {
        -0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
    Plus,
    Minus,
}

fn dense_dim(n_slots: usize) -> Result<usize> {
    if n_slots > MAX_DENSE_SLOTS {
        return Err(Error::Cap(format!(
            "dense operators are limited to {MAX_DENSE_SLOTS} spins, got {n_slots}"
        )));
    }
    Ok(1usize << n_slots)
}

fn diagonal(dim: usize, f: impl Fn(u64) -> f64) -> OperatorMatrix {
    OperatorMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |i, _| Complex64::new(f(i as u64), 0.0)))
}

/// Single-spin operator at `slot`, identity elsewhere. Ladder operators are `I± = Ix ± i·Iy`.
pub fn embed(n_slots: usize, slot: usize, axis: Axis) -> Result<OperatorMatrix> {
    if slot >= n_slots {
        return Err(Error::Config(format!("spin slot {slot} out of range for {n_slots} spins")));
    }
    let dim = dense_dim(n_slots)?;
    let bit = 1u64 << slot;
    let mut m = OperatorMatrix::zeros(dim, dim);
    for x in 0..dim as u64 {
        let up = is_up(x, slot);
        let flipped = (x ^ bit) as usize;
        let col = x as usize;
        match axis {
            Axis::Z => m[(col, col)] = Complex64::new(magnetization(x, slot), 0.0),
            Axis::X => m[(flipped, col)] = Complex64::new(0.5, 0.0),
            // ⟨↑|Iy|↓⟩ = −i/2, ⟨↓|Iy|↑⟩ = +i/2
            Axis::Y => m[(flipped, col)] = Complex64::new(0.0, if up { 0.5 } else { -0.5 }),
            Axis::Plus if !up => m[(flipped, col)] = ONE,
            Axis::Minus if up => m[(flipped, col)] = ONE,
            Axis::Plus | Axis::Minus => {}
        }
    }
    Ok(m)
}

/// Largest `|H − H†|` element.
pub fn hermiticity_defect(h: &OperatorMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..h.nrows() {
        for j in i..h.ncols() {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest `|U U† − 1|` element.
pub fn unitarity_defect(u: &OperatorMatrix) -> f64 {
    let p = u * u.adjoint();
    let mut worst: f64 = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((p[(i, j)] - target).norm());
        }
    }
    worst
}

pub fn commutator(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a * b - b * a
}

/// Largest element magnitude.
pub fn max_abs(m: &OperatorMatrix) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Diagonal of `H₀ = Ω_e S^z + ω_P I^z_P + Σ ω_n I^z_n` at basis state `x`.
pub fn free_energy(bath: &SpinBathConfig, x: u64) -> f64 {
    (0..bath.n_slots()).map(|s| bath.larmor(s) * magnetization(x, s)).sum()
}

/// Diagonal of `H_Si = Σ ω_n I^z_n`.
pub fn si_zeeman_energy(bath: &SpinBathConfig, x: u64) -> f64 {
    (FIRST_BATH_SLOT..bath.n_slots()).map(|s| bath.larmor(s) * magnetization(x, s)).sum()
}

/// Diagonal of `H_ZZ = Σ_{n∈Si,P} a_n S^z I^z_n`.
pub fn zz_energy(bath: &SpinBathConfig, x: u64) -> f64 {
    let se = magnetization(x, ELECTRON_SLOT);
    (DONOR_SLOT..bath.n_slots()).map(|s| bath.coupling(s) * se * magnetization(x, s)).sum()
}

pub fn build_free(bath: &SpinBathConfig) -> Result<OperatorMatrix> {
    Ok(diagonal(dense_dim(bath.n_slots())?, |x| free_energy(bath, x)))
}

pub fn build_si_zeeman(bath: &SpinBathConfig) -> Result<OperatorMatrix> {
    Ok(diagonal(dense_dim(bath.n_slots())?, |x| si_zeeman_energy(bath, x)))
}

pub fn build_zz(bath: &SpinBathConfig) -> Result<OperatorMatrix> {
    Ok(diagonal(dense_dim(bath.n_slots())?, |x| zz_energy(bath, x)))
}

/// `Σ_{n∈Si,P} a_n S⃗·I⃗_n`.
pub fn build_hyperfine(bath: &SpinBathConfig) -> Result<OperatorMatrix> {
    let dim = dense_dim(bath.n_slots())?;
    let mut h = diagonal(dim, |x| zz_energy(bath, x));
    let e_bit = 1u64 << ELECTRON_SLOT;
    for slot in DONOR_SLOT..bath.n_slots() {
        let n_bit = 1u64 << slot;
        let half_a = Complex64::new(bath.coupling(slot) / 2.0, 0.0);
        for x in 0..dim as u64 {
            // ½a(S+I− + S−I+) connects |↑e ↓n⟩ and |↓e ↑n⟩
            if is_up(x, ELECTRON_SLOT) != is_up(x, slot) {
                let y = x ^ e_bit ^ n_bit;
                h[(y as usize, x as usize)] += half_a;
            }
        }
    }
    Ok(h)
}

/// `cos(ω_d t)·[Ω^x_e S^x + Ω^x_P I^x_P + Ω^x_Si Σ I^x_n]`.
#[derive(Debug, Clone)]
pub struct DriveHamiltonian {
    pub x_sum: OperatorMatrix,
    pub omega_d: f64,
}

impl DriveHamiltonian {
    pub fn at(&self, t: f64) -> OperatorMatrix {
        &self.x_sum * Complex64::new((self.omega_d * t).cos(), 0.0)
    }
}

pub fn build_drive(bath: &SpinBathConfig) -> Result<DriveHamiltonian> {
    let n = bath.n_slots();
    let dim = dense_dim(n)?;
    let mut x_sum = OperatorMatrix::zeros(dim, dim);
    for slot in 0..n {
        x_sum += embed(n, slot, Axis::X)? * Complex64::new(bath.drive_amplitude(slot), 0.0);
    }
    Ok(DriveHamiltonian { x_sum, omega_d: bath.frequencies.omega_d })
}

/// Coefficient conventions of the rotated, interaction-picture drive Hamiltonian.
///
/// Every convention describes the same operator skeleton: a raising term on
/// each nucleus with an electron-dependent amplitude and two phase rates, and
/// a raising term on the electron whose rates depend on the nuclear sector.
pub trait FrameConvention: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Small-rotation parameter α_n for coupling `a_n`.
    fn rotation_parameter(&self, a_n: f64, delta: f64) -> f64;

    /// `(amplitude, phase rate)` pairs of the nuclear raising term.
    fn nuclear_terms(&self, flip: &NuclearFlip) -> [(f64, f64); 2];

    /// `(amplitude, phase rate)` pairs of the electron raising term.
    fn electron_terms(&self, flip: &ElectronFlip) -> [(f64, f64); 2];
}

#[derive(Debug, Clone, Copy)]
pub struct NuclearFlip {
    pub a_n: f64,
    pub omega_n: f64,
    pub omega_x_n: f64,
    pub omega_x_e: f64,
    pub delta: f64,
    pub omega_d: f64,
    /// Electron `m`, ±½.
    pub s_e: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ElectronFlip {
    pub omega_e: f64,
    pub omega_x_e: f64,
    pub omega_d: f64,
    /// `Σ_{n∈Si} a_n m_n`
    pub bath_field: f64,
    /// `a_P m_P`
    pub donor_field: f64,
}

/// Coefficients derived with `I± = Ix ± i·Iy` and spin-½ operators throughout:
/// `α = a/(2Δ)`, amplitudes `Ω^x_e a s_e/(4Δ) + Ω^x_n/4` and `Ω^x_e/4`, rates
/// `ω_n ± ω_d + a s_e` and `Ω_e ± ω_d + Σ_{Si,P} a m`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpinHalfConvention;

impl FrameConvention for SpinHalfConvention {
    fn name(&self) -> &'static str {
        "spin-half"
    }

    fn rotation_parameter(&self, a_n: f64, delta: f64) -> f64 {
        a_n / (2.0 * delta)
    }

    fn nuclear_terms(&self, f: &NuclearFlip) -> [(f64, f64); 2] {
        let amp = f.omega_x_e * f.a_n * f.s_e / (4.0 * f.delta) + f.omega_x_n / 4.0;
        let base = f.omega_n + f.a_n * f.s_e;
        [(amp, base + f.omega_d), (amp, base - f.omega_d)]
    }

    fn electron_terms(&self, f: &ElectronFlip) -> [(f64, f64); 2] {
        let amp = f.omega_x_e / 4.0;
        let base = f.omega_e + f.bath_field + f.donor_field;
        [(amp, base + f.omega_d), (amp, base - f.omega_d)]
    }
}

/// Alternative coefficient set with doubled rates and no spin-½ factors: `α = a/Δ`,
/// amplitudes `Ω^x_e a s_e/(2Δ) + Ω^x_n/2` and `Ω^x_e/2`, rates
/// `2(ω_n ± ω_d + a s_e)` and `2(Ω_e ± ω_d + Σ_{Si} a m)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PrintedConvention;

impl FrameConvention for PrintedConvention {
    fn name(&self) -> &'static str {
        "printed"
    }

    fn rotation_parameter(&self, a_n: f64, delta: f64) -> f64 {
        a_n / delta
    }

    fn nuclear_terms(&self, f: &NuclearFlip) -> [(f64, f64); 2] {
        let amp = f.omega_x_e * f.a_n * f.s_e / (2.0 * f.delta) + f.omega_x_n / 2.0;
        let base = f.omega_n + f.a_n * f.s_e;
        [(amp, 2.0 * (base + f.omega_d)), (amp, 2.0 * (base - f.omega_d))]
    }

    fn electron_terms(&self, f: &ElectronFlip) -> [(f64, f64); 2] {
        let amp = f.omega_x_e / 2.0;
        let base = f.omega_e + f.bath_field;
        [(amp, 2.0 * (base + f.omega_d)), (amp, 2.0 * (base - f.omega_d))]
    }
}

pub const CONVENTIONS: &[&str] = &["spin-half", "printed"];

pub fn convention_by_name(name: &str) -> Result<Arc<dyn FrameConvention>> {
    match name {
        "spin-half" => Ok(Arc::new(SpinHalfConvention)),
        "printed" => Ok(Arc::new(PrintedConvention)),
        other => Err(Error::UnknownStrategy {
            family: "convention",
            name: other.to_string(),
            available: CONVENTIONS.join(", "),
        }),
    }
}

/// Rotation parameters α_k for every nuclear slot (index 0 unused).
fn rotation_parameters(bath: &SpinBathConfig, convention: &dyn FrameConvention) -> Vec<f64> {
    let delta = bath.frequencies.delta;
    let mut alphas = vec![0.0; bath.n_slots()];
    for (slot, alpha) in alphas.iter_mut().enumerate().skip(DONOR_SLOT) {
        let a = bath.coupling(slot);
        perturbation_parameter(a, delta);
        *alpha = convention.rotation_parameter(a, delta);
    }
    alphas
}

/// `G = Σ_n α_n (S+ I−_n − S− I+_n)`, anti-Hermitian.
pub fn small_rotation_generator(bath: &SpinBathConfig, convention: &dyn FrameConvention) -> Result<OperatorMatrix> {
    let dim = dense_dim(bath.n_slots())?;
    let alphas = rotation_parameters(bath, convention);
    let mut g = OperatorMatrix::zeros(dim, dim);
    for (slot, &alpha) in alphas.iter().enumerate().skip(DONOR_SLOT) {
        let flip = (1u64 << ELECTRON_SLOT) | (1u64 << slot);
        for x in 0..dim as u64 {
            let (e_up, n_up) = (is_up(x, ELECTRON_SLOT), is_up(x, slot));
            let y = (x ^ flip) as usize;
            if !e_up && n_up {
                g[(y, x as usize)] += Complex64::new(alpha, 0.0);
            } else if e_up && !n_up {
                g[(y, x as usize)] -= Complex64::new(alpha, 0.0);
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct SmallRotation {
    pub matrix: OperatorMatrix,
    pub max_alpha: f64,
    /// Set when some α_n ≥ 0.1.
    pub degraded: bool,
}

/// Dense `U_r = exp(G)`.
pub fn small_rotation(bath: &SpinBathConfig, convention: &dyn FrameConvention) -> Result<SmallRotation> {
    let g = small_rotation_generator(bath, convention)?;
    let max_alpha = rotation_parameters(bath, convention).into_iter().fold(0.0, f64::max);
    Ok(SmallRotation {
        matrix: g.exp(),
        max_alpha,
        degraded: max_alpha >= PERTURBATION_WARN_LEVEL,
    })
}

/// `G·v` on a sparse vector.
fn apply_generator(alphas: &[f64], v: &SparseVector, factor: f64) -> SparseVector {
    let mut acc = Accumulator::with_capacity(v.len() * 2);
    for &(x, c) in v.entries() {
        let e_up = is_up(x, ELECTRON_SLOT);
        for (slot, &alpha) in alphas.iter().enumerate().skip(DONOR_SLOT) {
            let n_up = is_up(x, slot);
            if e_up == n_up || alpha == 0.0 {
                continue;
            }
            let y = x ^ (1u64 << ELECTRON_SLOT) ^ (1u64 << slot);
            let sign = if n_up { 1.0 } else { -1.0 };
            acc.add(y, c * (sign * alpha * factor));
        }
    }
    acc.finish()
}

/// Entries below this fraction of the input norm are dropped from each
/// rotation series term.
const ROTATION_PRUNE: f64 = 1e-13;

/// `exp(±G)·v` by Taylor series on a sparse vector; `dagger` selects `U_r†`.
pub fn apply_small_rotation(
    bath: &SpinBathConfig,
    convention: &dyn FrameConvention,
    v: &SparseVector,
    dagger: bool,
) -> SparseVector {
    let alphas = rotation_parameters(bath, convention);
    let sign = if dagger { -1.0 } else { 1.0 };
    let mut acc = Accumulator::with_capacity(4 * v.len());
    acc.add_vector(v, ONE);
    let mut term = v.clone();
    let scale = v.norm_sqr().sqrt();
    for order in 1..64 {
        term = apply_generator(&alphas, &term, sign / order as f64);
        // high orders fan out over ~N^k states with amplitudes ~α^k; drop the negligible ones
        term.prune(ROTATION_PRUNE * scale);
        if term.is_empty() {
            break;
        }
        acc.add_vector(&term, ONE);
        if term.norm_sqr().sqrt() <= 1e-18 * scale {
            break;
        }
    }
    acc.finish()
}

/// Weak-drive RWA Hamiltonian:
/// `(Ω^x_P/2) I^x_P + (Ω^x_e a_P/Δ) S^z I^x_P + Σ_{Si,P} a_n S^z I^z_n
///  + 2 Σ_{n≠m∈Si} (a_n a_m/Δ) S^z (σ+_n σ−_m + σ−_n σ+_m)`.
pub fn build_weak_effective(bath: &SpinBathConfig) -> Result<OperatorMatrix> {
    let n = bath.n_slots();
    let dim = dense_dim(n)?;
    let f = &bath.frequencies;
    let mut v = diagonal(dim, |x| zz_energy(bath, x));
    let p_bit = 1u64 << DONOR_SLOT;
    for x in 0..dim as u64 {
        let se = magnetization(x, ELECTRON_SLOT);
        let rabi = f.omega_x_p / 2.0 + f.omega_x_e * bath.a_p / f.delta * se;
        v[((x ^ p_bit) as usize, x as usize)] += Complex64::new(rabi / 2.0, 0.0);
        for i in FIRST_BATH_SLOT..n {
            for j in FIRST_BATH_SLOT..n {
                // σ+_i σ−_j needs i down, j up; it appears in both the (i,j) and (j,i) summands
                if i == j || is_up(x, i) || !is_up(x, j) {
                    continue;
                }
                let coeff = 4.0 * bath.coupling(i) * bath.coupling(j) / f.delta * se;
                let y = x ^ (1u64 << i) ^ (1u64 << j);
                v[(y as usize, x as usize)] += Complex64::new(coeff, 0.0);
            }
        }
    }
    Ok(v)
}

/// `∫_{t0}^{t1} e^{iΩτ} dτ`, with the `Ω → 0` limit taken when `|Ω|·(t1−t0) < 10⁻⁹`.
#[inline]
pub fn phase_integral(rate: f64, t0: f64, t1: f64) -> Complex64 {
    let dt = t1 - t0;
    if (rate * dt).abs() < 1e-9 {
        return Complex64::new(dt, 0.0);
    }
    let (s1, c1) = (rate * t1).sin_cos();
    let (s0, c0) = (rate * t0).sin_cos();
    // (e^{iΩt1} − e^{iΩt0}) / (iΩ)
    Complex64::new(s1 - s0, c0 - c1) / rate
}

/// Strong-drive interaction Hamiltonian `V'(t)` in on-the-fly form: every
/// entry couples basis states that differ in exactly one spin.
#[derive(Debug, Clone)]
pub struct StrongFrame {
    n_slots: usize,
    couplings: Vec<f64>,
    larmor: Vec<f64>,
    drive: Vec<f64>,
    omega_e: f64,
    omega_x_e: f64,
    omega_d: f64,
    delta: f64,
    convention: Arc<dyn FrameConvention>,
}

impl StrongFrame {
    pub fn new(bath: &SpinBathConfig, convention: Arc<dyn FrameConvention>) -> Self {
        let n = bath.n_slots();
        let mut couplings = vec![0.0; n];
        for (slot, c) in couplings.iter_mut().enumerate().skip(DONOR_SLOT) {
            *c = bath.coupling(slot);
        }
        let f = &bath.frequencies;
        Self {
            n_slots: n,
            couplings,
            larmor: (0..n).map(|s| bath.larmor(s)).collect(),
            drive: (0..n).map(|s| bath.drive_amplitude(s)).collect(),
            omega_e: f.omega_e,
            omega_x_e: f.omega_x_e,
            omega_d: f.omega_d,
            delta: f.delta,
            convention,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn convention(&self) -> &dyn FrameConvention {
        self.convention.as_ref()
    }

    fn nuclear_flip(&self, slot: usize, s_e: f64) -> NuclearFlip {
        NuclearFlip {
            a_n: self.couplings[slot],
            omega_n: self.larmor[slot],
            omega_x_n: self.drive[slot],
            omega_x_e: self.omega_x_e,
            delta: self.delta,
            omega_d: self.omega_d,
            s_e,
        }
    }

    fn electron_flip(&self, bath_field: f64, donor_field: f64) -> ElectronFlip {
        ElectronFlip {
            omega_e: self.omega_e,
            omega_x_e: self.omega_x_e,
            omega_d: self.omega_d,
            bath_field,
            donor_field,
        }
    }

    /// Terms of the raising entry `⟨x + slot|V'(t)|x⟩`; `x` must have `slot` down.
    pub fn flip_terms(&self, x: u64, slot: usize) -> [(f64, f64); 2] {
        debug_assert!(!is_up(x, slot));
        if slot == ELECTRON_SLOT {
            let bath_field: f64 = (FIRST_BATH_SLOT..self.n_slots)
                .map(|s| self.couplings[s] * magnetization(x, s))
                .sum();
            let donor_field = self.couplings[DONOR_SLOT] * magnetization(x, DONOR_SLOT);
            self.convention.electron_terms(&self.electron_flip(bath_field, donor_field))
        } else {
            self.convention.nuclear_terms(&self.nuclear_flip(slot, magnetization(x, ELECTRON_SLOT)))
        }
    }

    /// `∫_{t0}^{t1} ⟨x + slot|V'(τ)|x⟩ dτ`; `x` must have `slot` down.
    pub fn integrated_flip(&self, x: u64, slot: usize, t0: f64, t1: f64) -> Complex64 {
        self.flip_terms(x, slot)
            .iter()
            .map(|&(amp, rate)| amp * phase_integral(rate, t0, t1))
            .sum()
    }

    /// Largest `|amplitude|` over all entries.
    pub fn amplitude_bound(&self) -> f64 {
        let mut bound: f64 = 0.0;
        for slot in DONOR_SLOT..self.n_slots {
            for s_e in [-0.5, 0.5] {
                for (amp, _) in self.convention.nuclear_terms(&self.nuclear_flip(slot, s_e)) {
                    bound = bound.max(amp.abs());
                }
            }
        }
        for (amp, _) in self.convention.electron_terms(&self.electron_flip(0.0, 0.0)) {
            bound = bound.max(amp.abs());
        }
        bound
    }

    /// Upper bound on `‖∫_{t0}^{t1} V'‖`, valid for the operator ∞-norm and
    /// hence the spectral norm: per slot, `Σ |amp|·min(Δt, 2/|rate|)` maximized
    /// over the electron state or nuclear sector.
    pub fn w_norm_bound(&self, t0: f64, t1: f64) -> f64 {
        let dt = t1 - t0;
        if dt <= 0.0 {
            return 0.0;
        }
        let weight = |amp: f64, min_rate: f64| {
            if min_rate == 0.0 {
                amp.abs() * dt
            } else {
                amp.abs() * dt.min(2.0 / min_rate)
            }
        };
        let mut total = 0.0;
        for slot in DONOR_SLOT..self.n_slots {
            let worst = [-0.5, 0.5]
                .iter()
                .map(|&s_e| {
                    self.convention
                        .nuclear_terms(&self.nuclear_flip(slot, s_e))
                        .iter()
                        .map(|&(a, r)| weight(a, r.abs()))
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            total += worst;
        }
        // electron rates are affine in the sector fields; extremes sit at the corners
        let bath_max: f64 = self.couplings[FIRST_BATH_SLOT.min(self.n_slots)..].iter().sum::<f64>() / 2.0;
        let donor_max = self.couplings[DONOR_SLOT] / 2.0;
        let corners: Vec<[(f64, f64); 2]> = [(-bath_max, -donor_max), (-bath_max, donor_max), (bath_max, -donor_max), (bath_max, donor_max)]
            .iter()
            .map(|&(b, d)| self.convention.electron_terms(&self.electron_flip(b, d)))
            .collect();
        let electron: f64 = (0..2)
            .map(|k| {
                let rates: Vec<f64> = corners.iter().map(|c| c[k].1).collect();
                let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min_rate = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
                weight(corners[0][k].0, min_rate)
            })
            .sum();
        total + electron
    }

    /// `(I − iW)·v` for `W = ∫_{t0}^{t1} V'`.
    pub fn apply_dyson1(&self, v: &SparseVector, t0: f64, t1: f64) -> SparseVector {
        let mut acc = Accumulator::with_capacity(v.len() * (self.n_slots + 1));
        let minus_i = Complex64::new(0.0, -1.0);
        for &(x, c) in v.entries() {
            acc.add(x, c);
            for slot in 0..self.n_slots {
                let bit = 1u64 << slot;
                if is_up(x, slot) {
                    let y = x & !bit;
                    let w = self.integrated_flip(y, slot, t0, t1).conj();
                    acc.add(y, minus_i * w * c);
                } else {
                    let w = self.integrated_flip(x, slot, t0, t1);
                    acc.add(x | bit, minus_i * w * c);
                }
            }
        }
        acc.finish()
    }

    /// Materialized entry list over the full `2^(N+2)` basis.
    pub fn materialize(&self) -> Result<PhasedSparseHamiltonian> {
        if self.n_slots > 16 {
            return Err(Error::Cap(format!(
                "materializing the phased Hamiltonian is limited to 16 spins, got {}",
                self.n_slots
            )));
        }
        let dim = 1u64 << self.n_slots;
        let mut entries = Vec::new();
        for x in 0..dim {
            for slot in 0..self.n_slots {
                if is_up(x, slot) {
                    continue;
                }
                let y = x | (1u64 << slot);
                for (amp, rate) in self.flip_terms(x, slot) {
                    if amp == 0.0 {
                        continue;
                    }
                    let c = Complex64::new(amp, 0.0);
                    entries.push(PhasedEntry { row: y, col: x, amplitude: c, phase_rate: rate });
                    entries.push(PhasedEntry { row: x, col: y, amplitude: c.conj(), phase_rate: -rate });
                }
            }
        }
        Ok(PhasedSparseHamiltonian::from_entries(dim, entries))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasedEntry {
    pub row: u64,
    pub col: u64,
    /// rad/s
    pub amplitude: Complex64,
    /// rad/s
    pub phase_rate: f64,
}

/// `V'(t)[row, col] = Σ amplitude·e^{i·phase_rate·t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasedSparseHamiltonian {
    pub dim: u64,
    pub entries: Vec<PhasedEntry>,
}

impl PhasedSparseHamiltonian {
    pub fn empty(dim: u64) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Sorts entries and merges those sharing `(row, col, rate)`.
    pub fn from_entries(dim: u64, mut entries: Vec<PhasedEntry>) -> Self {
        entries.sort_by(|a, b| {
            (a.row, a.col)
                .cmp(&(b.row, b.col))
                .then(a.phase_rate.total_cmp(&b.phase_rate))
        });
        let mut merged: Vec<PhasedEntry> = Vec::with_capacity(entries.len());
        for e in entries {
            match merged.last_mut() {
                Some(last) if last.row == e.row && last.col == e.col && last.phase_rate == e.phase_rate => {
                    last.amplitude += e.amplitude;
                }
                _ => merged.push(e),
            }
        }
        Self { dim, entries: merged }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dense_at(&self, t: f64) -> OperatorMatrix {
        let d = self.dim as usize;
        let mut m = OperatorMatrix::zeros(d, d);
        for e in &self.entries {
            m[(e.row as usize, e.col as usize)] += e.amplitude * Complex64::from_polar(1.0, e.phase_rate * t);
        }
        m
    }

    /// Largest mismatch between an entry and its Hermitian partner `(col, row, c̄, −Ω)`.
    pub fn hermitian_closure_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for e in &self.entries {
            let partner = self
                .entries
                .iter()
                .find(|p| p.row == e.col && p.col == e.row && p.phase_rate == -e.phase_rate);
            worst = worst.max(match partner {
                Some(p) => (p.amplitude - e.amplitude.conj()).norm(),
                None => e.amplitude.norm(),
            });
        }
        worst
    }
}

/// `V'_strong`, or the empty Hamiltonian when the drive is excluded.
pub fn build_strong_phased(
    bath: &SpinBathConfig,
    convention: Arc<dyn FrameConvention>,
    include_drive: bool,
) -> Result<PhasedSparseHamiltonian> {
    if !include_drive {
        return Ok(PhasedSparseHamiltonian::empty(bath.dim()));
    }
    let frame = StrongFrame::new(bath, convention);
    let ham = frame.materialize()?;
    let bound = frame.amplitude_bound();
    if let Some(e) = ham.entries.iter().find(|e| e.amplitude.norm() > bound * (1.0 + 1e-12)) {
        return Err(Error::Numerical(format!(
            "phased entry amplitude {} exceeds bound {bound}",
            e.amplitude.norm()
        )));
    }
    Ok(ham)
}

/// Magnitudes of the coefficients the effective Hamiltonian omits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroppedTerms {
    /// max `a_n a_P / (Δ|ω_P − ω_n|)`
    pub donor_bath: f64,
    /// `(a_max/Δ)²`
    pub second_order: f64,
    /// max `a_n a_m / (Δ|a_n − a_m|)` over pairs with distinct couplings
    pub bath_pairs: f64,
    /// Pairs with identical couplings, for which the omission is not controlled.
    pub degenerate_pairs: usize,
}

pub fn dropped_terms(bath: &SpinBathConfig) -> DroppedTerms {
    let f = &bath.frequencies;
    let a: Vec<f64> = bath.coupled_spins.iter().map(|s| s.a_n).collect();
    let donor_bath = a
        .iter()
        .map(|&an| an * bath.a_p / (f.delta * (f.omega_p - f.omega_si).abs()))
        .fold(0.0, f64::max);
    let a_max = a.iter().cloned().fold(bath.a_p, f64::max);
    let mut bath_pairs: f64 = 0.0;
    let mut degenerate_pairs = 0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let gap = (a[i] - a[j]).abs();
            if gap == 0.0 {
                degenerate_pairs += 1;
            } else {
                bath_pairs = bath_pairs.max(a[i] * a[j] / (f.delta * gap));
            }
        }
    }
    DroppedTerms {
        donor_bath,
        second_order: (a_max / f.delta).powi(2),
        bath_pairs,
        degenerate_pairs,
    }
}
