//! Ensemble experiments: angle, concentration and sequence-length sweeps with
//! Boltzmann-weighted bath states and disorder statistics over placements.

use std::fmt::Debug;
use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{
    apply_free_gap, apply_gate, prepare_initial, zeeman_energy, ClockPolicy, Propagation, Readout, SystemState,
    TraceRecord,
};
use crate::hamiltonians::{FrameConvention, StrongFrame};
use crate::hyperfine::{build_bath, CalibratedModel, Envelope, SpinBathConfig};
use crate::lattice::{derive_seed, enumerate_sites, sample_capped, LatticeSite};
use crate::model::{derive_frequencies, DerivedFrequencies, FieldConfig, PhysicalConstants, Regime};

/// Sub-seed streams derived from a placement seed.
const STATE_STREAM: u64 = 0x5354_4154;
const ANGLE_STREAM: u64 = 0x414e_474c;

/// One bath basis state and its estimator weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedState {
    pub state: u64,
    pub weight: f64,
}

/// Probability that bath spin `i` is up, `(1 − tanh(ħω/2kT))/2`.
pub fn spin_up_probability(constants: &PhysicalConstants, omega: f64, temperature: f64) -> f64 {
    0.5 * (1.0 - (0.5 * constants.in_kt(omega, temperature)).tanh())
}

fn state_probability(p_up: &[f64], state: u64) -> f64 {
    p_up.iter()
        .enumerate()
        .map(|(i, &p)| if state >> i & 1 == 1 { p } else { 1.0 - p })
        .product()
}

fn up_probabilities(bath: &SpinBathConfig, constants: &PhysicalConstants, temperature: f64) -> Vec<f64> {
    bath.coupled_spins
        .iter()
        .map(|s| spin_up_probability(constants, s.omega_n, temperature))
        .collect()
}

/// Normalized weights `exp(−E_b/kT)/Z` of all `2^N` bath states, indexed by `b`.
pub fn boltzmann_weights(
    bath: &SpinBathConfig,
    constants: &PhysicalConstants,
    temperature: f64,
    max_spins: usize,
) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let n = bath.n_bath();
    if n > max_spins {
        return Err(Error::Cap(format!("Boltzmann enumeration over {n} spins exceeds the limit of {max_spins}")));
    }
    let p_up = up_probabilities(bath, constants, temperature);
    Ok((0..1u64 << n).map(|b| state_probability(&p_up, b)).collect())
}

/// How bath states are drawn for an ensemble average.
pub trait BoltzmannEstimator: Send + Sync + Debug {
    fn name(&self) -> String;
    /// Weighted states whose weights sum to one.
    fn states(
        &self,
        bath: &SpinBathConfig,
        constants: &PhysicalConstants,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<WeightedState>>;
}

/// Every basis state with its exact weight.
#[derive(Debug, Clone, Copy)]
pub struct Enumerate {
    pub max_spins: usize,
}

impl BoltzmannEstimator for Enumerate {
    fn name(&self) -> String {
        "enumerate".into()
    }

    fn states(&self, bath: &SpinBathConfig, c: &PhysicalConstants, t: f64, _seed: u64) -> Result<Vec<WeightedState>> {
        let w = boltzmann_weights(bath, c, t, self.max_spins)?;
        Ok(w.into_iter().enumerate().map(|(b, weight)| WeightedState { state: b as u64, weight }).collect())
    }
}

/// `k` independent draws from the Boltzmann distribution, weight `1/k` each.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub k: usize,
}

impl BoltzmannEstimator for Sample {
    fn name(&self) -> String {
        format!("sample({})", self.k)
    }

    fn states(&self, bath: &SpinBathConfig, c: &PhysicalConstants, t: f64, seed: u64) -> Result<Vec<WeightedState>> {
        let p_up = up_probabilities(bath, c, t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..self.k)
            .map(|_| {
                let state = p_up
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &p)| if rng.gen::<f64>() < p { acc | 1 << i } else { acc });
                WeightedState { state, weight: 1.0 / self.k as f64 }
            })
            .collect())
    }
}

/// `k` uniformly drawn states, each paired with its global flip, weighted by
/// their Boltzmann probabilities and renormalized. The energy change is
/// nearly odd under a global flip, so pairing cancels most of the variance.
#[derive(Debug, Clone, Copy)]
pub struct Antithetic {
    pub k: usize,
}

impl BoltzmannEstimator for Antithetic {
    fn name(&self) -> String {
        format!("antithetic({})", self.k)
    }

    fn states(&self, bath: &SpinBathConfig, c: &PhysicalConstants, t: f64, seed: u64) -> Result<Vec<WeightedState>> {
        let n = bath.n_bath();
        let p_up = up_probabilities(bath, c, t);
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(2 * self.k);
        for _ in 0..self.k {
            let b = rng.gen::<u64>() & mask;
            for s in [b, !b & mask] {
                out.push(WeightedState { state: s, weight: state_probability(&p_up, s) });
            }
        }
        let total: f64 = out.iter().map(|w| w.weight).sum();
        out.iter_mut().for_each(|w| w.weight /= total);
        Ok(out)
    }
}

/// Enumeration up to `limit` spins, antithetic pairs beyond.
#[derive(Debug, Clone, Copy)]
pub struct Auto {
    pub limit: usize,
    pub pairs: usize,
}

impl BoltzmannEstimator for Auto {
    fn name(&self) -> String {
        "auto".into()
    }

    fn states(&self, bath: &SpinBathConfig, c: &PhysicalConstants, t: f64, seed: u64) -> Result<Vec<WeightedState>> {
        if bath.n_bath() <= self.limit {
            Enumerate { max_spins: self.limit }.states(bath, c, t, seed)
        } else {
            Antithetic { k: self.pairs }.states(bath, c, t, seed)
        }
    }
}

pub const ESTIMATORS: &[&str] = &["enumerate", "sample(k)", "antithetic(k)", "auto"];
pub const DEFAULT_ENUMERATE_LIMIT: usize = 12;
pub const DEFAULT_ANTITHETIC_PAIRS: usize = 64;

/// Parses `enumerate`, `sample(k)`, `antithetic(k)` or `auto`.
pub fn estimator_by_name(name: &str, enumerate_limit: usize) -> Result<Arc<dyn BoltzmannEstimator>> {
    let unknown = || Error::UnknownStrategy {
        family: "Boltzmann estimator",
        name: name.to_string(),
        available: ESTIMATORS.join(", "),
    };
    let counted = |prefix: &str| -> Option<Result<usize>> {
        let inner = name.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
        Some(match inner.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(k),
            _ => Err(Error::Config(format!("{prefix}(k) needs a positive integer k, got `{inner}`"))),
        })
    };
    match name {
        "enumerate" => Ok(Arc::new(Enumerate { max_spins: enumerate_limit })),
        "auto" => Ok(Arc::new(Auto { limit: enumerate_limit, pairs: DEFAULT_ANTITHETIC_PAIRS })),
        _ => {
            if let Some(k) = counted("sample") {
                Ok(Arc::new(Sample { k: k? }))
            } else if let Some(k) = counted("antithetic") {
                Ok(Arc::new(Antithetic { k: k? }))
            } else {
                Err(unknown())
            }
        }
    }
}

/// Strategy objects selected by name at runtime.
#[derive(Debug, Clone)]
pub struct Strategies {
    pub convention: Arc<dyn FrameConvention>,
    pub readout: Arc<dyn Readout>,
    pub propagation: Arc<dyn Propagation>,
    pub estimator: Arc<dyn BoltzmannEstimator>,
    pub clock_policy: ClockPolicy,
}

/// Everything needed to draw placements and evolve them.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub constants: PhysicalConstants,
    pub fields: FieldConfig,
    /// nm
    pub cube_side: f64,
    pub concentration: f64,
    pub envelope: Arc<dyn Envelope>,
    pub a_p: f64,
    pub coupling_ceiling: f64,
    pub max_spins: usize,
    pub max_attempts: u32,
    pub master_seed: u64,
    pub n_configs: usize,
    /// Worker threads; `None` uses every core. Never affects results.
    pub workers: Option<usize>,
    pub strategies: Strategies,
}

/// A prepared experiment: lattice, calibration and frequencies computed once.
#[derive(Debug)]
pub struct Experiment {
    pub setup: ExperimentSetup,
    pub frequencies: DerivedFrequencies,
    sites: Vec<LatticeSite>,
    model: CalibratedModel,
}

/// One row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sweep_value: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample variance over placements.
    pub variance: f64,
    pub n_configs: usize,
    /// Bath-state trajectories evaluated at this point, summed over placements.
    pub n_states: usize,
    pub master_seed: u64,
    pub runtime_s: f64,
}

impl SweepResult {
    /// Standard error of the mean over placements.
    pub fn standard_error(&self) -> f64 {
        (self.variance / self.n_configs as f64).sqrt()
    }
}

/// Mean, min, max and sample variance, summed in index order.
pub fn summarize(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let variance = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, min, max, variance)
}

/// Per-placement outcome at every sweep point.
struct PlacementOutcome {
    values: Vec<f64>,
    n_states: usize,
}

impl Experiment {
    pub fn new(setup: ExperimentSetup) -> Result<Self> {
        setup.constants.validate()?;
        setup.fields.validate()?;
        if setup.n_configs == 0 {
            return Err(Error::Config("n_configs must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&setup.concentration) {
            return Err(Error::Config(format!("concentration must lie in [0, 1], got {}", setup.concentration)));
        }
        if setup.max_spins + 2 > crate::hyperfine::MAX_SLOTS {
            return Err(Error::Config(format!("max_spins must be <= {}", crate::hyperfine::MAX_SLOTS - 2)));
        }
        let frequencies = derive_frequencies(&setup.constants, &setup.fields)?;
        let sites = enumerate_sites(setup.cube_side, setup.constants.lattice_constant)?;
        let model =
            CalibratedModel::calibrate(&setup.constants, setup.envelope.clone(), setup.a_p, setup.coupling_ceiling)?;
        Ok(Self { setup, frequencies, sites, model })
    }

    pub fn sites(&self) -> &[LatticeSite] {
        &self.sites
    }

    pub fn placement_seed(&self, index: usize) -> u64 {
        derive_seed(self.setup.master_seed, index as u64)
    }

    /// Bath of placement `index` at `concentration`.
    pub fn placement_bath(&self, concentration: f64, index: usize) -> Result<SpinBathConfig> {
        let placement = sample_capped(
            &self.sites,
            concentration,
            self.placement_seed(index),
            self.setup.max_spins,
            self.setup.max_attempts,
        )?;
        Ok(build_bath(&self.setup.constants, &self.frequencies, &self.model, &placement))
    }

    fn states(&self, bath: &SpinBathConfig, index: usize) -> Result<Vec<WeightedState>> {
        let seed = derive_seed(self.placement_seed(index), STATE_STREAM);
        self.setup.strategies.estimator.states(bath, &self.setup.constants, self.setup.fields.temperature, seed)
    }

    /// Runs `f` for every placement index on the worker pool and returns the
    /// results in index order.
    fn map_placements<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.setup.workers {
            builder = builder.num_threads(w);
        }
        let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| (0..self.setup.n_configs).into_par_iter().map(&f).collect())
    }

    fn energy(&self, bath: &SpinBathConfig, prepared: &SystemState, evolved: &SystemState) -> Result<f64> {
        let s = &self.setup;
        Ok(zeeman_energy(s.strategies.readout.as_ref(), bath, prepared, evolved, &s.constants, s.fields.temperature)?
            .over_kt)
    }

    /// Boltzmann-weighted single-gate `ΔE/kT` of one bath at every angle.
    pub fn single_gate_response(&self, bath: &SpinBathConfig, states: &[WeightedState], angles: &[f64]) -> Result<Vec<f64>> {
        let st = &self.setup.strategies;
        let frame = StrongFrame::new(bath, st.convention.clone());
        let mut acc = vec![0.0; angles.len()];
        for ws in states {
            let prepared = prepare_initial(bath, st.convention.as_ref(), ws.state)?;
            for (k, &angle) in angles.iter().enumerate() {
                let mut s = prepared.clone();
                apply_gate(&mut s, &frame, st.propagation.as_ref(), self.frequencies.omega_x_p, angle, st.clock_policy)?;
                acc[k] += ws.weight * self.energy(bath, &prepared, &s)?;
            }
        }
        Ok(acc)
    }

    fn collect(&self, sweep_values: &[f64], outcomes: Vec<PlacementOutcome>, start: Instant) -> Vec<SweepResult> {
        let runtime_s = start.elapsed().as_secs_f64();
        let n_states: usize = outcomes.iter().map(|o| o.n_states).sum();
        sweep_values
            .iter()
            .enumerate()
            .map(|(k, &sweep_value)| {
                let column: Vec<f64> = outcomes.iter().map(|o| o.values[k]).collect();
                let (mean, min, max, variance) = summarize(&column);
                SweepResult {
                    sweep_value,
                    mean,
                    min,
                    max,
                    variance,
                    n_configs: outcomes.len(),
                    n_states,
                    master_seed: self.setup.master_seed,
                    runtime_s,
                }
            })
            .collect()
    }

    /// Single gate of every angle in `angles`, at the setup concentration.
    pub fn sweep_angle(&self, angles: &[f64]) -> Result<Vec<SweepResult>> {
        self.require_strong("sweep_angle")?;
        check_grid(angles, "angle grid")?;
        if let Some(a) = angles.iter().find(|a| !(0.0..=2.0 * std::f64::consts::PI).contains(*a)) {
            return Err(Error::Config(format!("angle {a} outside [0, 2π]")));
        }
        let start = Instant::now();
        let outcomes = self.map_placements(|i| {
            let bath = self.placement_bath(self.setup.concentration, i)?;
            let states = self.states(&bath, i)?;
            let values = self.single_gate_response(&bath, &states, angles)?;
            Ok(PlacementOutcome { values, n_states: states.len() })
        })?;
        Ok(self.collect(angles, outcomes, start))
    }

    /// Single gate of `angle` at each concentration (fraction). Placements
    /// reuse their seeds across concentrations.
    pub fn sweep_concentration(&self, concentrations: &[f64], angle: f64) -> Result<Vec<SweepResult>> {
        self.require_strong("sweep_concentration")?;
        check_grid(concentrations, "concentration grid")?;
        if let Some(c) = concentrations.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Config(format!("concentration {c} outside [0, 1]")));
        }
        let start = Instant::now();
        let outcomes = self.map_placements(|i| {
            let mut values = Vec::with_capacity(concentrations.len());
            let mut n_states = 0;
            for &c in concentrations {
                let bath = self.placement_bath(c, i)?;
                let states = self.states(&bath, i)?;
                n_states += states.len();
                values.push(self.single_gate_response(&bath, &states, &[angle])?[0]);
            }
            Ok(PlacementOutcome { values, n_states })
        })?;
        let mut results = self.collect(concentrations, outcomes, start);
        // n_states per point rather than over the whole grid
        let per_point = results.first().map(|r| r.n_states / concentrations.len().max(1)).unwrap_or(0);
        for r in &mut results {
            r.n_states = per_point;
        }
        Ok(results)
    }

    /// Random-angle gate sequences with `τ` gaps; `ΔE/kT` relative to the
    /// prepared state is recorded after `lengths[k]` gates.
    pub fn sweep_sequence(&self, lengths: &[usize], gap: f64) -> Result<Vec<SweepResult>> {
        self.require_strong("sweep_sequence")?;
        check_grid(lengths, "sequence lengths")?;
        if lengths.windows(2).any(|w| w[0] >= w[1]) || lengths[0] == 0 {
            return Err(Error::Config("sequence lengths must be positive and strictly increasing".into()));
        }
        let start = Instant::now();
        let outcomes = self.map_placements(|i| {
            let bath = self.placement_bath(self.setup.concentration, i)?;
            let states = self.states(&bath, i)?;
            let angles = self.sequence_angles(i, *lengths.last().unwrap());
            let mut values = vec![0.0; lengths.len()];
            for ws in &states {
                let trace = self.run_sequence(&bath, ws.state, &angles, gap, lengths, None)?;
                for (v, e) in values.iter_mut().zip(trace) {
                    *v += ws.weight * e;
                }
            }
            Ok(PlacementOutcome { values, n_states: states.len() })
        })?;
        let values: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        Ok(self.collect(&values, outcomes, start))
    }

    /// Uniform angles on `[0, 2π)` for placement `index`.
    pub fn sequence_angles(&self, index: usize, count: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.placement_seed(index), ANGLE_STREAM));
        (0..count).map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI)).collect()
    }

    /// `ΔE/kT` after each of `lengths` gates for one bath state. When `trace`
    /// is given, every gate appends a record to it.
    pub fn run_sequence(
        &self,
        bath: &SpinBathConfig,
        state: u64,
        angles: &[f64],
        gap: f64,
        lengths: &[usize],
        mut trace: Option<&mut Vec<TraceRecord>>,
    ) -> Result<Vec<f64>> {
        let st = &self.setup.strategies;
        let frame = StrongFrame::new(bath, st.convention.clone());
        let prepared = prepare_initial(bath, st.convention.as_ref(), state)?;
        let mut s = prepared.clone();
        let mut out = Vec::with_capacity(lengths.len());
        let mut next = 0;
        for (g, &angle) in angles.iter().enumerate() {
            if next == lengths.len() {
                break;
            }
            if g > 0 {
                apply_free_gap(&mut s, gap, st.clock_policy);
            }
            apply_gate(&mut s, &frame, st.propagation.as_ref(), self.frequencies.omega_x_p, angle, st.clock_policy)?;
            let want = lengths[next] == g + 1;
            if want || trace.is_some() {
                let e = self.energy(bath, &prepared, &s)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(TraceRecord { gate_index: g, clock_s: s.clock, de_over_kt: e, w_norm_accum: s.w_sqr_sum.sqrt() });
                }
                if want {
                    out.push(e);
                    next += 1;
                }
            }
        }
        if out.len() != lengths.len() {
            return Err(Error::Config(format!("{} angles cannot reach length {}", angles.len(), lengths[out.len()])));
        }
        Ok(out)
    }

    fn require_strong(&self, op: &'static str) -> Result<()> {
        self.setup.fields.require_regime(Regime::Strong, op)
    }
}

fn check_grid<T>(grid: &[T], what: &str) -> Result<()> {
    if grid.is_empty() {
        Err(Error::Config(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

/// `n` evenly spaced angles on `[0, π]`.
pub fn default_angle_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![std::f64::consts::PI],
        _ => (0..n).map(|k| std::f64::consts::PI * k as f64 / (n - 1) as f64).collect(),
    }
}

pub const DEFAULT_CONCENTRATIONS_PPM: [f64; 7] = [100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 4700.0];

/// 1, 2, 5, 10, 20, 50, … up to and including `max`.
pub fn default_sequence_lengths(max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1usize;
    while decade <= max {
        for m in [1, 2, 5] {
            if m * decade <= max {
                out.push(m * decade);
            }
        }
        decade *= 10;
    }
    if out.last() != Some(&max) && max > 0 {
        out.push(max);
    }
    out
}

pub const CSV_COLUMNS: [&str; 8] = [
    "sweep_value",
    "mean_dE_over_kT",
    "min_dE_over_kT",
    "max_dE_over_kT",
    "variance",
    "n_configs",
    "n_states",
    "master_seed",
];

/// Writes sweep rows with the fixed column order. Floats use shortest
/// round-trip formatting, so identical results give identical bytes.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            format!("{:e}", r.sweep_value),
            format!("{:e}", r.mean),
            format!("{:e}", r.min),
            format!("{:e}", r.max),
            format!("{:e}", r.variance),
            r.n_configs.to_string(),
            r.n_states.to_string(),
            r.master_seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sweep CSV, rejecting any header that differs from [`CSV_COLUMNS`].
pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepResult>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        let missing: Vec<&str> = CSV_COLUMNS.iter().copied().filter(|c| !header.iter().any(|h| h == c)).collect();
        let extra: Vec<&str> =
            header.iter().map(String::as_str).filter(|h| !CSV_COLUMNS.contains(h)).collect();
        return Err(Error::Config(format!(
            "sweep CSV header mismatch (missing: [{}], extra: [{}])",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Config(format!("bad {} value `{}`", CSV_COLUMNS[i], &rec[i])))
        };
        let u = |i: usize| -> Result<u64> {
            rec[i].parse().map_err(|_| Error::Config(format!("bad {} value `{}`", CSV_COLUMNS[i], &rec[i])))
        };
        rows.push(SweepResult {
            sweep_value: f(0)?,
            mean: f(1)?,
            min: f(2)?,
            max: f(3)?,
            variance: f(4)?,
            n_configs: u(5)? as usize,
            n_states: u(6)? as usize,
            master_seed: u(7)?,
            runtime_s: 0.0,
        });
    }
    Ok(rows)
}

/// Ordinary least-squares line with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 3, "fit_line needs at least three points");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let s2 = sse / (n - 2.0);
    LineFit {
        slope,
        intercept,
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        slope_se: (s2 / sxx).sqrt(),
        intercept_se: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{propagation_by_name, readout_by_name};
    use crate::hamiltonians::convention_by_name;
    use crate::hyperfine::{bath_from_couplings, envelope_by_name, DEFAULT_A_P, DEFAULT_BOHR_RADIUS, DEFAULT_COUPLING_CEILING};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn setup(n_configs: usize) -> ExperimentSetup {
        ExperimentSetup {
            constants: PhysicalConstants::default(),
            fields: FieldConfig::default(),
            cube_side: 5.0,
            concentration: 800e-6,
            envelope: envelope_by_name("isotropic", DEFAULT_BOHR_RADIUS, DEFAULT_BOHR_RADIUS).unwrap(),
            a_p: DEFAULT_A_P,
            coupling_ceiling: DEFAULT_COUPLING_CEILING,
            max_spins: 48,
            max_attempts: 1000,
            master_seed: 11,
            n_configs,
            workers: Some(1),
            strategies: Strategies {
                convention: convention_by_name("spin-half").unwrap(),
                readout: readout_by_name("normalized").unwrap(),
                propagation: propagation_by_name("dyson1").unwrap(),
                estimator: estimator_by_name("auto", DEFAULT_ENUMERATE_LIMIT).unwrap(),
                clock_policy: ClockPolicy::Continuous,
            },
        }
    }

    fn test_bath(n: usize) -> SpinBathConfig {
        let f = derive_frequencies(&PhysicalConstants::default(), &FieldConfig::default()).unwrap();
        let a: Vec<f64> = (0..n).map(|i| 2.0 * PI * 1e6 * (i + 1) as f64).collect();
        bath_from_couplings(&f, DEFAULT_A_P, &a)
    }

    #[test]
    fn boltzmann_weights_normalize_and_limit() {
        let c = PhysicalConstants::default();
        let b = test_bath(5);
        let w = boltzmann_weights(&b, &c, 0.25, 12).unwrap();
        assert_eq!(w.len(), 32);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // all-down is the most likely state; ratio to all-up is exp(N ħω/kT)
        let ratio = w[0] / w[31];
        let expected = (5.0 * c.in_kt(b.frequencies.omega_si, 0.25)).exp();
        assert_relative_eq!(ratio, expected, max_relative = 1e-12);
        assert!((ratio - 1.0 - 5.0 * 1.6e-3).abs() < 5e-4);

        let hot = boltzmann_weights(&b, &c, 1e9, 12).unwrap();
        assert!(hot.iter().all(|x| (x - 1.0 / 32.0).abs() < 1e-12));
        let cold = boltzmann_weights(&b, &c, 1e-6, 12).unwrap();
        assert!((cold[0] - 1.0).abs() < 1e-12);

        assert!(matches!(boltzmann_weights(&b, &c, 0.25, 4), Err(Error::Cap(_))));
        assert!(matches!(boltzmann_weights(&b, &c, 0.0, 12), Err(Error::Config(_))));
    }

    #[test]
    fn estimators_parse_and_normalize() {
        let c = PhysicalConstants::default();
        let b = test_bath(6);
        for name in ["enumerate", "sample(3)", "antithetic(4)", "auto"] {
            let e = estimator_by_name(name, 12).unwrap();
            let s = e.states(&b, &c, 0.25, 9).unwrap();
            assert!((s.iter().map(|w| w.weight).sum::<f64>() - 1.0).abs() < 1e-12, "{name}");
            assert!(s.iter().all(|w| w.state < 64));
            assert_eq!(e.name(), name);
        }
        assert!(estimator_by_name("sample(0)", 12).is_err());
        assert!(estimator_by_name("sample(x)", 12).is_err());
        assert!(matches!(estimator_by_name("gibbs", 12), Err(Error::UnknownStrategy { .. })));
        let pairs = Antithetic { k: 2 }.states(&b, &c, 0.25, 1).unwrap();
        assert_eq!(pairs[0].state ^ pairs[1].state, 63);
        // auto switches above the limit
        assert_eq!(Auto { limit: 3, pairs: 5 }.states(&b, &c, 0.25, 1).unwrap().len(), 10);
    }

    #[test]
    fn sampled_states_follow_boltzmann_marginals() {
        let c = PhysicalConstants::default();
        let b = test_bath(3);
        // at 0.5 mK the up probability is well away from ½
        let t = 5e-4;
        let p = spin_up_probability(&c, b.frequencies.omega_si, t);
        let s = Sample { k: 20_000 }.states(&b, &c, t, 3).unwrap();
        let ups = s.iter().filter(|w| w.state & 1 == 1).count() as f64 / s.len() as f64;
        let se = (p * (1.0 - p) / s.len() as f64).sqrt();
        assert!((ups - p).abs() < 4.0 * se, "{ups} vs {p}");
    }

    #[test]
    fn zero_angle_and_empty_bath_give_zero() {
        let e = Experiment::new(setup(3)).unwrap();
        let r = e.sweep_angle(&[0.0, PI]).unwrap();
        assert_eq!(r[0].mean, 0.0);
        assert_eq!(r[0].min, 0.0);
        let r = e.sweep_concentration(&[0.0, 800e-6], PI).unwrap();
        assert_eq!(r[0].mean, 0.0);
        assert_eq!(r[0].variance, 0.0);
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let mut s = setup(4);
        let a = Experiment::new(s.clone()).unwrap().sweep_angle(&default_angle_grid(3)).unwrap();
        s.workers = Some(3);
        let b = Experiment::new(s).unwrap().sweep_angle(&default_angle_grid(3)).unwrap();
        let strip = |v: Vec<SweepResult>| v.into_iter().map(|r| SweepResult { runtime_s: 0.0, ..r }).collect::<Vec<_>>();
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn strong_regime_is_required() {
        let mut s = setup(1);
        s.fields.b_x = 1e-3;
        let e = Experiment::new(s).unwrap();
        assert!(matches!(e.sweep_angle(&[PI]), Err(Error::Regime { .. })));
    }

    #[test]
    fn sequence_records_requested_lengths() {
        let mut s = setup(2);
        s.strategies.estimator = estimator_by_name("sample(1)", 12).unwrap();
        let e = Experiment::new(s).unwrap();
        let gap = PI / e.frequencies.omega_x_p;
        let r = e.sweep_sequence(&[1, 3, 5], gap).unwrap();
        assert_eq!(r.iter().map(|x| x.sweep_value).collect::<Vec<_>>(), vec![1.0, 3.0, 5.0]);
        assert!(r.iter().all(|x| x.min <= x.mean && x.mean <= x.max && x.variance >= 0.0));
        assert!(e.sweep_sequence(&[3, 1], gap).is_err());

        let bath = e.placement_bath(800e-6, 0).unwrap();
        let angles = e.sequence_angles(0, 5);
        let mut trace = Vec::new();
        let at = e.run_sequence(&bath, 0, &angles, gap, &[2, 5], Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), 5);
        assert_eq!(trace[1].de_over_kt, at[0]);
        assert_eq!(trace[4].de_over_kt, at[1]);
        assert!(angles.iter().all(|a| (0.0..2.0 * PI).contains(a)));
    }

    #[test]
    fn grids() {
        assert_eq!(default_angle_grid(3), vec![0.0, PI / 2.0, PI]);
        assert_eq!(default_sequence_lengths(1000), vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]);
        assert_eq!(default_sequence_lengths(30), vec![1, 2, 5, 10, 20, 30]);
    }

    #[test]
    fn csv_round_trip_and_schema_check() {
        let row = SweepResult {
            sweep_value: PI,
            mean: -1.5e-6,
            min: -3e-6,
            max: 2e-7,
            variance: 1e-12,
            n_configs: 40,
            n_states: 1280,
            master_seed: 7,
            runtime_s: 3.0,
        };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        let back = read_sweep_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0], SweepResult { runtime_s: 0.0, ..row });

        let bad = "sweep_value,mean,min_dE_over_kT\n1,2,3\n";
        let err = read_sweep_csv(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("mean_dE_over_kT") && err.contains("extra: [mean]"), "{err}");
        assert!(read_sweep_csv("".as_bytes()).is_err());
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 0.5).collect();
        let f = fit_line(&x, &y);
        assert_relative_eq!(f.slope, 3.0, max_relative = 1e-12);
        assert_relative_eq!(f.intercept, -0.5, max_relative = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, max_relative = 1e-12);
        assert!(f.slope_se < 1e-12);
        let (mean, min, max, var) = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!((mean, min, max, var), (2.0, 1.0, 3.0, 1.0));
        assert_eq!(summarize(&[4.0]).3, 0.0);
    }
}
