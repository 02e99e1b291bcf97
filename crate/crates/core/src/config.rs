//! Flat JSON run configuration: defaults, file and flag layers, unit-bearing
//! values, and resolution into experiment objects.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evolution::{propagation_by_name, readout_by_name, ClockPolicy};
use crate::experiments::{
    default_angle_grid, default_sequence_lengths, estimator_by_name, ExperimentSetup, Strategies,
    DEFAULT_CONCENTRATIONS_PPM, DEFAULT_ENUMERATE_LIMIT,
};
use crate::hamiltonians::convention_by_name;
use crate::hyperfine::{envelope_by_name, DEFAULT_A_P, DEFAULT_BOHR_RADIUS, DEFAULT_COUPLING_CEILING};
use crate::model::{FieldConfig, PhysicalConstants, DEFAULT_WEAK_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleProfile {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Angle,
    Concentration,
    Sequence,
}

impl ScaleProfile {
    pub fn n_configs(self, kind: ExperimentKind) -> usize {
        match (self, kind) {
            (ScaleProfile::Desk, _) => 40,
            (ScaleProfile::Paper, ExperimentKind::Sequence) => 120,
            (ScaleProfile::Paper, _) => 200,
        }
    }

    pub fn max_sequence_length(self) -> usize {
        match self {
            ScaleProfile::Paper => 10_000,
            ScaleProfile::Desk => 1_000,
        }
    }
}

/// Every key a configuration file or `--set` flag may carry. Quantities are
/// stored in SI (rad/s for angular frequencies, fractions for concentrations)
/// and may be written with a unit suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(deserialize_with = "de::tesla")]
    pub b_z: f64,
    #[serde(deserialize_with = "de::tesla")]
    pub b_x: f64,
    /// Drive angular frequency; `null` drives at the ³¹P Larmor frequency.
    #[serde(deserialize_with = "de::opt_angular")]
    pub omega_d: Option<f64>,
    #[serde(deserialize_with = "de::kelvin")]
    pub temperature: f64,
    pub weak_threshold: f64,
    #[serde(deserialize_with = "de::nanometre")]
    pub cube_side: f64,
    #[serde(deserialize_with = "de::fraction")]
    pub concentration: f64,
    pub envelope: String,
    #[serde(deserialize_with = "de::nanometre")]
    pub bohr_radius_a: f64,
    #[serde(deserialize_with = "de::nanometre")]
    pub bohr_radius_b: f64,
    #[serde(deserialize_with = "de::angular")]
    pub a_p: f64,
    #[serde(deserialize_with = "de::angular")]
    pub coupling_ceiling: f64,

    pub convention: String,
    pub readout: String,
    pub propagation: String,
    /// `null` picks `auto` for single-gate sweeps and `sample(1)` for sequences.
    pub estimator: Option<String>,
    pub enumerate_limit: usize,
    pub clock_policy: ClockPolicy,

    pub master_seed: u64,
    pub scale_profile: ScaleProfile,
    /// `null` takes the profile's count.
    pub n_configs: Option<usize>,
    pub max_spins: usize,
    pub max_attempts: u32,
    /// `null` uses every core.
    pub workers: Option<usize>,

    pub angle_points: usize,
    /// Explicit angle grid, rad; overrides `angle_points`.
    pub angles: Option<Vec<f64>>,
    /// Gate angle of the concentration sweep, rad.
    pub sweep_angle: f64,
    /// `null` takes the default grid.
    #[serde(deserialize_with = "de::opt_fractions")]
    pub concentrations: Option<Vec<f64>>,
    /// `null` takes 1, 2, 5, 10, … up to the profile's maximum.
    pub sequence_lengths: Option<Vec<usize>>,
    /// Placement whose per-gate trace is written by the sequence sweep.
    pub trace_placement: Option<usize>,

    /// W
    #[serde(deserialize_with = "de::opt_watts")]
    pub capacity: Option<f64>,
    pub qubit_count: u64,
    /// J
    #[serde(deserialize_with = "de::opt_joules")]
    pub per_gate_energy: Option<f64>,
    pub sequence_csv: Option<String>,
    /// Drive amplitude used for the weak-regime gate rate, T.
    #[serde(deserialize_with = "de::tesla")]
    pub weak_b_x: f64,

    /// Single explicit coupling for `oracle-check`; otherwise each spin of
    /// `oracle_placement` is checked on its own.
    #[serde(deserialize_with = "de::opt_angular")]
    pub oracle_coupling: Option<f64>,
    pub oracle_placement: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            b_z: 1.0,
            b_x: 0.1,
            omega_d: None,
            temperature: 0.25,
            weak_threshold: DEFAULT_WEAK_THRESHOLD,
            cube_side: 5.0,
            concentration: 800e-6,
            envelope: "isotropic".into(),
            bohr_radius_a: DEFAULT_BOHR_RADIUS,
            bohr_radius_b: DEFAULT_BOHR_RADIUS,
            a_p: DEFAULT_A_P,
            coupling_ceiling: DEFAULT_COUPLING_CEILING,
            convention: "spin-half".into(),
            readout: "normalized".into(),
            propagation: "dyson1".into(),
            estimator: None,
            enumerate_limit: DEFAULT_ENUMERATE_LIMIT,
            clock_policy: ClockPolicy::Continuous,
            master_seed: 20_240_601,
            scale_profile: ScaleProfile::Paper,
            n_configs: None,
            max_spins: 48,
            max_attempts: 10_000,
            workers: None,
            angle_points: 17,
            angles: None,
            sweep_angle: PI,
            concentrations: None,
            sequence_lengths: None,
            trace_placement: None,
            capacity: None,
            qubit_count: 10_000_000,
            per_gate_energy: None,
            sequence_csv: None,
            weak_b_x: 1e-3,
            oracle_coupling: None,
            oracle_placement: 0,
        }
    }
}

/// All configuration keys in declaration order.
pub fn known_keys() -> Vec<String> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("RunConfig serializes to an object"),
    }
}

fn check_keys(layer: &Map<String, Value>, origin: &str) -> Result<()> {
    let known = known_keys();
    for key in layer.keys() {
        if !known.contains(key) {
            let best = known
                .iter()
                .map(|k| (strsim::jaro_winkler(key, k), k))
                .max_by(|a, b| a.0.total_cmp(&b.0));
            let hint = match best {
                Some((score, k)) if score > 0.8 => format!("; did you mean `{k}`?"),
                _ => String::new(),
            };
            return Err(Error::Config(format!("unknown key `{key}` in {origin}{hint}")));
        }
    }
    Ok(())
}

/// A configuration file: either a flat config object or a run manifest, whose
/// `config` member is used.
pub fn read_layer(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(Error::Config(format!("config {} must be a JSON object", path.display())));
    };
    if map.contains_key("manifest_version") {
        return match map.remove("config") {
            Some(Value::Object(c)) => Ok(c),
            _ => Err(Error::Config(format!("manifest {} has no config object", path.display()))),
        };
    }
    Ok(map)
}

/// Parses one `key=value` flag. Values that parse as JSON keep their type;
/// anything else is a string (so `b_x=100mT` works unquoted).
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Defaults ← file ← flags, then validation.
pub fn resolve(file: Option<Map<String, Value>>, flags: Map<String, Value>) -> Result<RunConfig> {
    let Value::Object(mut merged) = serde_json::to_value(RunConfig::default())? else {
        unreachable!("RunConfig serializes to an object")
    };
    if let Some(f) = file {
        check_keys(&f, "config file")?;
        merged.extend(f);
    }
    check_keys(&flags, "flags")?;
    merged.extend(flags);
    let cfg: RunConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn fields(&self) -> FieldConfig {
        FieldConfig {
            b_z: self.b_z,
            b_x: self.b_x,
            omega_d: self.omega_d,
            temperature: self.temperature,
            weak_threshold: self.weak_threshold,
        }
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        self.fields().validate()?;
        envelope_by_name(&self.envelope, self.bohr_radius_a, self.bohr_radius_b)?;
        convention_by_name(&self.convention)?;
        readout_by_name(&self.readout)?;
        propagation_by_name(&self.propagation)?;
        if let Some(e) = &self.estimator {
            estimator_by_name(e, self.enumerate_limit)?;
        }
        if !(0.0..=1.0).contains(&self.concentration) {
            return Err(Error::Config(format!("concentration must lie in [0, 1], got {}", self.concentration)));
        }
        if self.n_configs == Some(0) {
            return Err(Error::Config("n_configs must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.angle_points == 0 {
            return Err(Error::Config("angle_points must be >= 1".into()));
        }
        if !(0.0..=2.0 * PI).contains(&self.sweep_angle) {
            return Err(Error::Config(format!("sweep_angle must lie in [0, 2π], got {}", self.sweep_angle)));
        }
        if self.qubit_count == 0 {
            return Err(Error::Config("qubit_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_configs_for(&self, kind: ExperimentKind) -> usize {
        self.n_configs.unwrap_or_else(|| self.scale_profile.n_configs(kind))
    }

    pub fn angle_grid(&self) -> Vec<f64> {
        self.angles.clone().unwrap_or_else(|| default_angle_grid(self.angle_points))
    }

    pub fn concentration_grid(&self) -> Vec<f64> {
        self.concentrations
            .clone()
            .unwrap_or_else(|| DEFAULT_CONCENTRATIONS_PPM.iter().map(|p| p * 1e-6).collect())
    }

    pub fn sequence_grid(&self) -> Vec<usize> {
        self.sequence_lengths
            .clone()
            .unwrap_or_else(|| default_sequence_lengths(self.scale_profile.max_sequence_length()))
    }

    pub fn estimator_for(&self, kind: ExperimentKind) -> String {
        self.estimator.clone().unwrap_or_else(|| match kind {
            ExperimentKind::Sequence => "sample(1)".into(),
            _ => "auto".into(),
        })
    }

    pub fn strategies(&self, kind: ExperimentKind) -> Result<Strategies> {
        Ok(Strategies {
            convention: convention_by_name(&self.convention)?,
            readout: readout_by_name(&self.readout)?,
            propagation: propagation_by_name(&self.propagation)?,
            estimator: estimator_by_name(&self.estimator_for(kind), self.enumerate_limit)?,
            clock_policy: self.clock_policy,
        })
    }

    pub fn experiment_setup(&self, kind: ExperimentKind) -> Result<ExperimentSetup> {
        Ok(ExperimentSetup {
            constants: PhysicalConstants::default(),
            fields: self.fields(),
            cube_side: self.cube_side,
            concentration: self.concentration,
            envelope: envelope_by_name(&self.envelope, self.bohr_radius_a, self.bohr_radius_b)?,
            a_p: self.a_p,
            coupling_ceiling: self.coupling_ceiling,
            max_spins: self.max_spins,
            max_attempts: self.max_attempts,
            master_seed: self.master_seed,
            n_configs: self.n_configs_for(kind),
            workers: self.workers,
            strategies: self.strategies(kind)?,
        })
    }

    /// The resolved configuration as a flat JSON object.
    pub fn to_map(&self) -> BTreeMap<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m.into_iter().collect(),
            _ => unreachable!("RunConfig serializes to an object"),
        }
    }
}

/// A unit suffix: value × 10^`exp10` × `factor`.
pub type Unit = (&'static str, i32, f64);

/// Parses `"<number><unit>"` for one of `units`, or a bare number in SI.
/// Decimal prefixes are applied in the exponent, so `100uW` is exactly `1e-4`.
pub fn parse_quantity(text: &str, units: &[Unit], what: &str) -> Result<f64> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|&(i, c)| c.is_ascii_alphabetic() && !(matches!(c, 'e' | 'E') && is_exponent(t, i)) || !c.is_ascii())
        .or_else(|| t.char_indices().find(|&(_, c)| c == '%' || c == '/'))
        .map(|(i, _)| i)
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let num = num.trim();
    let bad = || Error::Config(format!("cannot parse {what} `{text}`"));
    num.parse::<f64>().map_err(|_| bad())?;
    let unit = unit.trim();
    if unit.is_empty() {
        return num.parse().map_err(|_| bad());
    }
    let &(_, exp10, factor) = units.iter().find(|u| u.0 == unit).ok_or_else(|| {
        let names: Vec<&str> = units.iter().map(|u| u.0).collect();
        Error::Config(format!("unknown {what} unit `{unit}` in `{text}` (use {})", names.join(", ")))
    })?;
    let (mantissa, exp) = match num.find(['e', 'E']) {
        Some(i) => (&num[..i], num[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (num, 0),
    };
    let scaled: f64 = format!("{mantissa}e{}", exp + exp10).parse().map_err(|_| bad())?;
    Ok(scaled * factor)
}

/// True when the `e` at byte `i` is an exponent marker (digit before, digit or sign after).
fn is_exponent(t: &str, i: usize) -> bool {
    let b = t.as_bytes();
    i > 0 && b[i - 1].is_ascii_digit() && b.get(i + 1).is_some_and(|c| c.is_ascii_digit() || *c == b'-' || *c == b'+')
}

pub const TESLA: &[Unit] = &[("T", 0, 1.0), ("mT", -3, 1.0), ("uT", -6, 1.0), ("µT", -6, 1.0)];
pub const KELVIN: &[Unit] = &[("K", 0, 1.0), ("mK", -3, 1.0), ("uK", -6, 1.0), ("µK", -6, 1.0)];
pub const NANOMETRE: &[Unit] = &[("nm", 0, 1.0), ("A", -1, 1.0), ("Å", -1, 1.0), ("um", 3, 1.0), ("µm", 3, 1.0)];
pub const FRACTION: &[Unit] = &[("ppm", -6, 1.0), ("PPM", -6, 1.0), ("%", -2, 1.0)];
/// Ordinary frequencies, converted to rad/s.
pub const ANGULAR: &[Unit] = &[
    ("Hz", 0, 2.0 * PI),
    ("kHz", 3, 2.0 * PI),
    ("MHz", 6, 2.0 * PI),
    ("GHz", 9, 2.0 * PI),
    ("rad/s", 0, 1.0),
];
pub const WATTS: &[Unit] = &[("W", 0, 1.0), ("mW", -3, 1.0), ("uW", -6, 1.0), ("µW", -6, 1.0), ("nW", -9, 1.0)];
pub const JOULES: &[Unit] = &[("J", 0, 1.0), ("zJ", -21, 1.0), ("yJ", -24, 1.0)];

mod de {
    use super::*;
    use serde::Deserializer;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    fn quantity<'de, D: Deserializer<'de>>(d: D, units: &[Unit], what: &str) -> std::result::Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(x) => Ok(x),
            Raw::Text(s) => parse_quantity(&s, units, what).map_err(serde::de::Error::custom),
        }
    }

    fn optional<'de, D: Deserializer<'de>>(
        d: D,
        units: &[Unit],
        what: &str,
    ) -> std::result::Result<Option<f64>, D::Error> {
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Number(x)) => Ok(Some(x)),
            Some(Raw::Text(s)) => parse_quantity(&s, units, what).map(Some).map_err(serde::de::Error::custom),
        }
    }

    pub fn tesla<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        quantity(d, TESLA, "field")
    }
    pub fn kelvin<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        quantity(d, KELVIN, "temperature")
    }
    pub fn nanometre<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        quantity(d, NANOMETRE, "length")
    }
    pub fn fraction<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        quantity(d, FRACTION, "concentration")
    }
    pub fn angular<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        quantity(d, ANGULAR, "frequency")
    }
    pub fn opt_angular<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        optional(d, ANGULAR, "frequency")
    }
    pub fn opt_watts<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        optional(d, WATTS, "power")
    }
    pub fn opt_joules<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        optional(d, JOULES, "energy")
    }
    pub fn opt_fractions<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<f64>>, D::Error> {
        match Option::<Vec<Raw>>::deserialize(d)? {
            None => Ok(None),
            Some(v) => v
                .into_iter()
                .map(|r| match r {
                    Raw::Number(x) => Ok(x),
                    Raw::Text(s) => parse_quantity(&s, FRACTION, "concentration").map_err(serde::de::Error::custom),
                })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}
