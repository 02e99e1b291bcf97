//! Command-line front end: flag parsing, dispatch, CSV and manifest output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::budget::{budget_for_estimate, max_ops_per_second, per_gate_from_sequence, weak_gate_rate, CoolingSpec, OpsBudget};
use crate::config::{parse_assignment, read_layer, resolve, ExperimentKind, RunConfig};
use crate::error::{Error, Result};
use crate::evolution::{readout_by_name, write_trace_csv};
use crate::experiments::{read_sweep_csv, write_sweep_csv, Experiment, SweepResult};
use crate::hamiltonians::convention_by_name;
use crate::hyperfine::bath_from_couplings;
use crate::oracle::{compare_single_gate, OracleComparison};

pub const OUT_DIR_ENV: &str = "SIBATH_OUT_DIR";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "sibath", version, about = "Zeeman-energy change of a ²⁹Si bath under donor-qubit X gates")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON config file or a previous run manifest.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $SIBATH_OUT_DIR or ./out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Any config key, e.g. `--set b_x=100mT` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Static field, e.g. 1T.
    #[arg(long, global = true, value_name = "FIELD")]
    pub bz: Option<String>,
    /// Drive field amplitude, e.g. 100mT.
    #[arg(long, global = true, value_name = "FIELD")]
    pub bx: Option<String>,
    /// e.g. 250mK.
    #[arg(long, global = true)]
    pub temperature: Option<String>,
    /// ²⁹Si site fraction, e.g. 800ppm.
    #[arg(long, global = true)]
    pub concentration: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of impurity placements.
    #[arg(long, global = true)]
    pub n_configs: Option<usize>,
    /// paper | desk
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// spin-half | printed
    #[arg(long, global = true)]
    pub convention: Option<String>,
    /// normalized | raw
    #[arg(long, global = true)]
    pub readout: Option<String>,
    /// enumerate | sample(k) | antithetic(k) | auto
    #[arg(long, global = true)]
    pub estimator: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Single gate over the angle grid.
    SweepAngle,
    /// Single gate at a fixed angle over the concentration grid.
    SweepConcentration,
    /// Random-angle gate sequences with free gaps.
    SweepSequence {
        /// Also write the per-gate trace of this placement's first bath state.
        #[arg(long)]
        trace_placement: Option<usize>,
    },
    /// Weak-drive gate rate and the operation rate a cooling capacity sustains.
    Budget {
        /// Cooling capacity, e.g. 100uW.
        #[arg(long)]
        capacity: Option<String>,
        /// Explicit dissipation per gate, e.g. 1e-28J.
        #[arg(long)]
        per_gate_joules: Option<String>,
        /// Sequence-sweep CSV to read the per-gate dissipation from.
        #[arg(long)]
        sequence_csv: Option<PathBuf>,
        #[arg(long)]
        qubits: Option<u64>,
    },
    /// Site and coupling CSV of every placement.
    DumpBath,
    /// Single-spin baths through the gate pipeline and the exact oracle.
    OracleCheck {
        /// One explicit coupling, e.g. 5MHz.
        #[arg(long)]
        coupling: Option<String>,
        /// Placement whose spins are checked one at a time.
        #[arg(long)]
        placement: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SweepAngle => "sweep-angle",
            Command::SweepConcentration => "sweep-concentration",
            Command::SweepSequence { .. } => "sweep-sequence",
            Command::Budget { .. } => "budget",
            Command::DumpBath => "dump-bath",
            Command::OracleCheck { .. } => "oracle-check",
        }
    }

    fn stem(&self) -> String {
        self.name().replace('-', "_")
    }
}

/// Everything needed to reproduce an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub subcommand: String,
    pub master_seed: u64,
    pub config: BTreeMap<String, Value>,
    pub started_at: String,
    pub finished_at: String,
    pub runtime_s: f64,
    pub outputs: Vec<String>,
    /// Extra, subcommand-specific results.
    pub summary: Value,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest_path: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub exit_code: i32,
    pub summary: Value,
}

/// Flag layer built from the named flags, subcommand flags and `--set`.
fn flag_layer(g: &GlobalArgs, cmd: &Command) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    let mut put = |k: &str, v: Value| {
        m.insert(k.to_string(), v);
    };
    let text = |s: &Option<String>| s.clone().map(Value::String);
    for (k, v) in [
        ("b_z", text(&g.bz)),
        ("b_x", text(&g.bx)),
        ("temperature", text(&g.temperature)),
        ("concentration", text(&g.concentration)),
        ("scale_profile", text(&g.profile)),
        ("convention", text(&g.convention)),
        ("readout", text(&g.readout)),
        ("estimator", text(&g.estimator)),
    ] {
        if let Some(v) = v {
            put(k, v);
        }
    }
    if let Some(s) = g.seed {
        put("master_seed", json!(s));
    }
    if let Some(n) = g.n_configs {
        put("n_configs", json!(n));
    }
    if let Some(w) = g.workers {
        put("workers", json!(w));
    }
    match cmd {
        Command::SweepSequence { trace_placement: Some(p) } => put("trace_placement", json!(p)),
        Command::Budget { capacity, per_gate_joules, sequence_csv, qubits } => {
            if let Some(c) = capacity {
                put("capacity", json!(c));
            }
            if let Some(j) = per_gate_joules {
                put("per_gate_energy", json!(j));
            }
            if let Some(p) = sequence_csv {
                put("sequence_csv", json!(p.to_string_lossy()));
            }
            if let Some(q) = qubits {
                put("qubit_count", json!(q));
            }
        }
        Command::OracleCheck { coupling, placement } => {
            if let Some(c) = coupling {
                put("oracle_coupling", json!(c));
            }
            if let Some(p) = placement {
                put("oracle_placement", json!(p));
            }
        }
        _ => {}
    }
    for s in &g.set {
        let (k, v) = parse_assignment(s)?;
        m.insert(k, v);
    }
    Ok(m)
}

pub fn resolve_config(g: &GlobalArgs, cmd: &Command) -> Result<RunConfig> {
    let file = g.config.as_deref().map(read_layer).transpose()?;
    resolve(file, flag_layer(g, cmd)?)
}

fn out_dir(g: &GlobalArgs) -> PathBuf {
    g.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_sweep(dir: &Path, stem: &str, rows: &[SweepResult]) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.csv"));
    write_sweep_csv(create(&path)?, rows)?;
    Ok(path)
}

fn sweep_summary(rows: &[SweepResult]) -> Value {
    json!({
        "points": rows.len(),
        "runtime_s": rows.first().map(|r| r.runtime_s).unwrap_or(0.0),
        "means": rows.iter().map(|r| [r.sweep_value, r.mean]).collect::<Vec<_>>(),
    })
}

/// Runs one subcommand and writes its outputs and manifest.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve_config(&cli.global, &cli.command)?;
    let dir = out_dir(&cli.global);
    std::fs::create_dir_all(&dir)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let stem = cli.command.stem();
    let mut exit_code = 0;

    let (outputs, summary) = match &cli.command {
        Command::SweepAngle => {
            let exp = Experiment::new(cfg.experiment_setup(ExperimentKind::Angle)?)?;
            let rows = exp.sweep_angle(&cfg.angle_grid())?;
            (vec![write_sweep(&dir, &stem, &rows)?], sweep_summary(&rows))
        }
        Command::SweepConcentration => {
            let exp = Experiment::new(cfg.experiment_setup(ExperimentKind::Concentration)?)?;
            let rows = exp.sweep_concentration(&cfg.concentration_grid(), cfg.sweep_angle)?;
            (vec![write_sweep(&dir, &stem, &rows)?], sweep_summary(&rows))
        }
        Command::SweepSequence { .. } => {
            let exp = Experiment::new(cfg.experiment_setup(ExperimentKind::Sequence)?)?;
            let gap = std::f64::consts::PI / exp.frequencies.omega_x_p;
            let lengths = cfg.sequence_grid();
            let rows = exp.sweep_sequence(&lengths, gap)?;
            let mut outputs = vec![write_sweep(&dir, &stem, &rows)?];
            if let Some(p) = cfg.trace_placement {
                outputs.push(write_trace(&exp, &dir, &stem, p, &lengths, gap)?);
            }
            (outputs, sweep_summary(&rows))
        }
        Command::Budget { .. } => run_budget(&cfg, &dir, &stem)?,
        Command::DumpBath => run_dump(&cfg, &dir)?,
        Command::OracleCheck { .. } => {
            let (path, rows) = run_oracle(&cfg, &dir, &stem)?;
            let disagree = rows.iter().filter(|r| !r.sign_agrees()).count();
            if disagree > 0 {
                exit_code = Error::Numerical(String::new()).exit_code();
            }
            (vec![path], json!({ "comparisons": rows, "sign_disagreements": disagree }))
        }
    };

    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: cli.command.name().to_string(),
        master_seed: cfg.master_seed,
        config: cfg.to_map(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        runtime_s: clock.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|p| p.to_string_lossy().into_owned()).collect(),
        summary: summary.clone(),
    };
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    serde_json::to_writer_pretty(create(&manifest_path)?, &manifest)?;
    Ok(Outcome { manifest_path, outputs, exit_code, summary })
}

fn write_trace(exp: &Experiment, dir: &Path, stem: &str, placement: usize, lengths: &[usize], gap: f64) -> Result<PathBuf> {
    if placement >= exp.setup.n_configs {
        return Err(Error::Config(format!(
            "trace_placement {placement} out of range for {} placements",
            exp.setup.n_configs
        )));
    }
    let bath = exp.placement_bath(exp.setup.concentration, placement)?;
    let seed = crate::lattice::derive_seed(exp.placement_seed(placement), 0x5354_4154);
    let states = exp.setup.strategies.estimator.states(&bath, &exp.setup.constants, exp.setup.fields.temperature, seed)?;
    let max_len = *lengths.last().expect("non-empty lengths");
    let angles = exp.sequence_angles(placement, max_len);
    let mut trace = Vec::with_capacity(max_len);
    exp.run_sequence(&bath, states[0].state, &angles, gap, &[max_len], Some(&mut trace))?;
    let path = dir.join(format!("{stem}_trace.csv"));
    write_trace_csv(create(&path)?, &trace)?;
    Ok(path)
}

fn run_budget(cfg: &RunConfig, dir: &Path, stem: &str) -> Result<(Vec<PathBuf>, Value)> {
    let constants = crate::model::PhysicalConstants::default();
    let weak_fields = crate::model::FieldConfig { b_x: cfg.weak_b_x, ..cfg.fields() };
    let rate = weak_gate_rate(&constants, &weak_fields)?;
    let capacity = cfg
        .capacity
        .ok_or_else(|| Error::Config("budget needs `capacity` (W at the operating temperature)".into()))?;
    let cooling = CoolingSpec { capacity, temperature: cfg.temperature };
    let (per_gate, per_gate_over_kt, clamped, budget): (f64, f64, bool, OpsBudget) =
        match (cfg.per_gate_energy, &cfg.sequence_csv) {
            (Some(j), None) => {
                (j, j / constants.kt(cfg.temperature), false, max_ops_per_second(&cooling, j, cfg.qubit_count)?)
            }
            (None, Some(p)) => {
                let file = File::open(p).map_err(|e| Error::Config(format!("cannot open sequence_csv {p}: {e}")))?;
                let rows = read_sweep_csv(file)?;
                let est = per_gate_from_sequence(&rows, &constants, cfg.temperature)?;
                (est.joules, est.per_gate_over_kt, est.clamped, budget_for_estimate(&cooling, &est, cfg.qubit_count)?)
            }
            _ => {
                return Err(Error::Config(
                    "budget needs exactly one of `per_gate_energy` and `sequence_csv`".into(),
                ))
            }
        };
    let path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "weak_gate_rate_per_s",
        "per_gate_J",
        "per_gate_over_kT",
        "clamped",
        "capacity_W",
        "qubit_count",
        "total_ops_per_s",
        "per_qubit_ops_per_s",
    ])?;
    w.write_record([
        format!("{rate:e}"),
        format!("{per_gate:e}"),
        format!("{per_gate_over_kt:e}"),
        clamped.to_string(),
        format!("{capacity:e}"),
        cfg.qubit_count.to_string(),
        format!("{:e}", budget.total),
        format!("{:e}", budget.per_qubit),
    ])?;
    w.flush()?;
    let summary = json!({
        "weak_gate_rate_per_s": rate,
        "per_gate_J": per_gate,
        "clamped": clamped,
        "total_ops_per_s": budget.total,
        "per_qubit_ops_per_s": budget.per_qubit,
        "note": "upper bound ignoring every other heat load",
    });
    Ok((vec![path], summary))
}

fn run_dump(cfg: &RunConfig, dir: &Path) -> Result<(Vec<PathBuf>, Value)> {
    let exp = Experiment::new(cfg.experiment_setup(ExperimentKind::Angle)?)?;
    let mut outputs = Vec::with_capacity(exp.setup.n_configs);
    let mut counts = Vec::with_capacity(exp.setup.n_configs);
    for i in 0..exp.setup.n_configs {
        let bath = exp.placement_bath(cfg.concentration, i)?;
        let path = dir.join(format!("bath_{i:04}.csv"));
        bath.write_csv(create(&path)?)?;
        counts.push(bath.n_bath());
        outputs.push(path);
    }
    Ok((outputs, json!({ "spins_per_placement": counts, "lattice_sites": exp.sites().len() })))
}

fn run_oracle(cfg: &RunConfig, dir: &Path, stem: &str) -> Result<(PathBuf, Vec<OracleComparison>)> {
    let rows = oracle_comparisons(cfg)?;
    let path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "coupling_MHz",
        "bath_state",
        "angle",
        "dyson_dE_over_kT",
        "exact_dE_over_kT",
        "relative_difference",
        "overlap",
        "w_norm",
        "sign_agrees",
    ])?;
    for (a, r) in &rows {
        w.write_record([
            format!("{:e}", a / (2.0 * std::f64::consts::PI * 1e6)),
            r.bath_state.to_string(),
            format!("{:e}", r.angle),
            format!("{:e}", r.dyson_over_kt),
            format!("{:e}", r.exact_over_kt),
            format!("{:e}", r.relative_difference()),
            format!("{:e}", r.overlap),
            format!("{:e}", r.w_norm),
            r.sign_agrees().to_string(),
        ])?;
    }
    w.flush()?;
    Ok((path, rows.into_iter().map(|r| r.1).collect()))
}

/// Single-spin π-gate comparisons: either one explicit coupling or every
/// spin of the chosen placement, each in both bath states.
pub fn oracle_comparisons(cfg: &RunConfig) -> Result<Vec<(f64, OracleComparison)>> {
    let setup = cfg.experiment_setup(ExperimentKind::Angle)?;
    let exp = Experiment::new(setup)?;
    exp.setup.fields.require_regime(crate::model::Regime::Strong, "oracle-check")?;
    let couplings: Vec<f64> = match cfg.oracle_coupling {
        Some(a) => vec![a],
        None => {
            if cfg.oracle_placement >= exp.setup.n_configs {
                return Err(Error::Config(format!(
                    "oracle_placement {} out of range for {} placements",
                    cfg.oracle_placement, exp.setup.n_configs
                )));
            }
            let bath = exp.placement_bath(cfg.concentration, cfg.oracle_placement)?;
            bath.coupled_spins.iter().map(|s| s.a_n).collect()
        }
    };
    let convention = convention_by_name(&cfg.convention)?;
    let readout = readout_by_name(&cfg.readout)?;
    let mut out = Vec::with_capacity(2 * couplings.len());
    for a in couplings {
        let bath = bath_from_couplings(&exp.frequencies, cfg.a_p, &[a]);
        for state in 0..2 {
            let c = compare_single_gate(
                &exp.setup.constants,
                cfg.temperature,
                &bath,
                convention.clone(),
                readout.as_ref(),
                state,
                cfg.sweep_angle,
                None,
            )?;
            out.push((a, c));
        }
    }
    Ok(out)
}

/// Parses `args` (program name first) and runs without printing.
pub fn run_from<I, T>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(&cli)
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(outcome) => {
            for p in &outcome.outputs {
                println!("wrote {}", p.display());
            }
            println!("manifest {}", outcome.manifest_path.display());
            if outcome.exit_code != 0 {
                eprintln!("error: dyson1 and exact oracle disagree in sign");
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
