//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 hydraulic convergence failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde_json::json;

use crate::calibration::{self, CalibrationError, CalibrationProblem, RoughnessGroups, SiteMetrics};
use crate::config::Config;
use crate::exec::{join, Execution};
use crate::hydraulics::{demand_matrix, simulate_period, Boundary, SolveError, Solver};
use crate::network::{parse_network_with_warnings, Network, NodeKind, Terminal};
use crate::report::{comparison_table, comparison_text, run_summary_text};
use crate::scada::{self, SensorMeta};
use crate::setpoint::{
    baseline_setpoints, compare_runs, evaluate_setpoints, select_setpoints, OutletModels, SetpointCurve, SetpointError,
    SetpointRun,
};
use crate::timetable::{format_timestamp, parse_timetable, TimeTable};
use crate::units::{fmt_sig, m3s_to_lps, Unit};

#[derive(Debug, Parser)]
#[command(name = "pipenet", version, about = "Pipe-network hydraulics, calibration and pump setpoints")]
struct Cli {
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Regrid raw sensor records and remove constant pressure offsets.
    Preprocess(PreprocessArgs),
    /// Extended-period hydraulic simulation.
    Simulate(SimulateArgs),
    /// Fit material roughness groups to observed pressures.
    Calibrate(CalibrateArgs),
    /// Fit metrics for given roughness groups, without fitting.
    Validate(ValidateArgs),
    /// Pump setpoints from the outlet-pressure feedback rule or the flow curve.
    SetpointRun(SetpointRunArgs),
    /// Baseline curve against the feedback rule on the same demands.
    SetpointCompare(SetpointCompareArgs),
    /// Energy and level-of-service summary of a setpoint trace.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct NetworkInput {
    #[arg(long)]
    network: PathBuf,
    /// Junction demand CSV.
    #[arg(long)]
    demands: PathBuf,
    /// Demand unit when the file has no unit pragma.
    #[arg(long)]
    demand_unit: Option<Unit>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Raw pressure CSV, one column per sensor.
    #[arg(long)]
    pressures: PathBuf,
    #[arg(long)]
    pressure_unit: Option<Unit>,
    /// Raw system flow CSV.
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    flow_unit: Option<Unit>,
    /// Column of the flow file to use (default: the only one).
    #[arg(long)]
    flow_column: Option<String>,
    /// Sensor metadata CSV: id,node_id,elevation,kind.
    #[arg(long)]
    sensors: PathBuf,
    /// Reference sensor taken as offset-free.
    #[arg(long)]
    reference: Option<String>,
    /// Output grid step, s.
    #[arg(long)]
    step: Option<f64>,
    /// Network used to cross-check sensor elevations.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Name output columns by node id instead of sensor id.
    #[arg(long)]
    node_columns: bool,
    /// Corrected pressure CSV.
    #[arg(long)]
    out: PathBuf,
    /// Offset report (default: stdout).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    input: NetworkInput,
    /// Constant pump setpoint, m.
    #[arg(long, conflicts_with = "setpoints")]
    setpoint: Option<f64>,
    /// Setpoint trace CSV (one column, m).
    #[arg(long)]
    setpoints: Option<PathBuf>,
    /// Roughness groups TOML applied over the file's pipe roughness.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Junction heads CSV.
    #[arg(long)]
    out: PathBuf,
    /// Pipe flows CSV (L/s).
    #[arg(long)]
    flows: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Debug, Args)]
struct ObservationInput {
    /// Observed pressure-head CSV (m), columns named by node or sensor.
    #[arg(long)]
    observed: PathBuf,
    /// Sensor metadata CSV mapping sensor ids to nodes.
    #[arg(long)]
    sensors: Option<PathBuf>,
    /// Observed column holding the pump-station pressure head.
    #[arg(long)]
    station_pressure: Option<String>,
    /// Roughness groups TOML.
    #[arg(long)]
    groups: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: NetworkInput,
    #[command(flatten)]
    obs: ObservationInput,
    #[arg(long)]
    multistart: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Held-out demands for a validation block.
    #[arg(long, requires = "holdout_observed")]
    holdout_demands: Option<PathBuf>,
    #[arg(long, requires = "holdout_demands")]
    holdout_observed: Option<PathBuf>,
    /// Calibrated groups as TOML.
    #[arg(long)]
    groups_out: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: NetworkInput,
    #[command(flatten)]
    obs: ObservationInput,
    /// JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Simulated site pressure heads CSV.
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Improved,
    Baseline,
}

#[derive(Debug, Args)]
struct SetpointOptions {
    /// Flow-to-setpoint curve CSV: flow_lps,setpoint_m.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Initial setpoint, m (default: curve value at the first step's flow).
    #[arg(long)]
    r0: Option<f64>,
    #[arg(long)]
    lower: Option<f64>,
    #[arg(long)]
    upper: Option<f64>,
    #[arg(long)]
    relaxation: Option<f64>,
    #[arg(long)]
    service_head: Option<f64>,
    /// Algorithm step, s; demands must be on this grid.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    suction_hgl: Option<f64>,
    #[arg(long)]
    pump_efficiency: Option<f64>,
}

#[derive(Debug, Args)]
struct SetpointRunArgs {
    #[command(flatten)]
    input: NetworkInput,
    #[command(flatten)]
    opts: SetpointOptions,
    #[arg(long, value_enum, default_value = "improved")]
    mode: Mode,
    /// Per-step trace CSV.
    #[arg(long)]
    out: PathBuf,
    /// Summary (default: stdout).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SetpointCompareArgs {
    #[command(flatten)]
    input: NetworkInput,
    #[command(flatten)]
    opts: SetpointOptions,
    /// Comparison as key = value text.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace_baseline: Option<PathBuf>,
    #[arg(long)]
    trace_improved: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Setpoint trace CSV.
    #[arg(long)]
    trace: PathBuf,
    /// Second trace to compare against (taken as the reference).
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    service_head: Option<f64>,
    #[arg(long)]
    suction_hgl: Option<f64>,
    #[arg(long)]
    pump_efficiency: Option<f64>,
    /// Summary (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Convergence(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Convergence(m) => m,
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        if e.is_convergence_failure() {
            CliError::Convergence(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Solve(s) => s.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SetpointError> for CliError {
    fn from(e: SetpointError) -> Self {
        match e {
            SetpointError::Solve(s) => s.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read `{}`: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write `{}`: {e}", path.display())))
}

fn emit(path: Option<&Path>, text: &str, stdout: &mut String) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, text),
        None => {
            stdout.push_str(text);
            Ok(())
        }
    }
}

fn load_network(path: &Path) -> Result<Network, CliError> {
    let (net, warnings) = parse_network_with_warnings(&read(path)?).map_err(data(&path.display().to_string()))?;
    for w in warnings {
        log::warn!("{}: line {}: {}", path.display(), w.line, w.message);
    }
    Ok(net)
}

fn load_table(path: &Path, unit: Option<Unit>) -> Result<TimeTable, CliError> {
    parse_timetable(&read(path)?, unit).map_err(data(&path.display().to_string()))
}

fn load_groups(path: &Path) -> Result<RoughnessGroups, CliError> {
    RoughnessGroups::from_toml(&read(path)?).map_err(data(&path.display().to_string()))
}

/// Runs the CLI on `argv` (including the program name). Output files are
/// written directly; text meant for the terminal is returned.
pub fn run_captured(argv: &[String]) -> Result<String, CliError> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(e.to_string()),
                _ => Err(CliError::Usage(e.to_string())),
            };
        }
    };
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| CliError::Data(e.to_string()))?,
        None => Config::default(),
    };
    if cli.sequential {
        cfg.execution = Execution::Sequential;
    }
    let mut out = String::new();
    match cli.command {
        Command::Preprocess(a) => preprocess(a, &cfg, &mut out)?,
        Command::Simulate(a) => simulate(a, cfg, &mut out)?,
        Command::Calibrate(a) => calibrate(a, cfg, &mut out)?,
        Command::Validate(a) => validate(a, &cfg, &mut out)?,
        Command::SetpointRun(a) => setpoint_run(a, cfg, &mut out)?,
        Command::SetpointCompare(a) => setpoint_compare(a, cfg, &mut out)?,
        Command::Report(a) => report(a, cfg, &mut out)?,
    }
    Ok(out)
}

/// Runs the CLI and returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    match run_captured(argv) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(CliError::Usage(m)) => {
            eprintln!("{}", m.trim_end());
            1
        }
        Err(e) => {
            eprintln!("error: {}", e.message().trim_end());
            e.exit_code()
        }
    }
}

fn preprocess(a: PreprocessArgs, cfg: &Config, out: &mut String) -> Result<(), CliError> {
    let p = &cfg.preprocess;
    let step = a.step.unwrap_or(p.step);
    let sensors = scada::parse_sensor_meta(&read(&a.sensors)?).map_err(data(&a.sensors.display().to_string()))?;
    let raw_p = load_table(&a.pressures, a.pressure_unit)?.converted(Unit::Metres).map_err(data("pressures"))?;
    let raw_q = load_table(&a.flow, a.flow_unit)?;
    if let Some(path) = &a.network {
        let net = load_network(path)?;
        for w in scada::check_sensors(&net, &sensors).map_err(data("sensors"))? {
            log::warn!("{w}");
        }
    }
    let (Some(ps), Some(pe), Some(qs), Some(qe)) = (raw_p.start(), raw_p.end(), raw_q.start(), raw_q.end()) else {
        return Err(CliError::Data("empty pressure or flow record".into()));
    };
    let (start, end) = (ps.max(qs), pe.min(qe));
    let pressures = scada::resample_range(&raw_p, start, end, step, p.pressure_method).map_err(data("pressures"))?;
    let pressures = scada::fill_short_gaps(&pressures, p.max_fill_gap);
    let flow = scada::resample_range(&raw_q, start, end, step, p.flow_method).map_err(data("flow"))?;
    let column = match &a.flow_column {
        Some(c) => c.clone(),
        None => match flow.columns().len() {
            1 => flow.columns().keys().next().expect("one column").clone(),
            n => return Err(CliError::Data(format!("flow file has {n} columns; pick one with --flow-column"))),
        },
    };
    let windows = scada::detect_static_windows(&flow, &column, p.static_threshold, p.static_min_duration)
        .map_err(data("flow"))?;
    let reference = a
        .reference
        .clone()
        .or_else(|| p.reference.clone())
        .or_else(|| sensors.iter().find(|s| s.kind == scada::SensorKind::Pressure).map(|s| s.id.clone()))
        .ok_or_else(|| CliError::Data("no pressure sensors in metadata".into()))?;
    let report = scada::estimate_offsets(&pressures, &sensors, &reference, &windows, &p.offset_rules())
        .map_err(data("offsets"))?;
    let (corrected, warnings) = scada::apply_corrections(&pressures, &report);
    for w in warnings {
        log::warn!("{w}");
    }
    let corrected = if a.node_columns { rename_to_nodes(&corrected, &sensors)? } else { corrected };
    write(&a.out, &corrected.to_csv())?;

    let mut text = String::new();
    let _ = writeln!(text, "reference = {}", report.reference);
    let _ = writeln!(text, "step_s = {}", fmt_sig(step, 6));
    let _ = writeln!(text, "static_windows = {}", windows.len());
    for (i, w) in windows.iter().enumerate() {
        let _ = writeln!(text, "window.{i} = {} {}", format_timestamp(w.start), format_timestamp(w.end));
    }
    for (id, s) in &report.sensors {
        let _ = writeln!(text, "\n[sensor.{id}]");
        let _ = writeln!(text, "offset_m = {}", fmt_sig(s.offset, 6));
        let _ = writeln!(text, "n_static_windows = {}", s.n_static_windows);
        let _ = writeln!(text, "window_stddev_m = {}", fmt_sig(s.window_stddev, 6));
        let confidence = serde_json::to_value(s.confidence).expect("enum serialises");
        let _ = writeln!(text, "confidence = {}", confidence.as_str().unwrap_or_default());
    }
    emit(a.report.as_deref(), &text, out)
}

fn rename_to_nodes(t: &TimeTable, sensors: &[SensorMeta]) -> Result<TimeTable, CliError> {
    let mut cols = IndexMap::new();
    for (k, v) in t.columns() {
        let node = sensors.iter().find(|s| &s.id == k).map_or(k.clone(), |s| s.node_id.clone());
        if cols.insert(node.clone(), v.clone()).is_some() {
            return Err(CliError::Data(format!("two sensors map to node `{node}`")));
        }
    }
    TimeTable::new(t.times().to_vec(), t.unit(), cols).map_err(data("rename"))
}

fn simulate(a: SimulateArgs, mut cfg: Config, out: &mut String) -> Result<(), CliError> {
    if let Some(n) = a.max_iterations {
        cfg.solver.max_iterations = n;
    }
    let net = load_network(&a.input.network)?;
    let demands = load_table(&a.input.demands, a.input.demand_unit)?;
    let d = demand_matrix(&net, &demands)?;
    let boundary = if let Some(r) = a.setpoint {
        Boundary::Setpoints(vec![r; d.len()])
    } else if let Some(path) = &a.setpoints {
        let t = load_table(path, Some(Unit::Metres))?;
        if t.columns().len() != 1 {
            return Err(CliError::Data(format!("`{}` must hold exactly one setpoint column", path.display())));
        }
        Boundary::Setpoints(t.columns()[0].clone())
    } else {
        Boundary::Constant(net.default_boundary_heads())
    };
    let groups = a.groups.as_deref().map(load_groups).transpose()?;
    if let Some(g) = &groups {
        g.validate(&net).map_err(data("groups"))?;
    }
    let solver = Solver::with_groups(&net, cfg.solver, groups.as_ref());
    let states = simulate_period(&solver, &d, &boundary)?;

    let mut heads = IndexMap::new();
    for (j, &n) in net.junctions().iter().enumerate() {
        heads.insert(net.nodes()[n].id.clone(), states.iter().map(|s| s.h[j]).collect());
    }
    let table = TimeTable::new(demands.times().to_vec(), Unit::Metres, heads).map_err(data("heads"))?;
    write(&a.out, &table.to_csv())?;
    if let Some(path) = &a.flows {
        let mut flows = IndexMap::new();
        for (k, p) in net.pipes().iter().enumerate() {
            flows.insert(p.id.clone(), states.iter().map(|s| m3s_to_lps(s.q[k])).collect());
        }
        let table = TimeTable::new(demands.times().to_vec(), Unit::LitresPerSecond, flows).map_err(data("flows"))?;
        write(path, &table.to_csv())?;
    }
    let max_it = states.iter().map(|s| s.iterations).max().unwrap_or(0);
    let _ = writeln!(out, "steps = {}\nmax_iterations = {max_it}", states.len());
    Ok(())
}

/// Observed table keyed by junction id, plus the station-pressure column
/// if any (pressure head at the pump nodes).
fn split_observations(
    net: &Network,
    observed: &TimeTable,
    sensors: Option<&[SensorMeta]>,
    station: Option<&str>,
) -> Result<(TimeTable, Option<Vec<f64>>), CliError> {
    let mut cols = IndexMap::new();
    let mut station_col = None;
    for (key, v) in observed.columns() {
        if station == Some(key.as_str()) {
            station_col = Some(v.clone());
            continue;
        }
        let node = sensors
            .and_then(|s| s.iter().find(|m| &m.id == key))
            .map_or(key.clone(), |m| m.node_id.clone());
        let idx = net.node_idx(&node).ok_or_else(|| CliError::Data(format!("observed column `{key}`: unknown node `{node}`")))?;
        match (net.terminal(idx), &net.nodes()[idx].kind) {
            (Terminal::Junction(_), _) => {
                cols.insert(node, v.clone());
            }
            (Terminal::Fixed(_), NodeKind::FixedHead { pump: true, .. }) if station.is_none() => {
                station_col = Some(v.clone());
            }
            _ => log::warn!("observed column `{key}` sits on a fixed-head node; ignored"),
        }
    }
    if let Some(s) = station {
        if station_col.is_none() {
            return Err(CliError::Data(format!("station pressure column `{s}` not in observed file")));
        }
    }
    let t = TimeTable::new(observed.times().to_vec(), Unit::Metres, cols).map_err(data("observed"))?;
    Ok((t, station_col))
}

struct Prepared {
    net: Network,
    demands: Vec<Vec<f64>>,
    observed: TimeTable,
    boundary: Boundary,
}

fn prepare(
    network: &Network,
    demands_path: &Path,
    demand_unit: Option<Unit>,
    observed_path: &Path,
    obs: &ObservationInput,
) -> Result<Prepared, CliError> {
    let demands = load_table(demands_path, demand_unit)?;
    let observed = load_table(observed_path, Some(Unit::Metres))?.converted(Unit::Metres).map_err(data("observed"))?;
    if demands.len() != observed.len()
        || demands.times().iter().zip(observed.times()).any(|(a, b)| (a - b).abs() > 1e-6)
    {
        return Err(CliError::Data(format!(
            "`{}` and `{}` are not on the same time axis",
            demands_path.display(),
            observed_path.display()
        )));
    }
    let sensors = match &obs.sensors {
        Some(p) => Some(scada::parse_sensor_meta(&read(p)?).map_err(data(&p.display().to_string()))?),
        None => None,
    };
    let (observed, station) = split_observations(network, &observed, sensors.as_deref(), obs.station_pressure.as_deref())?;
    let d = demand_matrix(network, &demands)?;
    let boundary = match station {
        Some(r) => {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Data("station pressure has missing values".into()));
            }
            Boundary::Setpoints(r)
        }
        None => Boundary::Constant(network.default_boundary_heads()),
    };
    Ok(Prepared { net: network.clone(), demands: d, observed, boundary })
}

fn metrics_json(sites: &IndexMap<String, SiteMetrics>) -> serde_json::Value {
    serde_json::to_value(sites).expect("metrics serialise")
}

fn groups_json(g: &RoughnessGroups) -> serde_json::Value {
    let m: BTreeMap<String, serde_json::Value> = g
        .iter()
        .map(|(k, v)| (k.to_string(), json!({ "roughness_mm": v.roughness, "min_mm": v.min, "max_mm": v.max })))
        .collect();
    serde_json::to_value(m).expect("groups serialise")
}

fn calibrate(a: CalibrateArgs, mut cfg: Config, out: &mut String) -> Result<(), CliError> {
    if let Some(n) = a.multistart {
        cfg.calibration.multistart = n;
    }
    if let Some(s) = a.seed {
        cfg.calibration.seed = s;
    }
    let net = load_network(&a.input.network)?;
    let init = load_groups(&a.obs.groups)?;
    let p = prepare(&net, &a.input.demands, a.input.demand_unit, &a.obs.observed, &a.obs)?;
    let problem = CalibrationProblem::new(&p.net, p.demands, &p.observed, p.boundary, cfg.solver)?
        .with_execution(cfg.execution);
    let result = calibration::calibrate(&problem, &init, &cfg.calibration)?;

    let mut report = json!({
        "roughness": groups_json(&result.groups),
        "calibration_sites": metrics_json(&result.sites),
        "summary": {
            "objective_m2": result.objective,
            "initial_objective_m2": result.initial_objective,
            "sum_rmse_m": result.sum_rmse,
            "sum_mse_m2": result.sum_mse,
            "iterations": result.iterations,
            "evaluations": result.evaluations,
            "converged": result.converged,
        },
    });
    if let (Some(hd), Some(ho)) = (&a.holdout_demands, &a.holdout_observed) {
        let h = prepare(&net, hd, a.input.demand_unit, ho, &a.obs)?;
        let times = h.observed.times().to_vec();
        let hp = CalibrationProblem::new(&h.net, h.demands, &h.observed, h.boundary, cfg.solver)?
            .with_execution(cfg.execution);
        let v = calibration::validate(&hp, &result.groups, &times)?;
        report["validation_sites"] = metrics_json(&v.sites);
        report["summary"]["validation_sum_rmse_m"] = json!(v.sum_rmse);
    }
    write(&a.out, &(serde_json::to_string_pretty(&report).expect("json") + "\n"))?;
    if let Some(path) = &a.groups_out {
        write(path, &result.groups.to_toml())?;
    }
    let _ = writeln!(out, "objective = {}", fmt_sig(result.objective, 6));
    for (m, g) in result.groups.iter() {
        let _ = writeln!(out, "roughness.{m} = {}", fmt_sig(g.roughness, 6));
    }
    let _ = writeln!(out, "converged = {}", result.converged);
    Ok(())
}

fn validate(a: ValidateArgs, cfg: &Config, out: &mut String) -> Result<(), CliError> {
    let net = load_network(&a.input.network)?;
    let groups = load_groups(&a.obs.groups)?;
    let p = prepare(&net, &a.input.demands, a.input.demand_unit, &a.obs.observed, &a.obs)?;
    let times = p.observed.times().to_vec();
    let problem = CalibrationProblem::new(&p.net, p.demands, &p.observed, p.boundary, cfg.solver)?
        .with_execution(cfg.execution);
    let v = calibration::validate(&problem, &groups, &times)?;
    let report = json!({
        "roughness": groups_json(&groups),
        "validation_sites": metrics_json(&v.sites),
        "summary": { "sum_rmse_m": v.sum_rmse },
    });
    write(&a.out, &(serde_json::to_string_pretty(&report).expect("json") + "\n"))?;
    if let Some(path) = &a.traces {
        write(path, &v.simulated.to_csv())?;
    }
    let _ = writeln!(out, "sum_rmse = {}", fmt_sig(v.sum_rmse, 6));
    Ok(())
}

struct SetpointSetup {
    net: Network,
    demands: Vec<Vec<f64>>,
    times: Vec<f64>,
    curve: SetpointCurve,
    models: OutletModels,
}

fn setpoint_setup(input: &NetworkInput, opts: &SetpointOptions, cfg: &mut Config) -> Result<SetpointSetup, CliError> {
    let sp = &mut cfg.setpoint;
    let overrides = [
        (&mut sp.lower, opts.lower),
        (&mut sp.upper, opts.upper),
        (&mut sp.relaxation, opts.relaxation),
        (&mut sp.service_head, opts.service_head),
        (&mut sp.step, opts.step),
        (&mut cfg.energy.suction_hgl, opts.suction_hgl),
        (&mut cfg.energy.pump_efficiency, opts.pump_efficiency),
    ];
    for (slot, v) in overrides {
        if let Some(v) = v {
            *slot = v;
        }
    }
    cfg.setpoint.validate()?;
    let net = load_network(&input.network)?;
    let table = load_table(&input.demands, input.demand_unit)?;
    if table.len() > 1 && table.step().is_none_or(|s| (s - cfg.setpoint.step).abs() > 1e-6) {
        return Err(CliError::Data(format!(
            "demands must be on a uniform {} s grid (found {:?})",
            cfg.setpoint.step,
            table.step()
        )));
    }
    let demands = demand_matrix(&net, &table)?;
    let curve = match &opts.curve {
        Some(p) => SetpointCurve::from_csv(&read(p)?)?,
        None => SetpointCurve::default(),
    };
    let models = OutletModels::for_network(&net)?;
    Ok(SetpointSetup { net, demands, times: table.times().to_vec(), curve, models })
}

fn system_flows(demands: &[Vec<f64>]) -> Vec<f64> {
    demands.iter().map(|row| m3s_to_lps(row.iter().sum())).collect()
}

fn baseline_run(s: &SetpointSetup, solver: &Solver<'_>, cfg: &Config) -> Result<SetpointRun, CliError> {
    let flows = system_flows(&s.demands);
    let table = TimeTable::new(s.times.clone(), Unit::LitresPerSecond, [("system".to_string(), flows)].into_iter().collect())
        .map_err(data("system flow"))?;
    let r = baseline_setpoints(&s.curve, &table, None)?;
    Ok(evaluate_setpoints(solver, &s.demands, &s.times, &r, &s.models, &cfg.setpoint, cfg.execution)?)
}

fn improved_run(s: &SetpointSetup, solver: &Solver<'_>, cfg: &Config, r0: Option<f64>) -> Result<SetpointRun, CliError> {
    let r0 = r0
        .unwrap_or_else(|| s.curve.setpoint_at(system_flows(&s.demands).first().copied().unwrap_or(0.0)))
        .clamp(cfg.setpoint.lower, cfg.setpoint.upper);
    Ok(select_setpoints(solver, &s.demands, &s.times, r0, &s.models, &cfg.setpoint)?)
}

fn summary(run: &SetpointRun, cfg: &Config) -> Result<String, CliError> {
    let e = run.energy(&cfg.energy).map_err(data("energy"))?;
    let los = run.level_of_service(cfg.setpoint.service_head);
    Ok(run_summary_text(run, &e, &los))
}

fn setpoint_run(a: SetpointRunArgs, mut cfg: Config, out: &mut String) -> Result<(), CliError> {
    let s = setpoint_setup(&a.input, &a.opts, &mut cfg)?;
    let solver = Solver::new(&s.net, cfg.solver);
    let run = match a.mode {
        Mode::Baseline => baseline_run(&s, &solver, &cfg)?,
        Mode::Improved => improved_run(&s, &solver, &cfg, a.opts.r0)?,
    };
    write(&a.out, &run.to_csv())?;
    emit(a.summary.as_deref(), &summary(&run, &cfg)?, out)
}

fn setpoint_compare(a: SetpointCompareArgs, mut cfg: Config, out: &mut String) -> Result<(), CliError> {
    let s = setpoint_setup(&a.input, &a.opts, &mut cfg)?;
    let solver = Solver::new(&s.net, cfg.solver);
    let (base, improved) =
        join(cfg.execution, || baseline_run(&s, &solver, &cfg), || improved_run(&s, &solver, &cfg, a.opts.r0));
    let (base, improved) = (base?, improved?);
    let cmp = compare_runs(&base, &improved, &cfg.energy, cfg.setpoint.service_head)?;
    write(&a.out, &comparison_text(&cmp))?;
    if let Some(p) = &a.trace_baseline {
        write(p, &base.to_csv())?;
    }
    if let Some(p) = &a.trace_improved {
        write(p, &improved.to_csv())?;
    }
    out.push_str(&comparison_table(&cmp));
    Ok(())
}

fn report(a: ReportArgs, mut cfg: Config, out: &mut String) -> Result<(), CliError> {
    if let Some(v) = a.service_head {
        cfg.setpoint.service_head = v;
    }
    if let Some(v) = a.suction_hgl {
        cfg.energy.suction_hgl = v;
    }
    if let Some(v) = a.pump_efficiency {
        cfg.energy.pump_efficiency = v;
    }
    let run = SetpointRun::from_csv(&read(&a.trace)?, cfg.setpoint.step)?;
    let text = match &a.baseline {
        None => summary(&run, &cfg)?,
        Some(path) => {
            let base = SetpointRun::from_csv(&read(path)?, cfg.setpoint.step)?;
            let cmp = compare_runs(&base, &run, &cfg.energy, cfg.setpoint.service_head)?;
            comparison_text(&cmp)
        }
    };
    emit(a.out.as_deref(), &text, out)
}
