//! Pump setpoint selection from the critical outlet pressure, the baseline
//! flow-curve controller, and run comparison.

mod curve;
mod outlet;

pub use curve::{baseline_setpoints, SetpointCurve};
pub use outlet::{
    critical_of, critical_pressure, downstream_pressure, outlet_headloss, outlet_readings, CriticalOutlet,
    DownstreamPressure, OutletLossModel, OutletModels, OutletReading, DN150,
};

use serde::{Deserialize, Serialize};

use crate::exec::{map_indexed, Execution};
use crate::hydraulics::{HydraulicState, SolveError, Solver};
use crate::network::{Network, Terminal};
use crate::report::{level_of_service, pumping_energy, EnergyConfig, EnergySummary, LevelOfService};
use crate::units::m3s_to_lps;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SetpointError {
    #[error("negative outlet flow {0} L/s")]
    NegativeFlow(f64),
    #[error("outlet model: {0}")]
    Model(String),
    #[error("setpoint curve: {0}")]
    Curve(String),
    #[error("{0}")]
    Input(String),
    #[error("runs differ in horizon: {0} vs {1} steps")]
    HorizonMismatch(usize, usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetpointConfig {
    /// Minimum downstream head at active outlets, m.
    pub service_head: f64,
    /// Fraction of the correction applied each step, in (0, 1].
    pub relaxation: f64,
    pub lower: f64,
    pub upper: f64,
    /// Algorithm step, s.
    pub step: f64,
}

impl Default for SetpointConfig {
    fn default() -> Self {
        SetpointConfig { service_head: 35.0, relaxation: 1.0, lower: 81.9, upper: 102.3, step: 900.0 }
    }
}

impl SetpointConfig {
    pub fn validate(&self) -> Result<(), SetpointError> {
        let bad = |m: &str| Err(SetpointError::Input(m.to_string()));
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation must lie in (0, 1]");
        }
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper) {
            return bad("setpoint bounds must be finite with lower <= upper");
        }
        if !(self.step > 0.0) {
            return bad("step must be positive");
        }
        if !self.service_head.is_finite() {
            return bad("service head must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetpointStep {
    /// Epoch seconds.
    pub time: f64,
    /// Setpoint applied during this step, m.
    pub setpoint: f64,
    pub critical_outlet: Option<String>,
    /// NaN when no outlet is active.
    pub min_downstream_head: f64,
    /// Total demand, L/s.
    pub system_flow: f64,
    /// Flow leaving pump nodes, L/s.
    pub pump_flow: f64,
    /// Flow-weighted HGL at the pump nodes, m.
    pub delivery_head: f64,
    pub iterations: usize,
    /// Setpoint at its upper bound while the service head is still missed.
    pub los_infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetpointRun {
    /// s
    pub step: f64,
    pub steps: Vec<SetpointStep>,
}

impl SetpointRun {
    pub fn setpoints(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.setpoint).collect()
    }

    pub fn average_setpoint(&self) -> f64 {
        if self.steps.is_empty() {
            return f64::NAN;
        }
        self.steps.iter().map(|s| s.setpoint).sum::<f64>() / self.steps.len() as f64
    }

    pub fn energy(&self, cfg: &EnergyConfig) -> Result<EnergySummary, crate::report::ReportError> {
        let flows: Vec<f64> = self.steps.iter().map(|s| s.pump_flow).collect();
        let heads: Vec<f64> = self.steps.iter().map(|s| s.delivery_head).collect();
        pumping_energy(&flows, &heads, self.step, cfg)
    }

    pub fn level_of_service(&self, service_head: f64) -> LevelOfService {
        let heads: Vec<f64> = self.steps.iter().map(|s| s.min_downstream_head).collect();
        level_of_service(&heads, self.step, service_head)
    }

    /// Per-step trace as CSV.
    pub fn to_csv(&self) -> String {
        use crate::timetable::{csv_field, format_timestamp};
        use crate::units::fmt_sig;
        let mut out = String::from(
            "time,setpoint_m,critical_outlet,min_downstream_head_m,system_flow_lps,pump_flow_lps,delivery_head_m,iterations,los_infeasible\n",
        );
        for s in &self.steps {
            let head = if s.min_downstream_head.is_finite() { fmt_sig(s.min_downstream_head, 6) } else { String::new() };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                format_timestamp(s.time),
                fmt_sig(s.setpoint, 6),
                csv_field(s.critical_outlet.as_deref().unwrap_or("")),
                head,
                fmt_sig(s.system_flow, 6),
                fmt_sig(s.pump_flow, 6),
                fmt_sig(s.delivery_head, 6),
                s.iterations,
                s.los_infeasible
            ));
        }
        out
    }
}

impl SetpointRun {
    /// Reads a trace written by [`SetpointRun::to_csv`]. The step comes
    /// from the time stamps, or `default_step` for a single row.
    pub fn from_csv(text: &str, default_step: f64) -> Result<Self, SetpointError> {
        #[derive(Deserialize)]
        struct Row {
            time: String,
            setpoint_m: f64,
            critical_outlet: String,
            min_downstream_head_m: Option<f64>,
            system_flow_lps: f64,
            pump_flow_lps: f64,
            delivery_head_m: f64,
            iterations: usize,
            los_infeasible: bool,
        }
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut steps = Vec::new();
        for (i, rec) in reader.deserialize::<Row>().enumerate() {
            let r = rec.map_err(|e| SetpointError::Input(format!("trace row {}: {e}", i + 1)))?;
            let time = crate::timetable::parse_timestamp(&r.time)
                .ok_or_else(|| SetpointError::Input(format!("trace row {}: bad time stamp `{}`", i + 1, r.time)))?;
            steps.push(SetpointStep {
                time,
                setpoint: r.setpoint_m,
                critical_outlet: (!r.critical_outlet.is_empty()).then_some(r.critical_outlet),
                min_downstream_head: r.min_downstream_head_m.unwrap_or(f64::NAN),
                system_flow: r.system_flow_lps,
                pump_flow: r.pump_flow_lps,
                delivery_head: r.delivery_head_m,
                iterations: r.iterations,
                los_infeasible: r.los_infeasible,
            });
        }
        let step = match steps.as_slice() {
            [a, b, ..] => b.time - a.time,
            _ => default_step,
        };
        if !(step > 0.0) || steps.windows(2).any(|w| ((w[1].time - w[0].time) - step).abs() > 1e-6) {
            return Err(SetpointError::Input("trace time stamps are not uniformly spaced".into()));
        }
        Ok(SetpointRun { step, steps })
    }
}

/// Flow out of pump nodes (m³/s) and its flow-weighted head.
fn pump_delivery(net: &Network, state: &HydraulicState, heads: &[f64], setpoint: f64) -> (f64, f64) {
    let pumps: Vec<usize> =
        net.fixed_nodes().iter().enumerate().filter(|(_, &n)| net.nodes()[n].is_pump()).map(|(f, _)| f).collect();
    let mut outflow = vec![0.0; pumps.len()];
    for (k, &(from, to)) in net.pipe_ends().iter().enumerate() {
        for (i, &f) in pumps.iter().enumerate() {
            if from == Terminal::Fixed(f) {
                outflow[i] += state.q[k];
            }
            if to == Terminal::Fixed(f) {
                outflow[i] -= state.q[k];
            }
        }
    }
    let total: f64 = outflow.iter().sum();
    let head = if total.abs() > 0.0 {
        pumps.iter().zip(&outflow).map(|(&f, q)| heads[f] * q).sum::<f64>() / total
    } else {
        net.pump_station().map_or(setpoint, |n| net.nodes()[n].elevation + setpoint)
    };
    (total, head)
}

fn record(
    net: &Network,
    state: &HydraulicState,
    demands: &[f64],
    setpoint: f64,
    time: f64,
    models: &OutletModels,
    cfg: &SetpointConfig,
) -> Result<SetpointStep, SetpointError> {
    let heads = net.boundary_heads_for_setpoint(setpoint);
    let critical = critical_pressure(net, state, demands, models)?;
    let (pump_flow, delivery_head) = pump_delivery(net, state, &heads, setpoint);
    let min_head = critical.as_ref().map_or(f64::NAN, |c| c.head);
    Ok(SetpointStep {
        time,
        setpoint,
        critical_outlet: critical.map(|c| c.id),
        min_downstream_head: min_head,
        system_flow: m3s_to_lps(demands.iter().sum()),
        pump_flow: m3s_to_lps(pump_flow),
        delivery_head,
        iterations: state.iterations,
        los_infeasible: setpoint >= cfg.upper && min_head < cfg.service_head,
    })
}

fn check_inputs(net: &Network, demands: &[Vec<f64>], times: &[f64]) -> Result<(), SetpointError> {
    if net.pump_station().is_none() {
        return Err(SetpointError::Input("network has no pump-station node".into()));
    }
    if demands.len() != times.len() {
        return Err(SetpointError::Input(format!("{} demand rows for {} time stamps", demands.len(), times.len())));
    }
    Ok(())
}

/// Feedback recurrence: solve with `r(t)`, find the critical active outlet,
/// then `r(t+1) = clamp(r(t) + λ (service_head − p_min(t)))`. The setpoint
/// is held when no outlet is active. `demands` are m³/s per junction.
pub fn select_setpoints(
    solver: &Solver<'_>,
    demands: &[Vec<f64>],
    times: &[f64],
    r0: f64,
    models: &OutletModels,
    cfg: &SetpointConfig,
) -> Result<SetpointRun, SetpointError> {
    cfg.validate()?;
    let net = solver.network();
    check_inputs(net, demands, times)?;
    if !(r0 >= cfg.lower && r0 <= cfg.upper) {
        return Err(SetpointError::Input(format!("initial setpoint {r0} m outside [{}, {}]", cfg.lower, cfg.upper)));
    }
    let mut r = r0;
    let mut prev: Option<HydraulicState> = None;
    let mut steps = Vec::with_capacity(demands.len());
    for (t, d) in demands.iter().enumerate() {
        let heads = net.boundary_heads_for_setpoint(r);
        let state = solver
            .solve(d, &heads, prev.as_ref())
            .map_err(|e| SolveError::AtStep { step: t, source: Box::new(e) })?;
        let step = record(net, &state, d, r, times[t], models, cfg)?;
        if step.min_downstream_head.is_finite() {
            r = (r + cfg.relaxation * (cfg.service_head - step.min_downstream_head)).clamp(cfg.lower, cfg.upper);
        }
        steps.push(step);
        prev = Some(state);
    }
    Ok(SetpointRun { step: cfg.step, steps })
}

/// Hydraulics and outlet pressures for a given setpoint trace (e.g. the
/// baseline curve). Steps are independent.
pub fn evaluate_setpoints(
    solver: &Solver<'_>,
    demands: &[Vec<f64>],
    times: &[f64],
    setpoints: &[f64],
    models: &OutletModels,
    cfg: &SetpointConfig,
    exec: Execution,
) -> Result<SetpointRun, SetpointError> {
    cfg.validate()?;
    let net = solver.network();
    check_inputs(net, demands, times)?;
    if setpoints.len() != demands.len() {
        return Err(SetpointError::HorizonMismatch(setpoints.len(), demands.len()));
    }
    let steps = map_indexed(demands.len(), exec, |t| {
        let heads = net.boundary_heads_for_setpoint(setpoints[t]);
        let state = solver
            .solve(&demands[t], &heads, None)
            .map_err(|e| SolveError::AtStep { step: t, source: Box::new(e) })?;
        record(net, &state, &demands[t], setpoints[t], times[t], models, cfg)
    });
    Ok(SetpointRun { step: cfg.step, steps: steps.into_iter().collect::<Result<_, _>>()? })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: &'static str,
    pub unit: &'static str,
    pub a: f64,
    pub b: f64,
    /// b − a
    pub delta: f64,
    /// 100 · (b − a) / a; NaN when a is zero.
    pub percent: f64,
}

impl ComparisonRow {
    fn new(name: &'static str, unit: &'static str, a: f64, b: f64) -> Self {
        let delta = b - a;
        let percent = if a != 0.0 { 100.0 * delta / a } else { f64::NAN };
        ComparisonRow { name, unit, a, b, delta, percent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub los_a: LevelOfService,
    pub los_b: LevelOfService,
    pub energy_a: EnergySummary,
    pub energy_b: EnergySummary,
}

impl Comparison {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Side-by-side summary of two runs over the same horizon (`a` is the
/// reference, usually the baseline).
pub fn compare_runs(
    a: &SetpointRun,
    b: &SetpointRun,
    energy: &EnergyConfig,
    service_head: f64,
) -> Result<Comparison, SetpointError> {
    if a.steps.len() != b.steps.len() || a.step != b.step {
        return Err(SetpointError::HorizonMismatch(a.steps.len(), b.steps.len()));
    }
    let ea = a.energy(energy).map_err(|e| SetpointError::Input(e.to_string()))?;
    let eb = b.energy(energy).map_err(|e| SetpointError::Input(e.to_string()))?;
    let (la, lb) = (a.level_of_service(service_head), b.level_of_service(service_head));
    let nan = f64::NAN;
    let rows = vec![
        ComparisonRow::new("average_setpoint", "m", a.average_setpoint(), b.average_setpoint()),
        ComparisonRow::new("total_energy", "MWh", ea.energy_mwh, eb.energy_mwh),
        ComparisonRow::new("total_cost", "currency", ea.cost, eb.cost),
        ComparisonRow::new("volume_pumped", "ML", ea.volume_ml, eb.volume_ml),
        ComparisonRow::new("unit_energy", "kWh/ML", ea.unit_energy.unwrap_or(nan), eb.unit_energy.unwrap_or(nan)),
        ComparisonRow::new("ghg_emissions", "t", ea.ghg_t, eb.ghg_t),
        ComparisonRow::new("los_violation_steps", "steps", la.violation_steps as f64, lb.violation_steps as f64),
        ComparisonRow::new("los_max_deficit", "m", la.max_deficit, lb.max_deficit),
    ];
    Ok(Comparison { rows, los_a: la, los_b: lb, energy_a: ea, energy_b: eb })
}
