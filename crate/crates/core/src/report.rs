//! Pumping energy, cost, emissions and level-of-service figures, and
//! their text rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::setpoint::{Comparison, SetpointRun};
use crate::units::{fmt_sig, lps_to_m3s};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("negative pump lift {lift} m at step {step} (suction above delivery)")]
    NegativeLift { step: usize, lift: f64 },
    #[error("energy config: {0}")]
    Config(String),
    #[error("{0} flows for {1} heads")]
    Length(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Wire-to-water efficiency.
    pub pump_efficiency: f64,
    /// kg/m³
    pub water_density: f64,
    /// Source water level on the elevation datum, m.
    pub suction_hgl: f64,
    /// Currency per kWh.
    pub tariff: f64,
    /// kg CO₂e per kWh.
    pub emission_factor: f64,
    pub gravity: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            pump_efficiency: 0.8,
            water_density: 998.0,
            suction_hgl: 0.0,
            tariff: 0.109,
            emission_factor: 1.09,
            gravity: 9.81,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<(), ReportError> {
        if !(self.pump_efficiency > 0.0 && self.pump_efficiency <= 1.0) {
            return Err(ReportError::Config("pump_efficiency must lie in (0, 1]".into()));
        }
        for (name, v) in [
            ("water_density", self.water_density),
            ("tariff", self.tariff),
            ("emission_factor", self.emission_factor),
            ("gravity", self.gravity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ReportError::Config(format!("{name} must be positive")));
            }
        }
        if !self.suction_hgl.is_finite() {
            return Err(ReportError::Config("suction_hgl must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySummary {
    pub energy_mwh: f64,
    pub cost: f64,
    pub ghg_t: f64,
    pub volume_ml: f64,
    /// kWh/ML; `None` when nothing was pumped.
    pub unit_energy: Option<f64>,
}

/// Steady hydraulic power `ρ g Q H / η` held over each step of `step_s`
/// seconds. Flows in L/s, delivery heads in m on the elevation datum.
pub fn pumping_energy(
    flows_lps: &[f64],
    delivery_heads: &[f64],
    step_s: f64,
    cfg: &EnergyConfig,
) -> Result<EnergySummary, ReportError> {
    cfg.validate()?;
    if flows_lps.len() != delivery_heads.len() {
        return Err(ReportError::Length(flows_lps.len(), delivery_heads.len()));
    }
    let mut joules = 0.0;
    let mut volume = 0.0;
    for (t, (&q, &h)) in flows_lps.iter().zip(delivery_heads).enumerate() {
        let lift = h - cfg.suction_hgl;
        if lift < 0.0 {
            return Err(ReportError::NegativeLift { step: t, lift });
        }
        let q = lps_to_m3s(q);
        joules += cfg.water_density * cfg.gravity * q * lift / cfg.pump_efficiency * step_s;
        volume += q * step_s;
    }
    let kwh = joules / 3.6e6;
    let ml = volume / 1000.0;
    Ok(EnergySummary {
        energy_mwh: kwh / 1000.0,
        cost: kwh * cfg.tariff,
        ghg_t: kwh * cfg.emission_factor / 1000.0,
        volume_ml: ml,
        unit_energy: (ml > 0.0).then(|| kwh / ml),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelOfService {
    pub violation_steps: usize,
    /// m
    pub max_deficit: f64,
    /// Longest contiguous run at the maximum deficit, s.
    pub max_deficit_duration_s: f64,
    /// Longest contiguous run with any deficit, s.
    pub longest_violation_s: f64,
}

/// Deficit per step is `max(0, service_head − head)`; steps with no
/// active outlet (NaN head) count as satisfied.
pub fn level_of_service(min_heads: &[f64], step_s: f64, service_head: f64) -> LevelOfService {
    let deficits: Vec<f64> =
        min_heads.iter().map(|&h| if h.is_finite() { (service_head - h).max(0.0) } else { 0.0 }).collect();
    let max_deficit = deficits.iter().copied().fold(0.0, f64::max);
    let longest_run = |pred: &dyn Fn(f64) -> bool| {
        let (mut best, mut cur) = (0usize, 0usize);
        for &d in &deficits {
            cur = if pred(d) { cur + 1 } else { 0 };
            best = best.max(cur);
        }
        best as f64 * step_s
    };
    LevelOfService {
        violation_steps: deficits.iter().filter(|&&d| d > 0.0).count(),
        max_deficit,
        max_deficit_duration_s: if max_deficit > 0.0 { longest_run(&|d| (d - max_deficit).abs() <= 1e-6) } else { 0.0 },
        longest_violation_s: longest_run(&|d| d > 0.0),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "null".to_string(), |v| fmt_sig(v, 6))
}

/// `key = value` lines for one run.
pub fn run_summary_text(run: &SetpointRun, energy: &EnergySummary, los: &LevelOfService) -> String {
    let mut s = String::new();
    let infeasible = run.steps.iter().filter(|s| s.los_infeasible).count();
    let lines = [
        ("steps", run.steps.len().to_string()),
        ("step_s", fmt_sig(run.step, 6)),
        ("average_setpoint_m", fmt_sig(run.average_setpoint(), 6)),
        ("energy_mwh", fmt_sig(energy.energy_mwh, 6)),
        ("cost", fmt_sig(energy.cost, 6)),
        ("ghg_t", fmt_sig(energy.ghg_t, 6)),
        ("volume_ml", fmt_sig(energy.volume_ml, 6)),
        ("unit_energy_kwh_per_ml", opt(energy.unit_energy)),
        ("los_violation_steps", los.violation_steps.to_string()),
        ("los_max_deficit_m", fmt_sig(los.max_deficit, 6)),
        ("los_max_deficit_duration_s", fmt_sig(los.max_deficit_duration_s, 6)),
        ("los_longest_violation_s", fmt_sig(los.longest_violation_s, 6)),
        ("los_infeasible_steps", infeasible.to_string()),
    ];
    for (k, v) in lines {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// `key = value` lines, one block per compared quantity.
pub fn comparison_text(c: &Comparison) -> String {
    let mut s = String::new();
    for r in &c.rows {
        let _ = writeln!(s, "[{}]", r.name);
        let _ = writeln!(s, "unit = {}", r.unit);
        let _ = writeln!(s, "a = {}", fmt_sig(r.a, 6));
        let _ = writeln!(s, "b = {}", fmt_sig(r.b, 6));
        let _ = writeln!(s, "delta = {}", fmt_sig(r.delta, 6));
        let _ = writeln!(s, "percent = {}", fmt_sig(r.percent, 6));
        s.push('\n');
    }
    for (label, l) in [("los_a", &c.los_a), ("los_b", &c.los_b)] {
        let _ = writeln!(s, "[{label}]");
        let _ = writeln!(s, "violation_steps = {}", l.violation_steps);
        let _ = writeln!(s, "max_deficit_m = {}", fmt_sig(l.max_deficit, 6));
        let _ = writeln!(s, "max_deficit_duration_s = {}", fmt_sig(l.max_deficit_duration_s, 6));
        let _ = writeln!(s, "longest_violation_s = {}", fmt_sig(l.longest_violation_s, 6));
        s.push('\n');
    }
    s
}

/// Fixed-width table for terminals.
pub fn comparison_table(c: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<22} {:>9} {:>12} {:>12} {:>12} {:>9}", "quantity", "unit", "a", "b", "delta", "%");
    for r in &c.rows {
        let _ = writeln!(
            s,
            "{:<22} {:>9} {:>12} {:>12} {:>12} {:>9}",
            r.name,
            r.unit,
            fmt_sig(r.a, 6),
            fmt_sig(r.b, 6),
            fmt_sig(r.delta, 6),
            if r.percent.is_finite() { format!("{:.2}", r.percent) } else { "-".into() }
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_hand_value() {
        let cfg = EnergyConfig::default();
        let e = pumping_energy(&[1000.0; 4], &[50.0; 4], 900.0, &cfg).unwrap();
        let expected = 998.0 * 9.81 * 50.0 / 0.8 * 3600.0 / 3.6e9;
        assert!((e.energy_mwh - expected).abs() < 1e-12);
        assert!((e.energy_mwh - 0.612).abs() < 1e-3);
        assert!((e.volume_ml - 3.6).abs() < 1e-12);
    }

    #[test]
    fn zero_flow_has_no_unit_energy() {
        let e = pumping_energy(&[0.0; 3], &[50.0; 3], 900.0, &EnergyConfig::default()).unwrap();
        assert_eq!((e.energy_mwh, e.volume_ml, e.unit_energy), (0.0, 0.0, None));
    }

    #[test]
    fn negative_lift_rejected() {
        let cfg = EnergyConfig { suction_hgl: 60.0, ..Default::default() };
        assert!(matches!(pumping_energy(&[1.0], &[50.0], 900.0, &cfg), Err(ReportError::NegativeLift { step: 0, .. })));
    }

    #[test]
    fn energy_scales_with_config() {
        let base = EnergyConfig::default();
        let e1 = pumping_energy(&[800.0, 900.0], &[120.0, 130.0], 900.0, &base).unwrap();
        let e2 = pumping_energy(&[800.0, 900.0], &[120.0, 130.0], 900.0, &EnergyConfig { pump_efficiency: 0.4, tariff: 0.218, ..base }).unwrap();
        assert!((e2.energy_mwh / e1.energy_mwh - 2.0).abs() < 1e-12);
        assert!((e2.cost / e1.cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn comparison_rows_are_consistent() {
        // 464 ML at 322 kWh/ML
        assert!((464.0 * 322.0 / 1000.0 - 149.4f64).abs() < 0.1);
    }

    #[test]
    fn los_cases() {
        let ok = level_of_service(&[36.0, 35.0, 40.0], 900.0, 35.0);
        assert_eq!((ok.violation_steps, ok.max_deficit), (0, 0.0));
        let heads: Vec<f64> = [0.0, 1.2, 3.51, 3.51, 0.0].iter().map(|d| 35.0 - d).collect();
        let l = level_of_service(&heads, 900.0, 35.0);
        assert_eq!(l.violation_steps, 3);
        assert!((l.max_deficit - 3.51).abs() < 1e-12);
        assert_eq!(l.max_deficit_duration_s, 1800.0);
        assert_eq!(l.longest_violation_s, 2700.0);
        assert_eq!(level_of_service(&heads, 900.0, 0.0).violation_steps, 0);
        assert_eq!(level_of_service(&[f64::NAN], 900.0, 35.0).violation_steps, 0);
    }
}
