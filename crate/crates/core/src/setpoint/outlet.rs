//! Head loss across metered irrigation outlets.

use std::collections::BTreeMap;

use serde::Serialize;

use super::SetpointError;
use crate::hydraulics::HydraulicState;
use crate::network::Network;
use crate::units::m3s_to_lps;

pub const DN150: OutletLossModel =
    OutletLossModel { a0: 5.95, a1: 0.0456, a2: 0.00221, q_max: 100.0, diameter_mm: Some(150.0) };

/// `p_l(q) = a2 q² + a1 q + a0`, q in L/s, loss in m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutletLossModel {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    /// Upper end of the fitted flow range, L/s.
    pub q_max: f64,
    pub diameter_mm: Option<f64>,
}

impl OutletLossModel {
    /// DN150 coefficients scaled by (150/DN)⁴.
    pub fn scaled(diameter_mm: f64) -> Self {
        let s = (150.0 / diameter_mm).powi(4);
        OutletLossModel {
            a0: DN150.a0 * s,
            a1: DN150.a1 * s,
            a2: DN150.a2 * s,
            q_max: DN150.q_max * (diameter_mm / 150.0).powi(2),
            diameter_mm: Some(diameter_mm),
        }
    }

    pub fn validate(&self) -> Result<(), SetpointError> {
        let finite = [self.a0, self.a1, self.a2, self.q_max].iter().all(|c| c.is_finite()) && self.q_max > 0.0;
        let mut probes = vec![0.0, self.q_max];
        if self.a2 != 0.0 {
            let vertex = -self.a1 / (2.0 * self.a2);
            if vertex > 0.0 && vertex < self.q_max {
                probes.push(vertex);
            }
        }
        let ok = finite && probes.iter().all(|&q| self.loss_unchecked(q) >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(SetpointError::Model(format!("outlet loss coefficients {self:?} give negative or non-finite loss")))
        }
    }

    fn loss_unchecked(&self, q: f64) -> f64 {
        (self.a2 * q + self.a1) * q + self.a0
    }
}

/// Loss at flow `q` (L/s). Flows above `q_max` are still evaluated and
/// logged as extrapolation.
pub fn outlet_headloss(model: &OutletLossModel, q: f64) -> Result<f64, SetpointError> {
    if !(q >= 0.0) {
        return Err(SetpointError::NegativeFlow(q));
    }
    if q > model.q_max {
        log::warn!("outlet flow {q} L/s beyond fitted range {} L/s", model.q_max);
    }
    Ok(model.loss_unchecked(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DownstreamPressure {
    /// m
    pub head: f64,
    /// Loss exceeds the upstream pressure head.
    pub infeasible: bool,
}

pub fn downstream_pressure(upstream: f64, q: f64, model: &OutletLossModel) -> Result<DownstreamPressure, SetpointError> {
    let head = upstream - outlet_headloss(model, q)?;
    Ok(DownstreamPressure { head, infeasible: head < 0.0 })
}

/// Loss models keyed by outlet class.
#[derive(Debug, Clone, PartialEq)]
pub struct OutletModels {
    models: BTreeMap<String, OutletLossModel>,
}

fn class_diameter(class: &str) -> Option<f64> {
    let digits = class.strip_prefix("DN").or_else(|| class.strip_prefix("dn"))?;
    digits.parse::<f64>().ok().filter(|d| *d > 0.0)
}

impl OutletModels {
    /// Coefficients from the network's outlet table where given; other
    /// `DNxxx` classes fall back to the scaled DN150 model.
    pub fn for_network(net: &Network) -> Result<Self, SetpointError> {
        let mut models = BTreeMap::new();
        for (class, spec) in net.outlet_classes() {
            let base = class_diameter(class).map_or(DN150, OutletLossModel::scaled);
            let m = OutletLossModel {
                a0: spec.a0,
                a1: spec.a1,
                a2: spec.a2,
                q_max: spec.q_max.unwrap_or(base.q_max),
                diameter_mm: class_diameter(class),
            };
            m.validate()?;
            models.insert(class.clone(), m);
        }
        for &j in &net.outlet_junctions() {
            let node = &net.nodes()[net.junctions()[j]];
            let class = node.outlet_class.as_deref().expect("outlet has class");
            if models.contains_key(class) {
                continue;
            }
            let d = class_diameter(class).ok_or_else(|| {
                SetpointError::Model(format!("outlet class `{class}` of `{}` has no coefficients and no DN size", node.id))
            })?;
            models.insert(class.to_string(), OutletLossModel::scaled(d));
        }
        Ok(OutletModels { models })
    }

    pub fn get(&self, class: &str) -> Option<&OutletLossModel> {
        self.models.get(class)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &OutletLossModel)> {
        self.models.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutletReading {
    pub id: String,
    /// Pressure head upstream of the outlet, m.
    pub upstream: f64,
    /// L/s
    pub flow: f64,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalOutlet {
    pub id: String,
    pub head: f64,
    pub infeasible: bool,
}

/// Lowest downstream pressure head over active outlets (flow > 0); ties go
/// to the smallest id. `None` when no outlet is active.
pub fn critical_of(readings: &[OutletReading], models: &OutletModels) -> Result<Option<CriticalOutlet>, SetpointError> {
    let mut best: Option<CriticalOutlet> = None;
    for r in readings.iter().filter(|r| r.flow > 0.0) {
        let model = models.get(&r.class).ok_or_else(|| SetpointError::Model(format!("no loss model for `{}`", r.class)))?;
        let p = downstream_pressure(r.upstream, r.flow, model)?;
        let better = match &best {
            None => true,
            Some(b) => p.head < b.head || (p.head == b.head && r.id < b.id),
        };
        if better {
            best = Some(CriticalOutlet { id: r.id.clone(), head: p.head, infeasible: p.infeasible });
        }
    }
    Ok(best)
}

/// Outlet readings for one solved step; `demands` in m³/s per junction.
pub fn outlet_readings(net: &Network, state: &HydraulicState, demands: &[f64]) -> Vec<OutletReading> {
    net.outlet_junctions()
        .into_iter()
        .map(|j| {
            let node = &net.nodes()[net.junctions()[j]];
            OutletReading {
                id: node.id.clone(),
                upstream: state.pressure_head(net, j),
                flow: m3s_to_lps(demands[j]),
                class: node.outlet_class.clone().unwrap_or_default(),
            }
        })
        .collect()
}

pub fn critical_pressure(
    net: &Network,
    state: &HydraulicState,
    demands: &[f64],
    models: &OutletModels,
) -> Result<Option<CriticalOutlet>, SetpointError> {
    critical_of(&outlet_readings(net, state, demands), models)
}
