//! Flow-to-setpoint curve used by the existing station controller.

use serde::{Deserialize, Serialize};

use super::SetpointError;
use crate::timetable::TimeTable;
use crate::units::Unit;

/// Piecewise-linear map from system flow (L/s) to setpoint (m), clamped
/// outside its flow range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointCurve {
    points: Vec<(f64, f64)>,
}

impl Default for SetpointCurve {
    /// Straight line between the published end points. Interior
    /// breakpoints of the real curve are unknown.
    fn default() -> Self {
        SetpointCurve { points: vec![(0.0, 81.9), (3500.0, 102.3)] }
    }
}

impl SetpointCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SetpointError> {
        if points.is_empty() {
            return Err(SetpointError::Curve("curve has no breakpoints".into()));
        }
        if points.iter().any(|(q, r)| !q.is_finite() || !r.is_finite()) {
            return Err(SetpointError::Curve("non-finite breakpoint".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                return Err(SetpointError::Curve(format!(
                    "breakpoints must have increasing flow and non-decreasing setpoint ({:?} then {:?})",
                    w[0], w[1]
                )));
            }
        }
        Ok(SetpointCurve { points })
    }

    /// Reads `flow_lps,setpoint_m` rows (header required).
    pub fn from_csv(text: &str) -> Result<Self, SetpointError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut points = Vec::new();
        for rec in reader.deserialize::<(f64, f64)>() {
            points.push(rec.map_err(|e| SetpointError::Curve(e.to_string()))?);
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn setpoint_range(&self) -> (f64, f64) {
        (self.points[0].1, self.points[self.points.len() - 1].1)
    }

    pub fn setpoint_at(&self, flow_lps: f64) -> f64 {
        let p = &self.points;
        let i = p.partition_point(|&(q, _)| q <= flow_lps);
        if i == 0 {
            return p[0].1;
        }
        if i == p.len() {
            return p[i - 1].1;
        }
        let ((q0, r0), (q1, r1)) = (p[i - 1], p[i]);
        if flow_lps == q0 {
            return r0;
        }
        r0 + (r1 - r0) * (flow_lps - q0) / (q1 - q0)
    }
}

/// Setpoint per row of a single-column (or `column`) system-flow table.
pub fn baseline_setpoints(curve: &SetpointCurve, flow: &TimeTable, column: Option<&str>) -> Result<Vec<f64>, SetpointError> {
    let flow = flow.converted(Unit::LitresPerSecond).map_err(|e| SetpointError::Input(e.to_string()))?;
    let values = match column {
        Some(c) => flow.require(c).map_err(|e| SetpointError::Input(e.to_string()))?,
        None => match flow.columns().len() {
            1 => &flow.columns()[0],
            n => return Err(SetpointError::Input(format!("system flow table has {n} columns; name one"))),
        },
    };
    values
        .iter()
        .enumerate()
        .map(|(t, &q)| {
            if q.is_finite() {
                Ok(curve.setpoint_at(q))
            } else {
                Err(SetpointError::Input(format!("missing system flow at row {t}")))
            }
        })
        .collect()
}
