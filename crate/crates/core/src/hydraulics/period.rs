use std::borrow::Cow;

use super::{HydraulicState, SolveError, Solver};
use crate::exec::{map_indexed, Execution};
use crate::network::Network;
use crate::timetable::TimeTable;

/// Fixed-head boundary values over a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// Same heads (one per fixed-head node) at every step.
    Constant(Vec<f64>),
    /// Heads per step.
    PerStep(Vec<Vec<f64>>),
    /// Pump setpoint (pressure head, m) per step; pump nodes sit at
    /// `elevation + setpoint`, other fixed-head nodes at their declared head.
    Setpoints(Vec<f64>),
}

impl Boundary {
    pub fn heads_at<'a>(&'a self, net: &Network, step: usize) -> Cow<'a, [f64]> {
        match self {
            Boundary::Constant(h) => Cow::Borrowed(h),
            Boundary::PerStep(rows) => Cow::Borrowed(&rows[step]),
            Boundary::Setpoints(r) => Cow::Owned(net.boundary_heads_for_setpoint(r[step])),
        }
    }

    /// Number of steps covered, `None` for constant boundaries.
    pub fn len(&self) -> Option<usize> {
        match self {
            Boundary::Constant(_) => None,
            Boundary::PerStep(r) => Some(r.len()),
            Boundary::Setpoints(r) => Some(r.len()),
        }
    }
}

/// Junction demands per step in m³/s, read from the columns named by each
/// node's `demand_ref`.
pub fn demand_matrix(net: &Network, demands: &TimeTable) -> Result<Vec<Vec<f64>>, SolveError> {
    if !demands.unit().is_flow() {
        return Err(SolveError::Input(format!("demand table unit {} is not a flow", demands.unit())));
    }
    let scale = demands.unit().to_si();
    let cols: Vec<Option<&[f64]>> = net
        .junctions()
        .iter()
        .map(|&n| match &net.nodes()[n].demand_ref {
            None => Ok(None),
            Some(key) => demands
                .column(key)
                .map(Some)
                .ok_or_else(|| SolveError::Input(format!("demand column `{key}` missing for node `{}`", net.nodes()[n].id))),
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(demands.len());
    for t in 0..demands.len() {
        let mut row = Vec::with_capacity(cols.len());
        for (j, c) in cols.iter().enumerate() {
            let v = c.map_or(0.0, |c| c[t]);
            if !v.is_finite() {
                let id = &net.nodes()[net.junctions()[j]].id;
                return Err(SolveError::AtStep {
                    step: t,
                    source: Box::new(SolveError::Input(format!("missing demand for `{id}`"))),
                });
            }
            row.push(v * scale);
        }
        out.push(row);
    }
    Ok(out)
}

/// Extended-period run: one snapshot per step, each warm-started from the
/// previous solution.
pub fn simulate_period(
    solver: &Solver<'_>,
    demands: &[Vec<f64>],
    boundary: &Boundary,
) -> Result<Vec<HydraulicState>, SolveError> {
    check_boundary(boundary, demands.len())?;
    let net = solver.network();
    let mut out: Vec<HydraulicState> = Vec::with_capacity(demands.len());
    for (t, d) in demands.iter().enumerate() {
        let heads = boundary.heads_at(net, t);
        let state = solver
            .solve(d, &heads, out.last())
            .map_err(|e| SolveError::AtStep { step: t, source: Box::new(e) })?;
        out.push(state);
    }
    Ok(out)
}

/// Every step solved from the cold start, possibly in parallel. Results do
/// not depend on step order or thread count.
pub fn simulate_independent(
    solver: &Solver<'_>,
    demands: &[Vec<f64>],
    boundary: &Boundary,
    exec: Execution,
) -> Result<Vec<HydraulicState>, SolveError> {
    check_boundary(boundary, demands.len())?;
    let net = solver.network();
    map_indexed(demands.len(), exec, |t| {
        solver
            .solve(&demands[t], &boundary.heads_at(net, t), None)
            .map_err(|e| SolveError::AtStep { step: t, source: Box::new(e) })
    })
    .into_iter()
    .collect()
}

fn check_boundary(boundary: &Boundary, steps: usize) -> Result<(), SolveError> {
    match boundary.len() {
        Some(n) if n != steps => Err(SolveError::Dimension { what: "boundary schedule", got: n, expected: steps }),
        _ => Ok(()),
    }
}
