#![allow(dead_code)]

use pipenet::hydraulics::{darcy_friction, resistance_from_friction, reynolds, HydraulicState, SolverConfig};
use pipenet::network::{Network, Terminal};

/// Head loss from the public friction law, independent of the solver's
/// internal derivative bookkeeping.
pub fn headloss(net: &Network, k: usize, q: f64, cfg: &SolverConfig) -> f64 {
    let p = &net.pipes()[k];
    if q == 0.0 {
        return 0.0;
    }
    let re = reynolds(q, p.diameter, cfg.kinematic_viscosity);
    let f = darcy_friction(p.roughness, p.diameter, re, cfg);
    resistance_from_friction(f, p.length, p.diameter, cfg.gravity) * q * q.abs()
}

/// Largest continuity error (m³/s) over junctions and largest head-loss
/// mismatch (m) over pipes.
pub fn residuals(net: &Network, s: &HydraulicState, demands: &[f64], heads: &[f64], cfg: &SolverConfig) -> (f64, f64) {
    let mut balance = demands.iter().map(|d| -d).collect::<Vec<_>>();
    let mut energy: f64 = 0.0;
    let head = |t: Terminal| match t {
        Terminal::Junction(j) => s.h[j],
        Terminal::Fixed(f) => heads[f],
    };
    for (k, &(from, to)) in net.pipe_ends().iter().enumerate() {
        if let Terminal::Junction(j) = to {
            balance[j] += s.q[k];
        }
        if let Terminal::Junction(j) = from {
            balance[j] -= s.q[k];
        }
        energy = energy.max((head(from) - head(to) - headloss(net, k, s.q[k], cfg)).abs());
    }
    (balance.iter().fold(0.0, |m, b| m.max(b.abs())), energy)
}

pub fn junction_head(net: &Network, s: &HydraulicState, id: &str) -> f64 {
    let idx = net.node_idx(id).unwrap();
    let j = net.junctions().iter().position(|&n| n == idx).unwrap();
    s.h[j]
}
