//! Steady-state network hydraulics solved by the global gradient (Todini)
//! Newton scheme, and extended-period runs as sequences of snapshots.

mod friction;
pub mod linalg;
mod period;

use serde::{Deserialize, Serialize};

use crate::calibration::RoughnessGroups;
use crate::network::{Network, Terminal};
pub use friction::{darcy_friction, friction_factor, resistance, resistance_from_friction, reynolds};
use friction::PipeHydraulics;
use linalg::EnvelopeCholesky;
pub use period::{demand_matrix, simulate_independent, simulate_period, Boundary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// m³/s
    pub flow_tolerance: f64,
    /// m
    pub head_tolerance: f64,
    /// m²/s
    pub kinematic_viscosity: f64,
    /// m/s²
    pub gravity: f64,
    pub laminar_threshold: f64,
    /// Reynolds number above which Swamee-Jain applies unblended.
    pub turbulent_threshold: f64,
    /// m³/s
    pub min_flow: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 100,
            flow_tolerance: 1e-6,
            head_tolerance: 1e-6,
            kinematic_viscosity: 1.004e-6,
            gravity: 9.81,
            laminar_threshold: 2000.0,
            turbulent_threshold: 4000.0,
            min_flow: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [
            ("flow_tolerance", self.flow_tolerance),
            ("head_tolerance", self.head_tolerance),
            ("kinematic_viscosity", self.kinematic_viscosity),
            ("gravity", self.gravity),
            ("laminar_threshold", self.laminar_threshold),
            ("turbulent_threshold", self.turbulent_threshold),
            ("min_flow", self.min_flow),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolveError::Config(format!("{name} must be positive")));
            }
        }
        if self.max_iterations == 0 {
            return Err(SolveError::Config("max_iterations must be positive".into()));
        }
        if self.turbulent_threshold < self.laminar_threshold {
            return Err(SolveError::Config("turbulent_threshold below laminar_threshold".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (head residual {head_residual:.3e} m, flow residual {flow_residual:.3e} m3/s)")]
    NonConvergence { iterations: usize, head_residual: f64, flow_residual: f64 },
    #[error("singular head-correction system at junction `{junction}`")]
    Singular { junction: String },
    #[error("{what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<SolveError>,
    },
}

impl SolveError {
    /// Strips step tagging.
    pub fn root(&self) -> &SolveError {
        match self {
            SolveError::AtStep { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_convergence_failure(&self) -> bool {
        matches!(self.root(), SolveError::NonConvergence { .. } | SolveError::Singular { .. })
    }
}

/// Converged flows (m³/s, per pipe) and junction heads (m).
#[derive(Debug, Clone, PartialEq)]
pub struct HydraulicState {
    pub q: Vec<f64>,
    pub h: Vec<f64>,
    pub iterations: usize,
    /// max |h_loss(q) + A1 h + A2 e|, m
    pub head_residual: f64,
    /// max |A1ᵀ q − d|, m³/s
    pub flow_residual: f64,
}

impl HydraulicState {
    /// Head at any node given the boundary heads used for the solve.
    pub fn node_head(&self, net: &Network, node_idx: usize, boundary: &[f64]) -> f64 {
        match net.terminal(node_idx) {
            Terminal::Junction(j) => self.h[j],
            Terminal::Fixed(f) => boundary[f],
        }
    }

    /// Pressure head (HGL minus ground elevation) at a junction.
    pub fn pressure_head(&self, net: &Network, junction: usize) -> f64 {
        self.h[junction] - net.nodes()[net.junctions()[junction]].elevation
    }
}

/// Prepared solver for one network and one roughness assignment. Cheap to
/// share across threads; every [`Solver::solve`] call is independent.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    net: &'a Network,
    cfg: SolverConfig,
    pipes: Vec<PipeHydraulics>,
    template: EnvelopeCholesky,
}

impl<'a> Solver<'a> {
    pub fn new(net: &'a Network, cfg: SolverConfig) -> Self {
        let roughness: Vec<f64> = net.pipes().iter().map(|p| p.roughness).collect();
        Self::with_roughness(net, cfg, &roughness)
    }

    pub fn with_groups(net: &'a Network, cfg: SolverConfig, groups: Option<&RoughnessGroups>) -> Self {
        match groups {
            Some(g) => Self::with_roughness(net, cfg, &g.per_pipe(net)),
            None => Self::new(net, cfg),
        }
    }

    /// `roughness` gives ε (mm) per pipe in declaration order.
    pub fn with_roughness(net: &'a Network, cfg: SolverConfig, roughness: &[f64]) -> Self {
        assert_eq!(roughness.len(), net.pipes().len(), "roughness per pipe");
        let pipes = net
            .pipes()
            .iter()
            .zip(roughness)
            .map(|(p, &eps)| PipeHydraulics::new(p.length, p.diameter, eps, &cfg))
            .collect();
        let edges: Vec<(usize, usize)> = net
            .pipe_ends()
            .iter()
            .filter_map(|e| match *e {
                (Terminal::Junction(a), Terminal::Junction(b)) => Some((a, b)),
                _ => None,
            })
            .collect();
        let template = EnvelopeCholesky::new(net.junction_count(), &edges);
        Solver { net, cfg, pipes, template }
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Solves one snapshot. `demands` are junction withdrawals in m³/s,
    /// `heads` the fixed-head boundary HGLs in m.
    pub fn solve(&self, demands: &[f64], heads: &[f64], warm: Option<&HydraulicState>) -> Result<HydraulicState, SolveError> {
        let net = self.net;
        let (np, nj) = (net.pipes().len(), net.junction_count());
        check_len("demand vector", demands.len(), nj)?;
        check_len("boundary head vector", heads.len(), net.fixed_count())?;
        if let Some(d) = demands.iter().find(|d| !d.is_finite()) {
            return Err(SolveError::Input(format!("non-finite demand {d}")));
        }
        if let Some(h) = heads.iter().find(|h| !h.is_finite()) {
            return Err(SolveError::Input(format!("non-finite boundary head {h}")));
        }
        self.cfg.validate()?;

        let (mut q, mut h) = match warm {
            Some(s) if s.q.len() == np && s.h.len() == nj => (s.q.clone(), s.h.clone()),
            _ => {
                let mean = if heads.is_empty() { 0.0 } else { heads.iter().sum::<f64>() / heads.len() as f64 };
                (vec![1e-3; np], vec![mean; nj])
            }
        };

        let ends = net.pipe_ends();
        let head_at = |t: Terminal, h: &[f64]| match t {
            Terminal::Junction(j) => h[j],
            Terminal::Fixed(f) => heads[f],
        };

        let mut energy = vec![0.0; np];
        let mut grad = vec![0.0; np];
        let mut chol = self.template.clone();
        let mut polish = 1;
        let mut iterations = 0;

        loop {
            // Residuals at the current iterate.
            let mut head_res: f64 = 0.0;
            for i in 0..np {
                let (hl, g) = self.pipes[i].headloss(q[i], &self.cfg);
                let (from, to) = ends[i];
                energy[i] = hl + head_at(to, &h) - head_at(from, &h);
                grad[i] = g;
                head_res = head_res.max(energy[i].abs());
            }
            let mut mass = vec![0.0; nj];
            for (i, &(from, to)) in ends.iter().enumerate() {
                if let Terminal::Junction(j) = to {
                    mass[j] += q[i];
                }
                if let Terminal::Junction(j) = from {
                    mass[j] -= q[i];
                }
            }
            let mut flow_res: f64 = 0.0;
            for j in 0..nj {
                mass[j] -= demands[j];
                flow_res = flow_res.max(mass[j].abs());
            }

            let ok = head_res <= self.cfg.head_tolerance && flow_res <= self.cfg.flow_tolerance;
            if ok && (polish == 0 || iterations >= self.cfg.max_iterations) {
                return Ok(HydraulicState { q, h, iterations, head_residual: head_res, flow_residual: flow_res });
            }
            if ok {
                polish -= 1;
            }
            if iterations >= self.cfg.max_iterations {
                return Err(SolveError::NonConvergence {
                    iterations,
                    head_residual: head_res,
                    flow_residual: flow_res,
                });
            }
            iterations += 1;

            // Schur complement A1ᵀ D⁻¹ A1 dh = F2 − A1ᵀ D⁻¹ F1, with F2 = mass.
            chol.clear();
            let mut rhs = mass;
            for i in 0..np {
                let w = 1.0 / grad[i];
                let (from, to) = ends[i];
                let t = w * energy[i];
                if let Terminal::Junction(a) = to {
                    chol.add_diag(a, w);
                    rhs[a] -= t;
                }
                if let Terminal::Junction(b) = from {
                    chol.add_diag(b, w);
                    rhs[b] += t;
                }
                if let (Terminal::Junction(a), Terminal::Junction(b)) = (to, from) {
                    chol.add_offdiag(a, b, -w);
                }
            }
            if nj > 0 {
                chol.factor().map_err(|e| SolveError::Singular {
                    junction: net.nodes()[net.junctions()[e.row]].id.clone(),
                })?;
                chol.solve(&mut rhs);
            }
            let dh = rhs;
            for i in 0..np {
                let (from, to) = ends[i];
                let a1dh = match to {
                    Terminal::Junction(j) => dh[j],
                    Terminal::Fixed(_) => 0.0,
                } - match from {
                    Terminal::Junction(j) => dh[j],
                    Terminal::Fixed(_) => 0.0,
                };
                q[i] -= (energy[i] + a1dh) / grad[i];
            }
            for j in 0..nj {
                h[j] += dh[j];
            }
        }
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), SolveError> {
    if got == expected {
        Ok(())
    } else {
        Err(SolveError::Dimension { what, got, expected })
    }
}

/// One-shot snapshot solve. `demands_lps` are junction withdrawals in L/s.
pub fn solve_snapshot(
    net: &Network,
    demands_lps: &[f64],
    boundary_heads: &[f64],
    roughness: Option<&RoughnessGroups>,
    cfg: &SolverConfig,
) -> Result<HydraulicState, SolveError> {
    let d: Vec<f64> = demands_lps.iter().map(|&x| crate::units::lps_to_m3s(x)).collect();
    Solver::with_groups(net, *cfg, roughness).solve(&d, boundary_heads, None)
}
