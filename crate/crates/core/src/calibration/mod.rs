//! Grouped roughness calibration against observed pressure heads.

pub mod sqp;

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{map_indexed, Execution};
use crate::hydraulics::{Boundary, SolveError, Solver, SolverConfig};
use crate::network::{Material, Network, Terminal};
use crate::timetable::TimeTable;
use crate::units::Unit;
pub use sqp::{SqpConfig, SqpOutcome};

pub const DEFAULT_MIN_ROUGHNESS: f64 = 0.001;
pub const DEFAULT_MAX_ROUGHNESS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("observation site `{0}` is not a junction of the network")]
    UnknownSite(String),
    #[error("no observation sites")]
    NoSites,
    #[error("observed table has {observed} rows but demands have {demands}")]
    Length { observed: usize, demands: usize },
    #[error("roughness group: {0}")]
    Groups(String),
}

/// Roughness (mm) and bounds for one material group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub roughness: f64,
    #[serde(default = "default_min")]
    pub min: f64,
    #[serde(default = "default_max")]
    pub max: f64,
}

fn default_min() -> f64 {
    DEFAULT_MIN_ROUGHNESS
}

fn default_max() -> f64 {
    DEFAULT_MAX_ROUGHNESS
}

/// Material → roughness height. The calibration decision vector, one
/// entry per material in material order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoughnessGroups {
    groups: BTreeMap<Material, GroupSpec>,
}

impl RoughnessGroups {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, material: Material, roughness: f64) -> Self {
        self.insert(material, GroupSpec { roughness, min: DEFAULT_MIN_ROUGHNESS, max: DEFAULT_MAX_ROUGHNESS });
        self
    }

    pub fn insert(&mut self, material: Material, spec: GroupSpec) {
        self.groups.insert(material, spec);
    }

    /// One group per network material, starting at the mean declared
    /// roughness of that material (clamped to the default bounds).
    pub fn from_network(net: &Network) -> Self {
        let mut sums: BTreeMap<Material, (f64, usize)> = BTreeMap::new();
        for p in net.pipes() {
            let e = sums.entry(p.material.clone()).or_default();
            e.0 += p.roughness;
            e.1 += 1;
        }
        let groups = sums
            .into_iter()
            .map(|(m, (s, n))| {
                let r = (s / n as f64).clamp(DEFAULT_MIN_ROUGHNESS, DEFAULT_MAX_ROUGHNESS);
                (m, GroupSpec { roughness: r, min: DEFAULT_MIN_ROUGHNESS, max: DEFAULT_MAX_ROUGHNESS })
            })
            .collect();
        RoughnessGroups { groups }
    }

    pub fn get(&self, m: &Material) -> Option<&GroupSpec> {
        self.groups.get(m)
    }

    pub fn roughness(&self, m: &Material) -> Option<f64> {
        self.groups.get(m).map(|g| g.roughness)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Material, &GroupSpec)> {
        self.groups.iter()
    }

    pub fn materials(&self) -> Vec<Material> {
        self.groups.keys().cloned().collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.groups.values().map(|g| g.roughness).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.groups.values().map(|g| g.min).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.groups.values().map(|g| g.max).collect()
    }

    /// Copy with roughness values replaced (material order).
    pub fn with_values(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.groups.len());
        let groups = self
            .groups
            .iter()
            .zip(values)
            .map(|((m, g), &v)| (m.clone(), GroupSpec { roughness: v, ..*g }))
            .collect();
        RoughnessGroups { groups }
    }

    /// ε per pipe; pipes of materials without a group keep their own value.
    pub fn per_pipe(&self, net: &Network) -> Vec<f64> {
        net.pipes().iter().map(|p| self.roughness(&p.material).unwrap_or(p.roughness)).collect()
    }

    pub fn validate(&self, net: &Network) -> Result<(), CalibrationError> {
        for m in net.materials() {
            if !self.groups.contains_key(&m) {
                return Err(CalibrationError::Groups(format!("no group for material {m}")));
            }
        }
        for (m, g) in &self.groups {
            if !(g.min > 0.0 && g.min <= g.max && g.max.is_finite()) {
                return Err(CalibrationError::Groups(format!("{m}: bounds must satisfy 0 < min <= max < inf")));
            }
            if !(g.min..=g.max).contains(&g.roughness) {
                return Err(CalibrationError::Groups(format!("{m}: roughness {} outside [{}, {}]", g.roughness, g.min, g.max)));
            }
        }
        Ok(())
    }

    /// Parses a TOML table per material: `[MSCL]\nroughness = 1.0\nmin = ...`.
    pub fn from_toml(text: &str) -> Result<Self, CalibrationError> {
        let raw: BTreeMap<String, GroupSpec> =
            toml::from_str(text).map_err(|e| CalibrationError::Groups(e.to_string()))?;
        let groups = raw.into_iter().map(|(k, v)| (k.parse().expect("infallible"), v)).collect();
        Ok(RoughnessGroups { groups })
    }

    pub fn to_toml(&self) -> String {
        let raw: BTreeMap<String, GroupSpec> = self.groups.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        toml::to_string(&raw).expect("groups serialise")
    }
}

/// Fit statistics for one observation site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiteMetrics {
    pub avg_observed: f64,
    pub avg_simulated: f64,
    /// `(avg_observed − avg_simulated) / avg_observed × 100`
    pub pct_diff: f64,
    pub rmse: f64,
    pub mae: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("series lengths differ ({observed} observed vs {simulated} simulated)")]
pub struct LengthMismatch {
    pub observed: usize,
    pub simulated: usize,
}

/// Metrics over aligned series; pairs with a NaN on either side are skipped.
pub fn fit_metrics(observed: &[f64], simulated: &[f64]) -> Result<SiteMetrics, LengthMismatch> {
    if observed.len() != simulated.len() {
        return Err(LengthMismatch { observed: observed.len(), simulated: simulated.len() });
    }
    let pairs: Vec<(f64, f64)> =
        observed.iter().zip(simulated).filter(|(o, s)| o.is_finite() && s.is_finite()).map(|(&o, &s)| (o, s)).collect();
    let n = pairs.len();
    if n == 0 {
        return Ok(SiteMetrics {
            avg_observed: f64::NAN,
            avg_simulated: f64::NAN,
            pct_diff: f64::NAN,
            rmse: f64::NAN,
            mae: f64::NAN,
            samples: 0,
        });
    }
    let nf = n as f64;
    let avg_observed = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let avg_simulated = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let mse = pairs.iter().map(|(o, s)| (o - s).powi(2)).sum::<f64>() / nf;
    let mae = pairs.iter().map(|(o, s)| (o - s).abs()).sum::<f64>() / nf;
    Ok(SiteMetrics {
        avg_observed,
        avg_simulated,
        pct_diff: (avg_observed - avg_simulated) / avg_observed * 100.0,
        rmse: mse.sqrt(),
        mae,
        samples: n,
    })
}

/// Observed pressure heads and everything needed to simulate them.
#[derive(Debug, Clone)]
pub struct CalibrationProblem<'a> {
    net: &'a Network,
    demands: Vec<Vec<f64>>,
    boundary: Boundary,
    /// (site id, junction index, observed pressure heads)
    sites: Vec<(String, usize, Vec<f64>)>,
    cfg: SolverConfig,
    exec: Execution,
}

impl<'a> CalibrationProblem<'a> {
    /// `demands` in m³/s per step per junction (see
    /// [`demand_matrix`](crate::hydraulics::demand_matrix)); `observed`
    /// columns are keyed by junction id and hold pressure heads in m.
    pub fn new(
        net: &'a Network,
        demands: Vec<Vec<f64>>,
        observed: &TimeTable,
        boundary: Boundary,
        cfg: SolverConfig,
    ) -> Result<Self, CalibrationError> {
        if observed.len() != demands.len() {
            return Err(CalibrationError::Length { observed: observed.len(), demands: demands.len() });
        }
        let mut sites = Vec::new();
        for (key, values) in observed.columns() {
            let idx = net.node_idx(key).ok_or_else(|| CalibrationError::UnknownSite(key.clone()))?;
            match net.terminal(idx) {
                Terminal::Junction(j) => sites.push((key.clone(), j, values.clone())),
                Terminal::Fixed(_) => return Err(CalibrationError::UnknownSite(key.clone())),
            }
        }
        if sites.is_empty() {
            return Err(CalibrationError::NoSites);
        }
        if sites.len() == 1 {
            log::warn!("calibrating against a single observation site");
        }
        sites.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(CalibrationProblem { net, demands, boundary, sites, cfg, exec: Execution::default() })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn steps(&self) -> usize {
        self.demands.len()
    }

    pub fn site_ids(&self) -> Vec<&str> {
        self.sites.iter().map(|s| s.0.as_str()).collect()
    }

    /// Simulated pressure heads, `[site][step]`, cold-starting every step.
    pub fn simulate_sites(&self, roughness_per_pipe: &[f64]) -> Result<Vec<Vec<f64>>, SolveError> {
        let solver = Solver::with_roughness(self.net, self.cfg, roughness_per_pipe);
        let rows: Vec<Result<Vec<f64>, SolveError>> = map_indexed(self.steps(), self.exec, |t| {
            let heads = self.boundary.heads_at(self.net, t);
            let state = solver
                .solve(&self.demands[t], &heads, None)
                .map_err(|e| SolveError::AtStep { step: t, source: Box::new(e) })?;
            Ok(self.sites.iter().map(|(_, j, _)| state.pressure_head(self.net, *j)).collect())
        });
        let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_, _>>()?;
        Ok((0..self.sites.len()).map(|s| rows.iter().map(|r| r[s]).collect()).collect())
    }

    /// Residuals `(p_o − p_m)/√T_j`; their squared sum is the objective.
    pub fn residuals(&self, groups: &RoughnessGroups) -> Result<Vec<f64>, SolveError> {
        let sim = self.simulate_sites(&groups.per_pipe(self.net))?;
        let mut out = Vec::new();
        for ((_, _, obs), sim) in self.sites.iter().zip(&sim) {
            let valid = obs.iter().filter(|v| v.is_finite()).count();
            if valid == 0 {
                continue;
            }
            let w = 1.0 / (valid as f64).sqrt();
            out.extend(obs.iter().zip(sim).filter(|(o, _)| o.is_finite()).map(|(o, s)| (o - s) * w));
        }
        Ok(out)
    }

    /// Time-averaged squared pressure mismatch summed over sites, m².
    /// Steps with missing observations drop out of that site's average.
    pub fn objective(&self, groups: &RoughnessGroups) -> Result<f64, SolveError> {
        Ok(self.residuals(groups)?.iter().map(|r| r * r).sum())
    }

    /// Objective gradient w.r.t. each group roughness (m²/mm), by central
    /// differences of the residual vector with the relative step `h`.
    pub fn gradient(&self, groups: &RoughnessGroups, h: f64) -> Result<Vec<f64>, SolveError> {
        let r0 = self.residuals(groups)?;
        let x = groups.values();
        let f = |v: &[f64]| self.residuals(&groups.with_values(v));
        let jac = sqp::log_jacobian(&f, &x, &r0, &groups.lower(), &groups.upper(), h, self.exec)?;
        Ok(jac
            .iter()
            .zip(&x)
            .map(|(col, xi)| 2.0 * col.iter().zip(&r0).map(|(a, b)| a * b).sum::<f64>() / xi)
            .collect())
    }

    pub fn metrics(&self, groups: &RoughnessGroups) -> Result<IndexMap<String, SiteMetrics>, SolveError> {
        let sim = self.simulate_sites(&groups.per_pipe(self.net))?;
        Ok(self
            .sites
            .iter()
            .zip(&sim)
            .map(|((id, _, obs), s)| (id.clone(), fit_metrics(obs, s).expect("aligned by construction")))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(flatten)]
    pub optimizer: SqpConfig,
    /// Number of starting points; the first is the supplied initial guess.
    pub multistart: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { optimizer: SqpConfig::default(), multistart: 1, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    #[serde(serialize_with = "ser_groups")]
    pub groups: RoughnessGroups,
    /// Objective at the returned groups, m².
    pub objective: f64,
    pub initial_objective: f64,
    pub sites: IndexMap<String, SiteMetrics>,
    pub sum_rmse: f64,
    pub sum_mse: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn ser_groups<S: serde::Serializer>(g: &RoughnessGroups, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = s.serialize_map(Some(g.len()))?;
    for (k, v) in g.iter() {
        m.serialize_entry(&k.to_string(), v)?;
    }
    m.end()
}

/// Fits group roughness by bound-constrained sequential least squares.
pub fn calibrate(
    problem: &CalibrationProblem<'_>,
    init: &RoughnessGroups,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult, CalibrationError> {
    init.validate(problem.net)?;
    let (lower, upper) = (init.lower(), init.upper());
    let f = |x: &[f64]| problem.residuals(&init.with_values(x));

    let mut starts = vec![init.values()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 1..cfg.multistart.max(1) {
        starts.push(
            lower
                .iter()
                .zip(&upper)
                .map(|(l, u)| (l.ln() + rng.random::<f64>() * (u.ln() - l.ln())).exp())
                .collect(),
        );
    }

    // Starts run one after another; each objective evaluation already fans
    // out across time steps.
    let mut best: Option<SqpOutcome> = None;
    let mut initial_objective = None;
    let (mut iterations, mut evaluations) = (0, 0);
    for x0 in &starts {
        let out = sqp::minimize(&f, x0, &lower, &upper, &cfg.optimizer, problem.exec)?;
        initial_objective.get_or_insert(out.initial_objective);
        iterations += out.iterations;
        evaluations += out.evaluations;
        if best.as_ref().is_none_or(|b| out.objective < b.objective) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one start");
    let groups = init.with_values(&best.x);
    let sites = problem.metrics(&groups)?;
    let sum_rmse = sites.values().map(|m| m.rmse).sum();
    let sum_mse = sites.values().map(|m| m.rmse * m.rmse).sum();
    Ok(CalibrationResult {
        groups,
        objective: best.objective,
        initial_objective: initial_objective.unwrap_or(best.initial_objective),
        sites,
        sum_rmse,
        sum_mse,
        iterations,
        evaluations,
        converged: best.converged,
    })
}

/// Metrics and simulated site traces for fixed roughness (no fitting).
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub sites: IndexMap<String, SiteMetrics>,
    /// Simulated pressure heads per site on the observation time axis.
    pub simulated: TimeTable,
    pub sum_rmse: f64,
}

pub fn validate(
    problem: &CalibrationProblem<'_>,
    groups: &RoughnessGroups,
    times: &[f64],
) -> Result<ValidationReport, CalibrationError> {
    let sim = problem.simulate_sites(&groups.per_pipe(problem.net))?;
    let mut sites = IndexMap::new();
    let mut cols = IndexMap::new();
    for ((id, _, obs), s) in problem.sites.iter().zip(sim) {
        sites.insert(id.clone(), fit_metrics(obs, &s).expect("aligned"));
        cols.insert(id.clone(), s);
    }
    let simulated = TimeTable::new(times.to_vec(), Unit::Metres, cols)
        .map_err(|e| CalibrationError::Groups(format!("trace table: {e}")))?;
    let sum_rmse = sites.values().map(|m| m.rmse).sum();
    Ok(ValidationReport { sites, simulated, sum_rmse })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_for_identical_series() {
        let m = fit_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.rmse, m.mae, m.pct_diff), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metrics_constant_error() {
        let m = fit_metrics(&[12.0, 7.0], &[10.0, 5.0]).unwrap();
        assert_eq!((m.rmse, m.mae), (2.0, 2.0));
    }

    #[test]
    fn metrics_mixed_errors() {
        let m = fit_metrics(&[11.0, 7.0], &[10.0, 10.0]).unwrap();
        assert!((m.rmse - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.mae, 2.0);
        assert!(m.rmse >= m.mae);
    }

    #[test]
    fn pct_diff_sign_follows_observed_minus_simulated() {
        let m = fit_metrics(&[141.4], &[141.5]).unwrap();
        assert!((m.pct_diff - (-0.0707)).abs() < 1e-3);
    }

    #[test]
    fn metrics_length_mismatch_and_nan() {
        assert!(fit_metrics(&[1.0], &[]).is_err());
        let m = fit_metrics(&[1.0, f64::NAN, 3.0], &[1.0, 100.0, 3.0]).unwrap();
        assert_eq!(m.samples, 2);
        assert_eq!(m.rmse, 0.0);
    }

    #[test]
    fn groups_toml_round_trip() {
        let g = RoughnessGroups::new().with(Material::Mscl, 10.6).with(Material::Mpvc, 0.01);
        let back = RoughnessGroups::from_toml(&g.to_toml()).unwrap();
        assert_eq!(g, back);
        let parsed = RoughnessGroups::from_toml("[GRP]\nroughness = 2.0\nmax = 5.0\n").unwrap();
        let spec = parsed.get(&Material::Grp).unwrap();
        assert_eq!((spec.roughness, spec.min, spec.max), (2.0, DEFAULT_MIN_ROUGHNESS, 5.0));
    }
}
