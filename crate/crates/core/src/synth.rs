//! Generated networks and scenarios with known ground truth, used by the
//! test suites, the benchmarks and the shipped fixture files.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::calibration::{GroupSpec, RoughnessGroups};
use crate::hydraulics::{demand_matrix, simulate_period, Boundary, Solver, SolverConfig};
use crate::network::{Material, Network, Node, Pipe};
use crate::report::EnergyConfig;
use crate::scada::{SensorKind, SensorMeta};
use crate::timetable::TimeTable;
use crate::units::Unit;

/// 2026-01-01T00:00:00Z
pub const EPOCH: f64 = 1_767_225_600.0;

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite sd")
}

/// Square-ish looped grid fed by one reservoir at a corner. Returns the
/// network and one demand vector (m³/s per junction).
pub fn looped_grid(rows: usize, cols: usize) -> (Network, Vec<f64>) {
    let id = |r: usize, c: usize| format!("N{r}_{c}");
    let mut nodes = vec![Node::fixed_head("R", 60.0, 110.0)];
    let mut pipes = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let z = 20.0 + 0.4 * r as f64 + 0.25 * c as f64 + 3.0 * ((r * 7 + c * 3) % 5) as f64 / 5.0;
            nodes.push(Node::junction(id(r, c), z));
            let d = if r == 0 || c == 0 { 0.45 } else { 0.15 + 0.05 * ((r + 2 * c) % 4) as f64 };
            let mat = [Material::Dicl, Material::Mpvc, Material::Grp][(r + c) % 3].clone();
            let eps = match mat {
                Material::Dicl => 0.44,
                Material::Mpvc => 0.01,
                _ => 2.91,
            };
            if c + 1 < cols {
                pipes.push(Pipe::new(format!("H{r}_{c}"), id(r, c), id(r, c + 1), 180.0 + 7.0 * r as f64, d, mat.clone(), eps));
            }
            if r + 1 < rows {
                pipes.push(Pipe::new(format!("V{r}_{c}"), id(r, c), id(r + 1, c), 160.0 + 5.0 * c as f64, d, mat, eps));
            }
        }
    }
    pipes.push(Pipe::new("FEED", "R", id(0, 0), 400.0, 0.9, Material::Mscl, 10.6));
    let net = Network::new(nodes, pipes, BTreeMap::new()).expect("grid is valid");
    let demands = (0..net.junction_count()).map(|j| 1e-4 * (1 + (j * 13) % 17) as f64).collect();
    (net, demands)
}

/// Two branched rising-main systems from a twin pump station: 433 pipes,
/// 435 nodes (433 junctions, two pump nodes), outlets at branch tips.
/// Demand columns are `O<k>` in L/s over `steps` 15-minute steps.
pub fn utility_scale(steps: usize) -> (Network, TimeTable) {
    let mut nodes = vec![Node::pump_station("PS1", 42.0), Node::pump_station("PS2", 42.0)];
    let mut pipes = Vec::new();
    let mut cols: IndexMap<String, Vec<f64>> = IndexMap::new();
    let sizes = [217usize, 216];
    let mut outlet = 0usize;
    for (m, &n) in sizes.iter().enumerate() {
        let src = format!("PS{}", m + 1);
        // spine of 31 nodes, side branches of 6 hanging off each spine node
        let mut made = 0usize;
        let mut prev = src.clone();
        let mut spine = Vec::new();
        while made < 31 {
            let id = format!("S{m}_{made}");
            nodes.push(Node::junction(&id, 45.0 + 0.6 * made as f64));
            let d = 1.0 - 0.02 * made as f64;
            let (mat, eps) = if made < 10 { (Material::Mscl, 10.6) } else { (Material::Grp, 2.91) };
            pipes.push(Pipe::new(format!("PS{m}_{made}"), &prev, &id, 700.0, d, mat, eps));
            prev = id.clone();
            spine.push(id);
            made += 1;
        }
        let mut b = 0usize;
        while made < n {
            let root = &spine[b % spine.len()];
            let len = (n - made).min(6);
            let mut prev = root.clone();
            for k in 0..len {
                let id = format!("B{m}_{b}_{k}");
                let z = 46.0 + 0.5 * (b % spine.len()) as f64 + 0.8 * k as f64;
                let mut node = Node::junction(&id, z);
                if k + 1 == len || k == 2 {
                    let key = format!("O{outlet}");
                    let base = 4.0 + (outlet % 9) as f64;
                    let phase = (outlet % 5) as f64;
                    cols.insert(
                        key.clone(),
                        (0..steps)
                            .map(|t| {
                                let s = (2.0 * PI * (t as f64 / 96.0) + phase).sin();
                                if s > -0.3 { base * (0.7 + 0.3 * s) } else { 0.0 }
                            })
                            .collect(),
                    );
                    node = node.with_demand(key).with_outlet("DN150");
                    outlet += 1;
                }
                nodes.push(node);
                let (mat, eps) = if k < 2 { (Material::Dicl, 0.44) } else { (Material::Mpvc, 0.01) };
                pipes.push(Pipe::new(format!("P{m}_{b}_{k}"), &prev, &id, 350.0, 0.3 - 0.025 * k as f64, mat, eps));
                prev = id;
                made += 1;
            }
            b += 1;
        }
    }
    let net = Network::new(nodes, pipes, BTreeMap::new()).expect("utility-scale net is valid");
    let table = TimeTable::uniform(EPOCH, 900.0, steps, Unit::LitresPerSecond, cols).expect("aligned");
    (net, table)
}

/// Reference roughness per material, mm.
pub fn material_truth() -> RoughnessGroups {
    RoughnessGroups::new()
        .with(Material::Mscl, 10.6)
        .with(Material::Dicl, 0.44)
        .with(Material::Grp, 2.91)
        .with(Material::Mpvc, 0.01)
}

/// Generated calibration problem with known roughness.
#[derive(Debug, Clone)]
pub struct CalibrationCase {
    pub net: Network,
    pub demands: TimeTable,
    /// Pressure heads at the sites, m.
    pub observed: TimeTable,
    pub boundary: Boundary,
    pub truth: RoughnessGroups,
    pub solver: SolverConfig,
}

impl CalibrationCase {
    pub fn demand_matrix(&self) -> Vec<Vec<f64>> {
        demand_matrix(&self.net, &self.demands).expect("demands cover every referenced column")
    }

    /// Starting guess well away from the truth, with default bounds.
    pub fn initial_groups(&self) -> RoughnessGroups {
        let mut g = RoughnessGroups::new();
        for (m, spec) in self.truth.iter() {
            let start = match m {
                Material::Mscl => 4.0,
                Material::Dicl => 0.2,
                Material::Grp => 1.0,
                _ => 0.05,
            };
            g.insert(m.clone(), GroupSpec { roughness: start, ..*spec });
        }
        g
    }
}

/// Four-material network (about 100 pipes) with a trunk and one branch per
/// material, observed at six junctions over `steps` 15-minute steps.
/// `day` shifts the demand pattern so held-out periods differ.
pub fn calibration_case(steps: usize, noise_sd: f64, seed: u64, day: usize) -> CalibrationCase {
    let mut nodes = vec![Node::fixed_head("PS", 30.0, 140.0)];
    let mut pipes = Vec::new();
    let mut prev = "PS".to_string();
    for k in 1..=10 {
        let id = format!("T{k}");
        nodes.push(Node::junction(&id, 30.0 + 0.5 * k as f64).with_demand("trunk"));
        pipes.push(Pipe::new(format!("PT{k}"), &prev, &id, 600.0, 0.75, Material::Mscl, 10.6));
        prev = id;
    }
    let branches = [
        ("G", "T2", Material::Grp, 2.91, 0.45, "grp"),
        ("D", "T4", Material::Dicl, 0.44, 0.35, "dicl"),
        ("M", "T6", Material::Mpvc, 0.01, 0.30, "mpvc"),
        ("X", "T8", Material::Dicl, 0.44, 0.30, "mixed"),
    ];
    for (tag, root, mat, eps, d, col) in &branches {
        let mut prev = root.to_string();
        for k in 1..=21 {
            let id = format!("{tag}{k}");
            nodes.push(Node::junction(&id, 31.0 + 0.3 * k as f64).with_demand(*col));
            let (m, e) = if *tag == "X" && k % 2 == 0 { (Material::Grp, 2.91) } else { (mat.clone(), *eps) };
            pipes.push(Pipe::new(format!("P{tag}{k}"), &prev, &id, 300.0, *d, m, e));
            prev = id;
        }
    }
    // cross connections closing loops between branch tails
    pipes.push(Pipe::new("L1", "G21", "D21", 900.0, 0.2, Material::Dicl, 0.44));
    pipes.push(Pipe::new("L2", "X21", "T10", 800.0, 0.2, Material::Grp, 2.91));
    let net = Network::new(nodes, pipes, BTreeMap::new()).expect("calibration net is valid");

    // L/s per node; the mPVC branch runs near 2.5 m/s at its head at peak
    let peak = [("trunk", 12.0), ("grp", 11.0), ("dicl", 6.0), ("mpvc", 8.5), ("mixed", 5.0)];
    let mut cols = IndexMap::new();
    for (i, (key, q)) in peak.iter().enumerate() {
        let shift = 0.15 * i as f64 + 0.9 * day as f64;
        cols.insert(
            key.to_string(),
            (0..steps)
                .map(|t| {
                    let x = 2.0 * PI * t as f64 / 96.0 + shift;
                    q * (0.55 + 0.35 * x.sin() + 0.1 * (3.0 * x).cos())
                })
                .collect(),
        );
    }
    let demands =
        TimeTable::uniform(EPOCH + 86_400.0 * day as f64, 900.0, steps, Unit::LitresPerSecond, cols).expect("aligned");
    let truth = material_truth();
    let solver_cfg = SolverConfig::default();
    let boundary = Boundary::Constant(net.default_boundary_heads());
    let d = demand_matrix(&net, &demands).expect("demand columns present");
    let solver = Solver::with_groups(&net, solver_cfg, Some(&truth));
    let states = simulate_period(&solver, &d, &boundary).expect("generator converges");

    let sites = ["T10", "G21", "D21", "M11", "M21", "X21"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(noise_sd.max(f64::MIN_POSITIVE));
    let mut obs = IndexMap::new();
    for s in sites {
        let idx = net.node_idx(s).expect("site exists");
        let j = net.junctions().iter().position(|&n| n == idx).expect("site is a junction");
        let v = states
            .iter()
            .map(|st| st.pressure_head(&net, j) + if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 })
            .collect();
        obs.insert(s.to_string(), v);
    }
    let observed = TimeTable::uniform(demands.times()[0], 900.0, steps, Unit::Metres, obs).expect("aligned");
    CalibrationCase { net, demands, observed, boundary, truth, solver: solver_cfg }
}

/// Pump station feeding an irrigation district with DN150 outlets, two
/// days of 15-minute demand, and an energy setup with suction at the
/// station floor.
#[derive(Debug, Clone)]
pub struct SetpointCase {
    pub net: Network,
    /// Outlet demands, L/s.
    pub demands: TimeTable,
    pub energy: EnergyConfig,
}

pub fn setpoint_case() -> SetpointCase {
    let station = 40.0;
    let mut nodes = vec![Node::pump_station("PS", station), Node::junction("HUB", 52.0)];
    let mut pipes = vec![Pipe::new("MAIN", "PS", "HUB", 2500.0, 1.2, Material::Mscl, 10.6)];
    let mut cols = IndexMap::new();
    let steps = 192;
    let mut k = 0usize;
    for b in 0..6 {
        let mut prev = "HUB".to_string();
        for s in 0..5 {
            let id = format!("B{b}_{s}");
            nodes.push(Node::junction(&id, 54.0 + 3.0 * b as f64 / 5.0 + 2.0 * s as f64 + if b == 5 { 4.0 } else { 0.0 }));
            let d = 0.75 - 0.1 * s as f64;
            pipes.push(Pipe::new(format!("P{b}_{s}"), &prev, &id, 1500.0, d, Material::Dicl, 0.44));
            prev = id.clone();
            for o in 0..3 {
                let oid = format!("O{b}_{s}_{o}");
                let key = format!("q{k}");
                let base = 20.0 + (k % 7) as f64 * 2.5;
                let phase = (k % 11) as f64 * 0.37;
                cols.insert(
                    key.clone(),
                    (0..steps)
                        .map(|t| {
                            let hour = (t % 96) as f64 / 4.0;
                            let day = 1.0 + 0.05 * (t / 96) as f64;
                            let a = (2.0 * PI * (hour - 6.0) / 24.0 + phase).sin();
                            if a > -0.55 { day * base * (0.75 + 0.25 * a) } else { 0.0 }
                        })
                        .collect(),
                );
                nodes.push(Node::junction(&oid, 55.0 + 2.0 * s as f64).with_demand(key).with_outlet("DN150"));
                pipes.push(Pipe::new(format!("L{b}_{s}_{o}"), &id, &oid, 120.0, 0.2, Material::Mpvc, 0.01));
                k += 1;
            }
        }
    }
    let net = Network::new(nodes, pipes, BTreeMap::new()).expect("setpoint net is valid");
    let demands = TimeTable::uniform(EPOCH, 900.0, steps, Unit::LitresPerSecond, cols).expect("aligned");
    SetpointCase { net, demands, energy: EnergyConfig { suction_hgl: station, ..Default::default() } }
}

/// Sensor metadata for one reference and `offsets.len()` remote pressure
/// sensors.
pub fn sensor_set(offsets: &[f64]) -> Vec<SensorMeta> {
    let mut out = vec![SensorMeta { id: "SYS".into(), node_id: "PS".into(), elevation: 47.0, kind: SensorKind::Pressure }];
    for (i, _) in offsets.iter().enumerate() {
        out.push(SensorMeta {
            id: format!("RTU{}", i + 1),
            node_id: format!("J{}", i + 1),
            elevation: 52.0 + 4.5 * i as f64,
            kind: SensorKind::Pressure,
        });
    }
    out
}

/// One-minute pressure and system-flow records over `days` days with a
/// nightly shutdown (00:00-02:00). Each remote sensor reads true pressure
/// plus its offset plus Gaussian noise.
pub fn scada_record(offsets: &[f64], noise_sd: f64, seed: u64, days: usize) -> (TimeTable, TimeTable, Vec<SensorMeta>) {
    let sensors = sensor_set(offsets);
    let n = days * 1440;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(noise_sd.max(f64::MIN_POSITIVE));
    let flow: Vec<f64> = (0..n)
        .map(|i| {
            let minute = i % 1440;
            if minute < 120 { 0.0 } else { 1500.0 + 900.0 * (2.0 * PI * minute as f64 / 1440.0).sin() }
        })
        .collect();
    let static_hgl = 128.0;
    let mut cols = IndexMap::new();
    for (k, s) in sensors.iter().enumerate() {
        let off = if k == 0 { 0.0 } else { offsets[k - 1] };
        let v = (0..n)
            .map(|i| {
                let dynamic = 0.002 * k as f64 * flow[i] * (1.0 + 0.1 * (i as f64 / 37.0).sin());
                let e = if noise_sd > 0.0 && k > 0 { noise.sample(&mut rng) } else { 0.0 };
                static_hgl - s.elevation - dynamic + off + e
            })
            .collect();
        cols.insert(s.id.clone(), v);
    }
    let p = TimeTable::uniform(EPOCH, 60.0, n, Unit::Metres, cols).expect("aligned");
    let f = TimeTable::uniform(EPOCH, 60.0, n, Unit::LitresPerSecond, [("system".to_string(), flow)].into_iter().collect())
        .expect("aligned");
    (p, f, sensors)
}
