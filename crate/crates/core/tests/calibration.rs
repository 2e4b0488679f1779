use std::collections::BTreeMap;

use indexmap::IndexMap;
use pipenet::calibration::{calibrate, fit_metrics, validate, CalibrationConfig, CalibrationProblem, GroupSpec, RoughnessGroups};
use pipenet::hydraulics::{simulate_period, Boundary, Solver, SolverConfig};
use pipenet::network::{Material, Network, Node, Pipe};
use pipenet::synth;
use pipenet::timetable::TimeTable;
use pipenet::units::Unit;
use proptest::prelude::*;

/// 20 pipes, two materials, looped.
fn small_net() -> Network {
    let mut nodes = vec![Node::fixed_head("R", 10.0, 90.0)];
    for i in 1..=15 {
        nodes.push(Node::junction(format!("J{i}"), 10.0 + i as f64 * 0.3));
    }
    let mut pipes = vec![Pipe::new("P0", "R", "J1", 800.0, 0.5, Material::Dicl, 1.0)];
    for i in 1..15 {
        let (m, e, d) = if i % 3 == 0 { (Material::Mpvc, 0.05, 0.25) } else { (Material::Dicl, 1.0, 0.3) };
        pipes.push(Pipe::new(format!("P{i}"), format!("J{i}"), format!("J{}", i + 1), 400.0, d, m, e));
    }
    for (k, (a, b)) in [(1, 6), (3, 9), (5, 12), (8, 15), (2, 14)].iter().enumerate() {
        pipes.push(Pipe::new(format!("X{k}"), format!("J{a}"), format!("J{b}"), 900.0, 0.2, Material::Mpvc, 0.05));
    }
    Network::new(nodes, pipes, BTreeMap::new()).unwrap()
}

fn small_demands(steps: usize, n: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|t| (0..n).map(|j| 0.004 * (1.0 + 0.6 * ((t as f64) * 0.7 + j as f64).sin())).collect())
        .collect()
}

fn observe(net: &Network, d: &[Vec<f64>], truth: &RoughnessGroups, sites: &[&str]) -> TimeTable {
    let boundary = Boundary::Constant(net.default_boundary_heads());
    let states = simulate_period(&Solver::with_groups(net, SolverConfig::default(), Some(truth)), d, &boundary).unwrap();
    let mut cols = IndexMap::new();
    for s in sites {
        let j = net.junctions().iter().position(|&n| net.nodes()[n].id == *s).unwrap();
        cols.insert(s.to_string(), states.iter().map(|st| st.pressure_head(net, j)).collect());
    }
    TimeTable::uniform(0.0, 900.0, d.len(), Unit::Metres, cols).unwrap()
}

fn problem<'a>(net: &'a Network, d: &[Vec<f64>], obs: &TimeTable) -> CalibrationProblem<'a> {
    CalibrationProblem::new(net, d.to_vec(), obs, Boundary::Constant(net.default_boundary_heads()), SolverConfig::default())
        .unwrap()
}

fn truth2() -> RoughnessGroups {
    RoughnessGroups::new().with(Material::Dicl, 1.0).with(Material::Mpvc, 0.05)
}

#[test]
fn objective_hand_value_and_nan_exclusion() {
    let net = small_net();
    let d = small_demands(2, 15);
    let exact = observe(&net, &d, &truth2(), &["J7"]);
    let col: Vec<f64> = exact.column("J7").unwrap().iter().zip([1.0, 3.0]).map(|(v, e)| v + e).collect();
    let obs = TimeTable::uniform(0.0, 900.0, 2, Unit::Metres, [("J7".to_string(), col.clone())].into_iter().collect()).unwrap();
    let j = problem(&net, &d, &obs).objective(&truth2()).unwrap();
    assert!((j - 5.0).abs() < 1e-9, "{j}");

    let with_nan = TimeTable::uniform(0.0, 900.0, 2, Unit::Metres, [("J7".to_string(), vec![col[0], f64::NAN])].into_iter().collect())
        .unwrap();
    let j = problem(&net, &d, &with_nan).objective(&truth2()).unwrap();
    assert!((j - 1.0).abs() < 1e-9, "{j}");
}

#[test]
fn objective_zero_at_truth_and_invariant_to_ordering() {
    let net = small_net();
    let d = small_demands(12, 15);
    let obs = observe(&net, &d, &truth2(), &["J4", "J10", "J15"]);
    assert!(problem(&net, &d, &obs).objective(&truth2()).unwrap() <= 1e-12);

    let off = truth2().with_values(&[1.7, 0.2]);
    let base = problem(&net, &d, &obs).objective(&off).unwrap();
    let mut rev = IndexMap::new();
    for k in ["J15", "J4", "J10"] {
        rev.insert(k.to_string(), obs.column(k).unwrap().to_vec());
    }
    let reordered = TimeTable::new(obs.times().to_vec(), Unit::Metres, rev).unwrap();
    assert_eq!(problem(&net, &d, &reordered).objective(&off).unwrap(), base);

    // reversing time: same multiset of steps
    let rows: Vec<usize> = (0..d.len()).rev().collect();
    let d_rev: Vec<Vec<f64>> = rows.iter().map(|&t| d[t].clone()).collect();
    let mut cols = IndexMap::new();
    for (k, v) in obs.columns() {
        cols.insert(k.clone(), rows.iter().map(|&t| v[t]).collect());
    }
    let obs_rev = TimeTable::uniform(0.0, 900.0, d.len(), Unit::Metres, cols).unwrap();
    let j_rev = problem(&net, &d_rev, &obs_rev).objective(&off).unwrap();
    assert!((j_rev - base).abs() <= 1e-9 * base, "{j_rev} vs {base}");
}

#[test]
fn recovers_two_groups_noiseless() {
    let net = small_net();
    let d = small_demands(24, 15);
    let obs = observe(&net, &d, &truth2(), &["J5", "J11", "J15"]);
    let p = problem(&net, &d, &obs);
    let init = RoughnessGroups::new().with(Material::Dicl, 3.0).with(Material::Mpvc, 0.5);
    let r = calibrate(&p, &init, &CalibrationConfig::default()).unwrap();
    let dicl = r.groups.roughness(&Material::Dicl).unwrap();
    let pvc = r.groups.roughness(&Material::Mpvc).unwrap();
    assert!((dicl / 1.0 - 1.0).abs() <= 0.05, "DICL {dicl}");
    assert!((pvc / 0.05 - 1.0).abs() <= 0.05, "mPVC {pvc}");
    for m in r.sites.values() {
        assert!(m.rmse >= m.mae && m.mae >= 0.0);
    }
}

#[test]
fn start_at_truth_stays_there() {
    let net = small_net();
    let d = small_demands(8, 15);
    let obs = observe(&net, &d, &truth2(), &["J5", "J15"]);
    let r = calibrate(&problem(&net, &d, &obs), &truth2(), &CalibrationConfig::default()).unwrap();
    assert!(r.objective <= 1e-12);
    assert!(r.converged);
    assert!(r.iterations <= 1, "{}", r.iterations);
}

#[test]
fn multistart_is_deterministic() {
    let net = small_net();
    let d = small_demands(8, 15);
    let obs = observe(&net, &d, &truth2(), &["J5", "J15"]);
    let p = problem(&net, &d, &obs);
    let cfg = CalibrationConfig { multistart: 3, seed: 42, ..Default::default() };
    let init = RoughnessGroups::new().with(Material::Dicl, 3.0).with(Material::Mpvc, 0.5);
    let a = calibrate(&p, &init, &cfg).unwrap();
    let b = calibrate(&p, &init, &cfg).unwrap();
    assert_eq!(a, b);
    let s = calibrate(&p.clone().with_execution(pipenet::exec::Execution::Sequential), &init, &cfg).unwrap();
    assert_eq!(a, s);
}

#[test]
fn bounds_are_respected() {
    let net = small_net();
    let d = small_demands(8, 15);
    let obs = observe(&net, &d, &truth2(), &["J5", "J15"]);
    let mut init = RoughnessGroups::new();
    init.insert(Material::Dicl, GroupSpec { roughness: 2.0, min: 1.5, max: 4.0 });
    init.insert(Material::Mpvc, GroupSpec { roughness: 0.05, min: 0.001, max: 1.0 });
    let r = calibrate(&problem(&net, &d, &obs), &init, &CalibrationConfig::default()).unwrap();
    let g = r.groups.get(&Material::Dicl).unwrap();
    assert!(g.roughness >= 1.5 && g.roughness <= 4.0);
    assert!((g.roughness - 1.5).abs() < 1e-6, "should sit on the active bound: {}", g.roughness);
}

#[test]
fn validation_checks() {
    let case = synth::calibration_case(48, 0.1, 3, 0);
    let p = CalibrationProblem::new(&case.net, case.demand_matrix(), &case.observed, case.boundary.clone(), case.solver).unwrap();
    let r = calibrate(&p, &case.initial_groups(), &CalibrationConfig::default()).unwrap();

    let same = validate(&p, &r.groups, case.observed.times()).unwrap();
    assert_eq!(same.sites, r.sites);

    let held = synth::calibration_case(48, 0.1, 4, 1);
    let hp = CalibrationProblem::new(&held.net, held.demand_matrix(), &held.observed, held.boundary.clone(), held.solver).unwrap();
    let v = validate(&hp, &r.groups, held.observed.times()).unwrap();
    assert!(v.sum_rmse <= 2.0 * r.sum_rmse, "{} vs {}", v.sum_rmse, r.sum_rmse);

    let truth_v = validate(&hp, &held.truth, held.observed.times()).unwrap();
    let shuffled = held.truth.with_values(&[2.91, 10.6, 0.01, 0.44]);
    let wrong = validate(&hp, &shuffled, held.observed.times()).unwrap();
    assert!(wrong.sum_rmse > truth_v.sum_rmse);
}

#[test]
fn metrics_examples() {
    let m = fit_metrics(&[5.0, 6.0], &[5.0, 6.0]).unwrap();
    assert_eq!((m.rmse, m.mae, m.pct_diff), (0.0, 0.0, 0.0));
    let m = fit_metrics(&[12.0, 13.0], &[10.0, 11.0]).unwrap();
    assert_eq!((m.rmse, m.mae), (2.0, 2.0));
    let m = fit_metrics(&[11.0, 7.0], &[10.0, 10.0]).unwrap();
    assert!((m.rmse - 5f64.sqrt()).abs() < 1e-12 && (m.mae - 2.0).abs() < 1e-12);
    assert!(fit_metrics(&[1.0], &[1.0, 2.0]).is_err());
}

proptest! {
    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..50)) {
        let (o, s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = fit_metrics(&o, &s).unwrap();
        prop_assert!(m.rmse + 1e-12 >= m.mae && m.mae >= 0.0);
    }
}
