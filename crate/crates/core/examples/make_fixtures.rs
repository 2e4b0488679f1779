//! Writes the generated fixture files under `fixtures/` (workspace root).
//!
//! cargo run -p pipenet --example make_fixtures -- <dir>

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use pipenet::network::serialize_network;
use pipenet::synth;
use pipenet::timetable::TimeTable;
use pipenet::units::Unit;

fn put(dir: &Path, name: &str, text: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(name), text).unwrap();
}

fn main() {
    let root: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "fixtures".into());

    let c = synth::calibration_case(96, 0.1, 7, 0);
    let dir = root.join("calibration");
    put(&dir, "network.net", &serialize_network(&c.net));
    put(&dir, "demands.csv", &c.demands.to_csv());
    put(&dir, "observed.csv", &c.observed.to_csv());
    put(&dir, "groups.toml", &c.initial_groups().to_toml());
    put(&dir, "truth.toml", &c.truth.to_toml());
    let h = synth::calibration_case(96, 0.1, 8, 1);
    put(&dir, "holdout_demands.csv", &h.demands.to_csv());
    put(&dir, "holdout_observed.csv", &h.observed.to_csv());

    let s = synth::setpoint_case();
    let dir = root.join("setpoint");
    put(&dir, "network.net", &serialize_network(&s.net));
    put(&dir, "demands.csv", &s.demands.to_csv());
    put(&dir, "config.toml", &format!("[energy]\nsuction_hgl = {}\n", s.energy.suction_hgl));

    let (p, f, sensors) = synth::scada_record(&[0.2, -12.6, 3.0, 0.9, 3.5], 0.05, 11, 4);
    // thin the flow log to changes only, as a deadband logger would
    let flow = f.column("system").unwrap();
    let keep: Vec<usize> = (0..flow.len()).filter(|&i| i == 0 || (flow[i] - flow[i - 1]).abs() > 1.0).collect();
    let dir = root.join("scada");
    put(&dir, "pressures.csv", &p.to_csv());
    put(&dir, "flow.csv", &f.select_rows(&keep).to_csv());
    let mut meta = String::from("id,node_id,elevation,kind\n");
    for m in &sensors {
        meta.push_str(&format!("{},{},{},pressure\n", m.id, m.node_id, m.elevation));
    }
    put(&dir, "sensors.csv", &meta);

    let (net, d) = synth::utility_scale(8);
    let dir = root.join("utility_scale");
    put(&dir, "network.net", &serialize_network(&net));
    put(&dir, "demands.csv", &d.to_csv());

    // demand far beyond what one Newton step can settle
    let dir = root.join("nonconvergent");
    put(&dir, "network.net", "[NODES]\nR 0 reservoir\nJ1 0 junction q\nJ2 0 junction q\n\n[PIPES]\nP1 R J1 1000 100 DICL 0.44\nP2 J1 J2 1000 100 DICL 0.44\n\n[SOURCES]\nR 50\n");
    let q: IndexMap<String, Vec<f64>> = [("q".to_string(), vec![5000.0, 5000.0])].into_iter().collect();
    put(&dir, "demands.csv", &TimeTable::uniform(synth::EPOCH, 900.0, 2, Unit::LitresPerSecond, q).unwrap().to_csv());
    put(&dir, "config.toml", "[solver]\nmax_iterations = 1\n");
}
