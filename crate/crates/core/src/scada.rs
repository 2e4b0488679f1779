//! Sensor data preparation: regridding heterogeneous sampling, static
//! (near-zero flow) window detection and constant pressure-offset
//! estimation and correction.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::network::Network;
use crate::timetable::{TimeTable, TimeTableError};
use crate::units::Unit;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("resampling grid is empty (record shorter than one step)")]
    EmptyOverlap,
    #[error("column `{0}` has no valid values")]
    AllNaN(String),
    #[error("target step must be positive")]
    BadStep,
    #[error("table must be on a uniform grid")]
    NotUniform,
    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),
    #[error("sensor `{sensor}` references unknown node `{node}`")]
    UnknownNode { sensor: String, node: String },
    #[error(transparent)]
    Table(#[from] TimeTableError),
    #[error("sensor metadata line {line}: {message}")]
    Meta { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    InterpolateLinear,
    DownsampleMean,
    /// Value persists until the next recorded change (deadband logging).
    HoldLast,
}

/// Regrids onto multiples of `step` covering the raw record.
pub fn resample(raw: &TimeTable, step: f64, method: ResampleMethod) -> Result<TimeTable, PreprocessError> {
    let (Some(start), Some(end)) = (raw.start(), raw.end()) else {
        return Err(PreprocessError::EmptyOverlap);
    };
    resample_range(raw, start, end, step, method)
}

/// Regrids onto multiples of `step` within `[start, end]`. For
/// [`ResampleMethod::HoldLast`] `end` may lie past the last record, since
/// a deadband series holds its value until the end of the logging period.
pub fn resample_range(
    raw: &TimeTable,
    start: f64,
    end: f64,
    step: f64,
    method: ResampleMethod,
) -> Result<TimeTable, PreprocessError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(PreprocessError::BadStep);
    }
    let first = (start / step).ceil() as i64;
    let last = (end / step).floor() as i64;
    if last < first {
        return Err(PreprocessError::EmptyOverlap);
    }
    let grid: Vec<f64> = (first..=last).map(|k| k as f64 * step).collect();
    let times = raw.times();
    let mut columns = IndexMap::new();
    for (key, values) in raw.columns() {
        let valid: Vec<(f64, f64)> =
            times.iter().zip(values).filter(|(_, v)| v.is_finite()).map(|(&t, &v)| (t, v)).collect();
        if valid.is_empty() {
            return Err(PreprocessError::AllNaN(key.clone()));
        }
        let out = match method {
            ResampleMethod::InterpolateLinear => grid.iter().map(|&t| interpolate(&valid, t)).collect(),
            ResampleMethod::DownsampleMean => grid.iter().map(|&t| window_mean(&valid, t, t + step)).collect(),
            ResampleMethod::HoldLast => grid.iter().map(|&t| hold_last(&valid, t)).collect(),
        };
        columns.insert(key.clone(), out);
    }
    Ok(TimeTable::uniform(grid[0], step, grid.len(), raw.unit(), columns)?)
}

/// Index of the first sample with time > t.
fn upper_bound(valid: &[(f64, f64)], t: f64) -> usize {
    valid.partition_point(|&(ts, _)| ts <= t)
}

fn interpolate(valid: &[(f64, f64)], t: f64) -> f64 {
    let i = upper_bound(valid, t);
    if i == 0 {
        return f64::NAN;
    }
    let (t0, v0) = valid[i - 1];
    if t0 == t {
        return v0;
    }
    match valid.get(i) {
        Some(&(t1, v1)) => v0 + (v1 - v0) * (t - t0) / (t1 - t0),
        None => f64::NAN,
    }
}

fn window_mean(valid: &[(f64, f64)], from: f64, to: f64) -> f64 {
    let a = valid.partition_point(|&(ts, _)| ts < from);
    let b = valid.partition_point(|&(ts, _)| ts < to);
    if b <= a {
        return f64::NAN;
    }
    valid[a..b].iter().map(|p| p.1).sum::<f64>() / (b - a) as f64
}

fn hold_last(valid: &[(f64, f64)], t: f64) -> f64 {
    match upper_bound(valid, t) {
        0 => f64::NAN,
        i => valid[i - 1].1,
    }
}

/// Linearly fills interior NaN runs no longer than `max_gap` rows; longer
/// runs and runs touching either end stay NaN.
pub fn fill_short_gaps(table: &TimeTable, max_gap: usize) -> TimeTable {
    let mut out = table.clone();
    let times = table.times().to_vec();
    for gap in table.gaps() {
        if gap.len > max_gap || gap.start == 0 || gap.start + gap.len >= table.len() {
            continue;
        }
        let col = table.column(&gap.column).expect("gap column exists");
        let (i0, i1) = (gap.start - 1, gap.start + gap.len);
        let (t0, t1, v0, v1) = (times[i0], times[i1], col[i0], col[i1]);
        let mut filled = col.to_vec();
        for i in gap.start..i1 {
            filled[i] = v0 + (v1 - v0) * (times[i] - t0) / (t1 - t0);
        }
        out.insert_column(gap.column.clone(), filled).expect("same length");
    }
    out
}

/// Closed time interval in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Maximal runs where `|flow| ≤ threshold_lps` lasting at least
/// `min_duration` seconds (first to last qualifying sample). Sorted and
/// disjoint.
pub fn detect_static_windows(
    flow: &TimeTable,
    column: &str,
    threshold_lps: f64,
    min_duration: f64,
) -> Result<Vec<TimeWindow>, PreprocessError> {
    if flow.step().is_none() && flow.len() > 1 {
        return Err(PreprocessError::NotUniform);
    }
    let flow = flow.converted(Unit::LitresPerSecond)?;
    let values = flow.require(column)?;
    let times = flow.times();
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=values.len() {
        let quiet = i < values.len() && values[i].abs() <= threshold_lps;
        match (quiet, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                let w = TimeWindow { start: times[s], end: times[i - 1] };
                if w.duration() >= min_duration {
                    out.push(w);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Pressure,
    Flow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub id: String,
    pub node_id: String,
    /// m
    pub elevation: f64,
    pub kind: SensorKind,
}

/// Reads `id,node_id,elevation,kind` CSV rows (header required).
pub fn parse_sensor_meta(text: &str) -> Result<Vec<SensorMeta>, PreprocessError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.deserialize::<SensorMeta>() {
        out.push(rec.map_err(|e| PreprocessError::Meta {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Checks sensor nodes exist; returns warnings for elevations that differ
/// from the node's by more than 0.01 m.
pub fn check_sensors(net: &Network, sensors: &[SensorMeta]) -> Result<Vec<String>, PreprocessError> {
    let mut warnings = Vec::new();
    for s in sensors {
        let node = net
            .node(&s.node_id)
            .ok_or_else(|| PreprocessError::UnknownNode { sensor: s.id.clone(), node: s.node_id.clone() })?;
        if (node.elevation - s.elevation).abs() > 0.01 {
            warnings.push(format!(
                "sensor `{}` elevation {} m differs from node `{}` elevation {} m",
                s.id, s.elevation, node.id, node.elevation
            ));
        }
    }
    Ok(warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Ok,
    LowData,
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensorOffset {
    /// Sensor HGL minus reference HGL under static conditions, m.
    pub offset: f64,
    pub n_static_windows: usize,
    /// Spread of the static HGL differences, m.
    pub window_stddev: f64,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetReport {
    pub reference: String,
    pub sensors: IndexMap<String, SensorOffset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffsetRules {
    pub min_windows: usize,
    /// m
    pub max_stddev: f64,
}

impl Default for OffsetRules {
    fn default() -> Self {
        OffsetRules { min_windows: 3, max_stddev: 0.2 }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Constant offsets of each pressure sensor relative to `reference`, from
/// HGL differences inside static windows. The reference is taken as exact.
pub fn estimate_offsets(
    pressures: &TimeTable,
    sensors: &[SensorMeta],
    reference: &str,
    windows: &[TimeWindow],
    rules: &OffsetRules,
) -> Result<OffsetReport, PreprocessError> {
    let find = |id: &str| sensors.iter().find(|s| s.id == id).ok_or_else(|| PreprocessError::UnknownSensor(id.into()));
    let ref_meta = find(reference)?;
    let ref_col = pressures.require(reference)?;
    let times = pressures.times();

    let mut out = IndexMap::new();
    for s in sensors.iter().filter(|s| s.kind == SensorKind::Pressure) {
        if s.id == reference {
            out.insert(
                s.id.clone(),
                SensorOffset { offset: 0.0, n_static_windows: windows.len(), window_stddev: 0.0, confidence: Confidence::Ok },
            );
            continue;
        }
        let Some(col) = pressures.column(&s.id) else { continue };
        let mut means = Vec::new();
        let mut all = Vec::new();
        for w in windows {
            let diffs: Vec<f64> = (0..times.len())
                .filter(|&i| w.contains(times[i]) && col[i].is_finite() && ref_col[i].is_finite())
                .map(|i| (col[i] + s.elevation) - (ref_col[i] + ref_meta.elevation))
                .collect();
            if diffs.is_empty() {
                continue;
            }
            means.push(diffs.iter().sum::<f64>() / diffs.len() as f64);
            all.extend(diffs);
        }
        let n = means.len();
        let offset = if n == 0 { 0.0 } else { median(&mut means) };
        let stddev = if all.len() < 2 {
            0.0
        } else {
            let m = all.iter().sum::<f64>() / all.len() as f64;
            (all.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt()
        };
        let confidence = if n < rules.min_windows {
            Confidence::LowData
        } else if stddev > rules.max_stddev {
            Confidence::Inconsistent
        } else {
            Confidence::Ok
        };
        out.insert(s.id.clone(), SensorOffset { offset, n_static_windows: n, window_stddev: stddev, confidence });
    }
    Ok(OffsetReport { reference: reference.to_string(), sensors: out })
}

/// Subtracts each confident offset from its column. Columns without a
/// confident estimate pass through unchanged, with a warning.
pub fn apply_corrections(pressures: &TimeTable, report: &OffsetReport) -> (TimeTable, Vec<String>) {
    let mut out = pressures.clone();
    let mut warnings = Vec::new();
    for (id, est) in &report.sensors {
        let Some(col) = pressures.column(id) else { continue };
        if est.confidence != Confidence::Ok {
            warnings.push(format!("sensor `{id}` not corrected (confidence {:?})", est.confidence));
            continue;
        }
        let corrected = col.iter().map(|v| v - est.offset).collect();
        out.insert_column(id.clone(), corrected).expect("same length");
    }
    (out, warnings)
}
