//! Unit-tagged time series tables and their CSV form.

use chrono::{DateTime, NaiveDateTime};
use indexmap::IndexMap;

use crate::units::{fmt_sig, Unit};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TimeTableError {
    #[error("timestamps not increasing at line {line}")]
    NonMonotone { line: usize },
    #[error("unparseable timestamp `{value}` at line {line}")]
    BadTimestamp { line: usize, value: String },
    #[error("unparseable value `{value}` in column `{column}` at line {line}")]
    BadCell { line: usize, column: String, value: String },
    #[error("file declares unit {declared} but {expected} was requested")]
    UnitMismatch { declared: Unit, expected: Unit },
    #[error("no unit given: pass one explicitly or add a `# unit: ...` line")]
    MissingUnit,
    #[error("bad unit pragma: {0}")]
    BadPragma(String),
    #[error("first header column must be `timestamp`")]
    MissingTimestampColumn,
    #[error("csv: {0}")]
    Csv(String),
    #[error("column `{column}` has {got} values, expected {expected}")]
    Length { column: String, got: usize, expected: usize },
    #[error("unknown column `{0}`")]
    MissingColumn(String),
}

/// A run of missing values in one column.
#[derive(Debug, Clone, PartialEq)]
pub struct Gap {
    pub column: String,
    pub start: usize,
    pub len: usize,
}

/// Time series sharing one time axis. Times are UTC seconds since the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTable {
    times: Vec<f64>,
    step: Option<f64>,
    unit: Unit,
    columns: IndexMap<String, Vec<f64>>,
}

const STEP_TOL: f64 = 1e-6;

impl TimeTable {
    pub fn new(times: Vec<f64>, unit: Unit, columns: IndexMap<String, Vec<f64>>) -> Result<Self, TimeTableError> {
        for w in times.windows(2).enumerate() {
            if w.1[1] <= w.1[0] {
                return Err(TimeTableError::NonMonotone { line: w.0 + 2 });
            }
        }
        for (k, v) in &columns {
            if v.len() != times.len() {
                return Err(TimeTableError::Length { column: k.clone(), got: v.len(), expected: times.len() });
            }
        }
        let step = detect_step(&times);
        Ok(TimeTable { times, step, unit, columns })
    }

    /// Uniform grid starting at `start` with `len` rows.
    pub fn uniform(
        start: f64,
        step: f64,
        len: usize,
        unit: Unit,
        columns: IndexMap<String, Vec<f64>>,
    ) -> Result<Self, TimeTableError> {
        assert!(step > 0.0, "step must be positive");
        let times = (0..len).map(|i| start + step * i as f64).collect();
        let mut t = TimeTable::new(times, unit, columns)?;
        if len >= 1 {
            t.step = Some(step);
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn end(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Grid spacing in seconds; `None` when sampling is irregular.
    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn columns(&self) -> &IndexMap<String, Vec<f64>> {
        &self.columns
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn column(&self, key: &str) -> Option<&[f64]> {
        self.columns.get(key).map(Vec::as_slice)
    }

    pub fn require(&self, key: &str) -> Result<&[f64], TimeTableError> {
        self.column(key).ok_or_else(|| TimeTableError::MissingColumn(key.to_string()))
    }

    pub fn insert_column(&mut self, key: impl Into<String>, values: Vec<f64>) -> Result<(), TimeTableError> {
        let key = key.into();
        if values.len() != self.len() {
            return Err(TimeTableError::Length { column: key, got: values.len(), expected: self.len() });
        }
        self.columns.insert(key, values);
        Ok(())
    }

    /// Same table with values converted to `unit` (flow units only convert
    /// between each other).
    pub fn converted(&self, unit: Unit) -> Result<TimeTable, TimeTableError> {
        if self.unit == unit {
            return Ok(self.clone());
        }
        if self.unit.is_flow() != unit.is_flow() {
            return Err(TimeTableError::UnitMismatch { declared: self.unit, expected: unit });
        }
        let factor = self.unit.to_si() / unit.to_si();
        let columns = self.columns.iter().map(|(k, v)| (k.clone(), v.iter().map(|x| x * factor).collect())).collect();
        Ok(TimeTable { times: self.times.clone(), step: self.step, unit, columns })
    }

    /// Rows whose time lies in `[start, end]`.
    pub fn slice_time(&self, start: f64, end: f64) -> TimeTable {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.times[i] >= start && self.times[i] <= end).collect();
        self.select_rows(&idx)
    }

    pub fn select_rows(&self, rows: &[usize]) -> TimeTable {
        let times: Vec<f64> = rows.iter().map(|&i| self.times[i]).collect();
        let columns = self.columns.iter().map(|(k, v)| (k.clone(), rows.iter().map(|&i| v[i]).collect())).collect();
        let step = detect_step(&times).or(if times.len() == 1 { self.step } else { None });
        TimeTable { times, step, unit: self.unit, columns }
    }

    /// Runs of NaN values per column.
    pub fn gaps(&self) -> Vec<Gap> {
        let mut out = Vec::new();
        for (k, v) in &self.columns {
            let mut i = 0;
            while i < v.len() {
                if v[i].is_nan() {
                    let start = i;
                    while i < v.len() && v[i].is_nan() {
                        i += 1;
                    }
                    out.push(Gap { column: k.clone(), start, len: i - start });
                } else {
                    i += 1;
                }
            }
        }
        out
    }

    /// Time intervals larger than the nominal step (only for gridded tables).
    pub fn time_gaps(&self) -> Vec<(f64, f64)> {
        let Some(step) = self.step else { return Vec::new() };
        self.times.windows(2).filter(|w| w[1] - w[0] > step * (1.0 + 1e-9)).map(|w| (w[0], w[1])).collect()
    }

    /// CSV with a `# unit:` pragma, ISO timestamps and 6 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# unit: {}\ntimestamp", self.unit);
        for k in self.columns.keys() {
            out.push(',');
            out.push_str(&csv_field(k));
        }
        out.push('\n');
        for (i, &t) in self.times.iter().enumerate() {
            out.push_str(&format_timestamp(t));
            for v in self.columns.values() {
                out.push(',');
                if !v[i].is_nan() {
                    out.push_str(&fmt_sig(v[i], 6));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn detect_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let step = times[1] - times[0];
    times.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= STEP_TOL).then_some(step)
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Parses ISO-8601 date-times (with or without offset, `T` or space
/// separator, optional fractional seconds) to UTC epoch seconds.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
    }
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok()).map(|dt| {
        let utc = dt.and_utc();
        utc.timestamp() as f64 + f64::from(utc.timestamp_subsec_nanos()) * 1e-9
    })
}

pub fn format_timestamp(t: f64) -> String {
    let whole = t.floor();
    let nanos = ((t - whole) * 1e9).round() as u32;
    let (secs, nanos) = if nanos >= 1_000_000_000 { (whole as i64 + 1, 0) } else { (whole as i64, nanos) };
    match DateTime::from_timestamp(secs, nanos) {
        Some(dt) if nanos == 0 => dt.format("%Y-%m-%dT%H:%M:%S").to_string(),
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%S%.3f").to_string(),
        None => format!("{t}"),
    }
}

fn unit_pragma(text: &str) -> Result<Option<Unit>, TimeTableError> {
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(u) = rest.trim().strip_prefix("unit:") {
                return u.trim().parse().map(Some).map_err(|e: crate::units::UnknownUnit| {
                    TimeTableError::BadPragma(e.to_string())
                });
            }
        } else if !trimmed.is_empty() {
            break;
        }
    }
    Ok(None)
}

/// Parses an RFC-4180 CSV whose first column is `timestamp`. Empty cells
/// become NaN; gaps are reported by [`TimeTable::gaps`], never filled here.
pub fn parse_timetable(text: &str, unit: Option<Unit>) -> Result<TimeTable, TimeTableError> {
    let unit = match (unit_pragma(text)?, unit) {
        (Some(d), Some(e)) if d != e => return Err(TimeTableError::UnitMismatch { declared: d, expected: e }),
        (Some(u), _) | (None, Some(u)) => u,
        (None, None) => return Err(TimeTableError::MissingUnit),
    };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| TimeTableError::Csv(e.to_string()))?.clone();
    if headers.get(0).map(str::to_ascii_lowercase).as_deref() != Some("timestamp") {
        return Err(TimeTableError::MissingTimestampColumn);
    }
    let keys: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); keys.len()];
    let mut times = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| TimeTableError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let ts = record.get(0).unwrap_or("");
        let t = parse_timestamp(ts).ok_or_else(|| TimeTableError::BadTimestamp { line, value: ts.to_string() })?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(TimeTableError::NonMonotone { line });
            }
        }
        times.push(t);
        for (c, cell) in record.iter().skip(1).enumerate() {
            let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| TimeTableError::BadCell {
                    line,
                    column: keys[c].clone(),
                    value: cell.to_string(),
                })?
            };
            values[c].push(v);
        }
    }
    let columns = keys.into_iter().zip(values).collect();
    TimeTable::new(times, unit, columns)
}
