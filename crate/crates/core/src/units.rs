//! Unit conversions. Everything crossing a file boundary goes through here.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const LPS_PER_M3S: f64 = 1000.0;
pub const MM_PER_M: f64 = 1000.0;
pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[inline]
pub fn lps_to_m3s(q: f64) -> f64 {
    q / LPS_PER_M3S
}

#[inline]
pub fn m3s_to_lps(q: f64) -> f64 {
    q * LPS_PER_M3S
}

#[inline]
pub fn mm_to_m(x: f64) -> f64 {
    x / MM_PER_M
}

#[inline]
pub fn m_to_mm(x: f64) -> f64 {
    x * MM_PER_M
}

/// Unit tag carried by a [`TimeTable`](crate::timetable::TimeTable).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "L/s")]
    LitresPerSecond,
    #[serde(rename = "m")]
    Metres,
    #[serde(rename = "m3/s")]
    CubicMetresPerSecond,
}

impl Unit {
    /// Factor that converts a value in this unit to SI (m or m³/s).
    pub fn to_si(self) -> f64 {
        match self {
            Unit::LitresPerSecond => 1.0 / LPS_PER_M3S,
            Unit::Metres | Unit::CubicMetresPerSecond => 1.0,
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, Unit::LitresPerSecond | Unit::CubicMetresPerSecond)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::LitresPerSecond => "L/s",
            Unit::Metres => "m",
            Unit::CubicMetresPerSecond => "m3/s",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown unit `{0}` (expected L/s, m or m3/s)")]
pub struct UnknownUnit(pub String);

impl FromStr for Unit {
    type Err = UnknownUnit;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L/s" | "l/s" | "lps" | "LPS" => Ok(Unit::LitresPerSecond),
            "m" | "M" => Ok(Unit::Metres),
            "m3/s" | "m³/s" | "M3/S" | "cms" => Ok(Unit::CubicMetresPerSecond),
            other => Err(UnknownUnit(other.to_string())),
        }
    }
}

/// Formats `x` with `sig` significant digits in the style of C's `%g`.
///
/// Output is stable across platforms, which keeps CSV and report files
/// byte-identical between runs.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sig = sig.max(1);
    // Round first so the exponent reflects the rounded value (e.g. 999999.7 -> 1e+06).
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= sig as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting_matches_printf_g() {
        assert_eq!(fmt_sig(0.0, 6), "0");
        assert_eq!(fmt_sig(1.0, 6), "1");
        assert_eq!(fmt_sig(123.456789, 6), "123.457");
        assert_eq!(fmt_sig(-0.000123456789, 6), "-0.000123457");
        assert_eq!(fmt_sig(1234567.0, 6), "1.23457e+06");
        assert_eq!(fmt_sig(999999.7, 6), "1e+06");
        assert_eq!(fmt_sig(1e-7, 6), "1e-07");
        assert_eq!(fmt_sig(35.0, 6), "35");
        assert_eq!(fmt_sig(f64::NAN, 6), "NaN");
    }

    #[test]
    fn unit_parsing() {
        assert_eq!("L/s".parse::<Unit>().unwrap(), Unit::LitresPerSecond);
        assert_eq!("m".parse::<Unit>().unwrap(), Unit::Metres);
        assert_eq!("m³/s".parse::<Unit>().unwrap(), Unit::CubicMetresPerSecond);
        assert!("psi".parse::<Unit>().is_err());
    }

    #[test]
    fn flow_conversions_are_inverse() {
        assert_eq!(lps_to_m3s(2500.0), 2.5);
        assert_eq!(m3s_to_lps(lps_to_m3s(12.0)), 12.0);
        assert_eq!(mm_to_m(300.0), 0.3);
    }
}
