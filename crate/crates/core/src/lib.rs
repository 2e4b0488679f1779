//! Pressurized pipe-network hydraulics with roughness calibration, sensor
//! preprocessing and pump setpoint selection.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod exec;
pub mod hydraulics;
pub mod network;
pub mod report;
pub mod scada;
pub mod setpoint;
pub mod synth;
pub mod timetable;
pub mod units;
