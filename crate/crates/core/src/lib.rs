//! Loosely-coupled integration of 5G mmWave position fixes with an IMU and a
//! wheel odometer.
//!
//! The crate is organised bottom-up:
//! - [`frames`]: Earth model, rotations, quaternions and the local tangent plane
//! - [`sensors`]: sample types, bias estimation, Gauss-Markov bias dynamics, stationarity
//! - [`mechanization`]: strapdown INS mechanization with the stopping mechanism
//! - [`fiveg`]: RTT/AOD geometry, per-station fixes, NLOS screening and multi-station fusion
//! - [`fusion`]: the 15-state extended Kalman filter and the constant-velocity benchmark
//! - [`scenario`]: deterministic truth, sensor and 5G stream synthesis
//! - [`eval`]: error series, summary statistics and empirical CDFs
//! - [`io`]: the JSON-lines sensor log, CSV outputs and scenario configuration files
//! - [`pipeline`]: the INS-only, INS/odometer, 5G-only and fused pipelines

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod fiveg;
pub mod frames;
pub mod fusion;
pub mod io;
pub mod mechanization;
pub mod pipeline;
pub mod scenario;
pub mod sensors;
