//! 5G mmWave geometry, per-station fixes, NLOS screening and multi-station fusion.
//!
//! Angles from [`range_and_angles`] are counterclockwise from the east axis.
//! Measurements carry the downlink AOD as an azimuth clockwise from north,
//! which is the form the position fix consumes. [`ccw_to_azimuth`] converts
//! between the two.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{wrap_pi, FrameError, Geodetic, LocalEnu, LocalFrame};

pub const DEFAULT_CARRIER_HZ: f64 = 28e9;
pub const DEFAULT_BANDWIDTH_HZ: f64 = 400e6;
/// Multiple of the combined range standard deviation used as the NLOS threshold.
pub const DEFAULT_GAMMA_FACTOR: f64 = 5.0;
/// Smallest standard deviation (m) assigned to any axis of a per-station fix.
pub const MIN_FIX_STD: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FivegError {
    #[error("UE and base station coincide")]
    Coincident,
    #[error("UE is vertically above or below the base station; horizontal angle undefined")]
    Vertical,
    #[error("range {range} m is shorter than the height difference {dz} m")]
    ImpossibleGeometry { range: f64, dz: f64 },
    #[error("unknown base station {0}")]
    UnknownStation(u32),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: u32,
    pub pos: LocalEnu,
    /// ULA orientation, azimuth from north (rad).
    pub boresight: f64,
    pub carrier: f64,
    pub bandwidth: f64,
}

impl BaseStation {
    pub fn new(id: u32, pos: LocalEnu) -> Self {
        Self {
            id,
            pos,
            boresight: 0.0,
            carrier: DEFAULT_CARRIER_HZ,
            bandwidth: DEFAULT_BANDWIDTH_HZ,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FivegMeasurement {
    pub t: f64,
    pub bs_id: u32,
    pub rtt_range: f64,
    /// Azimuth of the UE seen from the station, clockwise from north (rad).
    pub aod: f64,
    pub rx_power_range: Option<f64>,
    pub sigma_range: f64,
    pub sigma_aod: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkState {
    Los,
    Nlos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FixMode {
    Los,
    TotalNlos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineMode {
    Fused,
    InsOnly,
}

/// The per-epoch position solution handed to the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FivegFix {
    pub t: f64,
    pub pos: Option<Geodetic>,
    /// ENU position covariance, m².
    pub cov: Option<Matrix3<f64>>,
    pub n_bs_used: usize,
    pub mode: FixMode,
}

impl FivegFix {
    pub fn outage(t: f64) -> Self {
        Self {
            t,
            pos: None,
            cov: None,
            n_bs_used: 0,
            mode: FixMode::TotalNlos,
        }
    }
}

/// A horizontal fix from a single station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationFix {
    pub bs_id: u32,
    pub xy: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Horizontal result of information-form fusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedFix {
    pub xy: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub n: usize,
}

/// What to do when a measurement has no power-based range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MissingPowerPolicy {
    #[default]
    AssumeLos,
    AssumeNlos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FivegConfig {
    /// Filter-side standard deviations of the RTT range (m) and AOD (rad).
    pub sigma_range: f64,
    pub sigma_aod: f64,
    /// Standard deviation of the power-derived range (m).
    pub sigma_power_range: f64,
    /// Explicit NLOS threshold; defaults to a multiple of the combined σ.
    pub gamma: Option<f64>,
    pub missing_power: MissingPowerPolicy,
    /// Constant UE height above the anchor (m).
    pub h_ue: f64,
    /// Standard deviation assigned to the constant-height assumption (m).
    pub sigma_h: f64,
}

impl Default for FivegConfig {
    fn default() -> Self {
        Self {
            sigma_range: 0.3,
            sigma_aod: 1f64.to_radians(),
            sigma_power_range: 3.0,
            gamma: None,
            missing_power: MissingPowerPolicy::AssumeLos,
            h_ue: 0.0,
            sigma_h: 0.1,
        }
    }
}

impl FivegConfig {
    pub fn gamma(&self) -> f64 {
        self.gamma
            .unwrap_or_else(|| default_gamma(self.sigma_range, self.sigma_power_range))
    }
}

pub fn default_gamma(sigma_range: f64, sigma_power_range: f64) -> f64 {
    DEFAULT_GAMMA_FACTOR * sigma_range.hypot(sigma_power_range)
}

pub fn ccw_to_azimuth(theta_ccw: f64) -> f64 {
    wrap_pi(FRAC_PI_2 - theta_ccw)
}

pub fn azimuth_to_ccw(azimuth: f64) -> f64 {
    wrap_pi(FRAC_PI_2 - azimuth)
}

/// Range, horizontal angle (counterclockwise from east) and elevation of the UE
/// as seen from the station.
pub fn range_and_angles(ue: &LocalEnu, bs: &LocalEnu) -> Result<(f64, f64, f64), FivegError> {
    let (dx, dy, dz) = (ue.e - bs.e, ue.n - bs.n, ue.u - bs.u);
    let r2d = dx.hypot(dy);
    let r = r2d.hypot(dz);
    if r == 0.0 {
        return Err(FivegError::Coincident);
    }
    if r2d == 0.0 {
        return Err(FivegError::Vertical);
    }
    Ok((r, dy.atan2(dx), dz.atan2(r2d)))
}

fn horizontal_range(range: f64, dz: f64) -> Result<f64, FivegError> {
    let dz = dz.abs();
    if range < dz {
        return Err(FivegError::ImpossibleGeometry { range, dz });
    }
    Ok(((range - dz) * (range + dz)).sqrt())
}

/// Horizontal UE position from one RTT range and azimuth AOD at a known UE height.
pub fn fix_from_measurement(
    m: &FivegMeasurement,
    bs: &BaseStation,
    h_ue: f64,
) -> Result<Vector2<f64>, FivegError> {
    let r2d = horizontal_range(m.rtt_range, h_ue - bs.pos.u)?;
    let (s, c) = m.aod.sin_cos();
    Ok(Vector2::new(r2d * s + bs.pos.e, r2d * c + bs.pos.n))
}

/// First-order covariance of a single-station fix: range error along the
/// bearing, angular error across it.
pub fn fix_covariance(
    m: &FivegMeasurement,
    bs: &BaseStation,
    h_ue: f64,
) -> Result<Matrix2<f64>, FivegError> {
    let r2d = horizontal_range(m.rtt_range, h_ue - bs.pos.u)?;
    let along_std = (m.sigma_range * m.rtt_range / r2d.max(MIN_FIX_STD)).max(MIN_FIX_STD);
    let across_std = (r2d * m.sigma_aod).max(MIN_FIX_STD);
    let (s, c) = m.aod.sin_cos();
    let along = Vector2::new(s, c);
    let across = Vector2::new(c, -s);
    Ok(along * along.transpose() * along_std.powi(2)
        + across * across.transpose() * across_std.powi(2))
}

pub fn nlos_detect(m: &FivegMeasurement, gamma: f64, policy: MissingPowerPolicy) -> LinkState {
    match m.rx_power_range {
        Some(p) if (m.rtt_range - p).abs() > gamma => LinkState::Nlos,
        Some(_) => LinkState::Los,
        None => {
            log::warn!(
                "5G measurement from station {} at t={} has no power range",
                m.bs_id,
                m.t
            );
            match policy {
                MissingPowerPolicy::AssumeLos => LinkState::Los,
                MissingPowerPolicy::AssumeNlos => LinkState::Nlos,
            }
        }
    }
}

/// Inverse-covariance weighted combination of per-station fixes.
pub fn fuse_multibs(fixes: &[StationFix]) -> Option<FusedFix> {
    if fixes.is_empty() {
        return None;
    }
    if fixes.len() == 1 {
        return Some(FusedFix {
            xy: fixes[0].xy,
            cov: fixes[0].cov,
            n: 1,
        });
    }
    let mut info = Matrix2::zeros();
    let mut info_vec = Vector2::zeros();
    for f in fixes {
        let inv = f.cov.try_inverse()?;
        info += inv;
        info_vec += inv * f.xy;
    }
    let cov = info.try_inverse()?;
    let cov = (cov + cov.transpose()) * 0.5;
    Some(FusedFix {
        xy: cov * info_vec,
        cov,
        n: fixes.len(),
    })
}

pub fn switch_mode(links: &[LinkState]) -> PipelineMode {
    if links.contains(&LinkState::Los) {
        PipelineMode::Fused
    } else {
        PipelineMode::InsOnly
    }
}

/// Full per-epoch pipeline: NLOS screening, per-station fixes and fusion.
///
/// Measurements are assumed to share one timestamp `t`.
pub fn process_epoch(
    t: f64,
    measurements: &[FivegMeasurement],
    stations: &[BaseStation],
    cfg: &FivegConfig,
    frame: &LocalFrame,
) -> Result<FivegFix, FivegError> {
    let gamma = cfg.gamma();
    let mut fixes = Vec::new();
    for m in measurements {
        if nlos_detect(m, gamma, cfg.missing_power) == LinkState::Nlos {
            continue;
        }
        let bs = stations
            .iter()
            .find(|b| b.id == m.bs_id)
            .ok_or(FivegError::UnknownStation(m.bs_id))?;
        let m = FivegMeasurement {
            sigma_range: cfg.sigma_range,
            sigma_aod: cfg.sigma_aod,
            ..*m
        };
        match (
            fix_from_measurement(&m, bs, cfg.h_ue),
            fix_covariance(&m, bs, cfg.h_ue),
        ) {
            (Ok(xy), Ok(cov)) => fixes.push(StationFix {
                bs_id: m.bs_id,
                xy,
                cov,
            }),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("rejecting 5G measurement from station {}: {e}", m.bs_id)
            }
        }
    }
    let Some(fused) = fuse_multibs(&fixes) else {
        return Ok(FivegFix::outage(t));
    };
    let pos = frame.to_geodetic(&LocalEnu::new(fused.xy.x, fused.xy.y, cfg.h_ue))?;
    let mut cov = Matrix3::zeros();
    cov.fixed_view_mut::<2, 2>(0, 0).copy_from(&fused.cov);
    cov[(2, 2)] = cfg.sigma_h.powi(2);
    Ok(FivegFix {
        t,
        pos: Some(pos),
        cov: Some(cov),
        n_bs_used: fused.n,
        mode: FixMode::Los,
    })
}

/// Group a time-ordered measurement stream into epochs and process each one.
pub fn process_stream(
    measurements: &[FivegMeasurement],
    stations: &[BaseStation],
    cfg: &FivegConfig,
    frame: &LocalFrame,
) -> Result<Vec<FivegFix>, FivegError> {
    measurements
        .chunk_by(|a, b| a.t == b.t)
        .map(|epoch| process_epoch(epoch[0].t, epoch, stations, cfg, frame))
        .collect()
}
