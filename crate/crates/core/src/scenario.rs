//! Deterministic synthetic scenarios: truth trajectory, perfect and corrupted
//! sensor streams, base-station deployment and 5G measurement synthesis.
//!
//! Paths are polylines with circular fillets at the corners. Speed along the
//! path is the largest profile that respects per-element speed limits, stops
//! and a symmetric longitudinal acceleration limit, which gives trapezoidal
//! ramps between cruise phases. Truth is planar in the local tangent frame.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fiveg::{ccw_to_azimuth, range_and_angles, BaseStation, FivegConfig, FivegMeasurement};
use crate::frames::{
    quat_from_attitude, wrap_pi, Attitude, EarthModel, FrameError, Geodetic, LocalEnu, LocalFrame,
    Quaternion,
};
use crate::mechanization::{transport_rate_unchecked, NavState};
use crate::sensors::{gm_propagate, BiasState, ImuSample, OdoSample, SensorSpec};

pub const STANDARD_GRAVITY: f64 = 9.806_65;
/// Turns demanding more lateral acceleration than this are rejected.
pub const MAX_LATERAL_ACCEL: f64 = 0.4 * STANDARD_GRAVITY;

const COLLINEAR_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("waypoint {index}: turn at {speed} m/s with radius {radius} m needs {accel:.2} m/s² lateral acceleration (limit {MAX_LATERAL_ACCEL:.2})")]
    InfeasibleTurn {
        index: usize,
        speed: f64,
        radius: f64,
        accel: f64,
    },
    #[error("waypoint {0} is a stop but its neighbours are not collinear")]
    StopNotCollinear(usize),
    #[error("fillets at the ends of segment {0} overlap; shorten the turn radii")]
    FilletOverlap(usize),
    #[error("outage {0} overlaps the next one or falls outside the scenario")]
    BadOutage(usize),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

fn field_error(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Field {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub e: f64,
    pub n: f64,
    /// Cruise speed on the segment that starts here (m/s).
    #[serde(default)]
    pub speed: Option<f64>,
    /// Dwell time if the vehicle stops here (s).
    #[serde(default)]
    pub stop_s: f64,
    #[serde(default)]
    pub turn_radius: Option<f64>,
    #[serde(default)]
    pub turn_speed: Option<f64>,
}

impl Waypoint {
    pub fn new(e: f64, n: f64) -> Self {
        Self {
            e,
            n,
            speed: None,
            stop_s: 0.0,
            turn_radius: None,
            turn_speed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub cruise_speed: f64,
    /// Longitudinal acceleration and braking limit (m/s²).
    pub accel: f64,
    pub turn_radius: f64,
    /// Lateral acceleration used to pick default turn speeds (m/s²).
    pub lateral_accel: f64,
    pub initial_static_s: f64,
    pub final_static_s: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 10.0,
            accel: 1.5,
            turn_radius: 20.0,
            lateral_accel: 2.5,
            initial_static_s: 60.0,
            final_static_s: 10.0,
        }
    }
}

/// One element of the path: a straight line or a circular arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathElement {
    pub s0: f64,
    pub length: f64,
    pub start: Vector2<f64>,
    /// Azimuth at the start, clockwise from north.
    pub heading: f64,
    /// dψ/ds; positive for right turns, zero for lines.
    pub curvature: f64,
}

impl PathElement {
    fn eval(&self, s: f64) -> (Vector2<f64>, f64) {
        let ds = s - self.s0;
        let k = self.curvature;
        let psi = self.heading + k * ds;
        let offset = if k == 0.0 {
            Vector2::new(psi.sin(), psi.cos()) * ds
        } else {
            Vector2::new(
                (self.heading.cos() - psi.cos()) / k,
                (psi.sin() - self.heading.sin()) / k,
            )
        };
        (self.start + offset, psi)
    }
}

/// A turn of the path, in order of traversal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub waypoint: usize,
    pub s0: f64,
    pub s1: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub elements: Vec<PathElement>,
    pub length: f64,
    pub turns: Vec<Turn>,
}

impl Path {
    /// Position, heading and curvature at arc length `s`.
    pub fn point(&self, s: f64) -> (Vector2<f64>, f64, f64) {
        let s = s.clamp(0.0, self.length);
        let idx = self
            .elements
            .partition_point(|e| e.s0 <= s)
            .saturating_sub(1);
        let el = &self.elements[idx];
        let (p, psi) = el.eval(s);
        (p, psi, el.curvature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Limit {
    a: f64,
    b: f64,
    v: f64,
    dwell: f64,
}

/// Constant-acceleration motion along the path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub t0: f64,
    pub duration: f64,
    pub s0: f64,
    pub v0: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub pieces: Vec<Piece>,
    pub duration: f64,
}

impl SpeedProfile {
    /// Arc length, speed and longitudinal acceleration at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        let idx = self.pieces.partition_point(|p| p.t0 <= t).saturating_sub(1);
        let p = &self.pieces[idx];
        let tau = (t - p.t0).clamp(0.0, p.duration);
        let v = (p.v0 + p.acc * tau).max(0.0);
        (p.s0 + p.v0 * tau + 0.5 * p.acc * tau * tau, v, p.acc)
    }

    /// Start times of zero-speed dwell pieces, with their durations.
    pub fn stops(&self) -> Vec<(f64, f64)> {
        self.pieces
            .iter()
            .filter(|p| p.v0 == 0.0 && p.acc == 0.0 && p.duration > 0.0)
            .map(|p| (p.t0, p.duration))
            .collect()
    }

    /// First time the vehicle reaches arc length `s`.
    pub fn time_at_distance(&self, s: f64) -> f64 {
        for p in &self.pieces {
            let end = p.s0 + p.v0 * p.duration + 0.5 * p.acc * p.duration * p.duration;
            if end >= s && !(p.v0 == 0.0 && p.acc == 0.0) {
                let ds = (s - p.s0).max(0.0);
                let tau = if p.acc == 0.0 {
                    ds / p.v0
                } else {
                    let disc = (p.v0 * p.v0 + 2.0 * p.acc * ds).max(0.0);
                    (disc.sqrt() - p.v0) / p.acc
                };
                return p.t0 + tau.clamp(0.0, p.duration);
            }
        }
        self.duration
    }
}

fn build_path(
    waypoints: &[Waypoint],
    motion: &MotionConfig,
) -> Result<(Path, Vec<Limit>), ScenarioError> {
    if waypoints.len() < 2 {
        return Err(field_error(
            "waypoints",
            "at least two waypoints are required",
        ));
    }
    let pts: Vec<Vector2<f64>> = waypoints.iter().map(|w| Vector2::new(w.e, w.n)).collect();
    let nseg = pts.len() - 1;
    let mut dirs = Vec::with_capacity(nseg);
    let mut lens = Vec::with_capacity(nseg);
    for i in 0..nseg {
        let d = pts[i + 1] - pts[i];
        let len = d.norm();
        if !(len > 0.0) {
            return Err(field_error(
                "waypoints",
                format!("waypoints {i} and {} coincide", i + 1),
            ));
        }
        dirs.push(d / len);
        lens.push(len);
    }
    let heading = |d: &Vector2<f64>| d.x.atan2(d.y);
    let seg_speed = |i: usize| waypoints[i].speed.unwrap_or(motion.cruise_speed);
    for i in 0..nseg {
        if !(seg_speed(i) > 0.0) {
            return Err(field_error(
                "waypoints.speed",
                format!("segment {i} speed must be > 0"),
            ));
        }
    }

    // fillet tangent lengths, radii and turn angles at interior waypoints
    let mut tangent = vec![0.0; pts.len()];
    let mut delta = vec![0.0; pts.len()];
    let mut radius = vec![0.0; pts.len()];
    for i in 1..nseg {
        let d = wrap_pi(heading(&dirs[i]) - heading(&dirs[i - 1]));
        if d.abs() <= COLLINEAR_TOL {
            continue;
        }
        if waypoints[i].stop_s > 0.0 {
            return Err(ScenarioError::StopNotCollinear(i));
        }
        if PI - d.abs() < 1e-3 {
            return Err(field_error(
                "waypoints",
                format!("waypoint {i} reverses direction"),
            ));
        }
        let r = waypoints[i].turn_radius.unwrap_or(motion.turn_radius);
        if !(r > 0.0) {
            return Err(field_error(
                "turn_radius",
                format!("waypoint {i} radius must be > 0"),
            ));
        }
        delta[i] = d;
        radius[i] = r;
        tangent[i] = r * (0.5 * d.abs()).tan();
    }
    for i in 0..nseg {
        if tangent[i] + tangent[i + 1] > lens[i] + 1e-9 {
            return Err(ScenarioError::FilletOverlap(i));
        }
    }

    let mut elements = Vec::new();
    let mut limits = vec![Limit {
        a: 0.0,
        b: 0.0,
        v: 0.0,
        dwell: motion.initial_static_s,
    }];
    let mut turns = Vec::new();
    let mut s = 0.0;
    for i in 0..nseg {
        let psi = heading(&dirs[i]);
        let start = pts[i] + dirs[i] * tangent[i];
        let len = lens[i] - tangent[i] - tangent[i + 1];
        if len > 0.0 {
            elements.push(PathElement {
                s0: s,
                length: len,
                start,
                heading: psi,
                curvature: 0.0,
            });
            limits.push(Limit {
                a: s,
                b: s + len,
                v: seg_speed(i),
                dwell: 0.0,
            });
            s += len;
        }
        let j = i + 1;
        if j < nseg && waypoints[j].stop_s > 0.0 {
            limits.push(Limit {
                a: s,
                b: s,
                v: 0.0,
                dwell: waypoints[j].stop_s,
            });
        }
        if tangent[j] > 0.0 {
            let r = radius[j];
            let default_speed = seg_speed(i)
                .min(seg_speed(j))
                .min((motion.lateral_accel * r).sqrt());
            let v = waypoints[j].turn_speed.unwrap_or(default_speed);
            let accel = v * v / r;
            if accel > MAX_LATERAL_ACCEL || !(v > 0.0) {
                return Err(ScenarioError::InfeasibleTurn {
                    index: j,
                    speed: v,
                    radius: r,
                    accel,
                });
            }
            let arc_len = r * delta[j].abs();
            elements.push(PathElement {
                s0: s,
                length: arc_len,
                start: pts[j] - dirs[i] * tangent[j],
                heading: psi,
                curvature: delta[j].signum() / r,
            });
            limits.push(Limit {
                a: s,
                b: s + arc_len,
                v,
                dwell: 0.0,
            });
            turns.push(Turn {
                waypoint: j,
                s0: s,
                s1: s + arc_len,
                angle: delta[j],
            });
            s += arc_len;
        }
    }
    limits.push(Limit {
        a: s,
        b: s,
        v: 0.0,
        dwell: motion.final_static_s,
    });
    Ok((
        Path {
            elements,
            length: s,
            turns,
        },
        limits,
    ))
}

/// Fastest profile below every limit with |acceleration| ≤ `accel`.
///
/// With a symmetric acceleration limit the admissible v² at s is the minimum
/// over limits i of v_i² + 2·accel·dist(s, interval i), so each interval
/// resolves into at most an accelerating, a cruising and a braking piece.
fn build_profile(limits: &[Limit], accel: f64) -> SpeedProfile {
    let n = limits.len();
    let two_a = 2.0 * accel;
    let mut left = vec![f64::INFINITY; n];
    let mut right = vec![f64::INFINITY; n];
    for j in 1..n {
        let l = &limits[j - 1];
        left[j] = left[j - 1].min(l.v * l.v - two_a * l.b);
    }
    for j in (0..n - 1).rev() {
        let l = &limits[j + 1];
        right[j] = right[j + 1].min(l.v * l.v + two_a * l.a);
    }

    let mut pieces = Vec::new();
    let mut t = 0.0;
    for (j, lim) in limits.iter().enumerate() {
        if lim.b <= lim.a {
            if lim.dwell > 0.0 {
                pieces.push(Piece {
                    t0: t,
                    duration: lim.dwell,
                    s0: lim.a,
                    v0: 0.0,
                    acc: 0.0,
                });
                t += lim.dwell;
            }
            continue;
        }
        let (a_j, b_j) = (left[j], right[j]);
        let v2 = lim.v * lim.v;
        let inc = |s: f64| (a_j + two_a * s).max(0.0);
        let dec = |s: f64| (b_j - two_a * s).max(0.0);
        let clamp = |s: f64| s.clamp(lim.a, lim.b);
        let s1 = (v2 - a_j) / two_a;
        let s2 = (b_j - v2) / two_a;
        let segments: Vec<(f64, f64, i8)> = if s1 <= s2 {
            vec![
                (lim.a, clamp(s1), 1),
                (clamp(s1), clamp(s2), 0),
                (clamp(s2), lim.b, -1),
            ]
        } else {
            let s3 = (b_j - a_j) / (2.0 * two_a);
            vec![(lim.a, clamp(s3), 1), (clamp(s3), lim.b, -1)]
        };
        for (sa, sb, kind) in segments {
            if sb - sa <= 1e-12 {
                continue;
            }
            let (v0, duration, acc) = match kind {
                1 => {
                    let (v0, v1) = (inc(sa).sqrt(), inc(sb).sqrt());
                    (v0, (v1 - v0) / accel, accel)
                }
                -1 => {
                    let (v0, v1) = (dec(sa).sqrt(), dec(sb).sqrt());
                    (v0, (v0 - v1) / accel, -accel)
                }
                _ => (lim.v, (sb - sa) / lim.v, 0.0),
            };
            pieces.push(Piece {
                t0: t,
                duration,
                s0: sa,
                v0,
                acc,
            });
            t += duration;
        }
    }
    SpeedProfile {
        pieces,
        duration: t,
    }
}

/// A ground-truth epoch with the error-free IMU reading that ends at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub nav: NavState,
    pub f_b: Vector3<f64>,
    pub w_b: Vector3<f64>,
}

/// A generated path with its speed profile, mapped into geodetic coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frame: LocalFrame,
    pub path: Path,
    pub profile: SpeedProfile,
}

impl Trajectory {
    pub fn new(
        waypoints: &[Waypoint],
        motion: &MotionConfig,
        frame: LocalFrame,
    ) -> Result<Self, ScenarioError> {
        if !(motion.accel > 0.0) {
            return Err(field_error("motion.accel", "must be > 0"));
        }
        let (path, limits) = build_path(waypoints, motion)?;
        let profile = build_profile(&limits, motion.accel);
        let far = path
            .elements
            .iter()
            .map(|e| e.start.norm())
            .chain(waypoints.iter().map(|w| w.e.hypot(w.n)))
            .fold(0.0, f64::max);
        frame.to_geodetic(&LocalEnu::new(far, 0.0, 0.0))?;
        Ok(Self {
            frame,
            path,
            profile,
        })
    }

    pub fn duration(&self) -> f64 {
        self.profile.duration
    }

    /// Local position and arc-length speed at `t`.
    pub fn local_at(&self, t: f64) -> (LocalEnu, f64) {
        let (s, v, _) = self.profile.at(t);
        let (p, _, _) = self.path.point(s);
        (LocalEnu::new(p.x, p.y, 0.0), v)
    }

    /// Truth navigation state at `t`.
    pub fn state_at(&self, t: f64) -> NavState {
        let (s, v, _) = self.profile.at(t);
        let (p, psi, _) = self.path.point(s);
        let pos = self
            .frame
            .to_geodetic(&LocalEnu::new(p.x, p.y, 0.0))
            .expect("path checked against the local frame range");
        // the local frame is linear in (φ, λ); l-frame velocity picks up the
        // ratio of local to anchor radii
        let (north_scale, east_scale) = self.frame.scales();
        let (m, n) = self.frame.earth.radii(pos.lat);
        let fe = (n + pos.h) * pos.lat.cos() / east_scale;
        let fnn = (m + pos.h) / north_scale;
        let dir = Vector3::new(psi.sin() * fe, psi.cos() * fnn, 0.0);
        let azimuth = dir.x.atan2(dir.y);
        NavState::new(t, pos, dir * v, Attitude::level(azimuth))
    }

    /// Truth sampled at `rate` Hz from t = 0 to the end of the profile.
    pub fn sample(&self, rate: f64) -> Vec<NavState> {
        let n = (self.duration() * rate).floor() as usize;
        (0..=n).map(|k| self.state_at(k as f64 / rate)).collect()
    }
}

/// Truth samples with their error-free IMU readings.
pub fn generate_trajectory(
    waypoints: &[Waypoint],
    motion: &MotionConfig,
    frame: LocalFrame,
    rate: f64,
) -> Result<(Trajectory, Vec<TruthSample>), ScenarioError> {
    if !(rate > 0.0) {
        return Err(field_error("rates.imu", "must be > 0"));
    }
    let traj = Trajectory::new(waypoints, motion, frame)?;
    let states = traj.sample(rate);
    let imu = inverse_mechanize(&states, &frame.earth);
    let first = rest_imu(&states[0], &frame.earth);
    let truth = states
        .iter()
        .enumerate()
        .map(|(k, nav)| {
            let (f_b, w_b) = if k == 0 {
                first
            } else {
                (imu[k - 1].f, imu[k - 1].w)
            };
            TruthSample {
                t: nav.t,
                nav: *nav,
                f_b,
                w_b,
            }
        })
        .collect();
    Ok((traj, truth))
}

fn rest_imu(nav: &NavState, earth: &EarthModel) -> (Vector3<f64>, Vector3<f64>) {
    let to_body = nav.q.to_rotation_matrix().transpose();
    (
        to_body * Vector3::new(0.0, 0.0, earth.gravity(nav.pos.lat, nav.pos.h)),
        to_body * earth.earth_rate_local(nav.pos.lat),
    )
}

/// Error-free IMU readings that drive the mechanization from each truth state
/// to the next. Velocity and attitude are reproduced exactly; position only to
/// first order in the step.
pub fn inverse_mechanize(truth: &[NavState], earth: &EarthModel) -> Vec<ImuSample> {
    truth
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let dt = b.t - a.t;
            let dq = (a.q.conjugate() * b.q).canonical();
            let omega_lb = dq.vector_part() * (2.0 / (dq.w * dt));
            let frame_rate =
                earth.earth_rate_local(a.pos.lat) + transport_rate_unchecked(&a.vel, &a.pos, earth);
            let w_b = omega_lb + a.q.to_rotation_matrix().transpose() * frame_rate;
            let coriolis = (2.0 * earth.earth_rate_local(a.pos.lat)
                + transport_rate_unchecked(&a.vel, &a.pos, earth))
            .cross(&a.vel);
            let gravity = Vector3::new(0.0, 0.0, earth.gravity(a.pos.lat, a.pos.h));
            let f_l = (b.vel - a.vel) / dt + coriolis + gravity;
            ImuSample {
                t: b.t,
                f: b.q.to_rotation_matrix().transpose() * f_l,
                w: w_b,
            }
        })
        .collect()
}

/// Odometer error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometerConfig {
    /// Output resolution (m/s); readings are rounded to it and clamped to zero below it.
    pub resolution: f64,
    /// White speed noise while moving (m/s).
    pub noise_std: f64,
    /// Velocity standard deviation the filter assigns to projected odometer updates (m/s).
    pub filter_vel_std: f64,
}

impl Default for OdometerConfig {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            noise_std: 0.02,
            filter_vel_std: 0.1,
        }
    }
}

pub fn quantize_speed(v: f64, resolution: f64) -> f64 {
    if resolution <= 0.0 {
        return v.max(0.0);
    }
    if v < resolution {
        return 0.0;
    }
    (v / resolution).round() * resolution
}

/// Add Gauss-Markov biases (starting at `bias_truth`) and white noise to an IMU stream.
pub fn corrupt_imu(
    imu: &[ImuSample],
    spec: &SensorSpec,
    bias_truth: &BiasState,
    start_t: f64,
    seed: u64,
) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut bias = *bias_truth;
    let mut prev = start_t;
    let gyro_std = spec.gyro_noise_var.map(f64::sqrt);
    let accel_std = spec.accel_noise_var.map(f64::sqrt);
    imu.iter()
        .map(|s| {
            let draws: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
            bias = gm_propagate(&bias, spec, s.t - prev, Some(&draws));
            prev = s.t;
            let wn = Vector3::from_fn(|i, _| gyro_std[i] * rng.sample::<f64, _>(StandardNormal));
            let fnoise =
                Vector3::from_fn(|i, _| accel_std[i] * rng.sample::<f64, _>(StandardNormal));
            ImuSample {
                t: s.t,
                f: s.f + bias.accel + fnoise,
                w: s.w + bias.gyro + wn,
            }
        })
        .collect()
}

/// Noisy, quantised odometer readings from true forward speeds.
pub fn corrupt_odometer(
    true_speed: &[OdoSample],
    cfg: &OdometerConfig,
    seed: u64,
) -> Vec<OdoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    true_speed
        .iter()
        .map(|o| {
            let noise: f64 = rng.sample(StandardNormal);
            let v = if o.v_odo > 0.0 {
                o.v_odo + cfg.noise_std * noise
            } else {
                0.0
            };
            OdoSample {
                t: o.t,
                v_odo: quantize_speed(v, cfg.resolution),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationConfig {
    pub spacing: f64,
    pub lateral_offset: f64,
    pub height: f64,
    pub max_range: f64,
    /// Probability that a station other than the nearest is blocked during a chunk.
    pub blockage_prob: f64,
    pub blockage_chunk_s: f64,
    /// Extra power-derived range of an NLOS link (m).
    pub nlos_excess: f64,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            spacing: 250.0,
            lateral_offset: 15.0,
            height: 10.0,
            max_range: 300.0,
            blockage_prob: 0.0,
            blockage_chunk_s: 10.0,
            nlos_excess: 50.0,
        }
    }
}

/// Stations every `spacing` meters of arc length, alternating sides of the path.
///
/// The path end gets a station too unless it coincides with the start.
pub fn deploy_bs(path: &Path, cfg: &StationConfig) -> Result<Vec<BaseStation>, ScenarioError> {
    if !(cfg.spacing > 0.0) {
        return Err(field_error("stations.spacing", "must be > 0"));
    }
    let count = (path.length / cfg.spacing + 1e-9).floor() as usize;
    let mut arc: Vec<f64> = (0..=count).map(|k| k as f64 * cfg.spacing).collect();
    let last = *arc.last().unwrap_or(&0.0);
    let (start, _, _) = path.point(0.0);
    let (end, _, _) = path.point(path.length);
    if path.length - last > 1e-6 && (end - start).norm() > 1.0 {
        arc.push(path.length);
    }
    Ok(arc
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let (p, psi, _) = path.point(s);
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            // right-hand normal of the heading
            let normal = Vector2::new(psi.cos(), -psi.sin()) * side * cfg.lateral_offset;
            BaseStation::new(
                i as u32,
                LocalEnu::new(p.x + normal.x, p.y + normal.y, cfg.height),
            )
        })
        .collect())
}

/// A scheduled interval during which every station is NLOS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageWindow {
    pub start: f64,
    pub duration: f64,
}

impl OutageWindow {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end()
    }
}

/// Ground-truth visibility of one station at one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LosLabel {
    pub t: f64,
    pub bs: u32,
    pub los: bool,
}

/// Noise of the synthesised 5G observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FivegNoise {
    pub sigma_range: f64,
    pub sigma_aod: f64,
    pub sigma_power_range: f64,
}

/// RTT/AOD/power measurements for every station in range at each epoch.
pub fn synthesize_5g(
    traj: &Trajectory,
    stations: &[BaseStation],
    outages: &[OutageWindow],
    cfg: &StationConfig,
    noise: &FivegNoise,
    rate: f64,
    seed: u64,
) -> (Vec<FivegMeasurement>, Vec<LosLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let chunks = (traj.duration() / cfg.blockage_chunk_s).ceil() as usize + 1;
    let mut blocked_rng = ChaCha8Rng::seed_from_u64(seed);
    blocked_rng.set_stream(4);
    let blocked: Vec<Vec<bool>> = stations
        .iter()
        .map(|_| {
            (0..chunks)
                .map(|_| blocked_rng.random::<f64>() < cfg.blockage_prob)
                .collect()
        })
        .collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = (traj.duration() * rate).floor() as usize;
    let mut out = Vec::new();
    let mut labels = Vec::new();
    for k in 0..=n {
        let t = k as f64 / rate;
        let (ue, _) = traj.local_at(t);
        let mut visible: Vec<(usize, f64)> = stations
            .iter()
            .enumerate()
            .map(|(i, bs)| (i, ue.distance(&bs.pos)))
            .filter(|(_, d)| *d <= cfg.max_range)
            .collect();
        visible.sort_by(|a, b| a.1.total_cmp(&b.1));
        let outage = outages.iter().any(|o| o.contains(t));
        let chunk = (t / cfg.blockage_chunk_s) as usize;
        for (rank, &(i, _)) in visible.iter().enumerate() {
            let bs = &stations[i];
            let Ok((r, theta, _)) = range_and_angles(&ue, &bs.pos) else {
                continue;
            };
            let los = !outage && (rank == 0 || !blocked[i][chunk]);
            let (dr, da, dp): (f64, f64, f64) = (
                unit.sample(&mut rng),
                unit.sample(&mut rng),
                unit.sample(&mut rng),
            );
            let excess = if los { 0.0 } else { cfg.nlos_excess };
            out.push(FivegMeasurement {
                t,
                bs_id: bs.id,
                rtt_range: r + noise.sigma_range * dr,
                aod: wrap_pi(ccw_to_azimuth(theta) + noise.sigma_aod * da),
                rx_power_range: Some(r + noise.sigma_power_range * dp + excess),
                sigma_range: noise.sigma_range,
                sigma_aod: noise.sigma_aod,
            });
            labels.push(LosLabel { t, bs: bs.id, los });
        }
    }
    (out, labels)
}

/// Fraction of epochs with 0, 1, 2 and at least 3 LOS stations.
pub fn connectivity_histogram(labels: &[LosLabel]) -> [f64; 4] {
    let mut counts = [0usize; 4];
    let mut epochs = 0usize;
    for epoch in labels.chunk_by(|a, b| a.t == b.t) {
        let los = epoch.iter().filter(|l| l.los).count();
        counts[los.min(3)] += 1;
        epochs += 1;
    }
    counts.map(|c| c as f64 / epochs.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default)]
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub imu: f64,
    pub odo: f64,
    pub fiveg: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            imu: 20.0,
            odo: 1.0,
            fiveg: 5.0,
        }
    }
}

/// An outage either at an absolute start time or `lead_s` before the start of a turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageConfig {
    pub duration: f64,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub at_turn: Option<usize>,
    #[serde(default)]
    pub lead_s: f64,
}

/// IMU error characteristics, as standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuErrorConfig {
    /// Per-sample white noise (rad/s, m/s²).
    pub gyro_noise_std: f64,
    pub accel_noise_std: f64,
    /// Stationary Gauss-Markov bias standard deviations.
    pub gyro_bias_std: f64,
    pub accel_bias_std: f64,
    pub gyro_corr_time: f64,
    pub accel_corr_time: f64,
    /// Turn-on biases injected at t = 0.
    pub gyro_bias_init: [f64; 3],
    pub accel_bias_init: [f64; 3],
}

impl Default for ImuErrorConfig {
    fn default() -> Self {
        Self {
            gyro_noise_std: 6.5e-4,
            accel_noise_std: 7.5e-3,
            gyro_bias_std: 5e-5,
            accel_bias_std: 5e-3,
            gyro_corr_time: 3600.0,
            accel_corr_time: 3600.0,
            gyro_bias_init: [8e-4, -6e-4, 9e-4],
            accel_bias_init: [0.04, -0.03, 0.05],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FivegScenarioConfig {
    pub sigma_range: f64,
    pub sigma_aod_deg: f64,
    pub sigma_power_range: f64,
    /// Explicit NLOS threshold (m); default is five times the combined σ.
    pub gamma: Option<f64>,
    pub sigma_h: f64,
}

impl Default for FivegScenarioConfig {
    fn default() -> Self {
        Self {
            sigma_range: 0.3,
            sigma_aod_deg: 1.0,
            sigma_power_range: 3.0,
            gamma: None,
            sigma_h: 0.1,
        }
    }
}

/// Complete scenario definition as stored in a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Inject sensor and 5G noise. Filters keep their configured covariances either way.
    #[serde(default = "default_true")]
    pub noise: bool,
    pub anchor: AnchorConfig,
    #[serde(default)]
    pub rates: RateConfig,
    #[serde(default)]
    pub motion: MotionConfig,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub stations: StationConfig,
    #[serde(default)]
    pub outages: Vec<OutageConfig>,
    #[serde(default)]
    pub imu: ImuErrorConfig,
    #[serde(default)]
    pub odometer: OdometerConfig,
    #[serde(default)]
    pub fiveg: FivegScenarioConfig,
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_true() -> bool {
    true
}

const REFERENCE_TOML: &str = include_str!("../data/reference.toml");

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".to_string());
            field_error(&field, msg)
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serialises")
    }

    pub fn sensor_spec(&self) -> SensorSpec {
        let i = &self.imu;
        SensorSpec::isotropic(
            i.gyro_noise_std,
            i.accel_noise_std,
            i.gyro_bias_std,
            i.accel_bias_std,
            i.gyro_corr_time,
            i.accel_corr_time,
            self.odometer.filter_vel_std,
        )
    }

    pub fn bias_truth(&self) -> BiasState {
        if !self.noise {
            return BiasState::default();
        }
        BiasState::new(
            Vector3::from(self.imu.gyro_bias_init),
            Vector3::from(self.imu.accel_bias_init),
        )
    }

    pub fn fiveg_config(&self) -> FivegConfig {
        FivegConfig {
            sigma_range: self.fiveg.sigma_range,
            sigma_aod: self.fiveg.sigma_aod_deg.to_radians(),
            sigma_power_range: self.fiveg.sigma_power_range,
            gamma: self.fiveg.gamma,
            h_ue: 0.0,
            sigma_h: self.fiveg.sigma_h,
            ..FivegConfig::default()
        }
    }

    pub fn anchor(&self) -> Result<Geodetic, ScenarioError> {
        Ok(Geodetic::from_degrees(
            self.anchor.lat_deg,
            self.anchor.lon_deg,
            self.anchor.h,
        )?)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        for (name, rate) in [
            ("rates.imu", self.rates.imu),
            ("rates.odo", self.rates.odo),
            ("rates.fiveg", self.rates.fiveg),
        ] {
            if !(rate > 0.0) {
                return Err(field_error(name, "must be > 0"));
            }
        }
        self.sensor_spec()
            .validate()
            .map_err(|e| field_error("imu", e.to_string()))?;
        let f = &self.fiveg;
        if !(f.sigma_range > 0.0 && f.sigma_aod_deg > 0.0 && f.sigma_power_range > 0.0) {
            return Err(field_error("fiveg", "standard deviations must be > 0"));
        }
        if !(self.stations.max_range > 0.0) {
            return Err(field_error("stations.max_range", "must be > 0"));
        }
        if !(self.stations.blockage_chunk_s > 0.0) {
            return Err(field_error("stations.blockage_chunk_s", "must be > 0"));
        }
        Ok(())
    }
}

/// The shipped reference configuration: a ~9 km urban loop with four outages at turns.
pub fn reference_config() -> ScenarioConfig {
    ScenarioConfig::from_toml(REFERENCE_TOML).expect("reference scenario parses")
}

/// Everything derived from a [`ScenarioConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub trajectory: Trajectory,
    pub stations: Vec<BaseStation>,
    pub outages: Vec<OutageWindow>,
    pub spec: SensorSpec,
    pub bias_truth: BiasState,
}

pub fn reference_scenario() -> Scenario {
    Scenario::new(reference_config()).expect("reference scenario builds")
}

/// All synthesised streams of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStreams {
    pub truth: Vec<TruthSample>,
    pub imu: Vec<ImuSample>,
    pub odo: Vec<OdoSample>,
    pub fiveg: Vec<FivegMeasurement>,
    pub labels: Vec<LosLabel>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let frame = LocalFrame::new(config.anchor()?, EarthModel::wgs84());
        let trajectory = Trajectory::new(&config.waypoints, &config.motion, frame)?;
        let stations = deploy_bs(&trajectory.path, &config.stations)?;
        let mut outages = Vec::with_capacity(config.outages.len());
        for (i, o) in config.outages.iter().enumerate() {
            let start = match (o.start, o.at_turn) {
                (Some(t), None) => t,
                (None, Some(k)) => {
                    let turn = trajectory.path.turns.get(k).ok_or_else(|| {
                        field_error(
                            "outages.at_turn",
                            format!(
                                "outage {i} refers to turn {k}, path has {}",
                                trajectory.path.turns.len()
                            ),
                        )
                    })?;
                    trajectory.profile.time_at_distance(turn.s0) - o.lead_s
                }
                _ => {
                    return Err(field_error(
                        "outages",
                        format!("outage {i} needs exactly one of `start` or `at_turn`"),
                    ))
                }
            };
            outages.push(OutageWindow {
                start,
                duration: o.duration,
            });
        }
        outages.sort_by(|a, b| a.start.total_cmp(&b.start));
        for (i, o) in outages.iter().enumerate() {
            let next_start = outages.get(i + 1).map_or(f64::INFINITY, |n| n.start);
            if !(o.duration > 0.0)
                || o.start < 0.0
                || o.end() > trajectory.duration()
                || o.end() > next_start
            {
                return Err(ScenarioError::BadOutage(i));
            }
        }
        Ok(Self {
            spec: config.sensor_spec(),
            bias_truth: config.bias_truth(),
            config,
            trajectory,
            stations,
            outages,
        })
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.trajectory.frame
    }

    pub fn duration(&self) -> f64 {
        self.trajectory.duration()
    }

    pub fn outage_fraction(&self) -> f64 {
        self.outages.iter().map(|o| o.duration).sum::<f64>() / self.duration()
    }

    pub fn fiveg_noise(&self) -> FivegNoise {
        let f = &self.config.fiveg;
        let scale = if self.config.noise { 1.0 } else { 0.0 };
        FivegNoise {
            sigma_range: f.sigma_range * scale,
            sigma_aod: f.sigma_aod_deg.to_radians() * scale,
            sigma_power_range: f.sigma_power_range * scale,
        }
    }

    /// Synthesise every stream. Identical configurations give identical output.
    pub fn simulate(&self) -> SimulatedStreams {
        let cfg = &self.config;
        let earth = self.frame().earth;
        let states = self.trajectory.sample(cfg.rates.imu);
        let perfect = inverse_mechanize(&states, &earth);
        let first = rest_imu(&states[0], &earth);
        let truth: Vec<TruthSample> = states
            .iter()
            .enumerate()
            .map(|(k, nav)| {
                let (f_b, w_b) = if k == 0 {
                    first
                } else {
                    (perfect[k - 1].f, perfect[k - 1].w)
                };
                TruthSample {
                    t: nav.t,
                    nav: *nav,
                    f_b,
                    w_b,
                }
            })
            .collect();

        let n_odo = (self.duration() * cfg.rates.odo).floor() as usize;
        let true_speed: Vec<OdoSample> = (0..=n_odo)
            .map(|k| {
                let t = k as f64 / cfg.rates.odo;
                OdoSample {
                    t,
                    v_odo: self.trajectory.state_at(t).vel.norm(),
                }
            })
            .collect();

        let (imu, odo) = if cfg.noise {
            (
                corrupt_imu(&perfect, &self.spec, &self.bias_truth, 0.0, cfg.seed),
                corrupt_odometer(&true_speed, &cfg.odometer, cfg.seed),
            )
        } else {
            (perfect, true_speed)
        };
        let (fiveg, labels) = synthesize_5g(
            &self.trajectory,
            &self.stations,
            &self.outages,
            &cfg.stations,
            &self.fiveg_noise(),
            cfg.rates.fiveg,
            cfg.seed,
        );
        SimulatedStreams {
            truth,
            imu,
            odo,
            fiveg,
            labels,
        }
    }
}

/// Kolmogorov-Smirnov statistic of `samples` against N(0, σ²).
pub fn ks_statistic_normal(samples: &[f64], sigma: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal as SNormal};
    let dist = SNormal::new(0.0, sigma).expect("valid normal");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let c = dist.cdf(*x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Attitude quaternion increment between two states, for diagnostics.
pub fn relative_rotation(a: &NavState, b: &NavState) -> Quaternion {
    (a.q.conjugate() * b.q).canonical()
}

/// Initial navigation state and its attitude as the reference would supply them.
pub fn initial_attitude(truth: &[TruthSample]) -> Attitude {
    truth.first().map(|t| t.nav.att).unwrap_or_default()
}

/// Quaternion for a level attitude with the given azimuth.
pub fn level_quat(azimuth: f64) -> Quaternion {
    quat_from_attitude(&Attitude::level(azimuth))
}
