//! Strapdown INS mechanization in the local-level frame.
//!
//! Each step runs attitude, then velocity, then position, using first-order
//! integration. Gravity enters the velocity equation as (0, 0, −g), so that a
//! level accelerometer at rest reading +g produces no velocity change. The
//! longitude update divides by cos(latitude).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{quat_from_attitude, Attitude, EarthModel, Geodetic, Quaternion};
use crate::sensors::{is_stationary, BiasState, ImuSample, OdoSample, DEFAULT_V_EPS};

/// Latitudes closer than this to a pole make the transport rate singular.
const POLAR_COS_LIMIT: f64 = 1e-9;

/// A stream gap longer than this multiple of the nominal period is flagged.
pub const GAP_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechError {
    #[error("latitude {0} rad is too close to a pole for local-level mechanization")]
    PolarSingularity(f64),
    #[error("sample {index} at t={t} s does not advance time (previous t={prev} s)")]
    NonMonotonicTime { index: usize, t: f64, prev: f64 },
    #[error("IMU stream is empty")]
    EmptyStream,
}

/// Position, velocity (ENU, m/s) and attitude of the vehicle.
///
/// `q` is the authoritative attitude; `att` is kept in sync with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub t: f64,
    pub pos: Geodetic,
    pub vel: Vector3<f64>,
    pub att: Attitude,
    pub q: Quaternion,
}

impl NavState {
    pub fn new(t: f64, pos: Geodetic, vel: Vector3<f64>, att: Attitude) -> Self {
        let q = quat_from_attitude(&att);
        Self {
            t,
            pos,
            vel,
            att: q.to_attitude(),
            q,
        }
    }

    pub fn from_quat(t: f64, pos: Geodetic, vel: Vector3<f64>, q: Quaternion) -> Self {
        let q = q.normalized();
        Self {
            t,
            pos,
            vel,
            att: q.to_attitude(),
            q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechConfig {
    pub v_eps: f64,
    pub stop_mechanism: bool,
    pub bias_removal: bool,
    /// Re-estimate gyro biases from stops of at least `rezero_min_stationary` seconds.
    pub gyro_rezero: bool,
    pub rezero_min_stationary: f64,
    pub earth: EarthModel,
}

impl Default for MechConfig {
    fn default() -> Self {
        Self {
            v_eps: DEFAULT_V_EPS,
            stop_mechanism: true,
            bias_removal: true,
            gyro_rezero: true,
            rezero_min_stationary: 2.0,
            earth: EarthModel::wgs84(),
        }
    }
}

pub fn earth_rate_l(lat: f64, earth: &EarthModel) -> Vector3<f64> {
    earth.earth_rate_local(lat)
}

/// Rotation rate of the local-level frame caused by travel over the ellipsoid.
pub fn transport_rate(
    vel: &Vector3<f64>,
    pos: &Geodetic,
    earth: &EarthModel,
) -> Result<Vector3<f64>, MechError> {
    if pos.lat.cos().abs() < POLAR_COS_LIMIT {
        return Err(MechError::PolarSingularity(pos.lat));
    }
    Ok(transport_rate_unchecked(vel, pos, earth))
}

pub(crate) fn transport_rate_unchecked(
    vel: &Vector3<f64>,
    pos: &Geodetic,
    earth: &EarthModel,
) -> Vector3<f64> {
    let (m, n) = earth.radii(pos.lat);
    Vector3::new(
        -vel.y / (m + pos.h),
        vel.x / (n + pos.h),
        vel.x * pos.lat.tan() / (n + pos.h),
    )
}

/// Body rate relative to the local-level frame from a bias-compensated gyro reading.
pub fn correct_gyro(
    w_b: &Vector3<f64>,
    gyro_bias: &Vector3<f64>,
    q: &Quaternion,
    vel: &Vector3<f64>,
    pos: &Geodetic,
    earth: &EarthModel,
) -> Vector3<f64> {
    let local_to_body = q.to_rotation_matrix().transpose();
    let frame_rate = earth.earth_rate_local(pos.lat) + transport_rate_unchecked(vel, pos, earth);
    (w_b - gyro_bias) - local_to_body * frame_rate
}

/// First-order quaternion update q + ½·q⊗(0, ω)·Δt, renormalised.
pub fn attitude_step(q: &Quaternion, omega_lb: &Vector3<f64>, dt: f64) -> Quaternion {
    let half = 0.5 * dt;
    let increment = Quaternion::new(1.0, omega_lb.x * half, omega_lb.y * half, omega_lb.z * half);
    (*q * increment).normalized()
}

/// Velocity increment from specific force, Coriolis/transport terms and gravity.
///
/// `q_new` is the attitude after this epoch's attitude update.
pub fn velocity_step(
    v_l: &Vector3<f64>,
    f_b: &Vector3<f64>,
    accel_bias: &Vector3<f64>,
    q_new: &Quaternion,
    pos: &Geodetic,
    dt: f64,
    earth: &EarthModel,
) -> Vector3<f64> {
    let specific_force = q_new.to_rotation_matrix() * (f_b - accel_bias);
    let rate = 2.0 * earth.earth_rate_local(pos.lat) + transport_rate_unchecked(v_l, pos, earth);
    let gravity = Vector3::new(0.0, 0.0, -earth.gravity(pos.lat, pos.h));
    v_l + (specific_force - rate.cross(v_l) + gravity) * dt
}

pub fn position_step(
    pos: &Geodetic,
    v_new: &Vector3<f64>,
    dt: f64,
    earth: &EarthModel,
) -> Result<Geodetic, MechError> {
    let cos_lat = pos.lat.cos();
    if cos_lat.abs() < POLAR_COS_LIMIT {
        return Err(MechError::PolarSingularity(pos.lat));
    }
    let (m, n) = earth.radii(pos.lat);
    Ok(Geodetic {
        lat: pos.lat + v_new.y / (m + pos.h) * dt,
        lon: pos.lon + v_new.x / ((n + pos.h) * cos_lat) * dt,
        h: pos.h + v_new.z * dt,
    })
}

/// Odometer forward speed projected into ENU along the body forward axis.
pub fn project_odometer(v_odo: f64, att: &Attitude) -> Vector3<f64> {
    let (sa, ca) = att.azimuth.sin_cos();
    let (sp, cp) = att.pitch.sin_cos();
    Vector3::new(sa * cp, ca * cp, sp) * v_odo
}

/// One full mechanization epoch from `state` to `imu.t`.
pub fn mech_step(
    state: &NavState,
    imu: &ImuSample,
    bias: &BiasState,
    earth: &EarthModel,
) -> Result<NavState, MechError> {
    let dt = imu.t - state.t;
    let omega_lb = correct_gyro(&imu.w, &bias.gyro, &state.q, &state.vel, &state.pos, earth);
    let q = attitude_step(&state.q, &omega_lb, dt);
    let vel = velocity_step(&state.vel, &imu.f, &bias.accel, &q, &state.pos, dt, earth);
    let pos = position_step(&state.pos, &vel, dt, earth)?;
    Ok(NavState::from_quat(imu.t, pos, vel, q))
}

/// Stopping mechanism shared by the standalone mechanizer and the filter.
///
/// While frozen the published velocity is zero and position/attitude are held.
/// A shadow velocity keeps integrating so that the start of motion is seen
/// before the next odometer sample; it is reset whenever the odometer reports
/// zero speed during the stop.
#[derive(Debug, Clone, PartialEq)]
pub struct StopMechanism {
    pub v_eps: f64,
    frozen: bool,
    shadow_vel: Vector3<f64>,
    last_odo: Option<OdoSample>,
    frozen_since: Option<f64>,
}

impl StopMechanism {
    pub fn new(v_eps: f64) -> Self {
        Self {
            v_eps,
            frozen: false,
            shadow_vel: Vector3::zeros(),
            last_odo: None,
            frozen_since: None,
        }
    }

    pub fn observe_odometer(&mut self, odo: &OdoSample) {
        if self.frozen && odo.v_odo == 0.0 {
            self.shadow_vel = Vector3::zeros();
        }
        self.last_odo = Some(*odo);
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn frozen_since(&self) -> Option<f64> {
        self.frozen_since
    }

    /// State to integrate from: the frozen state carries the shadow velocity.
    pub fn integration_base(&self, state: &NavState) -> NavState {
        let mut base = *state;
        if self.frozen {
            base.vel = self.shadow_vel;
        }
        base
    }

    /// Decide whether the candidate step is accepted. Returns the state to publish.
    pub fn resolve(&mut self, previous: &NavState, candidate: NavState) -> (NavState, bool) {
        if is_stationary(candidate.vel.norm(), self.last_odo.as_ref(), self.v_eps) {
            if !self.frozen {
                self.frozen_since = Some(candidate.t);
            }
            self.frozen = true;
            self.shadow_vel = candidate.vel;
            let mut held = *previous;
            held.t = candidate.t;
            held.vel = Vector3::zeros();
            (held, true)
        } else {
            self.frozen = false;
            self.frozen_since = None;
            (candidate, false)
        }
    }
}

/// A gap in the IMU stream longer than [`GAP_FACTOR`] nominal periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamGap {
    pub t: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechRun {
    pub states: Vec<NavState>,
    pub stationary: Vec<bool>,
    pub gaps: Vec<StreamGap>,
    /// (time, new gyro bias) for each in-trajectory re-zeroing.
    pub gyro_rezero: Vec<(f64, Vector3<f64>)>,
}

/// Median sample period of a time-ordered stream.
pub fn nominal_period(times: impl Iterator<Item = f64>) -> Option<f64> {
    let times: Vec<f64> = times.collect();
    let mut dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if dts.is_empty() {
        return None;
    }
    dts.sort_by(f64::total_cmp);
    Some(dts[dts.len() / 2])
}

/// Validate ordering and collect gaps.
pub fn check_stream(imu: &[ImuSample], start: f64) -> Result<Vec<StreamGap>, MechError> {
    let nominal = nominal_period(std::iter::once(start).chain(imu.iter().map(|s| s.t)));
    let mut gaps = Vec::new();
    let mut prev = start;
    for (index, s) in imu.iter().enumerate() {
        if !(s.t > prev) {
            return Err(MechError::NonMonotonicTime {
                index,
                t: s.t,
                prev,
            });
        }
        if let Some(p) = nominal {
            if s.t - prev > GAP_FACTOR * p {
                log::warn!("IMU gap of {:.3} s ending at t={:.3}", s.t - prev, s.t);
                gaps.push(StreamGap {
                    t: s.t,
                    dt: s.t - prev,
                });
            }
        }
        prev = s.t;
    }
    Ok(gaps)
}

/// Standalone mechanizer with the stopping mechanism and optional gyro re-zeroing.
#[derive(Debug, Clone)]
pub struct Mechanizer {
    state: NavState,
    bias: BiasState,
    cfg: MechConfig,
    stop: StopMechanism,
    stationary_gyro_sum: Vector3<f64>,
    stationary_count: usize,
}

impl Mechanizer {
    pub fn new(init: NavState, bias: BiasState, cfg: MechConfig) -> Self {
        Self {
            state: init,
            bias,
            stop: StopMechanism::new(cfg.v_eps),
            cfg,
            stationary_gyro_sum: Vector3::zeros(),
            stationary_count: 0,
        }
    }

    pub fn state(&self) -> &NavState {
        &self.state
    }

    pub fn bias(&self) -> &BiasState {
        &self.bias
    }

    pub fn observe_odometer(&mut self, odo: &OdoSample) {
        self.stop.observe_odometer(odo);
    }

    /// Advance to `imu.t`. Returns whether the epoch was stationary and, if a
    /// stop just ended, the re-estimated gyro bias.
    pub fn step(&mut self, imu: &ImuSample) -> Result<(bool, Option<Vector3<f64>>), MechError> {
        let base = self.stop.integration_base(&self.state);
        let candidate = mech_step(&base, imu, &self.bias, &self.cfg.earth)?;
        if !self.cfg.stop_mechanism {
            self.state = candidate;
            return Ok((false, None));
        }
        let stop_start = self.stop.frozen_since();
        let (state, stationary) = self.stop.resolve(&self.state, candidate);
        self.state = state;
        let mut rezero = None;
        if stationary {
            self.stationary_gyro_sum += imu.w;
            self.stationary_count += 1;
        } else {
            if let Some(t0) = stop_start {
                if self.cfg.gyro_rezero
                    && imu.t - t0 >= self.cfg.rezero_min_stationary
                    && self.stationary_count > 0
                {
                    let bias = self.stationary_gyro_sum / self.stationary_count as f64;
                    self.bias.gyro = bias;
                    rezero = Some(bias);
                }
            }
            self.stationary_gyro_sum = Vector3::zeros();
            self.stationary_count = 0;
        }
        Ok((stationary, rezero))
    }
}

/// Mechanize an IMU stream, using odometer samples for the stopping mechanism.
///
/// Produces one state per IMU sample. Initial bias removal is the caller's
/// choice through `biases` and `cfg.bias_removal`.
pub fn mechanize(
    imu: &[ImuSample],
    odo: &[OdoSample],
    init: NavState,
    biases: BiasState,
    cfg: &MechConfig,
) -> Result<MechRun, MechError> {
    if imu.is_empty() {
        return Err(MechError::EmptyStream);
    }
    let gaps = check_stream(imu, init.t)?;
    let biases = if cfg.bias_removal {
        biases
    } else {
        BiasState::default()
    };
    let mut mech = Mechanizer::new(init, biases, *cfg);
    let mut states = Vec::with_capacity(imu.len());
    let mut stationary = Vec::with_capacity(imu.len());
    let mut gyro_rezero = Vec::new();
    let mut next_odo = 0;
    for sample in imu {
        while next_odo < odo.len() && odo[next_odo].t <= sample.t {
            mech.observe_odometer(&odo[next_odo]);
            next_odo += 1;
        }
        let (still, rezero) = mech.step(sample)?;
        if let Some(b) = rezero {
            gyro_rezero.push((sample.t, b));
        }
        states.push(*mech.state());
        stationary.push(still);
    }
    Ok(MechRun {
        states,
        stationary,
        gaps,
        gyro_rezero,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{rotation_body_to_local, wrap_pi};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    fn earth() -> EarthModel {
        EarthModel::wgs84()
    }

    #[test]
    fn earth_rate_closed_forms() {
        let e = earth();
        let w = e.rotation_rate;
        assert_eq!(earth_rate_l(0.0, &e), Vector3::new(0.0, w, 0.0));
        assert_relative_eq!(
            earth_rate_l(FRAC_PI_2, &e),
            Vector3::new(0.0, 0.0, w),
            epsilon = 1e-20
        );
        let r = earth_rate_l(FRAC_PI_4, &e);
        assert!((r.y - w * FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((r.z - w * FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn transport_rate_cases() {
        let e = earth();
        let equator = Geodetic::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(
            transport_rate(&Vector3::zeros(), &equator, &e).unwrap(),
            Vector3::zeros()
        );
        let r = transport_rate(&Vector3::new(0.0, 10.0, 0.0), &equator, &e).unwrap();
        let (m, _) = e.radii(0.0);
        assert_eq!(r, Vector3::new(-10.0 / m, 0.0, 0.0));
        // independent mpmath evaluation
        let pos = Geodetic::new(37.2f64.to_radians(), 0.3, 250.0).unwrap();
        let r = transport_rate(&Vector3::new(12.5, -7.25, 0.0), &pos, &e).unwrap();
        assert_relative_eq!(r.x, 1.140_113_590_714_440_5e-6, max_relative = 1e-12);
        assert_relative_eq!(r.y, 1.957_343_930_297_567e-6, max_relative = 1e-12);
        assert_relative_eq!(r.z, 1.485_704_906_947_641_4e-6, max_relative = 1e-12);
        let pole = Geodetic::new(FRAC_PI_2, 0.0, 0.0).unwrap();
        assert!(matches!(
            transport_rate(&Vector3::x(), &pole, &e),
            Err(MechError::PolarSingularity(_))
        ));
    }

    #[test]
    fn correct_gyro_cases() {
        let e = earth();
        let pos = Geodetic::new(0.7, 0.0, 100.0).unwrap();
        let q = Quaternion::identity();
        let out = correct_gyro(
            &Vector3::zeros(),
            &Vector3::zeros(),
            &q,
            &Vector3::zeros(),
            &pos,
            &e,
        );
        assert_relative_eq!(out, -e.earth_rate_local(0.7), epsilon = 1e-20);
        assert_relative_eq!(out.norm(), e.rotation_rate, max_relative = 1e-12);

        let att = Attitude::new(0.1, -0.2, 1.0);
        let q = quat_from_attitude(&att);
        let vel = Vector3::new(5.0, -3.0, 0.2);
        let frame = rotation_body_to_local(&att).transpose()
            * (e.earth_rate_local(0.7) + transport_rate(&vel, &pos, &e).unwrap());
        let out = correct_gyro(&frame, &Vector3::zeros(), &q, &vel, &pos, &e);
        assert!(out.norm() < 1e-18);

        // numpy oracle with an independently composed rotation
        let out = correct_gyro(
            &Vector3::new(0.01, -0.02, 0.03),
            &Vector3::new(1e-4, 2e-4, -3e-4),
            &q,
            &vel,
            &pos,
            &e,
        );
        assert_relative_eq!(
            out,
            Vector3::new(
                0.009_937_589_211_214_397,
                -0.020_235_555_198_262_742,
                0.030_247_170_892_211_62
            ),
            epsilon = 1e-15
        );
    }

    #[test]
    fn attitude_step_zero_rate_is_identity() {
        let q = quat_from_attitude(&Attitude::new(0.1, 0.2, 0.3));
        assert_eq!(attitude_step(&q, &Vector3::zeros(), 0.05), q);
    }

    #[test]
    fn yaw_rate_integrates_to_azimuth_change() {
        // positive z rate turns the forward axis toward the left, decreasing azimuth
        let mut q = Quaternion::identity();
        for _ in 0..200 {
            q = attitude_step(&q, &Vector3::new(0.0, 0.0, -0.1), 0.05);
        }
        assert!((q.to_attitude().azimuth - 1.0).abs() < 1e-4);
        let mut q = Quaternion::identity();
        for _ in 0..200 {
            q = attitude_step(&q, &Vector3::new(0.0, 0.0, 0.1), 0.05);
        }
        assert!((wrap_pi(q.to_attitude().azimuth) + 1.0).abs() < 1e-4);
        // relative accuracy bound at ω·Δt = 1e-2
        let mut q = Quaternion::identity();
        for _ in 0..100 {
            q = attitude_step(&q, &Vector3::new(0.0, 0.0, -0.2), 0.05);
        }
        assert!((q.to_attitude().azimuth - 1.0).abs() / 1.0 < 1e-4);
    }

    #[test]
    fn attitude_step_keeps_unit_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let q = Quaternion::new(rng.random(), rng.random(), rng.random(), rng.random())
                .normalized();
            let w = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let out = attitude_step(&q, &w, rng.random_range(0.0..0.2));
            assert!((out.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_step_cases() {
        let e = earth();
        let pos = Geodetic::new(0.8, 0.0, 50.0).unwrap();
        let g = e.gravity(pos.lat, pos.h);
        let q = Quaternion::identity();
        let v = velocity_step(
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, g),
            &Vector3::zeros(),
            &q,
            &pos,
            0.05,
            &e,
        );
        assert_eq!(v, Vector3::zeros());
        let v = velocity_step(
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &q,
            &pos,
            0.05,
            &e,
        );
        assert_relative_eq!(v.z, -g * 0.05, max_relative = 1e-15);

        // mpmath oracle of −(2Ω_ie + Ω_el)·v·Δt for 30 m/s east at 45°
        let pos = Geodetic::new(FRAC_PI_4, 0.0, 0.0).unwrap();
        let g = e.gravity(pos.lat, 0.0);
        let v = velocity_step(
            &Vector3::new(30.0, 0.0, 0.0),
            &Vector3::new(0.0, 0.0, g),
            &Vector3::zeros(),
            &q,
            &pos,
            0.05,
            &e,
        );
        assert_relative_eq!(v.x, 30.0, epsilon = 1e-15);
        assert_relative_eq!(v.y, -1.617_326_530_150_649e-4, max_relative = 1e-9);
        assert_relative_eq!(v.z, 1.617_326_530_150_649e-4, max_relative = 1e-9);
    }

    #[test]
    fn position_step_cases() {
        let e = earth();
        let equator = Geodetic::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(
            position_step(&equator, &Vector3::zeros(), 1.0, &e).unwrap(),
            equator
        );
        let p = position_step(&equator, &Vector3::new(0.0, 10.0, 0.0), 1.0, &e).unwrap();
        let (m, n0) = e.radii(0.0);
        assert_eq!(p.lat, 10.0 / m);
        let p0 = position_step(&equator, &Vector3::new(10.0, 0.0, 0.0), 1.0, &e).unwrap();
        assert_relative_eq!(p0.lon, 10.0 / n0, max_relative = 1e-15);
        let sixty = Geodetic::new(60f64.to_radians(), 0.0, 0.0).unwrap();
        let p60 = position_step(&sixty, &Vector3::new(10.0, 0.0, 0.0), 1.0, &e).unwrap();
        // mpmath: ratio of longitude increments 60° vs equator
        assert_relative_eq!(p60.lon / p0.lon, 1.994_972_897_07, max_relative = 1e-10);
        assert!((p60.lon / p0.lon / 2.0 - 1.0).abs() < 3e-3);
    }

    #[test]
    fn odometer_projection_cases() {
        assert_relative_eq!(
            project_odometer(10.0, &Attitude::default()),
            Vector3::new(0.0, 10.0, 0.0)
        );
        assert_relative_eq!(
            project_odometer(10.0, &Attitude::level(FRAC_PI_2)),
            Vector3::new(10.0, 0.0, 0.0),
            epsilon = 1e-12
        );
        let v = project_odometer(
            2.0,
            &Attitude::new(30f64.to_radians(), 0.0, 45f64.to_radians()),
        );
        assert_relative_eq!(
            v,
            Vector3::new(1.224_744_871_39, 1.224_744_871_39, 1.0),
            epsilon = 1e-10
        );
        let att = Attitude::new(0.2, 0.4, 2.5);
        assert_relative_eq!(
            project_odometer(3.0, &att),
            rotation_body_to_local(&att) * Vector3::new(0.0, 3.0, 0.0),
            epsilon = 1e-14
        );
    }

    fn at_rest(
        lat: f64,
        att: Attitude,
        n: usize,
        accel_error: Vector3<f64>,
    ) -> (NavState, Vec<ImuSample>, Vec<OdoSample>) {
        let e = earth();
        let pos = Geodetic::new(lat, 0.2, 100.0).unwrap();
        let init = NavState::new(0.0, pos, Vector3::zeros(), att);
        let to_body = rotation_body_to_local(&att).transpose();
        let w = to_body * e.earth_rate_local(lat);
        let f = to_body * Vector3::new(0.0, 0.0, e.gravity(lat, pos.h)) + accel_error;
        let imu = (1..=n)
            .map(|k| ImuSample {
                t: k as f64 * 0.05,
                f,
                w,
            })
            .collect();
        let odo = (0..=n / 20)
            .map(|k| OdoSample {
                t: k as f64,
                v_odo: 0.0,
            })
            .collect();
        (init, imu, odo)
    }

    #[test]
    fn rest_stream_stays_constant() {
        let (init, imu, odo) = at_rest(0.76, Attitude::level(0.0), 400, Vector3::zeros());
        let cfg = MechConfig {
            stop_mechanism: false,
            ..MechConfig::default()
        };
        let run = mechanize(&imu, &odo, init, BiasState::default(), &cfg).unwrap();
        let last = run.states.last().unwrap();
        assert!(last.vel.norm() < 1e-12);
        assert!((last.pos.lat - init.pos.lat).abs() < 1e-15);
        assert!((last.pos.h - init.pos.h).abs() < 1e-9);
        assert_eq!(run.states.len(), imu.len());
    }

    #[test]
    fn earth_rate_stream_keeps_attitude() {
        let att = Attitude::new(0.02, -0.01, 1.2);
        let (init, imu, odo) = at_rest(0.76, att, 20 * 600, Vector3::zeros());
        let cfg = MechConfig {
            stop_mechanism: false,
            ..MechConfig::default()
        };
        let run = mechanize(&imu, &odo, init, BiasState::default(), &cfg).unwrap();
        let last = run.states.last().unwrap().att;
        let drift = (last.pitch - att.pitch)
            .abs()
            .max((last.roll - att.roll).abs())
            .max(wrap_pi(last.azimuth - att.azimuth).abs());
        assert!(drift.to_degrees() < 0.01, "drift {drift}");
        for s in &run.states {
            assert!((s.q.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stop_mechanism_ablation_closed_form() {
        let bias = 0.02;
        let (init, imu, odo) = at_rest(
            0.76,
            Attitude::level(0.0),
            600,
            Vector3::new(bias, 0.0, 0.0),
        );
        let frame = crate::frames::LocalFrame::new(init.pos, earth());
        let on = mechanize(
            &imu,
            &odo,
            init,
            BiasState::default(),
            &MechConfig::default(),
        )
        .unwrap();
        let off = mechanize(
            &imu,
            &odo,
            init,
            BiasState::default(),
            &MechConfig {
                stop_mechanism: false,
                ..MechConfig::default()
            },
        )
        .unwrap();
        let moved = |s: &NavState| frame.to_local(&s.pos).unwrap().to_vector().norm();
        assert_eq!(moved(on.states.last().unwrap()), 0.0);
        assert!(on.stationary.iter().all(|s| *s));
        for (a, b) in on.states.windows(2).map(|w| (w[0], w[1])) {
            assert_eq!(a.pos, b.pos);
            assert_eq!(b.vel, Vector3::zeros());
        }
        let drift = moved(off.states.last().unwrap());
        let expected = 0.5 * bias * 30.0f64.powi(2);
        assert!((drift / expected - 1.0).abs() < 0.2, "drift {drift}");
    }

    #[test]
    fn gyro_rezero_after_stop() {
        let (init, mut imu, mut odo) = at_rest(0.76, Attitude::level(0.0), 200, Vector3::zeros());
        let gyro_bias = Vector3::new(1e-3, -2e-3, 5e-4);
        for s in imu.iter_mut() {
            s.w += gyro_bias;
        }
        // motion starts at t=10 s: a forward acceleration far above the threshold
        let last = *imu.last().unwrap();
        for k in 1..=20 {
            let mut s = last;
            s.t += k as f64 * 0.05;
            s.f.y += 2.0;
            imu.push(s);
        }
        odo.push(OdoSample {
            t: 10.5,
            v_odo: 1.0,
        });
        let run = mechanize(
            &imu,
            &odo,
            init,
            BiasState::default(),
            &MechConfig::default(),
        )
        .unwrap();
        assert_eq!(run.gyro_rezero.len(), 1);
        let (_, b) = run.gyro_rezero[0];
        let earth_part = earth().earth_rate_local(0.76);
        assert_relative_eq!(b, gyro_bias + earth_part, epsilon = 1e-15);
        assert!(!*run.stationary.last().unwrap());
    }

    #[test]
    fn motion_detected_before_next_odometer_sample() {
        let (init, mut imu, odo) = at_rest(0.76, Attitude::level(0.0), 100, Vector3::zeros());
        let last = *imu.last().unwrap();
        for k in 1..=10 {
            let mut s = last;
            s.t += k as f64 * 0.05;
            s.f.y += 1.5;
            imu.push(s);
        }
        let run = mechanize(
            &imu,
            &odo,
            init,
            BiasState::default(),
            &MechConfig::default(),
        )
        .unwrap();
        // 1.5 m/s² exceeds 0.1 m/s within two samples while the odometer still reads zero
        assert!(!run.stationary[102]);
        assert!(run.states.last().unwrap().vel.y > 0.7);
    }

    #[test]
    fn rejects_non_monotonic_time() {
        let (init, mut imu, odo) = at_rest(0.5, Attitude::default(), 10, Vector3::zeros());
        imu[5].t = imu[4].t;
        assert!(matches!(
            mechanize(
                &imu,
                &odo,
                init,
                BiasState::default(),
                &MechConfig::default()
            ),
            Err(MechError::NonMonotonicTime { index: 5, .. })
        ));
        assert!(matches!(
            mechanize(
                &[],
                &odo,
                init,
                BiasState::default(),
                &MechConfig::default()
            ),
            Err(MechError::EmptyStream)
        ));
    }

    #[test]
    fn gaps_are_flagged() {
        let (init, mut imu, odo) = at_rest(0.5, Attitude::default(), 100, Vector3::zeros());
        for s in imu.iter_mut().skip(50) {
            s.t += 1.0;
        }
        let run = mechanize(
            &imu,
            &odo,
            init,
            BiasState::default(),
            &MechConfig::default(),
        )
        .unwrap();
        assert_eq!(run.gaps.len(), 1);
        assert_relative_eq!(run.gaps[0].dt, 1.05, epsilon = 1e-9);
    }

    #[test]
    fn mechanization_is_bitwise_deterministic() {
        let (init, mut imu, odo) = at_rest(
            0.5,
            Attitude::new(0.01, 0.02, 2.0),
            400,
            Vector3::new(0.01, -0.02, 0.03),
        );
        for (k, s) in imu.iter_mut().enumerate() {
            s.w.z += 0.01 * (k as f64 * 0.1).sin();
        }
        let cfg = MechConfig {
            stop_mechanism: false,
            ..MechConfig::default()
        };
        let a = mechanize(&imu, &odo, init, BiasState::default(), &cfg).unwrap();
        let b = mechanize(&imu, &odo, init, BiasState::default(), &cfg).unwrap();
        assert_eq!(a.states, b.states);
    }
}
