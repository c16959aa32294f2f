//! Loosely-coupled 15-state extended Kalman filter and the constant-velocity benchmark.
//!
//! The state is total, not error-state:
//! (φ, λ, h, v_e, v_n, v_u, p, r, a, δω_x, δω_y, δω_z, δf_x, δf_y, δf_z).
//! The mean is propagated by the nonlinear mechanization; Φ is the exact
//! Jacobian of that discrete step and is used only for the covariance.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::fiveg::{FivegFix, FixMode, PipelineMode};
use crate::frames::{
    attitude_from_quat_jacobian, quat_from_attitude, quat_from_attitude_jacobian,
    rotation_body_to_local, skew, Attitude, EarthModel, FrameError, Geodetic, LocalEnu, LocalFrame,
};
use crate::mechanization::{
    check_stream, mech_step, project_odometer, transport_rate_unchecked, velocity_step, MechError,
    NavState, StopMechanism, StreamGap,
};
use crate::sensors::{gm_propagate, BiasState, ImuSample, OdoSample, SensorSpec, DEFAULT_V_EPS};

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Vector15 = SVector<f64, 15>;
pub type Matrix15x12 = SMatrix<f64, 15, 12>;
pub type Matrix12 = SMatrix<f64, 12, 12>;

pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const ATT: usize = 6;
pub const GYRO_BIAS: usize = 9;
pub const ACCEL_BIAS: usize = 12;

/// Relative asymmetry tolerated in P.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Most negative eigenvalue tolerated in P, relative to its trace.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error(transparent)]
    Mech(#[from] MechError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("covariance lost positive semi-definiteness at t={t} s (min eigenvalue {min_eigenvalue}, trace {trace})")]
    NotPsd {
        t: f64,
        min_eigenvalue: f64,
        trace: f64,
    },
    #[error("covariance asymmetric at t={t} s (relative {asymmetry})")]
    Asymmetric { t: f64, asymmetry: f64 },
    #[error("innovation covariance is singular at t={t} s")]
    SingularInnovation { t: f64 },
    #[error("measurement has neither a position nor a velocity part")]
    EmptyMeasurement,
    #[error("invalid gating probability {0}")]
    InvalidGate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub t: f64,
    pub nav: NavState,
    pub bias: BiasState,
    pub p: Matrix15,
}

impl FilterState {
    pub fn x(&self) -> Vector15 {
        state_vector(&self.nav, &self.bias)
    }

    /// Add a correction to the state. The attitude quaternion is rebuilt only
    /// when the attitude actually changes.
    pub fn correct(&mut self, dx: &Vector15) {
        let n = &mut self.nav;
        n.pos.lat += dx[POS];
        n.pos.lon += dx[POS + 1];
        n.pos.h += dx[POS + 2];
        n.vel += dx.fixed_rows::<3>(VEL);
        let datt = dx.fixed_rows::<3>(ATT);
        if datt.iter().any(|d| *d != 0.0) {
            let att = Attitude::new(
                n.att.pitch + datt[0],
                n.att.roll + datt[1],
                n.att.azimuth + datt[2],
            );
            n.q = quat_from_attitude(&att);
            n.att = n.q.to_attitude();
        }
        self.bias.gyro += dx.fixed_rows::<3>(GYRO_BIAS);
        self.bias.accel += dx.fixed_rows::<3>(ACCEL_BIAS);
    }

    pub fn p_diagonal(&self) -> [f64; 15] {
        std::array::from_fn(|i| self.p[(i, i)])
    }
}

pub fn state_vector(nav: &NavState, bias: &BiasState) -> Vector15 {
    let mut x = Vector15::zeros();
    x[POS] = nav.pos.lat;
    x[POS + 1] = nav.pos.lon;
    x[POS + 2] = nav.pos.h;
    x.fixed_rows_mut::<3>(VEL).copy_from(&nav.vel);
    x[ATT] = nav.att.pitch;
    x[ATT + 1] = nav.att.roll;
    x[ATT + 2] = nav.att.azimuth;
    x.fixed_rows_mut::<3>(GYRO_BIAS).copy_from(&bias.gyro);
    x.fixed_rows_mut::<3>(ACCEL_BIAS).copy_from(&bias.accel);
    x
}

/// Navigation state and biases from a state vector; the quaternion is rebuilt from Euler angles.
pub fn from_state_vector(t: f64, x: &Vector15) -> (NavState, BiasState) {
    let pos = Geodetic {
        lat: x[POS],
        lon: x[POS + 1],
        h: x[POS + 2],
    };
    let att = Attitude::new(x[ATT], x[ATT + 1], x[ATT + 2]);
    let nav = NavState::new(t, pos, x.fixed_rows::<3>(VEL).into_owned(), att);
    let bias = BiasState::new(
        x.fixed_rows::<3>(GYRO_BIAS).into_owned(),
        x.fixed_rows::<3>(ACCEL_BIAS).into_owned(),
    );
    (nav, bias)
}

/// The discrete transition whose Jacobian is [`assemble_phi`]: one mechanization
/// step from Euler-parameterised attitude plus noise-free bias decay.
pub fn transition(
    x: &Vector15,
    t: f64,
    imu: &ImuSample,
    spec: &SensorSpec,
    earth: &EarthModel,
) -> Result<Vector15, MechError> {
    let (nav, bias) = from_state_vector(t, x);
    let next = mech_step(&nav, imu, &bias, earth)?;
    let decayed = gm_propagate(&bias, spec, imu.t - t, None);
    Ok(state_vector(&next, &decayed))
}

fn place<const R: usize>(
    m: &mut SMatrix<f64, R, 15>,
    row: usize,
    col: usize,
    block: &Matrix3<f64>,
) {
    let mut view = m.fixed_view_mut::<3, 3>(row, col);
    view += block;
}

/// State transition matrix Φ = ∂f/∂x of one prediction step at (`nav`, `bias`).
pub fn assemble_phi(
    nav: &NavState,
    bias: &BiasState,
    imu: &ImuSample,
    spec: &SensorSpec,
    dt: f64,
    earth: &EarthModel,
) -> Matrix15 {
    let (lat, h) = (nav.pos.lat, nav.pos.h);
    let v = nav.vel;
    let (m, n) = earth.radii(lat);
    let (dm, dn) = earth.radii_derivatives(lat);
    let (mh, nh) = (m + h, n + h);
    let (sin_lat, cos_lat) = lat.sin_cos();
    let tan_lat = sin_lat / cos_lat;
    let we = earth.rotation_rate;

    let q0 = quat_from_attitude(&nav.att);
    let mut dq0 = SMatrix::<f64, 4, 15>::zeros();
    dq0.fixed_view_mut::<4, 3>(0, ATT)
        .copy_from(&quat_from_attitude_jacobian(&nav.att));

    let w_ie = earth.earth_rate_local(lat);
    let w_el = transport_rate_unchecked(&v, &nav.pos, earth);
    let mut d_wie = SMatrix::<f64, 3, 15>::zeros();
    d_wie[(1, POS)] = -we * sin_lat;
    d_wie[(2, POS)] = we * cos_lat;
    let mut d_wel = SMatrix::<f64, 3, 15>::zeros();
    d_wel[(0, POS)] = v.y * dm / (mh * mh);
    d_wel[(1, POS)] = -v.x * dn / (nh * nh);
    d_wel[(2, POS)] = v.x / (nh * cos_lat * cos_lat) - v.x * tan_lat * dn / (nh * nh);
    d_wel[(0, POS + 2)] = v.y / (mh * mh);
    d_wel[(1, POS + 2)] = -v.x / (nh * nh);
    d_wel[(2, POS + 2)] = -v.x * tan_lat / (nh * nh);
    d_wel[(0, VEL + 1)] = -1.0 / mh;
    d_wel[(1, VEL)] = 1.0 / nh;
    d_wel[(2, VEL)] = tan_lat / nh;

    // body rate relative to the local frame
    let frame_rate = w_ie + w_el;
    let c0 = q0.to_rotation_matrix();
    let dc0 = q0.rotation_matrix_derivatives();
    let mut d_omega = -c0.transpose() * (d_wie + d_wel);
    let rate_by_q = Matrix3x4::from_columns(&std::array::from_fn::<_, 4, _>(|i| {
        -(dc0[i].transpose() * frame_rate)
    }));
    d_omega += rate_by_q * dq0;
    place(&mut d_omega, 0, GYRO_BIAS, &-Matrix3::identity());
    let omega = (imu.w - bias.gyro) - c0.transpose() * frame_rate;

    // quaternion increment and renormalisation
    let half = 0.5 * dt;
    let inc = crate::frames::Quaternion::new(1.0, omega.x * half, omega.y * half, omega.z * half);
    let qp = q0 * inc;
    let mut d_inc = SMatrix::<f64, 4, 15>::zeros();
    d_inc
        .fixed_view_mut::<3, 15>(1, 0)
        .copy_from(&(d_omega * half));
    let d_qp = inc.right_matrix() * dq0 + q0.left_matrix() * d_inc;
    let q1 = qp.normalized();
    let q1v = q1.to_vector();
    let d_q1 = (Matrix4::identity() - q1v * q1v.transpose()) / qp.norm() * d_qp;
    let d_att = attitude_from_quat_jacobian(&q1) * d_q1;

    // velocity
    let c1 = q1.to_rotation_matrix();
    let dc1 = q1.rotation_matrix_derivatives();
    let f = imu.f - bias.accel;
    let force_by_q = Matrix3x4::from_columns(&std::array::from_fn::<_, 4, _>(|i| dc1[i] * f));
    let coriolis_rate = 2.0 * w_ie + w_el;
    let (dg_lat, dg_h) = earth.gravity_derivatives(lat, h);
    let mut d_v = force_by_q * d_q1 * dt + skew(&v) * (d_wie * 2.0 + d_wel) * dt;
    place(
        &mut d_v,
        0,
        VEL,
        &(Matrix3::identity() - skew(&coriolis_rate) * dt),
    );
    place(&mut d_v, 0, ACCEL_BIAS, &(-c1 * dt));
    d_v[(2, POS)] -= dg_lat * dt;
    d_v[(2, POS + 2)] -= dg_h * dt;
    let v1 = velocity_step(&v, &imu.f, &bias.accel, &q1, &nav.pos, dt, earth);

    // position
    let mut d_lat = d_v.row(1) * (dt / mh);
    d_lat[POS] += 1.0 - v1.y * dt * dm / (mh * mh);
    d_lat[POS + 2] -= v1.y * dt / (mh * mh);
    let lon_den = nh * cos_lat;
    let mut d_lon = d_v.row(0) * (dt / lon_den);
    d_lon[POS] -= v1.x * dt * (dn * cos_lat - nh * sin_lat) / (lon_den * lon_den);
    d_lon[POS + 1] += 1.0;
    d_lon[POS + 2] -= v1.x * dt / (nh * nh * cos_lat);
    let mut d_h = d_v.row(2) * dt;
    d_h[POS + 2] += 1.0;

    let mut phi = Matrix15::zeros();
    phi.set_row(POS, &d_lat);
    phi.set_row(POS + 1, &d_lon);
    phi.set_row(POS + 2, &d_h);
    phi.fixed_view_mut::<3, 15>(VEL, 0).copy_from(&d_v);
    phi.fixed_view_mut::<3, 15>(ATT, 0).copy_from(&d_att);
    for i in 0..3 {
        phi[(GYRO_BIAS + i, GYRO_BIAS + i)] = 1.0 - spec.gyro_beta[i] * dt;
        phi[(ACCEL_BIAS + i, ACCEL_BIAS + i)] = 1.0 - spec.accel_beta[i] * dt;
    }
    phi
}

/// Diagonal Q ordered (gyro noise, accel noise, gyro-bias driving, accel-bias driving).
pub fn build_q(spec: &SensorSpec) -> Matrix12 {
    let mut d = SVector::<f64, 12>::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&spec.gyro_noise_var);
    d.fixed_rows_mut::<3>(3).copy_from(&spec.accel_noise_var);
    d.fixed_rows_mut::<3>(6).copy_from(&spec.gyro_bias_var);
    d.fixed_rows_mut::<3>(9).copy_from(&spec.accel_bias_var);
    Matrix12::from_diagonal(&d)
}

/// Noise coupling: R_b^l maps accelerometer noise into velocity and gyro noise
/// into attitude, √(2β) drives the bias states.
pub fn build_g(att: &Attitude, spec: &SensorSpec) -> Matrix15x12 {
    let r = rotation_body_to_local(att);
    let mut g = Matrix15x12::zeros();
    g.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&r);
    g.fixed_view_mut::<3, 3>(ATT, 0).copy_from(&r);
    for i in 0..3 {
        g[(GYRO_BIAS + i, 6 + i)] = (2.0 * spec.gyro_beta[i]).sqrt();
        g[(ACCEL_BIAS + i, 9 + i)] = (2.0 * spec.accel_beta[i]).sqrt();
    }
    g
}

pub fn symmetrize(p: &Matrix15) -> Matrix15 {
    (p + p.transpose()) * 0.5
}

/// Check the symmetry and numerical PSD invariants of P.
pub fn check_covariance(p: &Matrix15, t: f64) -> Result<(), FusionError> {
    let scale = p.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (p - p.transpose()).amax() / scale;
    if asymmetry > SYMMETRY_TOL {
        return Err(FusionError::Asymmetric { t, asymmetry });
    }
    let trace = p.trace();
    let min_eigenvalue = symmetrize(p).symmetric_eigenvalues().min();
    if min_eigenvalue < -PSD_TOL * trace.abs() {
        return Err(FusionError::NotPsd {
            t,
            min_eigenvalue,
            trace,
        });
    }
    Ok(())
}

/// Time update: mechanization and bias decay for the mean, Φ P Φᵀ + G Q Gᵀ Δt for P.
pub fn predict(
    fs: &FilterState,
    imu: &ImuSample,
    spec: &SensorSpec,
    earth: &EarthModel,
) -> Result<FilterState, FusionError> {
    let dt = imu.t - fs.t;
    let phi = assemble_phi(&fs.nav, &fs.bias, imu, spec, dt, earth);
    let g = build_g(&fs.nav.att, spec);
    let p = phi * fs.p * phi.transpose() + g * build_q(spec) * g.transpose() * dt;
    let nav = mech_step(&fs.nav, imu, &fs.bias, earth)?;
    Ok(FilterState {
        t: imu.t,
        nav,
        bias: gm_propagate(&fs.bias, spec, dt, None),
        p: symmetrize(&p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionObs {
    pub pos: Geodetic,
    /// ENU covariance, m².
    pub cov_enu: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityObs {
    pub vel: Vector3<f64>,
    pub var: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub position: Option<PositionObs>,
    pub velocity: Option<VelocityObs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UpdateOutcome {
    Applied { nis: f64 },
    Gated { nis: f64, threshold: f64 },
}

/// ENU covariance (m²) to (φ, λ, h) covariance (rad², rad², m²).
pub fn enu_cov_to_geodetic(
    cov_enu: &Matrix3<f64>,
    pos: &Geodetic,
    earth: &EarthModel,
) -> Matrix3<f64> {
    let (m, n) = earth.radii(pos.lat);
    let mut t = Matrix3::zeros();
    t[(0, 1)] = 1.0 / (m + pos.h);
    t[(1, 0)] = 1.0 / ((n + pos.h) * pos.lat.cos());
    t[(2, 2)] = 1.0;
    t * cov_enu * t.transpose()
}

fn chi2_threshold(prob: f64, dof: usize) -> Result<f64, FusionError> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(FusionError::InvalidGate(prob));
    }
    let dist = ChiSquared::new(dof as f64).map_err(|_| FusionError::InvalidGate(prob))?;
    Ok(dist.inverse_cdf(prob))
}

fn kalman_update<const M: usize>(
    fs: &FilterState,
    innovation: SVector<f64, M>,
    h: SMatrix<f64, M, 15>,
    r: SMatrix<f64, M, M>,
    gate: Option<f64>,
) -> Result<(FilterState, UpdateOutcome), FusionError> {
    let s = h * fs.p * h.transpose() + r;
    let s = (s + s.transpose()) * 0.5;
    let chol = s
        .cholesky()
        .ok_or(FusionError::SingularInnovation { t: fs.t })?;
    let nis = innovation.dot(&chol.solve(&innovation));
    if let Some(prob) = gate {
        let threshold = chi2_threshold(prob, M)?;
        if nis > threshold {
            log::info!(
                "gated {M}-row update at t={:.3} (NIS {nis:.2} > {threshold:.2})",
                fs.t
            );
            return Ok((*fs, UpdateOutcome::Gated { nis, threshold }));
        }
    }
    let k = chol.solve(&(h * fs.p)).transpose();
    let dx = k * innovation;
    let i_kh = Matrix15::identity() - k * h;
    let p = i_kh * fs.p * i_kh.transpose() + k * r * k.transpose();
    let mut out = *fs;
    out.correct(&dx);
    out.p = symmetrize(&p);
    Ok((out, UpdateOutcome::Applied { nis }))
}

/// Measurement update with H sliced to the parts present in `z`.
pub fn update(
    fs: &FilterState,
    z: &Measurement,
    gate: Option<f64>,
    earth: &EarthModel,
) -> Result<(FilterState, UpdateOutcome), FusionError> {
    let pos_part = z.position.map(|obs| {
        let res = Vector3::new(
            obs.pos.lat - fs.nav.pos.lat,
            obs.pos.lon - fs.nav.pos.lon,
            obs.pos.h - fs.nav.pos.h,
        );
        (res, enu_cov_to_geodetic(&obs.cov_enu, &fs.nav.pos, earth))
    });
    let vel_part = z
        .velocity
        .map(|obs| (obs.vel - fs.nav.vel, Matrix3::from_diagonal(&obs.var)));
    let block_h = |offset: usize| {
        let mut h = SMatrix::<f64, 3, 15>::zeros();
        h.fixed_view_mut::<3, 3>(0, offset).fill_with_identity();
        h
    };
    match (pos_part, vel_part) {
        (Some((zp, rp)), Some((zv, rv))) => {
            let mut innovation = SVector::<f64, 6>::zeros();
            innovation.fixed_rows_mut::<3>(0).copy_from(&zp);
            innovation.fixed_rows_mut::<3>(3).copy_from(&zv);
            let mut h = SMatrix::<f64, 6, 15>::zeros();
            h.fixed_view_mut::<6, 6>(0, POS).fill_with_identity();
            let mut r = SMatrix::<f64, 6, 6>::zeros();
            r.fixed_view_mut::<3, 3>(0, 0).copy_from(&rp);
            r.fixed_view_mut::<3, 3>(3, 3).copy_from(&rv);
            kalman_update(fs, innovation, h, r, gate)
        }
        (Some((zp, rp)), None) => kalman_update(fs, zp, block_h(POS), rp, gate),
        (None, Some((zv, rv))) => kalman_update(fs, zv, block_h(VEL), rv, gate),
        (None, None) => Err(FusionError::EmptyMeasurement),
    }
}

/// Initial standard deviations of the filter states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialUncertainty {
    pub pos_std: f64,
    pub vel_std: f64,
    pub pitch_roll_std: f64,
    pub azimuth_std: f64,
    /// Defaults to the sensor specification's stationary bias standard deviation.
    pub gyro_bias_std: Option<f64>,
    pub accel_bias_std: Option<f64>,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            pos_std: 1.0,
            vel_std: 0.1,
            pitch_roll_std: 0.5f64.to_radians(),
            azimuth_std: 1f64.to_radians(),
            gyro_bias_std: None,
            accel_bias_std: None,
        }
    }
}

impl InitialUncertainty {
    pub fn covariance(&self, pos: &Geodetic, spec: &SensorSpec, earth: &EarthModel) -> Matrix15 {
        let mut p = Matrix15::zeros();
        let pos_cov =
            enu_cov_to_geodetic(&(Matrix3::identity() * self.pos_std.powi(2)), pos, earth);
        p.fixed_view_mut::<3, 3>(POS, POS).copy_from(&pos_cov);
        for i in 0..3 {
            p[(VEL + i, VEL + i)] = self.vel_std.powi(2);
            p[(GYRO_BIAS + i, GYRO_BIAS + i)] =
                self.gyro_bias_std.map_or(spec.gyro_bias_var[i], |s| s * s);
            p[(ACCEL_BIAS + i, ACCEL_BIAS + i)] = self
                .accel_bias_std
                .map_or(spec.accel_bias_var[i], |s| s * s);
        }
        p[(ATT, ATT)] = self.pitch_roll_std.powi(2);
        p[(ATT + 1, ATT + 1)] = self.pitch_roll_std.powi(2);
        p[(ATT + 2, ATT + 2)] = self.azimuth_std.powi(2);
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub v_eps: f64,
    pub stop_mechanism: bool,
    pub use_odometer: bool,
    pub use_fiveg: bool,
    /// χ² gating probability; `None` disables gating.
    pub gate_chi2: Option<f64>,
    pub init: InitialUncertainty,
    /// Verify the covariance invariants after every predict and update.
    pub check_covariance: bool,
    pub earth: EarthModel,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            v_eps: DEFAULT_V_EPS,
            stop_mechanism: true,
            use_odometer: true,
            use_fiveg: true,
            gate_chi2: None,
            init: InitialUncertainty::default(),
            check_covariance: true,
            earth: EarthModel::wgs84(),
        }
    }
}

/// Filter output at one IMU epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionEpoch {
    pub nav: NavState,
    pub bias: BiasState,
    pub p_diag: [f64; 15],
    /// Mode of the 5G epoch processed here, if any.
    pub fiveg: Option<PipelineMode>,
    pub position_update: bool,
    pub stationary: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionRun {
    pub epochs: Vec<FusionEpoch>,
    pub gaps: Vec<StreamGap>,
    pub position_updates: usize,
    pub velocity_updates: usize,
    pub gated: usize,
}

fn health(cfg: &FusionConfig, fs: &FilterState) -> Result<(), FusionError> {
    if cfg.check_covariance {
        check_covariance(&fs.p, fs.t)?;
    }
    Ok(())
}

/// Run the loosely-coupled filter over time-ordered IMU, odometer and 5G fix streams.
///
/// Per IMU epoch: predict, then an odometer velocity update for each odometer
/// sample up to this epoch, then a position update for each LOS 5G fix up to
/// this epoch. Fixes in total NLOS leave the filter in standalone INS mode.
pub fn run_lc_fusion(
    imu: &[ImuSample],
    odo: &[OdoSample],
    fixes: &[FivegFix],
    init: NavState,
    bias0: BiasState,
    spec: &SensorSpec,
    cfg: &FusionConfig,
) -> Result<FusionRun, FusionError> {
    run_lc_fusion_observed(imu, odo, fixes, init, bias0, spec, cfg, &mut |_| {})
}

/// [`run_lc_fusion`] that hands the full filter state to `observer` after
/// every prediction and every applied or gated update.
#[allow(clippy::too_many_arguments)]
pub fn run_lc_fusion_observed(
    imu: &[ImuSample],
    odo: &[OdoSample],
    fixes: &[FivegFix],
    init: NavState,
    bias0: BiasState,
    spec: &SensorSpec,
    cfg: &FusionConfig,
    observer: &mut dyn FnMut(&FilterState),
) -> Result<FusionRun, FusionError> {
    if imu.is_empty() {
        return Err(MechError::EmptyStream.into());
    }
    let earth = cfg.earth;
    let gaps = check_stream(imu, init.t)?;
    let mut fs = FilterState {
        t: init.t,
        nav: init,
        bias: bias0,
        p: cfg.init.covariance(&init.pos, spec, &earth),
    };
    let mut stop = StopMechanism::new(cfg.v_eps);
    let mut run = FusionRun {
        epochs: Vec::with_capacity(imu.len()),
        gaps,
        ..FusionRun::default()
    };
    let (mut next_odo, mut next_fix) = (0, 0);
    for sample in imu {
        let mut pending_odo = Vec::new();
        while next_odo < odo.len() && odo[next_odo].t <= sample.t {
            stop.observe_odometer(&odo[next_odo]);
            pending_odo.push(odo[next_odo]);
            next_odo += 1;
        }

        let base = FilterState {
            nav: stop.integration_base(&fs.nav),
            ..fs
        };
        let mut predicted = predict(&base, sample, spec, &earth)?;
        let stationary = if cfg.stop_mechanism {
            let (nav, still) = stop.resolve(&fs.nav, predicted.nav);
            predicted.nav = nav;
            still
        } else {
            false
        };
        fs = predicted;
        health(cfg, &fs)?;
        observer(&fs);

        if cfg.use_odometer {
            for o in &pending_odo {
                let z = Measurement {
                    position: None,
                    velocity: Some(VelocityObs {
                        vel: project_odometer(o.v_odo, &fs.nav.att),
                        var: spec.odo_vel_var,
                    }),
                };
                let (next, outcome) = update(&fs, &z, cfg.gate_chi2, &earth)?;
                fs = next;
                match outcome {
                    UpdateOutcome::Applied { .. } => run.velocity_updates += 1,
                    UpdateOutcome::Gated { .. } => run.gated += 1,
                }
                health(cfg, &fs)?;
                observer(&fs);
            }
        }

        let mut mode = None;
        let mut position_update = false;
        while next_fix < fixes.len() && fixes[next_fix].t <= sample.t {
            let fix = &fixes[next_fix];
            next_fix += 1;
            match (fix.mode, fix.pos, fix.cov) {
                (FixMode::Los, Some(pos), Some(cov_enu)) => {
                    mode = Some(PipelineMode::Fused);
                    if !cfg.use_fiveg {
                        continue;
                    }
                    let z = Measurement {
                        position: Some(PositionObs { pos, cov_enu }),
                        velocity: None,
                    };
                    let (next, outcome) = update(&fs, &z, cfg.gate_chi2, &earth)?;
                    fs = next;
                    match outcome {
                        UpdateOutcome::Applied { .. } => {
                            run.position_updates += 1;
                            position_update = true;
                        }
                        UpdateOutcome::Gated { .. } => run.gated += 1,
                    }
                    health(cfg, &fs)?;
                    observer(&fs);
                }
                _ => mode = Some(PipelineMode::InsOnly),
            }
        }

        run.epochs.push(FusionEpoch {
            nav: fs.nav,
            bias: fs.bias,
            p_diag: fs.p_diagonal(),
            fiveg: mode,
            position_update,
            stationary,
        });
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    /// White-acceleration spectral density, m²/s³.
    pub accel_psd: f64,
    pub init_pos_std: f64,
    pub init_vel_std: f64,
    /// Below this speed the reported azimuth is held.
    pub heading_min_speed: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            accel_psd: 1.0,
            init_pos_std: 1.0,
            init_vel_std: 0.1,
            heading_min_speed: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvEpoch {
    pub nav: NavState,
    pub mode: PipelineMode,
    pub pos_var: Vector3<f64>,
}

/// Constant-velocity Kalman filter in ENU driven by the 5G fix stream alone.
///
/// Emits one state per fix epoch; during total NLOS it coasts at the last velocity.
pub fn run_cv_benchmark(
    fixes: &[FivegFix],
    init: &NavState,
    frame: &LocalFrame,
    cfg: &CvConfig,
) -> Result<Vec<CvEpoch>, FusionError> {
    type M6 = SMatrix<f64, 6, 6>;
    type V6 = SVector<f64, 6>;
    let p0 = frame.to_local(&init.pos)?;
    let mut x = V6::new(p0.e, p0.n, p0.u, init.vel.x, init.vel.y, init.vel.z);
    let mut p = M6::zeros();
    for i in 0..3 {
        p[(i, i)] = cfg.init_pos_std.powi(2);
        p[(3 + i, 3 + i)] = cfg.init_vel_std.powi(2);
    }
    let mut t = init.t;
    let mut azimuth = init.att.azimuth;
    let mut out = Vec::with_capacity(fixes.len());
    for fix in fixes {
        let dt = fix.t - t;
        if dt < 0.0 {
            return Err(MechError::NonMonotonicTime {
                index: out.len(),
                t: fix.t,
                prev: t,
            }
            .into());
        }
        let mut f = M6::identity();
        let mut q = M6::zeros();
        let q_psd = cfg.accel_psd;
        for i in 0..3 {
            f[(i, 3 + i)] = dt;
            q[(i, i)] = q_psd * dt.powi(3) / 3.0;
            q[(i, 3 + i)] = q_psd * dt.powi(2) / 2.0;
            q[(3 + i, i)] = q_psd * dt.powi(2) / 2.0;
            q[(3 + i, 3 + i)] = q_psd * dt;
        }
        x = f * x;
        p = f * p * f.transpose() + q;
        t = fix.t;

        let mode = match (fix.mode, fix.pos, fix.cov) {
            (FixMode::Los, Some(pos), Some(r)) => {
                let z = frame.to_local(&pos)?.to_vector();
                let mut h = SMatrix::<f64, 3, 6>::zeros();
                h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
                let s = h * p * h.transpose() + r;
                let chol = s.cholesky().ok_or(FusionError::SingularInnovation { t })?;
                let k = chol.solve(&(h * p)).transpose();
                x += k * (z - h * x);
                let i_kh = M6::identity() - k * h;
                p = i_kh * p * i_kh.transpose() + k * r * k.transpose();
                p = (p + p.transpose()) * 0.5;
                PipelineMode::Fused
            }
            _ => PipelineMode::InsOnly,
        };
        let vel = Vector3::new(x[3], x[4], x[5]);
        if vel.xy().norm() > cfg.heading_min_speed {
            azimuth = vel.x.atan2(vel.y);
        }
        let pos = frame.to_geodetic(&LocalEnu::new(x[0], x[1], x[2]))?;
        out.push(CvEpoch {
            nav: NavState::new(t, pos, vel, Attitude::level(azimuth)),
            mode,
            pos_var: Vector3::new(p[(0, 0)], p[(1, 1)], p[(2, 2)]),
        });
    }
    Ok(out)
}
