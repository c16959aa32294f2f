//! Sensor samples, error characterisation, initial bias estimation,
//! first-order Gauss-Markov bias dynamics and the stationarity test.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{rotation_body_to_local, Attitude};

/// Default minimum length of a stationary bias-estimation window, seconds.
pub const DEFAULT_MIN_WINDOW_S: f64 = 10.0;

/// Default speed threshold of the stationarity test, m/s.
pub const DEFAULT_V_EPS: f64 = 0.1;

/// A stationary window whose per-axis sample variance exceeds this multiple of
/// the configured noise variance is rejected.
pub const STATIONARY_VARIANCE_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("bias window is empty")]
    EmptyWindow,
    #[error("bias window spans {got:.3} s, at least {min:.3} s required")]
    WindowTooShort { got: f64, min: f64 },
    #[error("{sensor} axis {axis} variance {variance:.3e} exceeds {STATIONARY_VARIANCE_FACTOR}x the specified noise; vehicle is not stationary")]
    NotStationary {
        sensor: &'static str,
        axis: usize,
        variance: f64,
    },
    #[error("invalid sensor specification: {0}")]
    InvalidSpec(String),
}

/// One IMU epoch: specific force (m/s²) and angular rate (rad/s) in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub f: Vector3<f64>,
    pub w: Vector3<f64>,
}

/// Forward speed from the wheel odometer, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdoSample {
    pub t: f64,
    pub v_odo: f64,
}

/// Forward speed from wheel rate: v = 2π·r_wheel·ω_wheel (ω in rev/s).
pub fn odometer_speed(wheel_radius: f64, wheel_rev_per_s: f64) -> f64 {
    2.0 * std::f64::consts::PI * wheel_radius * wheel_rev_per_s
}

/// Noise and bias characterisation of the IMU and odometer.
///
/// White-noise variances are per-sample values at the IMU rate. Bias variances
/// are the stationary variances of the Gauss-Markov processes and the β
/// values are their inverse correlation times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub gyro_noise_var: Vector3<f64>,
    pub accel_noise_var: Vector3<f64>,
    pub gyro_bias_var: Vector3<f64>,
    pub accel_bias_var: Vector3<f64>,
    pub gyro_beta: Vector3<f64>,
    pub accel_beta: Vector3<f64>,
    /// Variance of the projected odometer velocity, per ENU axis.
    pub odo_vel_var: Vector3<f64>,
}

impl SensorSpec {
    /// Isotropic specification from standard deviations.
    pub fn isotropic(
        gyro_noise_std: f64,
        accel_noise_std: f64,
        gyro_bias_std: f64,
        accel_bias_std: f64,
        gyro_corr_time: f64,
        accel_corr_time: f64,
        odo_vel_std: f64,
    ) -> Self {
        let v = |x: f64| Vector3::repeat(x);
        Self {
            gyro_noise_var: v(gyro_noise_std.powi(2)),
            accel_noise_var: v(accel_noise_std.powi(2)),
            gyro_bias_var: v(gyro_bias_std.powi(2)),
            accel_bias_var: v(accel_bias_std.powi(2)),
            gyro_beta: v(1.0 / gyro_corr_time),
            accel_beta: v(1.0 / accel_corr_time),
            odo_vel_var: v(odo_vel_std.powi(2)),
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let groups = [
            ("gyro_noise_var", self.gyro_noise_var),
            ("accel_noise_var", self.accel_noise_var),
            ("gyro_bias_var", self.gyro_bias_var),
            ("accel_bias_var", self.accel_bias_var),
            ("gyro_beta", self.gyro_beta),
            ("accel_beta", self.accel_beta),
            ("odo_vel_var", self.odo_vel_var),
        ];
        for (name, v) in groups {
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(SensorError::InvalidSpec(format!(
                    "{name} must be finite and > 0, got {v:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Gyro (rad/s) and accelerometer (m/s²) biases.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasState {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl BiasState {
    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }
}

fn check_window(window: &[ImuSample], min_duration: f64) -> Result<(), SensorError> {
    let (first, last) = match (window.first(), window.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SensorError::EmptyWindow),
    };
    let span = last.t - first.t;
    if span < min_duration {
        return Err(SensorError::WindowTooShort {
            got: span,
            min: min_duration,
        });
    }
    Ok(())
}

fn mean_and_variance<F: Fn(&ImuSample) -> Vector3<f64>>(
    window: &[ImuSample],
    get: F,
) -> (Vector3<f64>, Vector3<f64>) {
    let n = window.len() as f64;
    let mean = window.iter().map(&get).sum::<Vector3<f64>>() / n;
    let var = if window.len() > 1 {
        window
            .iter()
            .map(|s| (get(s) - mean).component_mul(&(get(s) - mean)))
            .sum::<Vector3<f64>>()
            / (n - 1.0)
    } else {
        Vector3::zeros()
    };
    (mean, var)
}

fn check_variance(
    sensor: &'static str,
    var: &Vector3<f64>,
    noise: &Vector3<f64>,
) -> Result<(), SensorError> {
    for axis in 0..3 {
        if var[axis] > STATIONARY_VARIANCE_FACTOR * noise[axis] {
            return Err(SensorError::NotStationary {
                sensor,
                axis,
                variance: var[axis],
            });
        }
    }
    Ok(())
}

/// Gyro bias as the per-axis mean over a stationary window.
///
/// The Earth-rate projection is absorbed into the estimate.
pub fn estimate_gyro_bias(
    window: &[ImuSample],
    spec: &SensorSpec,
    min_duration: f64,
) -> Result<Vector3<f64>, SensorError> {
    check_window(window, min_duration)?;
    let (mean, var) = mean_and_variance(window, |s| s.w);
    check_variance("gyro", &var, &spec.gyro_noise_var)?;
    Ok(mean)
}

/// Accelerometer bias: window mean minus gravity projected into the body frame.
pub fn estimate_accel_bias(
    window: &[ImuSample],
    att0: &Attitude,
    gravity: f64,
    spec: &SensorSpec,
    min_duration: f64,
) -> Result<Vector3<f64>, SensorError> {
    check_window(window, min_duration)?;
    let (mean, var) = mean_and_variance(window, |s| s.f);
    check_variance("accelerometer", &var, &spec.accel_noise_var)?;
    let local_to_body = rotation_body_to_local(att0).transpose();
    Ok(mean - local_to_body * Vector3::new(0.0, 0.0, gravity))
}

/// One discrete step of the first-order Gauss-Markov bias model.
///
/// `noise` holds six standard-normal draws (gyro x,y,z then accel x,y,z);
/// `None` propagates the mean only. Requires `β·dt < 1`.
pub fn gm_propagate(
    b: &BiasState,
    spec: &SensorSpec,
    dt: f64,
    noise: Option<&[f64; 6]>,
) -> BiasState {
    debug_assert!(spec.gyro_beta.max() * dt < 1.0 && spec.accel_beta.max() * dt < 1.0);
    let mut out = BiasState {
        gyro: b
            .gyro
            .component_mul(&spec.gyro_beta.map(|beta| 1.0 - beta * dt)),
        accel: b
            .accel
            .component_mul(&spec.accel_beta.map(|beta| 1.0 - beta * dt)),
    };
    if let Some(n) = noise {
        for axis in 0..3 {
            out.gyro[axis] +=
                (2.0 * spec.gyro_beta[axis] * spec.gyro_bias_var[axis] * dt).sqrt() * n[axis];
            out.accel[axis] +=
                (2.0 * spec.accel_beta[axis] * spec.accel_bias_var[axis] * dt).sqrt() * n[axis + 3];
        }
    }
    out
}

/// Stationary iff the mechanized speed is within `v_eps` and the latest
/// odometer reading is exactly zero. No odometer reading means not stationary.
pub fn is_stationary(v_mech: f64, odo: Option<&OdoSample>, v_eps: f64) -> bool {
    match odo {
        Some(o) => v_mech.abs() <= v_eps && o.v_odo == 0.0,
        None => false,
    }
}
