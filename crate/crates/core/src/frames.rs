//! Coordinate frames, the WGS-84 Earth model, body/local rotations and
//! quaternion algebra.
//!
//! Conventions used throughout the crate:
//! - body frame (b): x lateral-right, y forward, z up
//! - local-level frame (l): east, north, up
//! - azimuth is measured clockwise from north, pitch is a rotation about the
//!   body x axis, roll about the body y axis.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest anchor offset accepted by the tangent-plane conversion.
pub const MAX_LOCAL_RANGE_M: f64 = 50_000.0;

/// Distance from ±π/2 pitch at which Euler extraction is declared singular.
pub const GIMBAL_LOCK_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("pitch {pitch} rad is within {GIMBAL_LOCK_MARGIN} of ±π/2; azimuth and roll are not separable")]
    GimbalLock { pitch: f64 },
    #[error("point lies {distance_m:.1} m from the anchor, beyond the {MAX_LOCAL_RANGE_M} m tangent-plane limit")]
    OutOfRange { distance_m: f64 },
    #[error("latitude {0} rad is outside [-π/2, π/2]")]
    InvalidLatitude(f64),
}

/// Geodetic position: latitude and longitude in radians, ellipsoidal height in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodetic {
    pub lat: f64,
    pub lon: f64,
    pub h: f64,
}

impl Geodetic {
    pub fn new(lat: f64, lon: f64, h: f64) -> Result<Self, FrameError> {
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&lat) {
            return Err(FrameError::InvalidLatitude(lat));
        }
        Ok(Self {
            lat,
            lon: wrap_pi(lon),
            h,
        })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, h: f64) -> Result<Self, FrameError> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), h)
    }
}

/// Position in the east/north/up tangent plane of a scenario anchor, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalEnu {
    pub e: f64,
    pub n: f64,
    pub u: f64,
}

impl LocalEnu {
    pub fn new(e: f64, n: f64, u: f64) -> Self {
        Self { e, n, u }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.e, self.n, self.u)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn horizontal_distance(&self, other: &LocalEnu) -> f64 {
        (self.e - other.e).hypot(self.n - other.n)
    }

    pub fn distance(&self, other: &LocalEnu) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

/// Pitch, roll and azimuth in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Attitude {
    pub pitch: f64,
    pub roll: f64,
    pub azimuth: f64,
}

impl Attitude {
    /// Azimuth is normalised into [0, 2π).
    pub fn new(pitch: f64, roll: f64, azimuth: f64) -> Self {
        Self {
            pitch,
            roll,
            azimuth: wrap_two_pi(azimuth),
        }
    }

    pub fn level(azimuth: f64) -> Self {
        Self::new(0.0, 0.0, azimuth)
    }
}

/// Earth ellipsoid, rotation rate and normal gravity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    pub semi_major_axis: f64,
    pub eccentricity_sq: f64,
    /// Earth rotation rate with respect to inertial space, rad/s.
    pub rotation_rate: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        Self::wgs84()
    }
}

impl EarthModel {
    pub fn wgs84() -> Self {
        let flattening = 1.0 / 298.257_223_563;
        Self {
            semi_major_axis: 6_378_137.0,
            eccentricity_sq: flattening * (2.0 - flattening),
            rotation_rate: 7.292_115e-5,
        }
    }

    /// Meridional (M) and prime-vertical (N) radii of curvature.
    pub fn radii(&self, lat: f64) -> (f64, f64) {
        let s = lat.sin();
        let w = 1.0 - self.eccentricity_sq * s * s;
        let n = self.semi_major_axis / w.sqrt();
        let m = self.semi_major_axis * (1.0 - self.eccentricity_sq) / (w * w.sqrt());
        (m, n)
    }

    /// Derivatives dM/dlat and dN/dlat.
    pub fn radii_derivatives(&self, lat: f64) -> (f64, f64) {
        let (s, c) = lat.sin_cos();
        let e2 = self.eccentricity_sq;
        let w = 1.0 - e2 * s * s;
        let dn = self.semi_major_axis * e2 * s * c / (w * w.sqrt());
        let dm = 3.0 * self.semi_major_axis * (1.0 - e2) * e2 * s * c / (w * w * w.sqrt());
        (dm, dn)
    }

    /// Normal gravity magnitude (Somigliana) with a free-air height correction, m/s².
    pub fn gravity(&self, lat: f64, h: f64) -> f64 {
        let s2 = lat.sin().powi(2);
        let g0 =
            GAMMA_EQUATOR * (1.0 + SOMIGLIANA_K * s2) / (1.0 - self.eccentricity_sq * s2).sqrt();
        g0 - FREE_AIR_GRADIENT * h
    }

    /// Partial derivatives of [`EarthModel::gravity`] with respect to latitude and height.
    pub fn gravity_derivatives(&self, lat: f64, _h: f64) -> (f64, f64) {
        let (s, c) = lat.sin_cos();
        let s2 = s * s;
        let e2 = self.eccentricity_sq;
        let w = 1.0 - e2 * s2;
        let num = 1.0 + SOMIGLIANA_K * s2;
        // d/dlat of num / sqrt(w)
        let dnum = 2.0 * SOMIGLIANA_K * s * c;
        let dw = -2.0 * e2 * s * c;
        let dg = GAMMA_EQUATOR * (dnum / w.sqrt() - 0.5 * num * dw / (w * w.sqrt()));
        (dg, -FREE_AIR_GRADIENT)
    }

    /// Earth rotation expressed in the local-level frame: (0, ω cos φ, ω sin φ).
    pub fn earth_rate_local(&self, lat: f64) -> Vector3<f64> {
        let (s, c) = lat.sin_cos();
        Vector3::new(0.0, self.rotation_rate * c, self.rotation_rate * s)
    }

    /// Earth-centred, Earth-fixed Cartesian coordinates.
    pub fn to_ecef(&self, p: &Geodetic) -> Vector3<f64> {
        let (sl, cl) = p.lat.sin_cos();
        let (so, co) = p.lon.sin_cos();
        let (_, n) = self.radii(p.lat);
        Vector3::new(
            (n + p.h) * cl * co,
            (n + p.h) * cl * so,
            (n * (1.0 - self.eccentricity_sq) + p.h) * sl,
        )
    }

    /// Rotation from ECEF to the ENU axes at `p`.
    pub fn ecef_to_enu_rotation(&self, p: &Geodetic) -> Matrix3<f64> {
        let (sl, cl) = p.lat.sin_cos();
        let (so, co) = p.lon.sin_cos();
        Matrix3::new(-so, co, 0.0, -sl * co, -sl * so, cl, cl * co, cl * so, sl)
    }
}

const GAMMA_EQUATOR: f64 = 9.780_325_335_9;
const SOMIGLIANA_K: f64 = 0.001_931_852_652_41;
const FREE_AIR_GRADIENT: f64 = 3.086e-6;

/// Body-to-local rotation R_b^l for (pitch, roll, azimuth).
///
/// The second column is the forward axis in ENU: (sin a cos p, cos a cos p, sin p).
pub fn rotation_body_to_local(att: &Attitude) -> Matrix3<f64> {
    let (sp, cp) = att.pitch.sin_cos();
    let (sr, cr) = att.roll.sin_cos();
    let (sa, ca) = att.azimuth.sin_cos();
    Matrix3::new(
        ca * cr + sa * sp * sr,
        sa * cp,
        ca * sr - sa * sp * cr,
        -sa * cr + ca * sp * sr,
        ca * cp,
        -sa * sr - ca * sp * cr,
        -cp * sr,
        sp,
        cp * cr,
    )
}

/// Partial derivatives of R_b^l with respect to pitch, roll and azimuth.
pub fn rotation_body_to_local_derivatives(att: &Attitude) -> [Matrix3<f64>; 3] {
    let (sp, cp) = att.pitch.sin_cos();
    let (sr, cr) = att.roll.sin_cos();
    let (sa, ca) = att.azimuth.sin_cos();
    let d_pitch = Matrix3::new(
        sa * cp * sr,
        -sa * sp,
        -sa * cp * cr,
        ca * cp * sr,
        -ca * sp,
        -ca * cp * cr,
        sp * sr,
        cp,
        -sp * cr,
    );
    let d_roll = Matrix3::new(
        -ca * sr + sa * sp * cr,
        0.0,
        ca * cr + sa * sp * sr,
        sa * sr + ca * sp * cr,
        0.0,
        -sa * cr + ca * sp * sr,
        -cp * cr,
        0.0,
        -cp * sr,
    );
    let d_azimuth = Matrix3::new(
        -sa * cr + ca * sp * sr,
        ca * cp,
        -sa * sr - ca * sp * cr,
        -ca * cr - sa * sp * sr,
        -sa * cp,
        -ca * sr + sa * sp * cr,
        0.0,
        0.0,
        0.0,
    );
    [d_pitch, d_roll, d_azimuth]
}

/// Unit quaternion (scalar first) representing the body-to-local rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, rhs: Quaternion) -> Quaternion {
        Quaternion {
            w: self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            x: self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            y: self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            z: self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        }
    }
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    /// Rotation by `angle` about a unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Representative with non-negative scalar part.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }

    pub fn vector_part(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Left-multiplication matrix: `self * p == left_matrix() * p`.
    pub fn left_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w)
    }

    /// Right-multiplication matrix: `p * self == right_matrix() * p`.
    pub fn right_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(w, -x, -y, -z, x, w, z, -y, y, -z, w, x, z, y, -x, w)
    }

    /// Rotation matrix (R_b^l when the quaternion encodes body-to-local).
    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Partial derivatives of [`Quaternion::to_rotation_matrix`] with respect to (w, x, y, z).
    ///
    /// Valid along directions tangent to the unit sphere.
    pub fn rotation_matrix_derivatives(&self) -> [Matrix3<f64>; 4] {
        let (w, x, y, z) = (2.0 * self.w, 2.0 * self.x, 2.0 * self.y, 2.0 * self.z);
        [
            Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0),
            Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x),
            Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y),
            Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0),
        ]
    }

    /// Rotation matrix to quaternion (Shepperd's method).
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Self {
        let trace = r.trace();
        let q = if trace > r[(0, 0)] && trace > r[(1, 1)] && trace > r[(2, 2)] {
            let s = 2.0 * (1.0 + trace).sqrt();
            Self::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
            Self::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
            Self::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
            Self::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized().canonical()
    }

    /// Attitude angles; at gimbal lock roll is folded into azimuth and set to zero.
    pub fn to_attitude(&self) -> Attitude {
        let r = self.to_rotation_matrix();
        let pitch = r[(2, 1)].clamp(-1.0, 1.0).asin();
        if FRAC_PI_2 - pitch.abs() < GIMBAL_LOCK_MARGIN {
            // forward axis is vertical; recover the heading of the lateral axis instead
            let azimuth = (-r[(1, 0)]).atan2(r[(0, 0)]);
            return Attitude::new(pitch, 0.0, azimuth);
        }
        let roll = (-r[(2, 0)]).atan2(r[(2, 2)]);
        let azimuth = r[(0, 1)].atan2(r[(1, 1)]);
        Attitude::new(pitch, roll, azimuth)
    }
}

/// R_b^l = Rz(−a)·Rx(p)·Ry(r) expressed as a quaternion product.
pub fn quat_from_attitude(att: &Attitude) -> Quaternion {
    let (sa, ca) = (0.5 * att.azimuth).sin_cos();
    let (sp, cp) = (0.5 * att.pitch).sin_cos();
    let (sr, cr) = (0.5 * att.roll).sin_cos();
    let qa = Quaternion::new(ca, 0.0, 0.0, -sa);
    let qp = Quaternion::new(cp, sp, 0.0, 0.0);
    let qr = Quaternion::new(cr, 0.0, sr, 0.0);
    (qa * qp * qr).canonical()
}

/// Jacobian of [`quat_from_attitude`] (before sign canonicalisation) as a 4×3 matrix
/// with columns (pitch, roll, azimuth).
pub fn quat_from_attitude_jacobian(att: &Attitude) -> nalgebra::Matrix4x3<f64> {
    let (sa, ca) = (0.5 * att.azimuth).sin_cos();
    let (sp, cp) = (0.5 * att.pitch).sin_cos();
    let (sr, cr) = (0.5 * att.roll).sin_cos();
    let qa = Quaternion::new(ca, 0.0, 0.0, -sa);
    let qp = Quaternion::new(cp, sp, 0.0, 0.0);
    let qr = Quaternion::new(cr, 0.0, sr, 0.0);
    let dqa = Quaternion::new(-0.5 * sa, 0.0, 0.0, -0.5 * ca);
    let dqp = Quaternion::new(-0.5 * sp, 0.5 * cp, 0.0, 0.0);
    let dqr = Quaternion::new(-0.5 * sr, 0.0, 0.5 * cr, 0.0);
    let sign = if (qa * qp * qr).w < 0.0 { -1.0 } else { 1.0 };
    let d_pitch = (qa * dqp * qr).to_vector() * sign;
    let d_roll = (qa * qp * dqr).to_vector() * sign;
    let d_azimuth = (dqa * qp * qr).to_vector() * sign;
    nalgebra::Matrix4x3::from_columns(&[d_pitch, d_roll, d_azimuth])
}

/// Attitude from a normalised quaternion; fails near ±90° pitch.
pub fn attitude_from_quat(q: &Quaternion) -> Result<Attitude, FrameError> {
    let r = q.to_rotation_matrix();
    let pitch = r[(2, 1)].clamp(-1.0, 1.0).asin();
    if FRAC_PI_2 - pitch.abs() < GIMBAL_LOCK_MARGIN {
        return Err(FrameError::GimbalLock { pitch });
    }
    Ok(q.to_attitude())
}

/// Jacobian of the (pitch, roll, azimuth) extraction with respect to (w, x, y, z).
pub fn attitude_from_quat_jacobian(q: &Quaternion) -> nalgebra::Matrix3x4<f64> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let r = q.to_rotation_matrix();
    let c21 = r[(2, 1)];
    let c20 = r[(2, 0)];
    let c22 = r[(2, 2)];
    let c01 = r[(0, 1)];
    let c11 = r[(1, 1)];
    let d21 = nalgebra::RowVector4::new(2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y);
    let d20 = nalgebra::RowVector4::new(-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x);
    let d22 = nalgebra::RowVector4::new(0.0, -4.0 * x, -4.0 * y, 0.0);
    let d01 = nalgebra::RowVector4::new(-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w);
    let d11 = nalgebra::RowVector4::new(0.0, -4.0 * x, 0.0, -4.0 * z);
    let d_pitch = d21 / (1.0 - c21 * c21).sqrt();
    // roll = atan2(-c20, c22)
    let d_roll = (d20 * (-c22) + d22 * c20) / (c20 * c20 + c22 * c22);
    // azimuth = atan2(c01, c11)
    let d_azimuth = (d01 * c11 - d11 * c01) / (c01 * c01 + c11 * c11);
    nalgebra::Matrix3x4::from_rows(&[d_pitch, d_roll, d_azimuth])
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn wrap_two_pi(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Wrap into (−π, π].
pub fn wrap_pi(angle: f64) -> f64 {
    let a = wrap_two_pi(angle);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Local tangent plane anchored at a geodetic origin.
///
/// The mapping is the small-angle curvilinear one: north is latitude offset
/// times (M+h) at the anchor, east is longitude offset times (N+h)cos φ at the
/// anchor and up is the height difference. It is exactly invertible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub anchor: Geodetic,
    pub earth: EarthModel,
    north_scale: f64,
    east_scale: f64,
}

impl LocalFrame {
    pub fn new(anchor: Geodetic, earth: EarthModel) -> Self {
        let (m, n) = earth.radii(anchor.lat);
        Self {
            anchor,
            earth,
            north_scale: m + anchor.h,
            east_scale: (n + anchor.h) * anchor.lat.cos(),
        }
    }

    /// Meters per radian of latitude and longitude at the anchor.
    pub fn scales(&self) -> (f64, f64) {
        (self.north_scale, self.east_scale)
    }

    pub fn to_local(&self, p: &Geodetic) -> Result<LocalEnu, FrameError> {
        let local = LocalEnu::new(
            wrap_pi(p.lon - self.anchor.lon) * self.east_scale,
            (p.lat - self.anchor.lat) * self.north_scale,
            p.h - self.anchor.h,
        );
        check_range(&local)?;
        Ok(local)
    }

    pub fn to_geodetic(&self, p: &LocalEnu) -> Result<Geodetic, FrameError> {
        check_range(p)?;
        Ok(Geodetic {
            lat: self.anchor.lat + p.n / self.north_scale,
            lon: wrap_pi(self.anchor.lon + p.e / self.east_scale),
            h: self.anchor.h + p.u,
        })
    }
}

fn check_range(p: &LocalEnu) -> Result<(), FrameError> {
    let d = p.to_vector().norm();
    if !(d < MAX_LOCAL_RANGE_M) {
        return Err(FrameError::OutOfRange { distance_m: d });
    }
    Ok(())
}

/// Convenience wrapper over [`LocalFrame::to_local`] with the WGS-84 model.
pub fn geodetic_to_local(p: &Geodetic, anchor: &Geodetic) -> Result<LocalEnu, FrameError> {
    LocalFrame::new(*anchor, EarthModel::wgs84()).to_local(p)
}

pub fn local_to_geodetic(p: &LocalEnu, anchor: &Geodetic) -> Result<Geodetic, FrameError> {
    LocalFrame::new(*anchor, EarthModel::wgs84()).to_geodetic(p)
}
