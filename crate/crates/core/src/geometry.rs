//! Positions, arrival/departure angles, ULA steering vectors, bistatic delay
//! and the 3D bistatic Doppler shift.
//!
//! Doppler sign convention: positive for a closing target,
//! `f_d = (fc/c) · v · (û_tx + û_rx)` where `û` are unit vectors from the
//! target toward each AP. The magnitude equals
//! `(2 ν fc / c) · cos(ψ/2) · cos(χ)` with ψ the bistatic angle and χ the
//! angle between the velocity and the bistatic bisector.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Plain 3-vector in meters or meters/second.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub type Position3 = Vec3;
pub type Velocity3 = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Azimuth φ ∈ [−π, π) and elevation θ ∈ [0, π] measured from +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    pub azimuth: f64,
    pub elevation: f64,
}

impl AnglePair {
    pub fn unit_vector(self) -> Vec3 {
        let (st, ct) = self.elevation.sin_cos();
        let (sp, cp) = self.azimuth.sin_cos();
        Vec3::new(st * cp, st * sp, ct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistaticAngles {
    /// Angle between the two target→AP unit vectors.
    pub psi: f64,
    /// Angle between the velocity and the bisector; 0 for a stationary target.
    pub chi: f64,
    pub bisector: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub c: f64,
    pub fc: f64,
}

impl PhysicalConstants {
    pub fn new(fc: f64) -> Self {
        Self { c: SPEED_OF_LIGHT, fc }
    }

    pub fn wavelength(&self) -> f64 {
        self.c / self.fc
    }
}

const COINCIDENT_TOL: f64 = 1e-9;
const ANTIPODAL_TOL: f64 = 1e-12;

fn unit_towards(from: Position3, to: Position3) -> Result<Vec3> {
    let d = to - from;
    let r = d.norm();
    if r <= COINCIDENT_TOL {
        return Err(Error::DegenerateGeometry(format!("coincident points at {from:?}")));
    }
    Ok(d * (1.0 / r))
}

pub fn angles_to(from: Position3, to: Position3) -> Result<AnglePair> {
    let u = unit_towards(from, to)?;
    let elevation = u.z.clamp(-1.0, 1.0).acos();
    let mut azimuth = if u.x.hypot(u.y) < 1e-15 { 0.0 } else { u.y.atan2(u.x) };
    if azimuth >= PI {
        azimuth -= 2.0 * PI;
    }
    Ok(AnglePair { azimuth, elevation })
}

pub fn bistatic_angles(target: Position3, v: Velocity3, tap: Position3, rap: Position3) -> Result<BistaticAngles> {
    let u_tx = unit_towards(target, tap)?;
    let u_rx = unit_towards(target, rap)?;
    let psi = u_tx.dot(u_rx).clamp(-1.0, 1.0).acos();
    let sum = u_tx + u_rx;
    let len = sum.norm();
    if len < ANTIPODAL_TOL {
        return Err(Error::BisectorUndefined);
    }
    let bisector = sum * (1.0 / len);
    let speed = v.norm();
    let chi = if speed == 0.0 { 0.0 } else { (v.dot(bisector) / speed).clamp(-1.0, 1.0).acos() };
    Ok(BistaticAngles { psi, chi, bisector })
}

/// `(fc/c)(û_tx + û_rx)`: the gradient of the bistatic Doppler with respect to
/// the target velocity. Doppler is linear in velocity for fixed geometry.
pub fn doppler_direction(target: Position3, tap: Position3, rap: Position3, consts: &PhysicalConstants) -> Result<Vec3> {
    let u_tx = unit_towards(target, tap)?;
    let u_rx = unit_towards(target, rap)?;
    Ok((u_tx + u_rx) * (consts.fc / consts.c))
}

pub fn bistatic_doppler(
    target: Position3,
    v: Velocity3,
    tap: Position3,
    rap: Position3,
    consts: &PhysicalConstants,
) -> Result<f64> {
    Ok(doppler_direction(target, tap, rap, consts)?.dot(v))
}

/// Closed form `(2ν fc/c) cos(ψ/2) cos(χ)`, signed like [`bistatic_doppler`].
pub fn bistatic_doppler_angular(
    target: Position3,
    v: Velocity3,
    tap: Position3,
    rap: Position3,
    consts: &PhysicalConstants,
) -> Result<f64> {
    let ang = bistatic_angles(target, v, tap, rap)?;
    Ok(2.0 * v.norm() * consts.fc / consts.c * (ang.psi / 2.0).cos() * ang.chi.cos())
}

pub fn bistatic_delay(target: Position3, tap: Position3, rap: Position3, consts: &PhysicalConstants) -> f64 {
    (tap.distance(target) + target.distance(rap)) / consts.c
}

/// Axis along which the ULA elements are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArrayAxis {
    #[default]
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArraySpec {
    pub axis: ArrayAxis,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self { axis: ArrayAxis::X, spacing: 0.5 }
    }
}

pub fn steering_vector(angles: AnglePair, n_antennas: usize, array: &ArraySpec) -> Vec<Complex64> {
    let u = angles.unit_vector();
    let cosine = match array.axis {
        ArrayAxis::X => u.x,
        ArrayAxis::Y => u.y,
        ArrayAxis::Z => u.z,
    };
    let step = 2.0 * PI * array.spacing * cosine;
    (0..n_antennas).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect()
}

/// Steering vector of the array at `ap` toward `point`.
pub fn steering_towards(ap: Position3, point: Position3, n_antennas: usize, array: &ArraySpec) -> Result<Vec<Complex64>> {
    Ok(steering_vector(angles_to(ap, point)?, n_antennas, array))
}
