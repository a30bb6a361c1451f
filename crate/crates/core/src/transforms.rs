//! Rigid-body transform parameters for SE(2) and SE(3).
//!
//! A transform is a flat parameter vector: `(tx, ty, θ)` for SE(2) and
//! `(tx, ty, tz, roll, pitch, yaw)` for SE(3), plus a rotation center. A point
//! maps as `p ↦ R (p − center) + center + t`. Velocities are only rotated.
//!
//! SE(3) rotations use intrinsic roll-pitch-yaw: rotate about x, then the new
//! y, then the new z, i.e. `R = Rx(roll) · Ry(pitch) · Rz(yaw)`. Every angle is
//! confined to `[−π/2, π/2]`, which makes the parameterization unique and the
//! parameter-space distance a metric.
//!
//! Points are stored as 3-vectors throughout the crate; planar data keeps
//! `z = 0` and SE(2) leaves the z coordinate untouched.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Slack allowed on the ±π/2 angle bound to absorb rounding.
const ANGLE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Se2,
    Se3,
}

impl TransformKind {
    pub fn from_dim(d: usize) -> Result<Self> {
        match d {
            3 => Ok(Self::Se2),
            6 => Ok(Self::Se3),
            other => Err(Error::UnsupportedDimension(other)),
        }
    }

    /// Number of parameters.
    pub fn dim(self) -> usize {
        match self {
            Self::Se2 => 3,
            Self::Se3 => 6,
        }
    }

    /// Dimension of the space the transform acts on.
    pub fn spatial_dim(self) -> usize {
        match self {
            Self::Se2 => 2,
            Self::Se3 => 3,
        }
    }

    pub fn translation_dims(self) -> std::ops::Range<usize> {
        0..self.spatial_dim()
    }

    pub fn angle_dims(self) -> std::ops::Range<usize> {
        self.spatial_dim()..self.dim()
    }

    pub fn is_angle(self, i: usize) -> bool {
        i >= self.spatial_dim() && i < self.dim()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct TransformParams {
    kind: TransformKind,
    values: Vec<f64>,
    center: Point,
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    values: Vec<f64>,
    center: Vec<f64>,
}

impl TryFrom<RawTransform> for TransformParams {
    type Error = Error;

    fn try_from(raw: RawTransform) -> Result<Self> {
        let kind = TransformKind::from_dim(raw.values.len())?;
        let center = point_from_coords(&raw.center, kind.spatial_dim())?;
        TransformParams::new(raw.values, center)
    }
}

impl From<TransformParams> for RawTransform {
    fn from(t: TransformParams) -> Self {
        let sd = t.kind.spatial_dim();
        RawTransform {
            values: t.values,
            center: t.center.as_slice()[..sd].to_vec(),
        }
    }
}

/// Converts a coordinate slice of length `dim` (2 or 3) into a point.
pub fn point_from_coords(coords: &[f64], dim: usize) -> Result<Point> {
    if coords.len() != dim || !(dim == 2 || dim == 3) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: coords.len(),
        });
    }
    let z = if dim == 3 { coords[2] } else { 0.0 };
    Ok(Point::new(coords[0], coords[1], z))
}

pub fn point_to_coords(p: &Point, dim: usize) -> Vec<f64> {
    p.as_slice()[..dim].to_vec()
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

impl TransformParams {
    pub fn new(values: Vec<f64>, center: Point) -> Result<Self> {
        let kind = TransformKind::from_dim(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite transform value".into()));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite rotation center".into()));
        }
        for i in kind.angle_dims() {
            if values[i].abs() > FRAC_PI_2 + ANGLE_SLACK {
                return Err(Error::InvalidArgument(format!(
                    "angle component {i} = {} outside [-pi/2, pi/2]",
                    values[i]
                )));
            }
        }
        Ok(Self { kind, values, center })
    }

    /// The zero-parameter transform.
    pub fn identity(d: usize, center: Point) -> Result<Self> {
        Self::new(vec![0.0; d], center)
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn is_identity(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Replaces the parameter vector, keeping kind and center.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: values.len(),
            });
        }
        Self::new(values, self.center)
    }

    pub fn translation(&self) -> Point {
        match self.kind {
            TransformKind::Se2 => Point::new(self.values[0], self.values[1], 0.0),
            TransformKind::Se3 => Point::new(self.values[0], self.values[1], self.values[2]),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        match self.kind {
            TransformKind::Se2 => rot_z(self.values[2]),
            TransformKind::Se3 => rot_x(self.values[3]) * rot_y(self.values[4]) * rot_z(self.values[5]),
        }
    }

    /// Partial derivatives of the rotation matrix, one per angle parameter.
    fn rotation_partials(&self) -> Vec<Matrix3<f64>> {
        match self.kind {
            TransformKind::Se2 => vec![drot_z(self.values[2])],
            TransformKind::Se3 => {
                let (r, p, y) = (self.values[3], self.values[4], self.values[5]);
                let (rx, ry, rz) = (rot_x(r), rot_y(p), rot_z(y));
                vec![drot_x(r) * ry * rz, rx * drot_y(p) * rz, rx * ry * drot_z(y)]
            }
        }
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        self.rotation() * (p - self.center) + self.center + self.translation()
    }

    pub fn apply_vector(&self, v: &Point) -> Point {
        self.rotation() * v
    }

    /// Transforms positions and, when given, rotates velocities.
    pub fn apply_to_points(&self, points: &[Point], velocities: Option<&[Point]>) -> (Vec<Point>, Option<Vec<Point>>) {
        let rot = self.rotation();
        let shift = self.center + self.translation();
        let moved = points.iter().map(|p| rot * (p - self.center) + shift).collect();
        let vels = velocities.map(|vs| vs.iter().map(|v| rot * v).collect());
        (moved, vels)
    }

    /// Coordinate-level variant of [`Self::apply_to_points`]; each entry must
    /// have the spatial dimension of the transform.
    pub fn apply_to_coords(&self, coords: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let sd = self.kind.spatial_dim();
        coords
            .iter()
            .map(|c| {
                let p = point_from_coords(c, sd)?;
                Ok(point_to_coords(&self.apply_point(&p), sd))
            })
            .collect()
    }

    /// Maps a transformed point back to where it came from.
    pub fn apply_inverse_point(&self, q: &Point) -> Point {
        self.rotation().transpose() * (q - self.center - self.translation()) + self.center
    }

    /// Columns of `∂apply_point(p)/∂values`, one 3-vector per parameter.
    pub fn point_jacobian(&self, p: &Point) -> Vec<Point> {
        let sd = self.kind.spatial_dim();
        let rel = p - self.center;
        let mut cols = Vec::with_capacity(self.dim());
        for i in 0..sd {
            let mut e = Point::zeros();
            e[i] = 1.0;
            cols.push(e);
        }
        cols.extend(self.rotation_partials().into_iter().map(|dr| dr * rel));
        cols
    }

    /// Accumulates `Jᵀ g` for a point-space gradient `g` at original point
    /// `p` into `out`.
    pub fn pullback_into(&self, partials: &[Matrix3<f64>], p: &Point, g: &Point, out: &mut [f64]) {
        let sd = self.kind.spatial_dim();
        for i in 0..sd {
            out[i] += g[i];
        }
        let rel = p - self.center;
        for (k, dr) in partials.iter().enumerate() {
            out[sd + k] += g.dot(&(dr * rel));
        }
    }

    /// Precomputed rotation partials for repeated [`Self::pullback_into`] calls.
    pub fn partials(&self) -> Vec<Matrix3<f64>> {
        self.rotation_partials()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }

    /// Weighted Euclidean distance in parameter space. Angle differences are
    /// scaled by `rot_weight` (meters per radian).
    pub fn distance(&self, other: &Self, rot_weight: f64) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(weighted_norm(self.kind, &self.values, &other.values, rot_weight))
    }

    /// Moves toward `target` along the straight parameter-space line by at most
    /// `max_step`. Returns `target` itself once it is within reach.
    pub fn step_towards(&self, target: &Self, max_step: f64, rot_weight: f64) -> Result<Self> {
        if !(max_step >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "max_step must be non-negative, got {max_step}"
            )));
        }
        let dist = self.distance(target, rot_weight)?;
        if dist <= max_step {
            return Ok(Self {
                kind: self.kind,
                values: target.values.clone(),
                center: self.center,
            });
        }
        let frac = max_step / dist;
        let values = self
            .values
            .iter()
            .zip(&target.values)
            .map(|(a, b)| a + (b - a) * frac)
            .collect();
        Ok(Self {
            kind: self.kind,
            values,
            center: self.center,
        })
    }
}

fn weighted_norm(kind: TransformKind, a: &[f64], b: &[f64], rot_weight: f64) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let w = if kind.is_angle(i) { rot_weight } else { 1.0 };
            let d = w * (x - y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Box `[lower, upper]` on the transform parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct TransformBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBounds> for TransformBounds {
    type Error = Error;

    fn try_from(raw: RawBounds) -> Result<Self> {
        TransformBounds::new(raw.lower, raw.upper)
    }
}

impl From<TransformBounds> for RawBounds {
    fn from(b: TransformBounds) -> Self {
        RawBounds {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl TransformBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        let kind = TransformKind::from_dim(lower.len())?;
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite()) || lower[i] > upper[i] {
                return Err(Error::InvalidArgument(format!(
                    "bounds component {i}: [{}, {}] is not a valid interval",
                    lower[i], upper[i]
                )));
            }
            if kind.is_angle(i) && (lower[i] < -FRAC_PI_2 - ANGLE_SLACK || upper[i] > FRAC_PI_2 + ANGLE_SLACK) {
                return Err(Error::InvalidArgument(format!(
                    "angle bounds component {i} exceed [-pi/2, pi/2]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `±translation` on every translation axis and `±angle` on every angle.
    pub fn symmetric(kind: TransformKind, translation: f64, angle: f64) -> Result<Self> {
        let upper: Vec<f64> = (0..kind.dim())
            .map(|i| if kind.is_angle(i) { angle } else { translation })
            .collect();
        let lower = upper.iter().map(|v| -v).collect();
        Self::new(lower, upper)
    }

    /// Both bounds pinned at zero.
    pub fn degenerate(kind: TransformKind) -> Self {
        Self {
            lower: vec![0.0; kind.dim()],
            upper: vec![0.0; kind.dim()],
        }
    }

    pub fn kind(&self) -> TransformKind {
        TransformKind::from_dim(self.lower.len()).expect("validated on construction")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `[α·lower, α·upper]`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(
            self.lower.iter().map(|v| v * alpha).collect(),
            self.upper.iter().map(|v| v * alpha).collect(),
        )
    }

    pub fn contains(&self, t: &TransformParams) -> bool {
        t.dim() == self.dim()
            && t.values()
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp_values(&self, values: &mut [f64]) {
        for (v, (lo, hi)) in values.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Draws each component independently and uniformly from its interval.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, center: Point, rng: &mut R) -> TransformParams {
        let values = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        TransformParams::new(values, center).expect("sample lies inside validated bounds")
    }
}
