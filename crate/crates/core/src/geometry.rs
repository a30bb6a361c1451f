//! Signed-distance fields over the stationary environment.
//!
//! The environment is a set of primitives (discs/spheres and axis-aligned
//! boxes). [`EnvironmentField`] samples their exact signed distance on a
//! regular grid and answers multilinear queries. Voxel `i` along an axis is
//! centered at `origin + i · resolution`.
//!
//! Negative values are inside obstacles. A point is occupied iff its
//! interpolated distance is `≤ 0` (the boundary counts as occupied).
//!
//! `clearance` shifts every value down by a constant. Planar scenes store
//! disc centers as their points, so inflating obstacles by the disc radius
//! turns "disc touches obstacle" into "center is occupied".

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    /// Disc in 2D, sphere in 3D.
    Disc {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        min: Vec<f64>,
        max: Vec<f64>,
    },
}

impl Primitive {
    pub fn dim(&self) -> usize {
        match self {
            Primitive::Disc { center, .. } => center.len(),
            Primitive::Box { min, .. } => min.len(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.dim(),
            });
        }
        match self {
            Primitive::Disc { center, radius } => {
                if !(*radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "disc needs a finite center and positive radius, got r={radius}"
                    )));
                }
            }
            Primitive::Box { min, max } => {
                if max.len() != min.len() || min.iter().zip(max).any(|(a, b)| !(a < b)) {
                    return Err(Error::InvalidArgument(
                        "box min corner must be strictly below max corner".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Exact signed distance to the primitive surface.
    pub fn signed_distance(&self, p: &Point) -> f64 {
        match self {
            Primitive::Disc { center, radius } => {
                let d2: f64 = center.iter().enumerate().map(|(i, c)| (p[i] - c).powi(2)).sum();
                d2.sqrt() - radius
            }
            Primitive::Box { min, max } => {
                let mut outside2 = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for i in 0..min.len() {
                    let c = 0.5 * (min[i] + max[i]);
                    let half = 0.5 * (max[i] - min[i]);
                    let q = (p[i] - c).abs() - half;
                    if q > 0.0 {
                        outside2 += q * q;
                    }
                    inside = inside.max(q);
                }
                outside2.sqrt() + inside.min(0.0)
            }
        }
    }

    /// Unit gradient of [`Self::signed_distance`]. Inside a box this is the
    /// outward normal of the nearest face.
    pub fn normal(&self, p: &Point) -> Point {
        let dim = self.dim();
        let mut n = Point::zeros();
        match self {
            Primitive::Disc { center, .. } => {
                for i in 0..dim {
                    n[i] = p[i] - center[i];
                }
            }
            Primitive::Box { min, max } => {
                let mut best = (f64::NEG_INFINITY, 0usize, 1.0);
                for i in 0..dim {
                    let c = 0.5 * (min[i] + max[i]);
                    let half = 0.5 * (max[i] - min[i]);
                    let off = p[i] - c;
                    let q = off.abs() - half;
                    let sign = if off < 0.0 { -1.0 } else { 1.0 };
                    if q > 0.0 {
                        n[i] = sign * q;
                    }
                    if q > best.0 {
                        best = (q, i, sign);
                    }
                }
                if best.0 <= 0.0 {
                    n[best.1] = best.2;
                }
            }
        }
        let norm = n.norm();
        if norm > 0.0 {
            n / norm
        } else {
            let mut e = Point::zeros();
            e[0] = 1.0;
            e
        }
    }

    /// Grows the primitive by `margin` (disc radius, box half extents).
    pub fn inflated(&self, margin: f64) -> Primitive {
        match self {
            Primitive::Disc { center, radius } => Primitive::Disc {
                center: center.clone(),
                radius: radius + margin,
            },
            Primitive::Box { min, max } => Primitive::Box {
                min: min.iter().map(|v| v - margin).collect(),
                max: max.iter().map(|v| v + margin).collect(),
            },
        }
    }
}

/// Axis-aligned state bounds `[s⁻, s⁺]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Workspace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidArgument("workspace lower must not exceed upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Largest amount by which `p` sticks out of the bounds (0 when inside).
    pub fn violation(&self, p: &Point) -> f64 {
        (0..self.dim())
            .map(|i| (p[i] - self.upper[i]).max(self.lower[i] - p[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, p: &Point, slack: f64) -> bool {
        self.violation(p) <= slack
    }

    /// Signed distance from `p` to the nearest face, positive inside.
    pub fn margin(&self, p: &Point) -> f64 {
        (0..self.dim())
            .map(|i| (p[i] - self.lower[i]).min(self.upper[i] - p[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec<f64>,
    pub resolution: f64,
    pub extents: Vec<usize>,
}

/// On-disk environment description. The grid is rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    #[serde(default)]
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
    pub grid: GridSpec,
    pub workspace: Workspace,
    #[serde(default)]
    pub clearance: f64,
}

impl EnvironmentSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn build(&self) -> Result<EnvironmentField> {
        self.build_with(&[])
    }

    /// Builds the field with extra primitives (stationary objects) folded in.
    pub fn build_with(&self, extra: &[Primitive]) -> Result<EnvironmentField> {
        let prims: Vec<Primitive> = self.primitives.iter().chain(extra).cloned().collect();
        let mut field = build_field(
            &prims,
            &self.grid.origin,
            self.grid.resolution,
            &self.grid.extents,
            self.workspace.clone(),
        )?;
        if self.clearance != 0.0 {
            field.apply_clearance(self.clearance);
        }
        Ok(field)
    }
}

/// Interpolated distance plus a flag set when the query left the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfSample {
    pub value: f64,
    pub gradient: Point,
    pub out_of_grid: bool,
}

#[derive(Clone, Debug)]
pub struct EnvironmentField {
    dim: usize,
    origin: Point,
    resolution: f64,
    /// Voxel counts; unused axes hold 1.
    extents: [usize; 3],
    sdf: Vec<f64>,
    workspace: Workspace,
    primitives: Vec<Primitive>,
    cap: f64,
    clearance: f64,
}

/// Samples the exact signed distance of the primitive union at every voxel
/// center. Values are capped at the grid diagonal, so an empty primitive set
/// yields a constant field.
pub fn build_field(
    primitives: &[Primitive],
    origin: &[f64],
    resolution: f64,
    extents: &[usize],
    workspace: Workspace,
) -> Result<EnvironmentField> {
    let dim = origin.len();
    if !(dim == 2 || dim == 3) {
        return Err(Error::InvalidArgument(format!(
            "grid dimension must be 2 or 3, got {dim}"
        )));
    }
    if extents.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: extents.len(),
        });
    }
    if workspace.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: workspace.dim(),
        });
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    if extents.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 2 voxels per axis, got {extents:?}"
        )));
    }
    for p in primitives {
        p.validate(dim)?;
    }
    let mut ext = [1usize; 3];
    ext[..dim].copy_from_slice(extents);
    let mut o = Point::zeros();
    for i in 0..dim {
        o[i] = origin[i];
    }
    let cap = resolution * ext[..dim].iter().map(|&n| ((n - 1) as f64).powi(2)).sum::<f64>().sqrt();

    let mut sdf = Vec::with_capacity(ext[0] * ext[1] * ext[2]);
    for iz in 0..ext[2] {
        for iy in 0..ext[1] {
            for ix in 0..ext[0] {
                let p = o + Vector3::new(ix as f64, iy as f64, iz as f64) * resolution;
                let d = primitives
                    .iter()
                    .map(|prim| prim.signed_distance(&p))
                    .fold(f64::INFINITY, f64::min);
                sdf.push(d.min(cap));
            }
        }
    }
    Ok(EnvironmentField {
        dim,
        origin: o,
        resolution,
        extents: ext,
        sdf,
        workspace,
        primitives: primitives.to_vec(),
        cap,
        clearance: 0.0,
    })
}

impl EnvironmentField {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> &Point {
        &self.origin
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents[..self.dim]
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    fn apply_clearance(&mut self, clearance: f64) {
        for v in &mut self.sdf {
            *v -= clearance;
        }
        self.clearance += clearance;
    }

    /// Far corner of the grid (center of the last voxel).
    pub fn upper_corner(&self) -> Point {
        let mut c = self.origin;
        for i in 0..self.dim {
            c[i] += (self.extents[i] - 1) as f64 * self.resolution;
        }
        c
    }

    pub fn in_grid(&self, p: &Point) -> bool {
        let hi = self.upper_corner();
        (0..self.dim).all(|i| p[i] >= self.origin[i] && p[i] <= hi[i])
    }

    /// Value stored at voxel `idx` (unused axes ignored).
    pub fn voxel(&self, idx: [usize; 3]) -> f64 {
        self.sdf[idx[0] + self.extents[0] * (idx[1] + self.extents[1] * idx[2])]
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> Point {
        let mut p = self.origin;
        for i in 0..self.dim {
            p[i] += idx[i] as f64 * self.resolution;
        }
        p
    }

    /// Exact distance to the primitive union, with the same cap and
    /// clearance as the grid. Independent of the voxel samples.
    pub fn exact_distance(&self, p: &Point) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
            .min(self.cap)
            - self.clearance
    }

    /// Multilinear value and its gradient. Points outside the grid are
    /// clamped onto it and flagged.
    pub fn sample(&self, p: &Point) -> SdfSample {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut out_of_grid = false;
        for i in 0..self.dim {
            let n = self.extents[i];
            let u = (p[i] - self.origin[i]) / self.resolution;
            let max_u = (n - 1) as f64;
            let uc = if u < 0.0 || u > max_u || !u.is_finite() {
                out_of_grid = true;
                if u.is_nan() {
                    0.0
                } else {
                    u.clamp(0.0, max_u)
                }
            } else {
                u
            };
            let i0 = (uc.floor() as usize).min(n - 2);
            base[i] = i0;
            frac[i] = uc - i0 as f64;
        }

        let corners = 1usize << self.dim;
        let mut value = 0.0;
        let mut grad = Point::zeros();
        for c in 0..corners {
            let mut idx = base;
            let mut w = 1.0;
            let mut dw = [1.0f64; 3];
            for i in 0..self.dim {
                let bit = (c >> i) & 1;
                idx[i] += bit;
                let (wi, dwi) = if bit == 1 {
                    (frac[i], 1.0)
                } else {
                    (1.0 - frac[i], -1.0)
                };
                w *= wi;
                for (j, d) in dw.iter_mut().enumerate().take(self.dim) {
                    *d *= if j == i { dwi } else { wi };
                }
            }
            let v = self.voxel(idx);
            value += w * v;
            for j in 0..self.dim {
                grad[j] += dw[j] * v;
            }
        }
        SdfSample {
            value,
            gradient: grad / self.resolution,
            out_of_grid,
        }
    }

    /// Interpolated signed distance and out-of-grid flag.
    pub fn sdf_query(&self, p: &Point) -> (f64, bool) {
        let s = self.sample(p);
        (s.value, s.out_of_grid)
    }

    /// Gradient of the interpolant and out-of-grid flag.
    pub fn sdf_gradient(&self, p: &Point) -> (Point, bool) {
        let s = self.sample(p);
        (s.gradient, s.out_of_grid)
    }

    pub fn occupancy(&self, p: &Point) -> bool {
        self.sample(p).value <= 0.0
    }
}

/// Index and value of the point with the smallest signed distance. Ties go to
/// the lowest index.
pub fn min_distance_point(field: &EnvironmentField, points: &[Point]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let (v, _) = field.sdf_query(p);
        match best {
            Some((_, bv)) if v >= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.ok_or(Error::Empty("min_distance_point needs at least one point"))
}
