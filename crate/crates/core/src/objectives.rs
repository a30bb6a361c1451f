//! Projection objective terms and their gradients with respect to the
//! transform parameters.
//!
//! All four terms are evaluated on the moved-object points after applying the
//! candidate transform:
//!
//! * `bbox`: hinge penalty on every coordinate outside the workspace.
//! * `valid`: learned penalty on the transform itself.
//! * `occ`: occupancy preservation. The gradient is defined per point:
//!   a point whose occupancy differs from the original is pulled along
//!   `SDF(p̃)·∇SDF(p̃)`, toward the surface when it left contact and out of
//!   the obstacle when it penetrates. Points that agree contribute nothing.
//!   The reported scalar is `Σ |SDF(p̃)|` over mismatched points.
//! * `dmd`: squared change of the signed distance of the original
//!   closest-to-environment point. The argmin is fixed on the original data.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Example, DEFAULT_MOVE_THRESHOLD};
use crate::error::{Error, Result};
use crate::geometry::{min_distance_point, EnvironmentField, Workspace};
use crate::transforms::{Point, TransformBounds, TransformParams};
use crate::validlearn::ValidityModel;

/// `(β₁, β₂, β₃, β₄)` for bbox, valid, occ and dmd.
pub const DEFAULT_BETA: [f64; 4] = [0.05, 1.0, 1.0, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Bbox,
    Valid,
    Occ,
    Dmd,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Bbox, Term::Valid, Term::Occ, Term::Dmd];

    pub fn name(self) -> &'static str {
        match self {
            Term::Bbox => "bbox",
            Term::Valid => "valid",
            Term::Occ => "occ",
            Term::Dmd => "dmd",
        }
    }
}

impl std::str::FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bbox" => Ok(Term::Bbox),
            "valid" => Ok(Term::Valid),
            "occ" => Ok(Term::Occ),
            "dmd" => Ok(Term::Dmd),
            other => Err(Error::InvalidArgument(format!("unknown objective term '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub beta: [f64; 4],
    pub bounds: TransformBounds,
    /// Overrides the environment's workspace when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workspace: Option<Workspace>,
    /// Ablated terms; their contribution to value and gradient is zero.
    #[serde(default)]
    pub drop: BTreeSet<Term>,
}

impl ObjectiveConfig {
    pub fn new(bounds: TransformBounds) -> Self {
        Self {
            beta: DEFAULT_BETA,
            bounds,
            workspace: None,
            drop: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "objective weights must be finite and non-negative, got {:?}",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn weight(&self, term: Term) -> f64 {
        if self.drop.contains(&term) {
            return 0.0;
        }
        match term {
            Term::Bbox => self.beta[0],
            Term::Valid => self.beta[1],
            Term::Occ => self.beta[2],
            Term::Dmd => self.beta[3],
        }
    }

    pub fn is_active(&self, term: Term) -> bool {
        !self.drop.contains(&term)
    }
}

/// Raw term values, the weighted total over active terms and its gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub bbox: f64,
    pub valid: f64,
    pub occ_residual: f64,
    pub occ_mismatch: usize,
    pub dmd: f64,
    /// `|SDF(p_min) − SDF(p̃_min)|`.
    pub dmd_abs: f64,
    pub total: f64,
    pub gradient: Vec<f64>,
    /// The weighted validity term's share of `gradient`.
    #[serde(default)]
    pub valid_gradient: Vec<f64>,
    pub out_of_grid: usize,
}

impl ObjectiveReport {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }
}

fn hinge_grad(x: f64, lo: f64, hi: f64) -> (f64, f64) {
    if x > hi {
        (x - hi, 1.0)
    } else if x < lo {
        (lo - x, -1.0)
    } else {
        (0.0, 0.0)
    }
}

fn check_dims(t: &TransformParams, field_dim: usize) -> Result<()> {
    if t.kind().spatial_dim() != field_dim {
        return Err(Error::DimensionMismatch {
            expected: field_dim,
            actual: t.kind().spatial_dim(),
        });
    }
    Ok(())
}

/// `Σ max(0, s̃ − s⁺) + max(0, s⁻ − s̃)` over every coordinate, with its
/// gradient through the transform. `points` are the untransformed points.
pub fn bbox_loss(t: &TransformParams, points: &[Point], workspace: &Workspace) -> (f64, Vec<f64>) {
    let partials = t.partials();
    let mut grad = vec![0.0; t.dim()];
    let mut value = 0.0;
    let (aug, _) = t.apply_to_points(points, None);
    for (p, q) in points.iter().zip(&aug) {
        let mut g = Point::zeros();
        for i in 0..workspace.dim() {
            let (v, d) = hinge_grad(q[i], workspace.lower[i], workspace.upper[i]);
            value += v;
            g[i] = d;
        }
        if g != Point::zeros() {
            t.pullback_into(&partials, p, &g, &mut grad);
        }
    }
    (value, grad)
}

/// Model prediction and input gradient; zero without a model.
pub fn valid_loss(t: &TransformParams, model: Option<&ValidityModel>) -> Result<(f64, Vec<f64>)> {
    match model {
        Some(m) => m.evaluate_with_gradient(t),
        None => Ok((0.0, vec![0.0; t.dim()])),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGradient {
    pub mismatch: usize,
    pub residual: f64,
    pub gradient: Vec<f64>,
}

/// Occupancy-restoring gradient for the transformed points.
pub fn occ_gradient(t: &TransformParams, points: &[Point], field: &EnvironmentField) -> Result<OccupancyGradient> {
    check_dims(t, field.dim())?;
    let partials = t.partials();
    let (aug, _) = t.apply_to_points(points, None);
    let mut out = OccupancyGradient {
        mismatch: 0,
        residual: 0.0,
        gradient: vec![0.0; t.dim()],
    };
    for (p, q) in points.iter().zip(&aug) {
        let orig = field.occupancy(p);
        let s = field.sample(q);
        if orig != (s.value <= 0.0) {
            out.mismatch += 1;
            out.residual += s.value.abs();
            t.pullback_into(&partials, p, &(s.gradient * s.value), &mut out.gradient);
        }
    }
    Ok(out)
}

/// `(SDF(p_min) − SDF(p̃_min))²` with `p_min` the original argmin.
pub fn dmd_loss(t: &TransformParams, points: &[Point], field: &EnvironmentField) -> Result<(f64, Vec<f64>)> {
    check_dims(t, field.dim())?;
    let (idx, orig) = min_distance_point(field, points)?;
    let q = t.apply_point(&points[idx]);
    let s = field.sample(&q);
    let diff = s.value - orig;
    let mut grad = vec![0.0; t.dim()];
    t.pullback_into(&t.partials(), &points[idx], &(s.gradient * (2.0 * diff)), &mut grad);
    Ok((diff * diff, grad))
}

/// `Σ ‖p^c_r − p^c_s‖²` over aligned contact pairs.
pub fn robot_contact_loss(robot_contacts: &[Point], object_contacts: &[Point]) -> Result<f64> {
    if robot_contacts.len() != object_contacts.len() {
        return Err(Error::DimensionMismatch {
            expected: robot_contacts.len(),
            actual: object_contacts.len(),
        });
    }
    Ok(robot_contacts
        .iter()
        .zip(object_contacts)
        .map(|(a, b)| (a - b).norm_squared())
        .sum())
}

/// Precomputed state of one projection problem: the original moved points,
/// their occupancy bits and the fixed near-contact point.
#[derive(Clone, Debug)]
pub struct ProjectionProblem<'a> {
    field: &'a EnvironmentField,
    config: &'a ObjectiveConfig,
    model: Option<&'a ValidityModel>,
    workspace: &'a Workspace,
    points: Vec<Point>,
    occupied: Vec<bool>,
    min_index: usize,
    min_sdf: f64,
}

impl<'a> ProjectionProblem<'a> {
    pub fn new(
        points: Vec<Point>,
        field: &'a EnvironmentField,
        config: &'a ObjectiveConfig,
        model: Option<&'a ValidityModel>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(m) = model {
            if m.dim() != config.bounds.dim() {
                return Err(Error::DimensionMismatch {
                    expected: config.bounds.dim(),
                    actual: m.dim(),
                });
            }
        }
        if config.bounds.kind().spatial_dim() != field.dim() {
            return Err(Error::DimensionMismatch {
                expected: field.dim(),
                actual: config.bounds.kind().spatial_dim(),
            });
        }
        let (min_index, min_sdf) = min_distance_point(field, &points)?;
        let occupied = points.iter().map(|p| field.occupancy(p)).collect();
        let workspace = config.workspace.as_ref().unwrap_or(field.workspace());
        Ok(Self {
            field,
            config,
            model,
            workspace,
            points,
            occupied,
            min_index,
            min_sdf,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    pub fn min_index(&self) -> usize {
        self.min_index
    }

    pub fn min_sdf(&self) -> f64 {
        self.min_sdf
    }

    pub fn config(&self) -> &ObjectiveConfig {
        self.config
    }

    pub fn field(&self) -> &EnvironmentField {
        self.field
    }

    /// Evaluates every term in a single pass over the points.
    pub fn evaluate(&self, t: &TransformParams) -> Result<ObjectiveReport> {
        if t.dim() != self.config.bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.bounds.dim(),
                actual: t.dim(),
            });
        }
        let w_bbox = self.config.weight(Term::Bbox);
        let w_valid = self.config.weight(Term::Valid);
        let w_occ = self.config.weight(Term::Occ);
        let w_dmd = self.config.weight(Term::Dmd);

        let rot = t.rotation();
        let shift = t.center() + t.translation();
        let partials = t.partials();
        let mut grad = vec![0.0; t.dim()];
        let (mut bbox, mut occ_residual, mut occ_mismatch) = (0.0, 0.0, 0usize);
        let (mut dmd, mut dmd_abs, mut out_of_grid) = (0.0, 0.0, 0usize);

        for (i, p) in self.points.iter().enumerate() {
            let q = rot * (p - t.center()) + shift;
            let mut g = Point::zeros();
            for k in 0..self.workspace.dim() {
                let (v, d) = hinge_grad(q[k], self.workspace.lower[k], self.workspace.upper[k]);
                bbox += v;
                g[k] += w_bbox * d;
            }
            let s = self.field.sample(&q);
            if s.out_of_grid {
                out_of_grid += 1;
            }
            if self.occupied[i] != (s.value <= 0.0) {
                occ_mismatch += 1;
                occ_residual += s.value.abs();
                g += s.gradient * (w_occ * s.value);
            }
            if i == self.min_index {
                let diff = s.value - self.min_sdf;
                dmd = diff * diff;
                dmd_abs = diff.abs();
                g += s.gradient * (w_dmd * 2.0 * diff);
            }
            if g != Point::zeros() {
                t.pullback_into(&partials, p, &g, &mut grad);
            }
        }

        let (valid, mut valid_grad) = valid_loss(t, self.model)?;
        for (g, v) in grad.iter_mut().zip(valid_grad.iter_mut()) {
            *v *= w_valid;
            *g += *v;
        }

        let total = w_bbox * bbox + w_valid * valid + w_occ * occ_residual + w_dmd * dmd;
        Ok(ObjectiveReport {
            bbox,
            valid,
            occ_residual,
            occ_mismatch,
            dmd,
            dmd_abs,
            total,
            gradient: grad,
            valid_gradient: valid_grad,
            out_of_grid,
        })
    }
}

/// Builds the projection problem for an example's moved objects and
/// evaluates it at `t`.
pub fn combined_projection_objective(
    t: &TransformParams,
    example: &Example,
    field: &EnvironmentField,
    config: &ObjectiveConfig,
    model: Option<&ValidityModel>,
) -> Result<ObjectiveReport> {
    let (moved, _) = example.decompose_moving(DEFAULT_MOVE_THRESHOLD);
    let points: Vec<Point> = example.extract_points(&moved).iter().map(|p| p.position).collect();
    ProjectionProblem::new(points, field, config, model)?.evaluate(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_field, Primitive};
    use crate::transforms::TransformKind;

    fn p2(x: f64, y: f64) -> Point {
        Point::new(x, y, 0.0)
    }

    fn ws() -> Workspace {
        Workspace::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    fn disc_field() -> EnvironmentField {
        build_field(
            &[Primitive::Disc {
                center: vec![0.0, 0.0],
                radius: 0.2,
            }],
            &[-1.5, -1.5],
            0.01,
            &[301, 301],
            ws(),
        )
        .unwrap()
    }

    fn tp(v: &[f64]) -> TransformParams {
        TransformParams::new(v.to_vec(), Point::zeros()).unwrap()
    }

    fn cfg() -> ObjectiveConfig {
        ObjectiveConfig::new(TransformBounds::symmetric(TransformKind::Se2, 1.0, 1.5).unwrap())
    }

    #[test]
    fn default_weights() {
        assert_eq!(DEFAULT_BETA, [0.05, 1.0, 1.0, 0.1]);
        assert_eq!(cfg().beta, DEFAULT_BETA);
    }

    #[test]
    fn bbox_hinge_values() {
        let id = tp(&[0.0; 3]);
        let (v, g) = bbox_loss(&id, &[p2(0.5, -0.2)], &ws());
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let (v, _) = bbox_loss(&id, &[p2(1.2, 0.0)], &ws());
        assert!((v - 0.2).abs() < 1e-12);
        let (v, g) = bbox_loss(&id, &[p2(-1.05, -1.05)], &ws());
        assert!((v - 0.10).abs() < 1e-12);
        assert_eq!(&g[..2], &[-1.0, -1.0]);
    }

    #[test]
    fn occ_single_point_pull_and_push() {
        let f = disc_field();
        // Original at a voxel inside the disc surface (occupied), moved to
        // x = 0.4 where SDF = 0.2: pull of magnitude 0.2 back toward -x.
        let p = p2(0.2, 0.0);
        assert!(f.occupancy(&p));
        let occ = occ_gradient(&tp(&[0.2, 0.0, 0.0]), &[p], &f).unwrap();
        assert_eq!(occ.mismatch, 1);
        assert!((occ.residual - 0.2).abs() < 1e-9);
        // Gradient descends along −g, i.e. toward the disc.
        // The interpolant's gradient is one-sided on the cell boundary at y = 0.
        assert!((occ.gradient[0] - 0.2).abs() < 1e-6 && occ.gradient[1].abs() < 0.2 * 0.02);

        // Free original moved to SDF −0.05: push of magnitude 0.05 outward.
        let p = p2(0.5, 0.0);
        let occ = occ_gradient(&tp(&[-0.35, 0.0, 0.0]), &[p], &f).unwrap();
        assert_eq!(occ.mismatch, 1);
        assert!((occ.residual - 0.05).abs() < 1e-9);
        assert!((occ.gradient[0] + 0.05).abs() < 1e-6);

        let none = occ_gradient(&tp(&[0.0; 3]), &[p2(0.5, 0.0), p2(0.0, 0.1)], &f).unwrap();
        assert_eq!(none.mismatch, 0);
        assert!(none.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dmd_hand_value() {
        let f = disc_field();
        // SDF(p_min) = 0.05; shifted point sits at SDF 0.15.
        let pts = [p2(0.25, 0.0), p2(0.7, 0.0)];
        let (v, _) = dmd_loss(&tp(&[0.1, 0.0, 0.0]), &pts, &f).unwrap();
        assert!((v - 0.01).abs() < 1e-9);
        // Rotation about the disc center preserves the distance.
        let (v, _) = dmd_loss(&tp(&[0.0, 0.0, 0.9]), &pts, &f).unwrap();
        assert!(v < 1e-6);
    }

    #[test]
    fn valid_without_model_is_zero() {
        let (v, g) = valid_loss(&tp(&[0.3, 0.1, 0.2]), None).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn robot_contact_values() {
        assert_eq!(robot_contact_loss(&[p2(0.1, 0.1)], &[p2(0.1, 0.1)]).unwrap(), 0.0);
        let v = robot_contact_loss(&[p2(0.0, 0.0)], &[p2(0.03, 0.0)]).unwrap();
        assert!((v - 9e-4).abs() < 1e-15);
        let a = [Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)];
        let b = [Point::new(0.0, 0.01, 0.0), Point::new(1.0, 0.0, 0.01)];
        assert!((robot_contact_loss(&a, &b).unwrap() - 2e-4).abs() < 1e-15);
        assert!(robot_contact_loss(&a, &b[..1]).is_err());
    }

    #[test]
    fn identity_is_feasible_and_drop_isolates_terms() {
        let f = disc_field();
        let pts = vec![p2(0.3, 0.0), p2(0.0, 0.1), p2(-0.5, 0.5)];
        let c = cfg();
        let prob = ProjectionProblem::new(pts.clone(), &f, &c, None).unwrap();
        let r = prob.evaluate(&tp(&[0.0; 3])).unwrap();
        assert_eq!((r.bbox, r.occ_mismatch, r.dmd), (0.0, 0, 0.0));
        assert_eq!(r.total, 0.0);

        // Away from identity every term is live; dropping occ removes only
        // the occ contribution.
        let t = tp(&[0.9, 0.13, 0.4]);
        let full = prob.evaluate(&t).unwrap();
        assert!(full.occ_mismatch > 0 && full.bbox > 0.0);
        let mut no_occ = cfg();
        no_occ.drop.insert(Term::Occ);
        let r2 = ProjectionProblem::new(pts.clone(), &f, &no_occ, None)
            .unwrap()
            .evaluate(&t)
            .unwrap();
        let mut only_occ = cfg();
        only_occ.drop.extend([Term::Bbox, Term::Dmd, Term::Valid]);
        let r3 = ProjectionProblem::new(pts, &f, &only_occ, None)
            .unwrap()
            .evaluate(&t)
            .unwrap();
        assert!((r2.total - (full.total - full.occ_residual)).abs() < 1e-12);
        for k in 0..3 {
            assert!((r2.gradient[k] + r3.gradient[k] - full.gradient[k]).abs() < 1e-12);
        }
        assert_eq!(r2.occ_mismatch, full.occ_mismatch);
    }

    #[test]
    fn smooth_terms_match_finite_differences() {
        let f = disc_field();
        let pts = vec![p2(0.35, 0.05), p2(0.9, 0.6), p2(0.5, -0.3)];
        let h = 1e-6;
        for term in [Term::Bbox, Term::Dmd] {
            let mut c = cfg();
            c.drop = Term::ALL.into_iter().filter(|t| *t != term).collect();
            let prob = ProjectionProblem::new(pts.clone(), &f, &c, None).unwrap();
            let t = tp(&[0.23, 0.07, 0.31]);
            let r = prob.evaluate(&t).unwrap();
            for k in 0..3 {
                let mut v = t.values().to_vec();
                v[k] += h;
                let up = prob.evaluate(&t.with_values(v.clone()).unwrap()).unwrap().total;
                v[k] -= 2.0 * h;
                let dn = prob.evaluate(&t.with_values(v).unwrap()).unwrap().total;
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (fd - r.gradient[k]).abs() < 1e-4 * (1.0 + fd.abs()),
                    "{term:?} {k}: {fd} vs {}",
                    r.gradient[k]
                );
            }
        }
    }

    #[test]
    fn term_parsing() {
        assert_eq!("occ".parse::<Term>().unwrap(), Term::Occ);
        assert!("speed".parse::<Term>().is_err());
    }
}
