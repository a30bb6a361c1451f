//! Step-and-project search over transform parameters.
//!
//! From the identity, each outer round moves a bounded step toward a
//! uniformly drawn target and then projects back onto the low-objective set
//! with decayed gradient descent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{ObjectiveReport, ProjectionProblem};
use crate::transforms::{Point, TransformParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Outer step-and-project rounds.
    pub n_p: usize,
    /// Inner projection steps per round.
    pub m_p: usize,
    /// Outer convergence threshold in transform distance.
    pub delta_p: f64,
    /// Inner gradient-norm threshold.
    pub epsilon_p: f64,
    /// Initial step size for the point terms (bbox, occ, dmd).
    pub lr: f64,
    /// Initial step size for the validity term, which is measured in
    /// parameter units rather than meters.
    pub valid_lr: f64,
    pub lr_decay: f64,
    /// Fraction of the initial target distance moved per outer round.
    pub step_fraction: f64,
    /// Meters per radian in the transform metric.
    pub rot_weight: f64,
    /// Divide angle steps by the mean squared lever arm of the points, so a
    /// rotation step moves points as far as an equal translation step.
    pub precondition: bool,
    /// Largest RMS point displacement of one inner step, in meters.
    pub max_inner_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_p: 5,
            m_p: 25,
            delta_p: 0.001,
            epsilon_p: 0.0003,
            lr: 3.0,
            valid_lr: 0.1,
            lr_decay: 0.9,
            step_fraction: 0.25,
            rot_weight: 1.0,
            precondition: true,
            max_inner_step: 0.01,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("solver config: {m}")));
        if self.n_p == 0 || self.m_p == 0 {
            return bad("n_p and m_p must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.valid_lr >= 0.0 && self.valid_lr.is_finite()) {
            return bad(format!("valid_lr must be non-negative, got {}", self.valid_lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return bad(format!("step_fraction must lie in (0, 1], got {}", self.step_fraction));
        }
        if !(self.max_inner_step > 0.0) {
            return bad(format!("max_inner_step must be positive, got {}", self.max_inner_step));
        }
        if !(self.delta_p >= 0.0 && self.epsilon_p >= 0.0 && self.rot_weight > 0.0) {
            return bad("thresholds must be non-negative and rot_weight positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxOuter,
    ProjectionStalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub transform: TransformParams,
    pub steps: usize,
    pub report: ObjectiveReport,
    pub stalled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRound {
    pub round: usize,
    pub stepped: TransformParams,
    pub projected: TransformParams,
    pub inner_steps: usize,
    pub report: ObjectiveReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub target: TransformParams,
    pub rounds: Vec<SolveRound>,
    pub termination: Termination,
}

impl SolveTrace {
    pub fn final_report(&self) -> Option<&ObjectiveReport> {
        self.rounds.last().map(|r| &r.report)
    }
}

/// `mean ‖p − c‖²`: the squared lever arm that converts radians to meters.
pub fn mean_lever(points: &[Point], center: &Point) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / points.len() as f64
}

/// Decayed gradient descent on the projection objective, clamped to the
/// transform bounds after every step. Returns the lowest-objective iterate,
/// so the result never scores worse than the start.
pub fn project(problem: &ProjectionProblem, start: &TransformParams, cfg: &SolverConfig) -> Result<Projection> {
    let bounds = &problem.config().bounds;
    let mut cur = start.clone();
    let mut decay = 1.0;
    let mut best: Option<(TransformParams, ObjectiveReport)> = None;
    let mut steps = 0;
    let kind = start.kind();
    let lever = mean_lever(problem.points(), start.center());
    let angle_scale = if cfg.precondition && lever > 1e-12 {
        1.0 / lever
    } else {
        1.0
    };
    loop {
        let report = problem.evaluate(&cur)?;
        if !report.is_finite() {
            let (transform, report) = best.unwrap_or((cur, report));
            return Ok(Projection {
                transform,
                steps,
                report,
                stalled: true,
            });
        }
        let done = steps == cfg.m_p || report.gradient_norm() < cfg.epsilon_p;
        let next = if done {
            None
        } else {
            // Point terms are preconditioned; the validity term already
            // lives in parameter space.
            let mut delta: Vec<f64> = report
                .gradient
                .iter()
                .zip(&report.valid_gradient)
                .enumerate()
                .map(|(i, (g, v))| {
                    let point = (g - v) * if kind.is_angle(i) { angle_scale } else { 1.0 };
                    -decay * (cfg.lr * point + cfg.valid_lr * v)
                })
                .collect();
            let length = delta
                .iter()
                .enumerate()
                .map(|(i, d)| if kind.is_angle(i) { d * d * lever } else { d * d })
                .sum::<f64>()
                .sqrt();
            if length > cfg.max_inner_step {
                let shrink = cfg.max_inner_step / length;
                delta.iter_mut().for_each(|d| *d *= shrink);
            }
            let mut values: Vec<f64> = cur.values().iter().zip(&delta).map(|(v, d)| v + d).collect();
            bounds.clamp_values(&mut values);
            Some(values)
        };
        if best.as_ref().is_none_or(|(_, b)| report.total < b.total) {
            best = Some((cur.clone(), report));
        }
        match next {
            None => break,
            Some(values) => {
                cur = cur.with_values(values)?;
                decay *= cfg.lr_decay;
                steps += 1;
            }
        }
    }
    let (transform, report) = best.expect("at least one evaluation");
    Ok(Projection {
        transform,
        steps,
        report,
        stalled: false,
    })
}

/// Runs step-and-project from the identity toward a given target.
pub fn solve_towards(
    problem: &ProjectionProblem,
    target: &TransformParams,
    cfg: &SolverConfig,
) -> Result<(TransformParams, SolveTrace)> {
    cfg.validate()?;
    let mut t = TransformParams::identity(target.dim(), *target.center())?;
    let max_step = cfg.step_fraction * t.distance(target, cfg.rot_weight)?;
    let mut rounds = Vec::with_capacity(cfg.n_p);
    let mut termination = Termination::MaxOuter;
    for round in 0..cfg.n_p {
        let stepped = t.step_towards(target, max_step, cfg.rot_weight)?;
        let proj = project(problem, &stepped, cfg)?;
        let moved = proj.transform.distance(&t, cfg.rot_weight)?;
        rounds.push(SolveRound {
            round,
            stepped,
            projected: proj.transform.clone(),
            inner_steps: proj.steps,
            report: proj.report,
        });
        t = proj.transform;
        if proj.stalled {
            termination = Termination::ProjectionStalled;
            break;
        }
        if moved < cfg.delta_p {
            termination = Termination::Converged;
            break;
        }
    }
    Ok((
        t.clone(),
        SolveTrace {
            target: target.clone(),
            rounds,
            termination,
        },
    ))
}

/// Draws a uniform target within the problem's bounds and solves toward it.
pub fn aug_state<R: Rng + ?Sized>(
    problem: &ProjectionProblem,
    center: Point,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<(TransformParams, SolveTrace)> {
    let target = problem.config().bounds.sample_uniform(center, rng);
    solve_towards(problem, &target, cfg)
}
