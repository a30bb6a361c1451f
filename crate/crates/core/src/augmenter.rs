//! The augmentation function: solve for a transform, apply it to the moved
//! objects, follow with the robot, and fall back to the source example when
//! any validity check fails.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Example, Scenario, DEFAULT_MOVE_THRESHOLD};
use crate::error::{Error, Result};
use crate::geometry::{EnvironmentField, EnvironmentSpec};
use crate::objectives::{ObjectiveConfig, ProjectionProblem};
use crate::scenarios::aug_robot;
use crate::solver::{aug_state, SolverConfig, Termination};
use crate::transforms::{Point, TransformBounds, TransformParams};
use crate::validlearn::ValidityModel;

pub const DEFAULT_K: usize = 25;
/// Workspace overshoot tolerated by `state_valid`, in voxels.
pub const STATE_SLACK_VOXELS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub scenario: Scenario,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_threshold")]
    pub move_threshold: f64,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_threshold() -> f64 {
    DEFAULT_MOVE_THRESHOLD
}

impl AugmentConfig {
    pub fn new(scenario: Scenario, bounds: TransformBounds) -> Self {
        Self {
            scenario,
            objective: ObjectiveConfig::new(bounds),
            solver: SolverConfig::default(),
            k: DEFAULT_K,
            move_threshold: DEFAULT_MOVE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.objective.bounds.kind() != self.scenario.transform_kind() {
            return Err(Error::DimensionMismatch {
                expected: self.scenario.transform_kind().dim(),
                actual: self.objective.bounds.dim(),
            });
        }
        self.objective.validate()?;
        self.solver.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub target: Option<TransformParams>,
    pub points: usize,
    /// Occupancy mismatches at the final transform, before gating.
    pub raw_mismatch: usize,
    pub bbox: f64,
    pub valid: f64,
    pub occ_residual: f64,
    pub dmd_abs: f64,
    pub state_valid: bool,
    pub ik_valid: bool,
    pub rounds: usize,
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
}

impl Diagnostics {
    fn empty(reason: &str) -> Self {
        Self {
            target: None,
            points: 0,
            raw_mismatch: 0,
            bbox: 0.0,
            valid: 0.0,
            occ_residual: 0.0,
            dmd_abs: 0.0,
            state_valid: false,
            ik_valid: false,
            rounds: 0,
            termination: None,
            rejection: Some(reason.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedExample {
    pub example: Example,
    pub accepted: bool,
    pub transform: TransformParams,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationBatch {
    pub source_index: usize,
    pub augmented: Vec<AugmentedExample>,
}

impl AugmentationBatch {
    pub fn accepted(&self) -> usize {
        self.augmented.iter().filter(|a| a.accepted).count()
    }

    pub fn transforms(&self) -> Vec<TransformParams> {
        self.augmented.iter().map(|a| a.transform.clone()).collect()
    }
}

/// Per-example state shared by every draw: the field with stationary objects
/// folded in and the moved-object points.
pub struct PreparedExample<'a> {
    example: &'a Example,
    moved: Vec<usize>,
    field: EnvironmentField,
    points: Vec<Point>,
    center: Point,
}

impl<'a> PreparedExample<'a> {
    pub fn new(example: &'a Example, env: &EnvironmentSpec, config: &AugmentConfig) -> Result<Self> {
        if example.scenario != config.scenario {
            return Err(Error::ScenarioMismatch {
                expected: config.scenario.name().into(),
                actual: example.scenario.name().into(),
            });
        }
        if env.dim != example.dim() {
            return Err(Error::DimensionMismatch {
                expected: example.dim(),
                actual: env.dim,
            });
        }
        example.validate().map_err(Error::InvalidArgument)?;
        let (moved, stationary) = example.decompose_moving(config.move_threshold);
        let field = env.build_with(&example.stationary_primitives(&stationary))?;
        let points = example.extract_points(&moved).iter().map(|p| p.position).collect();
        let center = example.initial_centroid(&moved);
        Ok(Self {
            example,
            moved,
            field,
            points,
            center,
        })
    }

    pub fn field(&self) -> &EnvironmentField {
        &self.field
    }

    pub fn moved(&self) -> &[usize] {
        &self.moved
    }

    pub fn center(&self) -> Point {
        self.center
    }
}

fn fallback(example: &Example, transform: TransformParams, diagnostics: Diagnostics) -> AugmentedExample {
    AugmentedExample {
        example: example.clone(),
        accepted: false,
        transform,
        diagnostics,
    }
}

/// Applies `t` to the moved objects and robot. Returns the candidate
/// example and the `state_valid`/`ik_valid` flags.
pub fn apply_transform(prep: &PreparedExample, t: &TransformParams) -> Result<(Example, bool, bool)> {
    let ex = prep.example;
    let dim = ex.dim();
    let mut objects = ex.objects.clone();
    for &i in &prep.moved {
        objects[i] = ex.objects[i].transformed(t, dim);
    }
    let field = &prep.field;
    let slack = STATE_SLACK_VOXELS * field.resolution();
    let state_valid = prep.points.iter().all(|p| {
        let q = t.apply_point(p);
        field.in_grid(&q) && field.workspace().contains(&q, slack)
    });
    let ik = aug_robot(ex, &objects, &prep.moved, t, field.workspace())?;
    let candidate = Example {
        objects,
        robot: ik.robot,
        actions: ik.actions,
        ..ex.clone()
    };
    Ok((candidate, state_valid, ik.valid))
}

/// One augmentation with a caller-provided random source.
pub fn augment_prepared(
    prep: &PreparedExample,
    config: &AugmentConfig,
    model: Option<&ValidityModel>,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedExample> {
    let ex = prep.example;
    let identity = TransformParams::identity(config.objective.bounds.dim(), prep.center)?;
    if prep.moved.is_empty() {
        return Ok(fallback(ex, identity, Diagnostics::empty("no moved objects")));
    }
    let problem = ProjectionProblem::new(prep.points.clone(), &prep.field, &config.objective, model)?;
    let (t, trace) = aug_state(&problem, prep.center, &config.solver, rng)?;
    let report = problem.evaluate(&t)?;
    let (candidate, state_valid, ik_valid) = apply_transform(prep, &t)?;
    let mut diagnostics = Diagnostics {
        target: Some(trace.target.clone()),
        points: prep.points.len(),
        raw_mismatch: report.occ_mismatch,
        bbox: report.bbox,
        valid: report.valid,
        occ_residual: report.occ_residual,
        dmd_abs: report.dmd_abs,
        state_valid,
        ik_valid,
        rounds: trace.rounds.len(),
        termination: Some(trace.termination),
        rejection: None,
    };
    let rejection = if trace.termination == Termination::ProjectionStalled {
        Some("projection stalled")
    } else if !state_valid {
        Some("state invalid")
    } else if !ik_valid {
        Some("ik invalid")
    } else if report.occ_mismatch > 0 {
        Some("occupancy mismatch")
    } else {
        None
    };
    if let Some(reason) = rejection {
        diagnostics.rejection = Some(reason.into());
        return Ok(fallback(ex, t, diagnostics));
    }
    Ok(AugmentedExample {
        example: candidate,
        accepted: true,
        transform: t,
        diagnostics,
    })
}

/// Random source for draw `draw` of example `index` under `seed`.
pub fn draw_rng(seed: u64, index: usize, draw: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(index as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(draw as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Single augmentation of one example.
pub fn augment(
    example: &Example,
    env: &EnvironmentSpec,
    config: &AugmentConfig,
    model: Option<&ValidityModel>,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedExample> {
    config.validate()?;
    let prep = PreparedExample::new(example, env, config)?;
    augment_prepared(&prep, config, model, rng)
}

/// `k` independent augmentations of one example.
pub fn augment_batch(
    example: &Example,
    index: usize,
    env: &EnvironmentSpec,
    config: &AugmentConfig,
    model: Option<&ValidityModel>,
    seed: u64,
) -> Result<AugmentationBatch> {
    config.validate()?;
    let prep = PreparedExample::new(example, env, config)?;
    let augmented = (0..config.k)
        .map(|draw| augment_prepared(&prep, config, model, &mut draw_rng(seed, index, draw)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentationBatch {
        source_index: index,
        augmented,
    })
}

/// Augments every example on a pool of `jobs` workers. Output order follows
/// input order.
pub fn augment_dataset(
    examples: &[Example],
    env: &EnvironmentSpec,
    config: &AugmentConfig,
    model: Option<&ValidityModel>,
    seed: u64,
    jobs: usize,
) -> Result<Vec<AugmentationBatch>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("dataset has no examples"));
    }
    let run = || {
        examples
            .par_iter()
            .enumerate()
            .map(|(i, ex)| augment_batch(ex, i, env, config, model, seed))
            .collect::<Result<Vec<_>>>()
    };
    if jobs <= 1 {
        return examples
            .iter()
            .enumerate()
            .map(|(i, ex)| augment_batch(ex, i, env, config, model, seed))
            .collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} workers: {e}")))?
        .install(run)
}
