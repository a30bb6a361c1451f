//! Bimanual rope: a 25-node inextensible chain held at both ends by floating
//! grippers, relaxed under gravity with position-based constraint projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::IkResult;
use crate::datamodel::{Example, ObjectTrack, Scenario};
use crate::error::{Error, Result};
use crate::geometry::{EnvironmentSpec, GridSpec, Primitive, Workspace};
use crate::transforms::{point_to_coords, Point, TransformKind, TransformParams};
use crate::validlearn::{Transition, TransitionSimulator};

pub const ROPE_NODES: usize = 25;
pub const ROPE_MAX_ITERS: usize = 2000;
/// Convergence threshold on the largest per-iteration node displacement.
pub const ROPE_TOL: f64 = 1e-5;
/// Pseudo time step turning gravity into a per-iteration displacement.
const ROPE_H: f64 = 0.004;
const ROPE_DAMPING: f64 = 0.8;
const ROPE_SWEEPS: usize = 8;
const CLEANUP_SWEEPS: usize = 5000;
/// Closest allowed approach of non-adjacent nodes in generated episodes, as
/// a fraction of the segment length.
pub const ROPE_THICKNESS: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopeWorld {
    pub nodes: usize,
    pub segment_length: f64,
    pub gravity: f64,
    #[serde(default)]
    pub obstacles: Vec<Primitive>,
    pub workspace: Workspace,
}

impl RopeWorld {
    pub fn new(segment_length: f64, obstacles: Vec<Primitive>, workspace: Workspace) -> Self {
        Self {
            nodes: ROPE_NODES,
            segment_length,
            gravity: 9.81,
            obstacles,
            workspace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes != ROPE_NODES {
            return Err(Error::InvalidArgument(format!(
                "rope needs {ROPE_NODES} nodes, got {}",
                self.nodes
            )));
        }
        if !(self.segment_length > 0.0) {
            return Err(Error::InvalidArgument("rope segment length must be positive".into()));
        }
        for o in &self.obstacles {
            o.validate(3)?;
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.segment_length * (self.nodes - 1) as f64
    }
}

fn project_segments(x: &mut [Point], rest: f64, forward: bool) -> f64 {
    let n = x.len();
    let mut worst: f64 = 0.0;
    let mut fix = |i: usize| {
        let d = x[i + 1] - x[i];
        let len = d.norm();
        if len == 0.0 {
            return;
        }
        let err = len - rest;
        worst = worst.max(err.abs());
        let wi = if i == 0 { 0.0 } else { 1.0 };
        let wj = if i + 1 == n - 1 { 0.0 } else { 1.0 };
        let w = wi + wj;
        if w == 0.0 {
            return;
        }
        let corr = d * (err / len / w);
        x[i] += corr * wi;
        x[i + 1] -= corr * wj;
    };
    if forward {
        (0..n - 1).for_each(&mut fix);
    } else {
        (0..n - 1).rev().for_each(&mut fix);
    }
    worst
}

fn project_obstacles(x: &mut [Point], obstacles: &[Primitive]) {
    let n = x.len();
    for p in &mut x[1..n - 1] {
        for o in obstacles {
            let sd = o.signed_distance(p);
            if sd < 0.0 {
                *p += o.normal(p) * -sd;
            }
        }
    }
}

/// Moves the grippers to the commanded positions and relaxes the rope to a
/// resting configuration. `robot` and `action` hold the two gripper points.
pub fn rope_relax_simulate(
    world: &RopeWorld,
    state: &[Point],
    robot: &[Point],
    action: &[Point],
) -> Result<(Vec<Point>, Vec<Point>)> {
    if state.len() != world.nodes {
        return Err(Error::DimensionMismatch {
            expected: world.nodes,
            actual: state.len(),
        });
    }
    if robot.len() != 2 || action.len() != 2 {
        return Err(Error::InvalidArgument("rope transitions need two grippers".into()));
    }
    let n = world.nodes;
    let rest = world.segment_length;
    let bias = Point::new(0.0, 0.0, -world.gravity * ROPE_H * ROPE_H);
    let mut x = state.to_vec();
    x[0] = action[0];
    x[n - 1] = action[1];
    let mut prev = x.clone();
    let mut converged = false;
    for iter in 0..ROPE_MAX_ITERS {
        let old = x.clone();
        for i in 1..n - 1 {
            let v = (x[i] - prev[i]) * ROPE_DAMPING;
            x[i] += v + bias;
        }
        prev.copy_from_slice(&old);
        for s in 0..ROPE_SWEEPS {
            project_segments(&mut x, rest, s % 2 == 0);
            project_obstacles(&mut x, &world.obstacles);
        }
        let disp = x.iter().zip(&old).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if iter > 0 && disp < ROPE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Simulation(format!(
            "rope relaxation did not converge in {ROPE_MAX_ITERS} iterations"
        )));
    }
    for s in 0..CLEANUP_SWEEPS {
        let worst = project_segments(&mut x, rest, s % 2 == 0);
        project_obstacles(&mut x, &world.obstacles);
        if worst <= 1e-7 * rest {
            break;
        }
    }
    Ok((x, action.to_vec()))
}

#[derive(Clone, Debug)]
pub struct RopeSim {
    pub world: RopeWorld,
}

impl TransitionSimulator for RopeSim {
    fn kind(&self) -> TransformKind {
        TransformKind::Se3
    }

    fn simulate(&self, tr: &Transition) -> Result<(Vec<Point>, Vec<Point>)> {
        rope_relax_simulate(&self.world, &tr.state, &tr.robot, &tr.action)
    }
}

/// Grippers follow the augmented rope endpoints; each action is the next
/// gripper pair.
pub fn rope_ik(example: &Example, rope: &ObjectTrack, t: &TransformParams, workspace: &Workspace) -> Result<IkResult> {
    let steps = rope.timesteps();
    let ends = |k: usize| -> Vec<f64> {
        let pts = rope.positions(k, 3);
        let mut v = point_to_coords(&pts[0], 3);
        v.extend(point_to_coords(&pts[pts.len() - 1], 3));
        v
    };
    let robot: Vec<Vec<f64>> = (0..steps).map(ends).collect();
    let mut actions: Vec<Vec<f64>> = (1..steps).map(ends).collect();
    if let Some(last) = example.actions.last() {
        let pts: Vec<Vec<f64>> = last.chunks(3).map(|c| c.to_vec()).collect();
        actions.push(t.apply_to_coords(&pts)?.concat());
    }
    let valid = robot.iter().all(|r| {
        r.chunks(3)
            .all(|c| workspace.contains(&Point::new(c[0], c[1], c[2]), 0.0))
    });
    Ok(IkResult { robot, actions, valid })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RopeGenConfig {
    pub examples: usize,
    pub timesteps: usize,
    pub segment_length: f64,
    /// Largest commanded gripper move per step.
    pub gripper_step: f64,
    pub contact_margin: f64,
    pub resolution: f64,
    pub grid_size: usize,
}

impl Default for RopeGenConfig {
    fn default() -> Self {
        Self {
            examples: 50,
            timesteps: 10,
            segment_length: 0.02,
            gripper_step: 0.02,
            contact_margin: 0.005,
            resolution: 0.02,
            grid_size: 64,
        }
    }
}

/// Table top at z = 0 with a post standing on it.
pub fn rope_environment(cfg: &RopeGenConfig) -> EnvironmentSpec {
    let half = cfg.resolution * (cfg.grid_size - 1) as f64 / 2.0;
    EnvironmentSpec {
        name: "rope-desk".into(),
        dim: 3,
        primitives: vec![
            Primitive::Box {
                min: vec![-0.7, -0.7, -0.2],
                max: vec![0.7, 0.7, 0.0],
            },
            Primitive::Box {
                min: vec![-0.04, 0.12, 0.0],
                max: vec![0.04, 0.2, 0.35],
            },
        ],
        grid: GridSpec {
            origin: vec![-half, -half, -0.2],
            resolution: cfg.resolution,
            extents: vec![cfg.grid_size; 3],
        },
        workspace: Workspace {
            lower: vec![-0.5, -0.5, -0.01],
            upper: vec![0.5, 0.5, 0.8],
        },
        clearance: cfg.contact_margin,
    }
}

pub fn rope_world(env: &EnvironmentSpec, cfg: &RopeGenConfig) -> RopeWorld {
    RopeWorld::new(cfg.segment_length, env.primitives.clone(), env.workspace.clone())
}

/// Straight chain between two grippers, relaxed to rest.
pub fn hanging_rope(world: &RopeWorld, left: Point, right: Point) -> Result<Vec<Point>> {
    let n = world.nodes;
    let init: Vec<Point> = (0..n)
        .map(|i| left + (right - left) * (i as f64 / (n - 1) as f64))
        .collect();
    // A slight downward bow breaks the symmetry of a compressed straight line.
    let init: Vec<Point> = init
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = i as f64 / (n - 1) as f64;
            p - Point::new(0.0, 0.0, 0.01 * (std::f64::consts::PI * s).sin())
        })
        .collect();
    let grippers = [left, right];
    Ok(rope_relax_simulate(world, &init, &grippers, &grippers)?.0)
}

fn random_offset<R: Rng + ?Sized>(max: f64, rng: &mut R) -> Point {
    loop {
        let v = Point::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() <= 1.0 {
            return v * max;
        }
    }
}

/// True when two non-adjacent nodes are closer than `gap`, i.e. the chain
/// passes through itself.
pub fn self_intersecting(x: &[Point], gap: f64) -> bool {
    (0..x.len()).any(|i| (i + 2..x.len()).any(|j| (x[i] - x[j]).norm() < gap))
}

fn generate_episode<R: Rng + ?Sized>(
    world: &RopeWorld,
    cfg: &RopeGenConfig,
    env_name: &str,
    rng: &mut R,
) -> Option<Example> {
    let length = world.length();
    let cx = rng.random_range(-0.2..0.2);
    let cy = rng.random_range(-0.25..0.0);
    let z = rng.random_range(0.12..0.4);
    let span = rng.random_range(0.4..0.8) * length;
    let yaw: f64 = rng.random_range(-0.6..0.6);
    let half = Point::new(yaw.cos(), yaw.sin(), 0.0) * (span / 2.0);
    let mut grippers = [Point::new(cx, cy, z) - half, Point::new(cx, cy, z) + half];
    let mut rope = hanging_rope(world, grippers[0], grippers[1]).ok()?;

    let mut states = vec![rope.clone()];
    let mut robots = vec![grippers];
    let mut actions = Vec::new();
    for _ in 1..cfg.timesteps {
        let mut next = grippers;
        for _ in 0..20 {
            next = [
                grippers[0] + random_offset(cfg.gripper_step, rng),
                grippers[1] + random_offset(cfg.gripper_step, rng),
            ];
            let span = (next[1] - next[0]).norm();
            let ok = span < 0.9 * length
                && span > 0.3 * length
                && next.iter().all(|g| g.z > 0.1 && world.workspace.margin(g) > 0.05);
            if ok {
                break;
            }
            next = grippers;
        }
        let (s, r) = rope_relax_simulate(world, &rope, &grippers, &next).ok()?;
        actions.push(next);
        rope = s;
        grippers = [r[0], r[1]];
        states.push(rope.clone());
        robots.push(grippers);
    }
    actions.push(grippers);
    let gap = ROPE_THICKNESS * world.segment_length;
    if states.iter().any(|s| self_intersecting(s, gap)) {
        return None;
    }

    let flat = |pts: &[Point]| pts.iter().flat_map(|p| point_to_coords(p, 3)).collect::<Vec<f64>>();
    let touching = states.last().unwrap().iter().any(|p| {
        world
            .obstacles
            .iter()
            .any(|o| o.signed_distance(p) <= cfg.contact_margin)
    });
    let rope_track = ObjectTrack {
        id: "rope".into(),
        moving: Some(true),
        radius: None,
        points: states.iter().map(|s| flat(s)).collect(),
        velocities: Vec::new(),
        extra: Default::default(),
    };
    Some(Example {
        scenario: Scenario::Rope,
        env: env_name.into(),
        objects: vec![rope_track],
        robot: robots.iter().map(|r| flat(r)).collect(),
        actions: actions.iter().map(|a| flat(a)).collect(),
        label: Some(touching as u8),
        extra: Default::default(),
    })
}

pub fn generate_rope_dataset<R: Rng + ?Sized>(
    env: &EnvironmentSpec,
    cfg: &RopeGenConfig,
    rng: &mut R,
) -> Result<Vec<Example>> {
    if env.dim != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            actual: env.dim,
        });
    }
    let world = rope_world(env, cfg);
    world.validate()?;
    let mut out = Vec::with_capacity(cfg.examples);
    let mut attempts = 0usize;
    while out.len() < cfg.examples {
        attempts += 1;
        if attempts > 100 * cfg.examples.max(1) {
            return Err(Error::Simulation("could not generate enough rope episodes".into()));
        }
        if let Some(ex) = generate_episode(&world, cfg, &env.name, rng) {
            out.push(ex);
        }
    }
    Ok(out)
}

/// Probe transitions in free space: a hanging rope and a small gripper move.
pub fn rope_probes(world: &RopeWorld) -> Result<Vec<Transition>> {
    let free = RopeWorld {
        obstacles: Vec::new(),
        ..world.clone()
    };
    let length = free.length();
    let mut out = Vec::new();
    for (span, shift) in [(0.5, Point::new(0.02, 0.0, 0.01)), (0.7, Point::new(0.0, 0.02, -0.01))] {
        let left = Point::new(-span * length / 2.0, 0.0, 0.4);
        let right = Point::new(span * length / 2.0, 0.0, 0.4);
        let state = hanging_rope(&free, left, right)?;
        out.push(Transition {
            state,
            robot: vec![left, right],
            action: vec![left + shift, right + shift],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn free_world() -> RopeWorld {
        RopeWorld::new(
            0.02,
            vec![],
            Workspace::new(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0]).unwrap(),
        )
    }

    fn check_constraints(world: &RopeWorld, x: &[Point]) {
        for w in x.windows(2) {
            let len = (w[1] - w[0]).norm();
            assert!(
                (len - world.segment_length).abs() <= 1e-4 * world.segment_length,
                "segment {len}"
            );
        }
        for p in x {
            for o in &world.obstacles {
                assert!(o.signed_distance(p) >= -1e-4);
            }
        }
    }

    #[test]
    fn vertical_rope_is_a_fixed_point() {
        let w = free_world();
        let top = Point::new(0.0, 0.0, 0.6);
        let state: Vec<Point> = (0..25).map(|i| top - Point::new(0.0, 0.0, 0.02 * i as f64)).collect();
        let grippers = [state[0], state[24]];
        let (next, _) = rope_relax_simulate(&w, &state, &grippers, &grippers).unwrap();
        let moved = next.iter().zip(&state).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(moved < 1e-4, "moved {moved}");
    }

    #[test]
    fn level_endpoints_sag() {
        let w = free_world();
        let x = hanging_rope(&w, Point::new(-0.15, 0.0, 0.5), Point::new(0.15, 0.0, 0.5)).unwrap();
        assert!(x[12].z < 0.5 - 0.05);
        check_constraints(&w, &x);
        // Symmetric about the midpoint.
        assert!((x[12].x).abs() < 1e-3);
    }

    #[test]
    fn sideways_arc_relaxes_far() {
        let w = free_world();
        let left = Point::new(-0.15, 0.0, 0.5);
        let right = Point::new(0.15, 0.0, 0.5);
        let x = hanging_rope(&w, left, right).unwrap();
        let center = x.iter().sum::<Point>() / 25.0;
        let roll = TransformParams::new(vec![0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0], center).unwrap();
        let rx: Vec<Point> = x.iter().map(|p| roll.apply_point(p)).collect();
        let g = [roll.apply_point(&left), roll.apply_point(&right)];
        let (relaxed, _) = rope_relax_simulate(&w, &rx, &g, &g).unwrap();
        let disp = relaxed.iter().zip(&rx).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(disp > 0.05, "{disp}");

        // Identity resimulation barely moves.
        let (same, _) = rope_relax_simulate(&w, &x, &[left, right], &[left, right]).unwrap();
        let d0 = same.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d0 < 1e-3, "{d0}");
    }

    #[test]
    fn rope_rests_on_obstacles() {
        let table = Primitive::Box {
            min: vec![-1.0, -1.0, -0.2],
            max: vec![1.0, 1.0, 0.0],
        };
        let w = RopeWorld::new(0.02, vec![table], Workspace::new(vec![-1.0; 3], vec![1.0; 3]).unwrap());
        let x = hanging_rope(&w, Point::new(-0.15, 0.0, 0.1), Point::new(0.15, 0.0, 0.1)).unwrap();
        check_constraints(&w, &x);
        assert!(x.iter().any(|p| p.z < 1e-3));
    }

    #[test]
    fn folded_chain_is_self_intersecting() {
        let mut x: Vec<Point> = (0..5).map(|i| Point::new(0.02 * i as f64, 0.0, 0.0)).collect();
        assert!(!self_intersecting(&x, 0.01));
        // Fold back so node 3 lands on node 1.
        x[3] = x[1] + Point::new(0.0, 1e-9, 0.0);
        assert!(self_intersecting(&x, 0.01));
    }

    #[test]
    fn deterministic() {
        let w = free_world();
        let a = hanging_rope(&w, Point::new(-0.1, 0.0, 0.5), Point::new(0.2, 0.05, 0.45)).unwrap();
        let b = hanging_rope(&w, Point::new(-0.1, 0.0, 0.5), Point::new(0.2, 0.05, 0.45)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_and_ik() {
        let cfg = RopeGenConfig {
            examples: 4,
            ..Default::default()
        };
        let env = rope_environment(&cfg);
        let data = generate_rope_dataset(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let world = rope_world(&env, &cfg);
        for ex in &data {
            ex.validate().unwrap();
            assert_eq!(ex.objects[0].points_per_state(3), 25);
            for t in 0..ex.timesteps() {
                let x = ex.objects[0].positions(t, 3);
                check_constraints(&world, &x);
                assert!(!self_intersecting(&x, ROPE_THICKNESS * cfg.segment_length));
            }
            let id = TransformParams::identity(6, Point::zeros()).unwrap();
            let ik = rope_ik(ex, &ex.objects[0], &id, &env.workspace).unwrap();
            assert!(ik.valid);
            for (a, b) in ik.robot.iter().zip(&ex.robot) {
                for (u, v) in a.iter().zip(b) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
            let far = TransformParams::new(vec![0.0, 0.0, 2.0, 0.0, 0.0, 0.0], Point::zeros()).unwrap();
            let moved = ex.objects[0].transformed(&far, 3);
            assert!(!rope_ik(ex, &moved, &far, &env.workspace).unwrap().valid);
        }
    }
}
