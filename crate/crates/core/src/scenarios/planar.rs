//! Quasi-static planar pushing of discs by a disc-shaped end effector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::IkResult;
use crate::datamodel::{Example, ObjectTrack, Scenario};
use crate::error::{Error, Result};
use crate::geometry::{EnvironmentSpec, GridSpec, Primitive, Workspace};
use crate::transforms::{point_to_coords, Point, TransformKind, TransformParams};
use crate::validlearn::{Transition, TransitionSimulator};

/// Robot travel per substep.
pub const PLANAR_SUBSTEP: f64 = 0.005;
pub const PLANAR_MAX_RESOLVE_ITERS: usize = 100;
/// Time between recorded states, used for velocities.
pub const PLANAR_DT: f64 = 0.1;

const RESOLVE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarWorld {
    pub robot_radius: f64,
    pub disc_radii: Vec<f64>,
    pub workspace: Workspace,
    #[serde(default)]
    pub obstacles: Vec<Primitive>,
}

impl PlanarWorld {
    pub fn validate(&self) -> Result<()> {
        if !(self.robot_radius > 0.0) || self.disc_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidArgument("planar radii must be positive".into()));
        }
        for o in &self.obstacles {
            o.validate(2)?;
        }
        Ok(())
    }
}

/// Pushes discs out of overlaps with the robot, each other and obstacles
/// until no correction exceeds the tolerance.
fn resolve(world: &PlanarWorld, discs: &mut [Point], robot: &Point) -> Result<()> {
    let n = discs.len();
    let mut pushed = vec![false; n];
    for _ in 0..PLANAR_MAX_RESOLVE_ITERS {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let need = world.robot_radius + world.disc_radii[i];
            let d = discs[i] - robot;
            let dist = d.norm();
            if dist < need {
                let dir = if dist > 0.0 { d / dist } else { Point::x() };
                discs[i] = robot + dir * need;
                worst = worst.max(need - dist);
                pushed[i] = true;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let need = world.disc_radii[i] + world.disc_radii[j];
                let d = discs[j] - discs[i];
                let dist = d.norm();
                if dist >= need {
                    continue;
                }
                let dir = if dist > 0.0 { d / dist } else { Point::x() };
                let overlap = need - dist;
                let (wi, wj) = match (pushed[i], pushed[j]) {
                    (true, false) => (0.0, 1.0),
                    (false, true) => (1.0, 0.0),
                    _ => (0.5, 0.5),
                };
                discs[i] -= dir * (overlap * wi);
                discs[j] += dir * (overlap * wj);
                pushed[i] = true;
                pushed[j] = true;
                worst = worst.max(overlap);
            }
        }
        for (i, disc) in discs.iter_mut().enumerate() {
            for o in &world.obstacles {
                let sd = o.signed_distance(disc);
                let r = world.disc_radii[i];
                if sd < r {
                    *disc += o.normal(disc) * (r - sd);
                    worst = worst.max(r - sd);
                }
            }
        }
        if worst <= RESOLVE_TOL {
            return Ok(());
        }
    }
    Err(Error::Simulation(format!(
        "overlap resolution did not converge in {PLANAR_MAX_RESOLVE_ITERS} iterations"
    )))
}

/// Moves the robot linearly to `action` in fixed substeps, resolving
/// contacts after each. Returns the next disc states and robot position.
pub fn planar_simulate(
    world: &PlanarWorld,
    discs: &[Point],
    robot: &Point,
    action: &Point,
) -> Result<(Vec<Point>, Point)> {
    if discs.len() != world.disc_radii.len() {
        return Err(Error::DimensionMismatch {
            expected: world.disc_radii.len(),
            actual: discs.len(),
        });
    }
    let mut state = discs.to_vec();
    let travel = action - robot;
    let steps = (travel.norm() / PLANAR_SUBSTEP).ceil() as usize;
    for k in 1..=steps {
        let r = robot + travel * (k as f64 / steps as f64);
        resolve(world, &mut state, &r)?;
    }
    Ok((state, *action))
}

/// [`TransitionSimulator`] over a planar world. A transition's state holds
/// the disc centers, its robot and action one point each.
#[derive(Clone, Debug)]
pub struct PlanarSim {
    pub world: PlanarWorld,
}

impl TransitionSimulator for PlanarSim {
    fn kind(&self) -> TransformKind {
        TransformKind::Se2
    }

    fn simulate(&self, tr: &Transition) -> Result<(Vec<Point>, Vec<Point>)> {
        let (robot, action) = match (tr.robot.first(), tr.action.first()) {
            (Some(r), Some(a)) => (r, a),
            _ => {
                return Err(Error::InvalidArgument(
                    "planar transition needs robot and action".into(),
                ))
            }
        };
        let (s, r) = planar_simulate(&self.world, &tr.state, robot, action)?;
        Ok((s, vec![r]))
    }
}

/// Robot trajectory and actions move rigidly with the objects.
pub fn planar_ik(example: &Example, t: &TransformParams, workspace: &Workspace) -> Result<IkResult> {
    let robot = t.apply_to_coords(&example.robot)?;
    let actions = t.apply_to_coords(&example.actions)?;
    let valid = robot.iter().all(|r| {
        let p = Point::new(r[0], r[1], 0.0);
        workspace.contains(&p, 0.0)
    });
    Ok(IkResult { robot, actions, valid })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanarGenConfig {
    pub examples: usize,
    pub discs: usize,
    pub timesteps: usize,
    /// Shortest accepted trajectory after truncation.
    pub min_timesteps: usize,
    pub disc_radius: f64,
    pub robot_radius: f64,
    /// Commanded robot travel per recorded step.
    pub push_step: f64,
    /// Extra inflation so resting contacts read as occupied.
    pub contact_margin: f64,
    pub resolution: f64,
    pub grid_size: usize,
}

impl Default for PlanarGenConfig {
    fn default() -> Self {
        Self {
            examples: 200,
            discs: 9,
            timesteps: 20,
            min_timesteps: 8,
            disc_radius: 0.04,
            robot_radius: 0.04,
            push_step: 0.02,
            contact_margin: 0.003,
            resolution: 0.01,
            grid_size: 256,
        }
    }
}

/// Table with a wall along one edge, a block and a round pillar.
pub fn planar_environment(cfg: &PlanarGenConfig) -> EnvironmentSpec {
    let half = cfg.resolution * (cfg.grid_size - 1) as f64 / 2.0;
    EnvironmentSpec {
        name: "planar-desk".into(),
        dim: 2,
        primitives: vec![
            Primitive::Box {
                min: vec![-0.5, -0.5],
                max: vec![0.5, -0.4],
            },
            Primitive::Box {
                min: vec![0.3, -0.1],
                max: vec![0.5, 0.3],
            },
            Primitive::Disc {
                center: vec![-0.2, 0.25],
                radius: 0.08,
            },
        ],
        grid: GridSpec {
            origin: vec![-half, -half],
            resolution: cfg.resolution,
            extents: vec![cfg.grid_size, cfg.grid_size],
        },
        workspace: Workspace {
            lower: vec![-0.5, -0.5],
            upper: vec![0.5, 0.5],
        },
        clearance: cfg.disc_radius + cfg.contact_margin,
    }
}

pub fn planar_world(env: &EnvironmentSpec, cfg: &PlanarGenConfig) -> PlanarWorld {
    PlanarWorld {
        robot_radius: cfg.robot_radius,
        disc_radii: vec![cfg.disc_radius; cfg.discs],
        workspace: env.workspace.clone(),
        obstacles: env.primitives.clone(),
    }
}

fn rotate2(v: &Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c * v.x - s * v.y, s * v.x + c * v.y, 0.0)
}

fn uniform_point<R: Rng + ?Sized>(ws: &Workspace, margin: f64, rng: &mut R) -> Point {
    let x = rng.random_range(ws.lower[0] + margin..ws.upper[0] - margin);
    let y = rng.random_range(ws.lower[1] + margin..ws.upper[1] - margin);
    Point::new(x, y, 0.0)
}

fn obstacle_distance(world: &PlanarWorld, p: &Point) -> (f64, usize) {
    world
        .obstacles
        .iter()
        .enumerate()
        .map(|(i, o)| (o.signed_distance(p), i))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

/// Places the first disc close to an obstacle and the rest anywhere free.
fn place_discs<R: Rng + ?Sized>(world: &PlanarWorld, rng: &mut R) -> Option<Vec<Point>> {
    let mut discs: Vec<Point> = Vec::with_capacity(world.disc_radii.len());
    for (k, &r) in world.disc_radii.iter().enumerate() {
        let mut placed = false;
        for _ in 0..2000 {
            let p = uniform_point(&world.workspace, r, rng);
            let gap = obstacle_distance(world, &p).0 - r;
            let clear_obstacles = if k == 0 {
                (0.02..0.12).contains(&gap)
            } else {
                gap > 0.01
            };
            let clear_discs = discs
                .iter()
                .zip(&world.disc_radii)
                .all(|(q, rq)| (p - q).norm() > r + rq + 0.01);
            if clear_obstacles && clear_discs {
                discs.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(discs)
}

fn robot_free(world: &PlanarWorld, discs: &[Point], robot: &Point) -> bool {
    let r = world.robot_radius;
    world.workspace.margin(robot) > r
        && obstacle_distance(world, robot).0 > r
        && discs
            .iter()
            .zip(&world.disc_radii)
            .all(|(d, rd)| (d - robot).norm() > r + rd)
}

/// Simulates one pushing episode: the robot approaches a random disc and
/// pushes it at an oblique angle toward its nearest obstacle, so the disc
/// ends up sliding along the obstacle surface.
fn generate_episode<R: Rng + ?Sized>(
    world: &PlanarWorld,
    cfg: &PlanarGenConfig,
    env_name: &str,
    rng: &mut R,
) -> Option<Example> {
    let discs = place_discs(world, rng)?;
    let target = 0;
    let (_, obstacle) = obstacle_distance(world, &discs[target]);
    let toward = -world.obstacles[obstacle].normal(&discs[target]);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let angle = sign * rng.random_range(25f64.to_radians()..55f64.to_radians());
    let dir = rotate2(&toward, angle);
    let gap = rng.random_range(0.01..0.04);
    let robot0 = discs[target] - dir * (world.robot_radius + world.disc_radii[target] + gap);
    if !robot_free(world, &discs, &robot0) {
        return None;
    }

    let mut states = vec![discs];
    let mut robots = vec![robot0];
    let mut actions = Vec::new();
    for _ in 1..cfg.timesteps {
        let robot = *robots.last().unwrap();
        let action = robot + dir * cfg.push_step;
        if world.workspace.margin(&action) <= world.robot_radius
            || obstacle_distance(world, &action).0 <= world.robot_radius
        {
            break;
        }
        let Ok((next, r)) = planar_simulate(world, states.last().unwrap(), &robot, &action) else {
            break;
        };
        if !next
            .iter()
            .zip(&world.disc_radii)
            .all(|(d, rd)| world.workspace.margin(d) >= *rd)
        {
            break;
        }
        actions.push(action);
        states.push(next);
        robots.push(r);
    }
    if states.len() < cfg.min_timesteps {
        return None;
    }
    let last = *robots.last().unwrap();
    actions.push(last);

    let steps = states.len();
    let objects = (0..world.disc_radii.len())
        .map(|i| {
            let points = (0..steps).map(|t| point_to_coords(&states[t][i], 2)).collect();
            let velocities = (0..steps)
                .map(|t| {
                    let v = if t == 0 {
                        Point::zeros()
                    } else {
                        (states[t][i] - states[t - 1][i]) / PLANAR_DT
                    };
                    point_to_coords(&v, 2)
                })
                .collect();
            ObjectTrack {
                id: format!("disc{i}"),
                moving: None,
                radius: Some(world.disc_radii[i]),
                points,
                velocities,
                extra: Default::default(),
            }
        })
        .collect();
    let contact = states
        .last()
        .unwrap()
        .iter()
        .zip(&world.disc_radii)
        .any(|(d, r)| obstacle_distance(world, d).0 <= r + cfg.contact_margin);
    Some(Example {
        scenario: Scenario::Planar,
        env: env_name.into(),
        objects,
        robot: robots.iter().map(|r| point_to_coords(r, 2)).collect(),
        actions: actions.iter().map(|a| point_to_coords(a, 2)).collect(),
        label: Some(contact as u8),
        extra: Default::default(),
    })
}

/// Generates a seeded pushing dataset for the given environment.
pub fn generate_planar_dataset<R: Rng + ?Sized>(
    env: &EnvironmentSpec,
    cfg: &PlanarGenConfig,
    rng: &mut R,
) -> Result<Vec<Example>> {
    if env.dim != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: env.dim,
        });
    }
    let world = planar_world(env, cfg);
    world.validate()?;
    let mut out = Vec::with_capacity(cfg.examples);
    let mut attempts = 0usize;
    while out.len() < cfg.examples {
        attempts += 1;
        if attempts > 1000 * cfg.examples.max(1) {
            return Err(Error::Simulation("could not generate enough planar episodes".into()));
        }
        if let Some(ex) = generate_episode(&world, cfg, &env.name, rng) {
            out.push(ex);
        }
    }
    Ok(out)
}

/// Single transitions from the dataset, usable as validity probes.
pub fn planar_probes(examples: &[Example], count: usize) -> Vec<Transition> {
    examples
        .iter()
        .take(count)
        .map(|ex| Transition {
            state: ex.objects.iter().map(|o| o.positions(0, 2)[0]).collect(),
            robot: ex.robot_points(0),
            action: ex.action_points(0),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::DEFAULT_MOVE_THRESHOLD;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p2(x: f64, y: f64) -> Point {
        Point::new(x, y, 0.0)
    }

    fn world(radii: Vec<f64>, obstacles: Vec<Primitive>) -> PlanarWorld {
        PlanarWorld {
            robot_radius: 0.05,
            disc_radii: radii,
            workspace: Workspace::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
            obstacles,
        }
    }

    #[test]
    fn no_contact_leaves_discs_unchanged() {
        let w = world(vec![0.05, 0.05], vec![]);
        let discs = vec![p2(0.5, 0.5), p2(-0.5, 0.3)];
        let (next, r) = planar_simulate(&w, &discs, &p2(0.0, 0.0), &p2(0.1, -0.1)).unwrap();
        assert_eq!(next, discs);
        assert_eq!(r, p2(0.1, -0.1));
    }

    #[test]
    fn head_on_push() {
        let w = world(vec![0.05], vec![]);
        // Gap 0.02 between surfaces; the robot travels 0.1.
        let (next, r) = planar_simulate(&w, &[p2(0.12, 0.0)], &p2(0.0, 0.0), &p2(0.1, 0.0)).unwrap();
        assert!((next[0].x - 0.12 - 0.08).abs() < 1e-9);
        assert!(next[0].y.abs() < 1e-12);
        assert!(((next[0] - r).norm() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn chain_push_moves_second_disc() {
        let w = world(vec![0.05, 0.05], vec![]);
        let (next, _) = planar_simulate(&w, &[p2(0.1, 0.0), p2(0.2, 0.0)], &p2(0.0, 0.0), &p2(0.05, 0.0)).unwrap();
        assert!((next[0].x - 0.15).abs() < 1e-9);
        assert!((next[1].x - 0.25).abs() < 1e-9);
    }

    #[test]
    fn squeeze_against_wall_fails() {
        let wall = Primitive::Box {
            min: vec![0.2, -1.0],
            max: vec![0.4, 1.0],
        };
        let w = world(vec![0.05], vec![wall]);
        let r = planar_simulate(&w, &[p2(0.1, 0.0)], &p2(0.0, 0.0), &p2(0.1, 0.0));
        assert!(matches!(r, Err(Error::Simulation(_))));
    }

    #[test]
    fn oblique_push_slides_along_wall() {
        let wall = Primitive::Box {
            min: vec![0.2, -1.0],
            max: vec![0.4, 1.0],
        };
        let w = world(vec![0.05], vec![wall.clone()]);
        let dir = p2(1.0, 1.0).normalize();
        let disc = p2(0.14, 0.0);
        let robot = disc - dir * 0.1;
        let (next, _) = planar_simulate(&w, &[disc], &robot, &(robot + dir * 0.06)).unwrap();
        assert!((wall.signed_distance(&next[0]) - 0.05).abs() < 1e-9);
        assert!(next[0].y > 0.0);
    }

    #[test]
    fn deterministic() {
        let w = world(vec![0.05, 0.05, 0.04], vec![]);
        let discs = [p2(0.1, 0.01), p2(0.2, -0.03), p2(0.17, 0.09)];
        let a = planar_simulate(&w, &discs, &p2(0.0, 0.0), &p2(0.15, 0.02)).unwrap();
        let b = planar_simulate(&w, &discs, &p2(0.0, 0.0), &p2(0.15, 0.02)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ik_transforms_robot_and_checks_workspace() {
        let cfg = PlanarGenConfig {
            examples: 3,
            ..Default::default()
        };
        let env = planar_environment(&cfg);
        let data = generate_planar_dataset(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ex = &data[0];
        let id = TransformParams::identity(3, Point::zeros()).unwrap();
        let ik = planar_ik(ex, &id, &env.workspace).unwrap();
        assert!(ik.valid);
        assert_eq!((&ik.robot, &ik.actions), (&ex.robot, &ex.actions));

        let far = TransformParams::new(vec![5.0, 0.0, 0.0], Point::zeros()).unwrap();
        assert!(!planar_ik(ex, &far, &env.workspace).unwrap().valid);

        // Robot-to-disc gaps are preserved exactly by the shared transform.
        let t = TransformParams::new(vec![0.03, -0.02, 0.4], ex.initial_centroid(&[0])).unwrap();
        let ik = planar_ik(ex, &t, &env.workspace).unwrap();
        for (step, r) in ex.robot.iter().enumerate() {
            let orig = Point::new(r[0], r[1], 0.0);
            let disc = ex.objects[0].positions(step, 2)[0];
            let aug_r = Point::new(ik.robot[step][0], ik.robot[step][1], 0.0);
            let aug_d = t.apply_point(&disc);
            assert!(((aug_r - aug_d).norm() - (orig - disc).norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_dataset_shape() {
        let cfg = PlanarGenConfig {
            examples: 20,
            ..Default::default()
        };
        let env = planar_environment(&cfg);
        let data = generate_planar_dataset(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(data.len(), 20);
        let world = planar_world(&env, &cfg);
        let mut contacts = 0;
        for ex in &data {
            ex.validate().unwrap();
            assert_eq!(ex.objects.len(), 9);
            let (moved, _) = ex.decompose_moving(DEFAULT_MOVE_THRESHOLD);
            assert!(!moved.is_empty());
            for t in 0..ex.timesteps() {
                for o in &ex.objects {
                    let p = o.positions(t, 2)[0];
                    assert!(world
                        .obstacles
                        .iter()
                        .all(|ob| ob.signed_distance(&p) >= cfg.disc_radius - 1e-9));
                }
            }
            contacts += ex.label.unwrap() as usize;
        }
        assert!(contacts >= 10, "only {contacts} of 20 episodes end in contact");
    }
}
