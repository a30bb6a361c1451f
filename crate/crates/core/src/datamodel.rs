//! Trajectory examples and line-delimited JSON datasets.
//!
//! Each dataset line is one [`Example`]:
//!
//! ```json
//! {"scenario":"planar","env":"table","objects":[{"id":"disc0","moving":true,
//!   "points":[[0.1,0.2],[0.12,0.2]],"velocities":[[0.2,0.0],[0.0,0.0]]}],
//!  "robot":[[0.0,0.2],[0.06,0.2]],"actions":[[0.06,0.2]],"label":1}
//! ```
//!
//! `points[t]` holds the flattened coordinates of every point of the object
//! at time step `t` (one point per disc, 25 per rope). Unknown keys survive a
//! load/save cycle.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::Primitive;
use crate::transforms::{point_from_coords, point_to_coords, Point, TransformKind, TransformParams};

/// Default displacement above which an object counts as moved, in meters.
pub const DEFAULT_MOVE_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Planar,
    Rope,
}

impl Scenario {
    pub fn spatial_dim(self) -> usize {
        match self {
            Scenario::Planar => 2,
            Scenario::Rope => 3,
        }
    }

    pub fn transform_kind(self) -> TransformKind {
        match self {
            Scenario::Planar => TransformKind::Se2,
            Scenario::Rope => TransformKind::Se3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Planar => "planar",
            Scenario::Rope => "rope",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planar" => Ok(Scenario::Planar),
            "rope" => Ok(Scenario::Rope),
            other => Err(Error::InvalidArgument(format!("unknown scenario tag '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving: Option<bool>,
    /// Disc/sphere radius; used when a stationary object joins the environment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub velocities: Vec<Vec<f64>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ObjectTrack {
    pub fn timesteps(&self) -> usize {
        self.points.len()
    }

    fn unflatten(coords: &[f64], dim: usize) -> Vec<Point> {
        coords
            .chunks(dim)
            .map(|c| point_from_coords(c, dim).expect("chunk length equals dim"))
            .collect()
    }

    pub fn positions(&self, t: usize, dim: usize) -> Vec<Point> {
        Self::unflatten(&self.points[t], dim)
    }

    pub fn velocity_vectors(&self, t: usize, dim: usize) -> Option<Vec<Point>> {
        self.velocities.get(t).map(|v| Self::unflatten(v, dim))
    }

    pub fn points_per_state(&self, dim: usize) -> usize {
        self.points.first().map_or(0, |p| p.len() / dim)
    }

    /// Largest distance any point travels from its initial position.
    pub fn max_displacement(&self, dim: usize) -> f64 {
        let Some(first) = self.points.first() else {
            return 0.0;
        };
        let start = Self::unflatten(first, dim);
        (1..self.timesteps())
            .flat_map(|t| {
                let start = &start;
                self.positions(t, dim)
                    .into_iter()
                    .zip(start.iter())
                    .map(|(p, s)| (p - s).norm())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Applies the transform to every point and rotates every velocity.
    pub fn transformed(&self, t: &TransformParams, dim: usize) -> ObjectTrack {
        let flatten = |pts: Vec<Point>| -> Vec<f64> { pts.iter().flat_map(|p| point_to_coords(p, dim)).collect() };
        let points = (0..self.timesteps())
            .map(|k| flatten(t.apply_to_points(&self.positions(k, dim), None).0))
            .collect();
        let velocities = (0..self.velocities.len())
            .map(|k| {
                let v = Self::unflatten(&self.velocities[k], dim);
                flatten(v.iter().map(|v| t.apply_vector(v)).collect())
            })
            .collect();
        ObjectTrack {
            points,
            velocities,
            ..self.clone()
        }
    }
}

/// One trajectory record `{s, r, a, e}` with an optional binary label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub scenario: Scenario,
    pub env: String,
    pub objects: Vec<ObjectTrack>,
    pub robot: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A moved-object point tagged with where it came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaggedPoint {
    pub object: usize,
    pub timestep: usize,
    pub index: usize,
    pub position: Point,
}

impl Example {
    pub fn dim(&self) -> usize {
        self.scenario.spatial_dim()
    }

    pub fn timesteps(&self) -> usize {
        self.robot.len()
    }

    /// Checks structural invariants; the error names the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let dim = self.dim();
        let steps = self.robot.len();
        if steps < 2 {
            return Err(format!("field 'robot': need at least 2 time steps, got {steps}"));
        }
        if self.actions.len() != steps && self.actions.len() + 1 != steps {
            return Err(format!(
                "field 'actions': expected {} or {} entries, got {}",
                steps,
                steps - 1,
                self.actions.len()
            ));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.points.len() != steps {
                return Err(format!(
                    "field 'objects[{i}].points': expected {steps} time steps, got {}",
                    obj.points.len()
                ));
            }
            let width = obj.points[0].len();
            if width == 0 || width % dim != 0 {
                return Err(format!(
                    "field 'objects[{i}].points': coordinate count {width} is not a positive multiple of {dim}"
                ));
            }
            if obj.points.iter().any(|p| p.len() != width) {
                return Err(format!("field 'objects[{i}].points': ragged time steps"));
            }
            if !obj.velocities.is_empty()
                && (obj.velocities.len() != steps || obj.velocities.iter().any(|v| v.len() != width))
            {
                return Err(format!("field 'objects[{i}].velocities': shape differs from points"));
            }
            if let Some(r) = obj.radius {
                if !(r > 0.0) {
                    return Err(format!("field 'objects[{i}].radius': must be positive"));
                }
            }
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(format!("field 'label': must be 0 or 1, got {l}"));
            }
        }
        Ok(())
    }

    /// Splits objects into moved and stationary by maximum point
    /// displacement. Returns object indices.
    pub fn decompose_moving(&self, threshold: f64) -> (Vec<usize>, Vec<usize>) {
        let dim = self.dim();
        (0..self.objects.len()).partition(|&i| self.objects[i].max_displacement(dim) > threshold)
    }

    /// Every point of the given objects over all time steps, object-major.
    pub fn extract_points(&self, moved: &[usize]) -> Vec<TaggedPoint> {
        let dim = self.dim();
        let mut out = Vec::new();
        for &object in moved {
            let track = &self.objects[object];
            for timestep in 0..track.timesteps() {
                for (index, position) in track.positions(timestep, dim).into_iter().enumerate() {
                    out.push(TaggedPoint {
                        object,
                        timestep,
                        index,
                        position,
                    });
                }
            }
        }
        out
    }

    /// Environment primitives for stationary objects that carry a radius,
    /// placed at their initial positions.
    pub fn stationary_primitives(&self, stationary: &[usize]) -> Vec<Primitive> {
        let dim = self.dim();
        stationary
            .iter()
            .filter_map(|&i| {
                let obj = &self.objects[i];
                let radius = obj.radius?;
                Some(
                    obj.positions(0, dim)
                        .into_iter()
                        .map(move |p| Primitive::Disc {
                            center: point_to_coords(&p, dim),
                            radius,
                        })
                        .collect::<Vec<_>>(),
                )
            })
            .flatten()
            .collect()
    }

    /// Centroid of the given objects' points at the first time step.
    pub fn initial_centroid(&self, moved: &[usize]) -> Point {
        let dim = self.dim();
        let pts: Vec<Point> = moved.iter().flat_map(|&i| self.objects[i].positions(0, dim)).collect();
        if pts.is_empty() {
            return Point::zeros();
        }
        pts.iter().sum::<Point>() / pts.len() as f64
    }

    pub fn robot_points(&self, t: usize) -> Vec<Point> {
        ObjectTrack::unflatten(&self.robot[t], self.dim())
    }

    pub fn action_points(&self, t: usize) -> Vec<Point> {
        ObjectTrack::unflatten(&self.actions[t], self.dim())
    }
}

/// Loads a line-delimited dataset of any record type.
pub fn load_jsonl<T: DeserializeOwned>(
    path: &Path,
    validate: impl Fn(&T) -> std::result::Result<(), String>,
) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Dataset {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: T = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        validate(&record).map_err(err)?;
        out.push(record);
    }
    Ok(out)
}

pub fn save_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    load_jsonl(path, Example::validate)
}

pub fn save_dataset(examples: &[Example], path: &Path) -> Result<()> {
    save_jsonl(examples, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc_track(id: &str, xs: &[(f64, f64)]) -> ObjectTrack {
        ObjectTrack {
            id: id.into(),
            moving: None,
            radius: Some(0.03),
            points: xs.iter().map(|&(x, y)| vec![x, y]).collect(),
            velocities: vec![],
            extra: Map::new(),
        }
    }

    fn planar(objects: Vec<ObjectTrack>, steps: usize) -> Example {
        Example {
            scenario: Scenario::Planar,
            env: "table".into(),
            objects,
            robot: vec![vec![0.0, 0.0]; steps],
            actions: vec![vec![0.0, 0.0]; steps - 1],
            label: None,
            extra: Map::new(),
        }
    }

    #[test]
    fn decompose_static_and_moved() {
        let still = disc_track("a", &[(0.1, 0.1), (0.1, 0.1)]);
        let pushed = disc_track("b", &[(0.3, 0.1), (0.35, 0.1)]);
        let ex = planar(vec![still.clone(), still.clone()], 2);
        assert_eq!(ex.decompose_moving(1e-3), (vec![], vec![0, 1]));
        let ex = planar(vec![still.clone(), pushed], 2);
        assert_eq!(ex.decompose_moving(1e-3), (vec![1], vec![0]));
        let jitter = disc_track("c", &[(0.1, 0.1), (0.1 + 1e-12, 0.1)]);
        let ex = planar(vec![jitter], 2);
        assert_eq!(ex.decompose_moving(0.0), (vec![0], vec![]));
    }

    #[test]
    fn extract_counts() {
        let mut objects = Vec::new();
        for i in 0..9 {
            let dx = if i < 4 { 0.01 } else { 0.0 };
            let pts: Vec<(f64, f64)> = (0..50).map(|t| (i as f64 * 0.1 + dx * t as f64, 0.0)).collect();
            objects.push(disc_track(&format!("d{i}"), &pts));
        }
        let ex = planar(objects, 50);
        let (moved, stationary) = ex.decompose_moving(DEFAULT_MOVE_THRESHOLD);
        assert_eq!(moved.len(), 4);
        assert_eq!(ex.extract_points(&moved).len(), 200);
        assert_eq!(ex.stationary_primitives(&stationary).len(), 5);
        assert!(ex.extract_points(&[]).is_empty());
    }

    #[test]
    fn rope_points_per_state() {
        let coords: Vec<f64> = (0..25).flat_map(|i| [i as f64 * 0.01, 0.0, 0.5]).collect();
        let ex = Example {
            scenario: Scenario::Rope,
            env: "e".into(),
            objects: vec![ObjectTrack {
                id: "rope".into(),
                moving: Some(true),
                radius: None,
                points: vec![coords.clone(), coords],
                velocities: vec![],
                extra: Map::new(),
            }],
            robot: vec![vec![0.0; 6]; 2],
            actions: vec![vec![0.0; 6]],
            label: Some(1),
            extra: Map::new(),
        };
        assert!(ex.validate().is_ok());
        assert_eq!(ex.extract_points(&[0]).len(), 50);
    }

    #[test]
    fn validation_names_fields() {
        let mut ex = planar(vec![disc_track("a", &[(0.0, 0.0), (0.0, 0.0)])], 2);
        ex.label = Some(3);
        assert!(ex.validate().unwrap_err().contains("label"));
        ex.label = None;
        ex.actions.clear();
        ex.actions.push(vec![]);
        ex.actions.push(vec![]);
        ex.actions.push(vec![]);
        assert!(ex.validate().unwrap_err().contains("actions"));
        let single = planar(vec![], 2);
        let mut single = single;
        single.robot.truncate(1);
        single.actions.clear();
        assert!(single.validate().unwrap_err().contains("robot"));
    }

    fn random_example(rng: &mut ChaCha8Rng) -> Example {
        let steps = rng.random_range(2..6);
        let n = rng.random_range(0..4);
        let objects = (0..n)
            .map(|i| {
                let pts: Vec<(f64, f64)> = (0..steps).map(|_| (rng.random(), rng.random::<f64>() - 0.5)).collect();
                let mut t = disc_track(&format!("o{i}"), &pts);
                t.velocities = (0..steps).map(|_| vec![rng.random(), 1.0 / 3.0]).collect();
                t
            })
            .collect();
        let mut ex = planar(objects, steps);
        ex.label = if rng.random() {
            Some(rng.random_range(0..2))
        } else {
            None
        };
        ex.robot = (0..steps).map(|_| vec![rng.random(), rng.random()]).collect();
        if rng.random() {
            ex.extra.insert("note".into(), Value::String("kept".into()));
        }
        ex
    }

    #[test]
    fn dataset_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let examples: Vec<Example> = (0..100).map(|_| random_example(&mut rng)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&examples, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, examples);
        let p2 = dir.path().join("e.jsonl");
        save_dataset(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_reports_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let examples: Vec<Example> = (0..3).map(|_| random_example(&mut rng)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&examples, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 20]).unwrap();
        match load_dataset(&path) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_actions_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            r#"{"scenario":"planar","env":"t","objects":[],"robot":[[0,0],[0,0]]}"#,
        )
        .unwrap();
        let err = load_dataset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("actions") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn transformed_track_rotates_velocities() {
        let mut track = disc_track("a", &[(1.0, 0.0), (1.0, 0.0)]);
        track.velocities = vec![vec![0.1, 0.0], vec![0.0, 0.0]];
        let t = TransformParams::new(vec![0.0, 0.0, std::f64::consts::FRAC_PI_2], Point::zeros()).unwrap();
        let out = track.transformed(&t, 2);
        assert!((out.points[0][0]).abs() < 1e-12 && (out.points[0][1] - 1.0).abs() < 1e-12);
        assert!((out.velocities[0][1] - 0.1).abs() < 1e-12);
        assert_eq!(out.id, "a");
    }
}
