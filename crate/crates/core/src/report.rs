//! Run reports: per-augmentation records and dataset-level invariant checks
//! recomputed from the output trajectories alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::augmenter::{AugmentConfig, AugmentationBatch, Diagnostics};
use crate::datamodel::Example;
use crate::diversity::{diversity_report, DiversityReport};
use crate::error::{Error, Result};
use crate::geometry::{EnvironmentField, EnvironmentSpec};
use crate::transforms::{Point, TransformParams};

pub const DIVERSITY_BINS: usize = 10;
/// Workspace slack for the bbox invariant.
pub const BBOX_TOLERANCE: f64 = 1e-6;
/// Relative tolerance for pairwise-distance rigidity.
pub const RIGIDITY_TOLERANCE: f64 = 1e-9;

/// One line of the batch sidecar file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub source: usize,
    pub draw: usize,
    pub accepted: bool,
    pub transform: TransformParams,
    pub diagnostics: Diagnostics,
}

/// Flattens batches into the output dataset and its sidecar records.
pub fn flatten_batches(batches: &[AugmentationBatch]) -> (Vec<Example>, Vec<AugmentationRecord>) {
    let mut examples = Vec::new();
    let mut records = Vec::new();
    for b in batches {
        for (draw, a) in b.augmented.iter().enumerate() {
            examples.push(a.example.clone());
            records.push(AugmentationRecord {
                source: b.source_index,
                draw,
                accepted: a.accepted,
                transform: a.transform.clone(),
                diagnostics: a.diagnostics.clone(),
            });
        }
    }
    (examples, records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub seconds: f64,
    pub augmentations_per_second: f64,
    pub accepted_per_second: f64,
}

/// Fractions are over accepted augmentations unless noted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantRates {
    pub occupancy: f64,
    pub bbox: f64,
    pub dmd: f64,
    pub label: f64,
    pub rigidity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub examples: usize,
    pub augmentations: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Fraction of solved augmentations with any occupancy mismatch before
    /// gating.
    pub raw_mismatch_rate: f64,
    /// Mismatched points over all points of solved augmentations.
    pub raw_point_mismatch_rate: f64,
    pub rates: InvariantRates,
    pub median_delta_sdf: Option<f64>,
    pub max_rigidity_error: f64,
    /// Fallback outputs that differ from their source.
    pub fallback_mismatches: usize,
    pub rejections: BTreeMap<String, usize>,
    pub diversity: Option<DiversityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<Throughput>,
    pub config: AugmentConfig,
}

/// Independent checks on one accepted output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputCheck {
    pub occupancy: bool,
    pub bbox: bool,
    pub delta_sdf: f64,
    pub rigidity_error: f64,
}

fn moved_points(ex: &Example, moved: &[usize], t: usize) -> Vec<Point> {
    moved
        .iter()
        .flat_map(|&i| ex.objects[i].positions(t, ex.dim()))
        .collect()
}

/// Largest relative change in within-timestep pairwise distances.
pub fn rigidity_error(before: &[Point], after: &[Point]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..before.len() {
        for j in i + 1..before.len() {
            let d0 = (before[i] - before[j]).norm();
            let d1 = (after[i] - after[j]).norm();
            let err = if d0 > 0.0 { (d1 - d0).abs() / d0 } else { d1 };
            worst = worst.max(err);
        }
    }
    worst
}

/// Compares source and output point by point. `moved` lists the objects
/// the augmenter may have changed.
pub fn check_output(
    source: &Example,
    output: &Example,
    moved: &[usize],
    field: &EnvironmentField,
) -> Result<OutputCheck> {
    if source.objects.len() != output.objects.len() || source.timesteps() != output.timesteps() {
        return Err(Error::InvalidArgument(
            "output does not match its source's shape".into(),
        ));
    }
    let mut occupancy = true;
    let mut bbox = true;
    let mut rigidity: f64 = 0.0;
    let mut min_before = f64::INFINITY;
    let mut at_min_after = 0.0;
    for t in 0..source.timesteps() {
        let before = moved_points(source, moved, t);
        let after = moved_points(output, moved, t);
        if before.len() != after.len() {
            return Err(Error::InvalidArgument("output changed a point count".into()));
        }
        rigidity = rigidity.max(rigidity_error(&before, &after));
        for (p, q) in before.iter().zip(&after) {
            occupancy &= field.occupancy(p) == field.occupancy(q);
            bbox &= field.workspace().violation(q) <= BBOX_TOLERANCE;
            let (s, _) = field.sdf_query(p);
            if s < min_before {
                min_before = s;
                at_min_after = field.sdf_query(q).0;
            }
        }
    }
    let delta_sdf = if min_before.is_finite() {
        (min_before - at_min_after).abs()
    } else {
        0.0
    };
    Ok(OutputCheck {
        occupancy,
        bbox,
        delta_sdf,
        rigidity_error: rigidity,
    })
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Builds a report from the sources, the output dataset and its records.
pub fn evaluate(
    sources: &[Example],
    outputs: &[Example],
    records: &[AugmentationRecord],
    env: &EnvironmentSpec,
    config: &AugmentConfig,
    seed: u64,
) -> Result<RunReport> {
    if outputs.len() != records.len() {
        return Err(Error::DimensionMismatch {
            expected: records.len(),
            actual: outputs.len(),
        });
    }
    let mut fields: BTreeMap<usize, (Vec<usize>, EnvironmentField)> = BTreeMap::new();
    let mut accepted = 0;
    let mut solved = 0;
    let mut solved_mismatch = 0;
    let mut mismatch_points = 0;
    let mut total_points = 0;
    let (mut occ_ok, mut bbox_ok, mut dmd_ok, mut label_ok, mut rigid_ok) = (0, 0, 0, 0, 0);
    let mut deltas = Vec::new();
    let mut max_rigidity: f64 = 0.0;
    let mut fallback_mismatches = 0;
    let mut rejections = BTreeMap::new();
    let mut transforms = Vec::new();
    for (out, rec) in outputs.iter().zip(records) {
        let src = sources
            .get(rec.source)
            .ok_or_else(|| Error::InvalidArgument(format!("record refers to missing source {}", rec.source)))?;
        if rec.diagnostics.target.is_some() {
            solved += 1;
            solved_mismatch += usize::from(rec.diagnostics.raw_mismatch > 0);
            mismatch_points += rec.diagnostics.raw_mismatch;
            total_points += rec.diagnostics.points;
        }
        if !rec.accepted {
            if out != src {
                fallback_mismatches += 1;
            }
            let reason = rec
                .diagnostics
                .rejection
                .clone()
                .unwrap_or_else(|| "unspecified".into());
            *rejections.entry(reason).or_insert(0) += 1;
            continue;
        }
        accepted += 1;
        transforms.push(rec.transform.clone());
        if !fields.contains_key(&rec.source) {
            let (moved, stationary) = src.decompose_moving(config.move_threshold);
            let field = env.build_with(&src.stationary_primitives(&stationary))?;
            fields.insert(rec.source, (moved, field));
        }
        let (moved, field) = &fields[&rec.source];
        let check = check_output(src, out, moved, field)?;
        occ_ok += usize::from(check.occupancy);
        bbox_ok += usize::from(check.bbox);
        dmd_ok += usize::from(check.delta_sdf <= 2.0 * field.resolution());
        label_ok += usize::from(out.label == src.label);
        rigid_ok += usize::from(check.rigidity_error <= RIGIDITY_TOLERANCE);
        max_rigidity = max_rigidity.max(check.rigidity_error);
        deltas.push(check.delta_sdf);
    }
    let diversity = if transforms.is_empty() {
        None
    } else {
        Some(diversity_report(&transforms, &config.objective.bounds, DIVERSITY_BINS)?)
    };
    Ok(RunReport {
        seed,
        examples: sources.len(),
        augmentations: outputs.len(),
        accepted,
        acceptance_rate: rate(accepted, outputs.len()),
        raw_mismatch_rate: if solved == 0 {
            0.0
        } else {
            rate(solved_mismatch, solved)
        },
        raw_point_mismatch_rate: if total_points == 0 {
            0.0
        } else {
            rate(mismatch_points, total_points)
        },
        rates: InvariantRates {
            occupancy: rate(occ_ok, accepted),
            bbox: rate(bbox_ok, accepted),
            dmd: rate(dmd_ok, accepted),
            label: rate(label_ok, accepted),
            rigidity: rate(rigid_ok, accepted),
        },
        median_delta_sdf: median(deltas),
        max_rigidity_error: max_rigidity,
        fallback_mismatches,
        rejections,
        diversity,
        throughput: None,
        config: config.clone(),
    })
}

/// `evaluate` over in-memory batches.
pub fn evaluate_batches(
    sources: &[Example],
    batches: &[AugmentationBatch],
    env: &EnvironmentSpec,
    config: &AugmentConfig,
    seed: u64,
) -> Result<RunReport> {
    let (outputs, records) = flatten_batches(batches);
    evaluate(sources, &outputs, &records, env, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigidity_of_rotation_is_tiny() {
        let pts = vec![
            Point::new(0.1, 0.2, 0.0),
            Point::new(-0.3, 0.05, 0.0),
            Point::new(0.7, -0.4, 0.0),
        ];
        let t = TransformParams::new(vec![0.3, -0.2, 1.1], Point::new(0.1, 0.1, 0.0)).unwrap();
        let moved: Vec<Point> = pts.iter().map(|p| t.apply_point(p)).collect();
        assert!(rigidity_error(&pts, &moved) < 1e-12);
        let mut stretched = moved.clone();
        stretched[0].x += 1e-3;
        assert!(rigidity_error(&pts, &stretched) > 1e-4);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn empty_denominator_rates() {
        assert_eq!(rate(0, 0), 1.0);
        assert_eq!(rate(1, 4), 0.25);
    }
}
