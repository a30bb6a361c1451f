//! Desk-scale scenarios: deterministic simulators, dataset generators and
//! the robot adapters that follow an augmented object state.

pub mod planar;
pub mod rope;

use crate::datamodel::{Example, ObjectTrack, Scenario};
use crate::error::{Error, Result};
use crate::geometry::Workspace;
use crate::transforms::{TransformBounds, TransformParams};

/// Augmented robot states and actions with the `ik_valid` flag.
#[derive(Clone, Debug, PartialEq)]
pub struct IkResult {
    pub robot: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub valid: bool,
}

/// Default augmentation bounds: ±0.1 m translation, ±π/4 yaw on the planar
/// scenario and ±π/2 on every rope angle.
pub fn default_bounds(scenario: Scenario) -> TransformBounds {
    let angle = match scenario {
        Scenario::Planar => std::f64::consts::FRAC_PI_4,
        Scenario::Rope => std::f64::consts::FRAC_PI_2,
    };
    TransformBounds::symmetric(scenario.transform_kind(), 0.1, angle).expect("default bounds are valid")
}

/// Dispatches to the scenario's robot adapter. `objects` are the augmented
/// object tracks (moved ones transformed) and `moved` their indices.
pub fn aug_robot(
    example: &Example,
    objects: &[ObjectTrack],
    moved: &[usize],
    t: &TransformParams,
    workspace: &Workspace,
) -> Result<IkResult> {
    match example.scenario {
        Scenario::Planar => planar::planar_ik(example, t, workspace),
        Scenario::Rope => {
            let &[rope] = moved else {
                return Err(Error::InvalidArgument(format!(
                    "rope examples need exactly one moved object, got {}",
                    moved.len()
                )));
            };
            rope::rope_ik(example, &objects[rope], t, workspace)
        }
    }
}
