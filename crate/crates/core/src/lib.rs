//! Rigid-body augmentation of manipulation trajectories.
//!
//! Each augmentation moves the objects that move in a demonstration by one
//! rigid transform, searched so that occupancy, obstacle distance and
//! workspace membership are kept and the learned validity error stays low.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augmenter;
pub mod config;
pub mod datamodel;
pub mod diversity;
pub mod error;
pub mod geometry;
pub mod objectives;
pub mod report;
pub mod scenarios;
pub mod solver;
pub mod transforms;
pub mod validlearn;

pub use augmenter::{augment, augment_batch, augment_dataset, AugmentConfig, AugmentationBatch, AugmentedExample};
pub use datamodel::{Example, ObjectTrack, Scenario};
pub use error::{Error, Result};
pub use geometry::{EnvironmentField, EnvironmentSpec, Primitive, Workspace};
pub use objectives::{ObjectiveConfig, Term};
pub use report::{AugmentationRecord, RunReport};
pub use solver::SolverConfig;
pub use transforms::{Point, TransformBounds, TransformKind, TransformParams};
pub use validlearn::{TrainConfig, ValidityModel};
