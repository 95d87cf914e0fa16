//! Renderer-agnostic synthetic scene generation.
//!
//! Each batch shares one randomized scene (room, distractors); every
//! example in the batch re-randomizes the arm pose and camera orientation
//! and, with probability `p_grasp`, inserts an object between the fingers
//! and closes them until contact.

pub mod arm;
pub mod assets;
pub mod gripper;
pub mod placement;
pub mod projection;
mod scene;

pub use arm::{perturb_arm_pose, ArmPose, PerturbConfig, RobotConfig};
pub use assets::{asset, Asset, AssetPool};
pub use gripper::{
    aperture_schedule, close_gripper_on_object, place_object_in_gripper, CloseOutcome, GripperDims, GripperGeometry,
    InsertionConfig, ObjectPose,
};
pub use placement::{place_distractors, place_hulls, DistractorConfig, Placement, Room};
pub use projection::{mask_fraction, project_gripper_bbox, project_points_bbox};
pub use scene::{
    batch_seed, generate_batch, generate_batches, write_dataset, Batch, GeneratedExample, GraspedObject,
    SceneAnnotation, SceneSpec,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("placed {placed} of {required} distractors before running out of attempts")]
    PlacementFailure { placed: usize, required: usize },
    #[error("object spans {width:.4} m but the gripper opens to {max_gap:.4} m")]
    ObjectTooLarge { width: f64, max_gap: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("no gripper vertex projects into the image")]
    GripperOutOfView,
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub batch_size: usize,
    /// Probability that an example has an object in the gripper.
    pub p_grasp: f64,
    pub asset_pool: AssetPool,
    pub pool_size: u32,
    pub distractors: DistractorConfig,
    pub insertion: InsertionConfig,
    /// Closing increment of the normalized aperture.
    pub aperture_step: f64,
    pub perturb: PerturbConfig,
    /// Re-draws of the arm pose allowed when the gripper leaves the view.
    pub max_view_retries: usize,
    pub robot: RobotConfig,
    pub gripper: GripperDims,
    pub room: Room,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            p_grasp: 0.5,
            asset_pool: AssetPool::Train,
            pool_size: 200,
            distractors: DistractorConfig::default(),
            insertion: InsertionConfig::default(),
            aperture_step: 0.02,
            perturb: PerturbConfig::default(),
            max_view_retries: 50,
            robot: RobotConfig::default(),
            gripper: GripperDims::default(),
            room: Room::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        let [lo, hi] = self.distractors.count;
        if lo < 2 || hi > 15 || lo > hi {
            return bad("distractors.count must be a range within [2, 15]");
        }
        if !(0.0..=1.0).contains(&self.p_grasp) {
            return bad("p_grasp must lie in [0, 1]");
        }
        if !(self.aperture_step > 0.0 && self.aperture_step <= 1.0) {
            return bad("aperture_step must lie in (0, 1]");
        }
        if self.pool_size == 0 {
            return bad("pool_size must be >= 1");
        }
        for (name, [a, b]) in [
            ("distractors.scale_range", self.distractors.scale_range),
            ("insertion.scale_range", self.insertion.scale_range),
        ] {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return Err(SynthError::InvalidConfig(format!("{name} must be 0 < min <= max")));
            }
        }
        if !(self.insertion.max_fill > 0.0 && self.insertion.max_fill < 1.0) {
            return bad("insertion.max_fill must lie in (0, 1)");
        }
        if !(self.insertion.backoff_step > 0.0) {
            return bad("insertion.backoff_step must be > 0");
        }
        if self
            .perturb
            .joint_delta
            .iter()
            .chain(&self.perturb.camera_delta)
            .any(|d| !(*d >= 0.0))
        {
            return bad("perturbation deltas must be >= 0");
        }
        self.robot.validate().map_err(SynthError::InvalidConfig)?;
        let g = &self.gripper;
        if [
            g.max_gap,
            g.finger_width,
            g.finger_depth,
            g.finger_length,
            g.palm_height,
            g.palm_depth,
        ]
        .iter()
        .any(|v| !(*v > 0.0))
        {
            return bad("gripper dimensions must be positive");
        }
        if (0..3).any(|i| self.room.min[i] >= self.room.max[i]) || self.room.min[2] > 0.0 {
            return bad("room must have positive extents and contain the floor z = 0");
        }
        Ok(())
    }
}
