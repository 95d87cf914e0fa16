//! Parallel-jaw gripper model, object insertion and collision-stepped
//! closing.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geometry::{pose_serde, ConvexHullMesh, Pose, PosedHull};

/// How aperture maps to finger motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FingerAxis {
    /// Fingers slide symmetrically along the gripper x axis; the gap
    /// between their inner faces is `aperture * max_gap`.
    Prismatic { max_gap: f64 },
}

/// Finger hulls are expressed in finger frames whose origin lies on the
/// inner (contact) face; the left finger extends toward -x, the right one
/// toward +x. The palm sits below z = 0 and fingers extend along +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperGeometry {
    pub palm: ConvexHullMesh,
    pub finger_left: ConvexHullMesh,
    pub finger_right: ConvexHullMesh,
    pub finger_axis: FingerAxis,
    pub finger_length: f64,
    /// 1 is fully open, 0 fully closed.
    pub aperture: f64,
    #[serde(with = "pose_serde")]
    pub base_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperDims {
    pub max_gap: f64,
    pub finger_width: f64,
    pub finger_depth: f64,
    pub finger_length: f64,
    pub palm_height: f64,
    pub palm_depth: f64,
}

impl Default for GripperDims {
    fn default() -> Self {
        Self {
            max_gap: 0.10,
            finger_width: 0.012,
            finger_depth: 0.022,
            finger_length: 0.07,
            palm_height: 0.04,
            palm_depth: 0.06,
        }
    }
}

impl GripperGeometry {
    pub fn parallel_jaw(dims: &GripperDims) -> Self {
        let half_span = 0.5 * dims.max_gap + dims.finger_width;
        let hd = 0.5 * dims.finger_depth;
        let cuboid = |lo: [f64; 3], hi: [f64; 3]| {
            ConvexHullMesh::cuboid(Point3::from(lo), Point3::from(hi)).expect("gripper dims are positive")
        };
        Self {
            palm: cuboid(
                [-half_span, -0.5 * dims.palm_depth, -dims.palm_height],
                [half_span, 0.5 * dims.palm_depth, 0.0],
            ),
            finger_left: cuboid([-dims.finger_width, -hd, 0.0], [0.0, hd, dims.finger_length]),
            finger_right: cuboid([0.0, -hd, 0.0], [dims.finger_width, hd, dims.finger_length]),
            finger_axis: FingerAxis::Prismatic { max_gap: dims.max_gap },
            finger_length: dims.finger_length,
            aperture: 1.0,
            base_pose: Pose::identity(),
        }
    }

    pub fn max_gap(&self) -> f64 {
        match self.finger_axis {
            FingerAxis::Prismatic { max_gap } => max_gap,
        }
    }

    /// Left and right finger frames (gripper frame) at `aperture`.
    pub fn finger_poses(&self, aperture: f64) -> (Pose, Pose) {
        let half = 0.5 * aperture * self.max_gap();
        (
            Isometry3::from(Translation3::new(-half, 0.0, 0.0)),
            Isometry3::from(Translation3::new(half, 0.0, 0.0)),
        )
    }

    /// Midpoint between the two fingertip pads, in the gripper frame.
    pub fn grasp_center(&self) -> Point3<f64> {
        Point3::new(0.0, 0.0, 0.75 * self.finger_length)
    }

    /// Fingertip pad centers in world coordinates at the current aperture.
    pub fn fingertips_world(&self) -> [Point3<f64>; 2] {
        let (l, r) = self.finger_poses(self.aperture);
        let c = self.grasp_center();
        [self.base_pose * (l * c), self.base_pose * (r * c)]
    }

    /// All gripper hulls in world coordinates at the current aperture.
    pub fn world_hulls(&self) -> [PosedHull; 3] {
        let (l, r) = self.finger_poses(self.aperture);
        [
            PosedHull::new(&self.palm, &self.base_pose, 1.0),
            PosedHull::new(&self.finger_left, &(self.base_pose * l), 1.0),
            PosedHull::new(&self.finger_right, &(self.base_pose * r), 1.0),
        ]
    }

    fn fingers_hit(&self, aperture: f64, object: &PosedHull) -> bool {
        let (l, r) = self.finger_poses(aperture);
        PosedHull::new(&self.finger_left, &l, 1.0).intersects(object)
            || PosedHull::new(&self.finger_right, &r, 1.0).intersects(object)
    }
}

/// Object placement relative to the gripper frame: `pose * (scale * v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    #[serde(with = "pose_serde")]
    pub pose: Pose,
    pub scale: f64,
}

impl ObjectPose {
    pub fn posed(&self, hull: &ConvexHullMesh) -> PosedHull {
        PosedHull::new(hull, &self.pose, self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloseOutcome {
    pub final_aperture: f64,
    pub contact: bool,
    /// Apertures tested, in order.
    pub tested: Vec<f64>,
}

/// Descending aperture schedule 1, 1-Δ, 1-2Δ, ..., ending exactly at 0.
pub fn aperture_schedule(step: f64) -> Vec<f64> {
    assert!(step > 0.0 && step <= 1.0, "aperture step must lie in (0, 1]");
    let steps = (1.0 / step - 1e-9).ceil() as usize;
    (0..=steps).map(|k| (1.0 - k as f64 * step).max(0.0)).collect()
}

/// Closes the fingers step by step until either finger touches the object
/// and returns the last aperture before that contact. Without contact the
/// gripper closes fully and `contact` is false.
pub fn close_gripper_on_object(
    gripper: &GripperGeometry,
    object_hull: &ConvexHullMesh,
    object_pose: &ObjectPose,
    step: f64,
) -> Result<CloseOutcome, SynthError> {
    let object = object_pose.posed(object_hull);
    let schedule = aperture_schedule(step);
    let mut tested = Vec::with_capacity(schedule.len());
    for (k, &aperture) in schedule.iter().enumerate() {
        tested.push(aperture);
        if gripper.fingers_hit(aperture, &object) {
            if k == 0 {
                return Err(SynthError::PreconditionViolation(
                    "object intersects the fingers at full aperture".into(),
                ));
            }
            return Ok(CloseOutcome {
                final_aperture: schedule[k - 1],
                contact: true,
                tested,
            });
        }
    }
    Ok(CloseOutcome {
        final_aperture: 0.0,
        contact: false,
        tested,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InsertionConfig {
    /// Range the object's scale is drawn from.
    pub scale_range: [f64; 2],
    /// Largest fraction of the open gap the object may span across the
    /// closing axis.
    pub max_fill: f64,
    /// Translation increment when backing the object away from the palm.
    pub backoff_step: f64,
}

impl Default for InsertionConfig {
    fn default() -> Self {
        Self {
            scale_range: [0.5, 1.5],
            max_fill: 0.9,
            backoff_step: 0.001,
        }
    }
}

/// Puts the object between the open fingertips with a random rotation
/// about the approach axis, then backs it away from the palm until nothing
/// touches it at full aperture.
pub fn place_object_in_gripper(
    gripper: &GripperGeometry,
    object_hull: &ConvexHullMesh,
    rng: &mut impl Rng,
    config: &InsertionConfig,
) -> Result<ObjectPose, SynthError> {
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);

    let rotated: Vec<_> = object_hull.vertices().iter().map(|v| rotation * v).collect();
    let lo = rotated.iter().fold(Point3::from([f64::INFINITY; 3]), |a, p| a.inf(p));
    let hi = rotated
        .iter()
        .fold(Point3::from([f64::NEG_INFINITY; 3]), |a, p| a.sup(p));
    let width = hi.x - lo.x;

    let [s_min, s_max] = config.scale_range;
    let cap = config.max_fill * gripper.max_gap() / width;
    let s_hi = s_max.min(cap);
    if s_hi < s_min {
        return Err(SynthError::ObjectTooLarge {
            width: width * s_min,
            max_gap: gripper.max_gap(),
        });
    }
    let scale = if s_hi > s_min {
        rng.random_range(s_min..=s_hi)
    } else {
        s_min
    };

    let mid = nalgebra::center(&lo, &hi).coords * scale;
    let target = gripper.grasp_center();
    let (l, r) = gripper.finger_poses(1.0);
    let palm = PosedHull::new(&gripper.palm, &Pose::identity(), 1.0);
    let left = PosedHull::new(&gripper.finger_left, &l, 1.0);
    let right = PosedHull::new(&gripper.finger_right, &r, 1.0);

    let max_steps = (gripper.finger_length / config.backoff_step).ceil() as usize;
    for k in 0..=max_steps {
        let offset = Vector3::new(0.0, 0.0, k as f64 * config.backoff_step);
        let pose = Isometry3::from_parts(Translation3::from(target.coords - mid + offset), rotation);
        let candidate = ObjectPose { pose, scale };
        let posed = candidate.posed(object_hull);
        if !palm.intersects(&posed) && !left.intersects(&posed) && !right.intersects(&posed) {
            return Ok(candidate);
        }
    }
    Err(SynthError::ObjectTooLarge {
        width: width * scale,
        max_gap: gripper.max_gap(),
    })
}
