//! A five-joint mobile-manipulator arm with a pan/tilt head camera.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{look_at, CameraModel, GeometryError, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimit {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// Joint values in the order of [`RobotConfig::joints`]. The lift joint
/// is prismatic (meters); the others are revolute (radians).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmPose {
    pub joint_angles: Vec<f64>,
    /// Pan and tilt offsets applied to the head camera after it is aimed
    /// at the gripper (radians).
    pub camera_orientation_offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub joints: Vec<JointLimit>,
    pub home: Vec<f64>,
    /// Limit on the magnitude of each camera offset angle.
    pub camera_offset_limit: f64,
    pub shoulder_offset: [f64; 3],
    pub upper_arm_length: f64,
    pub hand_length: f64,
    /// Head camera height above the base at zero lift.
    pub head_height: f64,
    pub head_forward: f64,
    pub intrinsics: CameraIntrinsics,
}

impl Default for RobotConfig {
    fn default() -> Self {
        let joint = |name: &str, lower, upper| JointLimit {
            name: name.to_string(),
            lower,
            upper,
        };
        Self {
            joints: vec![
                joint("arm_lift", 0.0, 0.69),
                joint("arm_flex", 0.0, 2.6),
                joint("arm_roll", -1.9, 1.9),
                joint("wrist_flex", -1.9, 1.2),
                joint("wrist_roll", -1.9, 3.6),
            ],
            home: vec![0.2, FRAC_PI_2 + 0.15, 0.0, 0.0, FRAC_PI_2],
            camera_offset_limit: 0.5,
            shoulder_offset: [0.14, 0.08, 0.34],
            upper_arm_length: 0.345,
            hand_length: 0.12,
            head_height: 1.0,
            head_forward: 0.02,
            intrinsics: CameraIntrinsics::default(),
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.joints.len() != 5 || self.home.len() != 5 {
            return Err("robot needs exactly 5 joints and 5 home values".into());
        }
        for (j, &h) in self.joints.iter().zip(&self.home) {
            if !(j.lower <= j.upper) {
                return Err(format!("joint {} has inverted limits", j.name));
            }
            if h < j.lower || h > j.upper {
                return Err(format!("home value of {} is outside its limits", j.name));
            }
        }
        if !(self.camera_offset_limit >= 0.0) {
            return Err("camera_offset_limit must be >= 0".into());
        }
        Ok(())
    }

    pub fn home_pose(&self) -> ArmPose {
        ArmPose {
            joint_angles: self.home.clone(),
            camera_orientation_offset: [0.0, 0.0],
        }
    }

    pub fn within_limits(&self, pose: &ArmPose) -> bool {
        pose.joint_angles.len() == self.joints.len()
            && pose
                .joint_angles
                .iter()
                .zip(&self.joints)
                .all(|(&q, j)| q >= j.lower && q <= j.upper)
            && pose
                .camera_orientation_offset
                .iter()
                .all(|o| o.abs() <= self.camera_offset_limit)
    }

    /// Gripper frame in world coordinates: z is the approach axis, x the
    /// closing axis.
    pub fn gripper_pose(&self, base: &Pose, arm: &ArmPose) -> Pose {
        let q = &arm.joint_angles;
        let [sx, sy, sz] = self.shoulder_offset;
        let rot_y = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a);
        let rot_z = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a);
        let along_z = |d: f64| Isometry3::from(Translation3::new(0.0, 0.0, d));
        base * Isometry3::from(Translation3::new(sx, sy, sz + q[0]))
            * Isometry3::from_parts(Translation3::identity(), rot_y(q[1]))
            * along_z(self.upper_arm_length)
            * Isometry3::from_parts(Translation3::identity(), rot_z(q[2]))
            * Isometry3::from_parts(Translation3::identity(), rot_y(q[3]))
            * Isometry3::from_parts(Translation3::identity(), rot_z(q[4]))
            * along_z(self.hand_length)
    }

    pub fn head_position(&self, base: &Pose, arm: &ArmPose) -> Point3<f64> {
        base * Point3::new(self.head_forward, 0.0, self.head_height + arm.joint_angles[0])
    }

    /// Head camera aimed at `target`, then rotated by the pose's pan/tilt
    /// offsets about its own down and right axes.
    pub fn camera(&self, base: &Pose, arm: &ArmPose, target: &Point3<f64>) -> Result<CameraModel, GeometryError> {
        let eye = self.head_position(base, arm);
        let aimed = look_at(eye, *target, Vector3::z())?;
        let [pan, tilt] = arm.camera_orientation_offset;
        let offset =
            Rotation3::from_axis_angle(&Vector3::y_axis(), pan) * Rotation3::from_axis_angle(&Vector3::x_axis(), tilt);
        let cam_to_world = aimed.rotation.inverse().to_rotation_matrix() * offset;
        let rotation = UnitQuaternion::from_rotation_matrix(&cam_to_world.inverse());
        let translation = -(rotation * eye.coords);
        let i = &self.intrinsics;
        Ok(CameraModel {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
            pose: Isometry3::from_parts(Translation3::from(translation), rotation),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Half-width of the uniform perturbation per joint.
    pub joint_delta: Vec<f64>,
    /// Half-width of the uniform pan/tilt perturbation (radians).
    pub camera_delta: [f64; 2],
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            joint_delta: vec![0.05, 0.15, 0.3, 0.3, 0.5],
            camera_delta: [0.08, 0.08],
        }
    }
}

fn jitter(rng: &mut impl Rng, delta: f64) -> f64 {
    if delta > 0.0 {
        rng.random_range(-delta..=delta)
    } else {
        0.0
    }
}

/// Adds an independent uniform offset in `[-delta, +delta]` to every joint
/// and camera angle, clamping the result to the robot's limits.
pub fn perturb_arm_pose(base: &ArmPose, rng: &mut impl Rng, robot: &RobotConfig, config: &PerturbConfig) -> ArmPose {
    let joint_angles = base
        .joint_angles
        .iter()
        .zip(&robot.joints)
        .enumerate()
        .map(|(i, (&q, limit))| {
            let delta = config.joint_delta.get(i).copied().unwrap_or(0.0);
            (q + jitter(rng, delta)).clamp(limit.lower, limit.upper)
        })
        .collect();
    let lim = robot.camera_offset_limit;
    let camera_orientation_offset =
        [0, 1].map(|k| (base.camera_orientation_offset[k] + jitter(rng, config.camera_delta[k])).clamp(-lim, lim));
    ArmPose {
        joint_angles,
        camera_orientation_offset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_delta_is_identity() {
        let robot = RobotConfig::default();
        let cfg = PerturbConfig {
            joint_delta: vec![0.0; 5],
            camera_delta: [0.0, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = robot.home_pose();
        assert_eq!(perturb_arm_pose(&base, &mut rng, &robot, &cfg), base);
    }

    #[test]
    fn perturbed_poses_respect_limits() {
        let robot = RobotConfig::default();
        let cfg = PerturbConfig {
            joint_delta: vec![1.0, 3.0, 3.0, 3.0, 3.0],
            camera_delta: [1.0, 1.0],
        };
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = perturb_arm_pose(&robot.home_pose(), &mut rng, &robot, &cfg);
            assert!(robot.within_limits(&p), "seed {seed}: {p:?}");
        }
    }

    #[test]
    fn perturbation_mean_matches_base() {
        // 10k draws of U(-0.1, 0.1): standard error of the mean is ~5.8e-4,
        // so a 0.01 window is far outside sampling noise.
        let robot = RobotConfig::default();
        let cfg = PerturbConfig {
            joint_delta: vec![0.0, 0.0, 0.1, 0.0, 0.0],
            camera_delta: [0.0, 0.0],
        };
        let base = robot.home_pose();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| perturb_arm_pose(&base, &mut rng, &robot, &cfg).joint_angles[2])
            .sum::<f64>()
            / n as f64;
        assert!((mean - base.joint_angles[2]).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn home_pose_reaches_forward_and_camera_sees_gripper() {
        let robot = RobotConfig::default();
        robot.validate().unwrap();
        let base = Pose::identity();
        let arm = robot.home_pose();
        let g = robot.gripper_pose(&base, &arm);
        let p = g.translation.vector;
        assert!(p.x > 0.4 && p.z > 0.2 && p.z < 1.0, "{p:?}");
        let cam = robot.camera(&base, &arm, &Point3::from(p)).unwrap();
        cam.validate().unwrap();
        let px = cam.project(&Point3::from(p)).unwrap();
        assert!((px.x - 320.0).abs() < 1e-6 && (px.y - 240.0).abs() < 1e-6);
    }

    #[test]
    fn pan_offset_moves_target_horizontally() {
        let robot = RobotConfig::default();
        let base = Pose::identity();
        let mut arm = robot.home_pose();
        let target = Point3::from(robot.gripper_pose(&base, &arm).translation.vector);
        arm.camera_orientation_offset = [0.1, 0.0];
        let cam = robot.camera(&base, &arm, &target).unwrap();
        cam.validate().unwrap();
        let px = cam.project(&target).unwrap();
        assert!((px.x - 320.0).abs() > 10.0 && (px.y - 240.0).abs() < 1e-6);
    }
}
