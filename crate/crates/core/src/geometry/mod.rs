//! Rigid transforms, convex hulls and the pinhole camera.

mod camera;
mod hull;

pub use camera::{look_at, CameraError, CameraModel, NEAR_PLANE};
pub use hull::{convex_hulls_intersect, ConvexHullMesh, PosedHull, CONTACT_TOLERANCE};

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Pose = Isometry3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate hull: {0}")]
    DegenerateHull(String),
    #[error("hull is not convex: vertex {vertex} lies {distance:e} m outside face {face}")]
    NotConvex { vertex: usize, face: usize, distance: f64 },
    #[error("face {0} references a missing vertex")]
    BadFaceIndex(usize),
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,
}

/// Builds a pose from a rotation matrix, rejecting anything that is not a
/// proper rotation within 1e-9.
pub fn pose_from_matrix(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Pose, GeometryError> {
    if !is_rotation(&rotation) {
        return Err(GeometryError::InvalidRotation);
    }
    let rot = Rotation3::from_matrix_unchecked(rotation);
    Ok(Isometry3::from_parts(
        Translation3::from(translation),
        UnitQuaternion::from_rotation_matrix(&rot),
    ))
}

pub fn is_rotation(m: &Matrix3<f64>) -> bool {
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    ortho <= 1e-9 && (m.determinant() - 1.0).abs() <= 1e-9
}

/// Serializes a pose as a row-major 3x3 rotation matrix plus translation,
/// which is what renderer adapters consume.
pub mod pose_serde {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct RawPose {
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    }

    pub fn serialize<S: Serializer>(pose: &Pose, s: S) -> Result<S::Ok, S::Error> {
        let m = pose.rotation.to_rotation_matrix().into_inner();
        let mut rotation = [[0.0; 3]; 3];
        for (r, row) in rotation.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        let t = pose.translation.vector;
        RawPose {
            rotation,
            translation: [t.x, t.y, t.z],
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        let raw = RawPose::deserialize(d)?;
        let m = Matrix3::from_fn(|r, c| raw.rotation[r][c]);
        pose_from_matrix(m, Vector3::from(raw.translation)).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert_eq!(
            pose_from_matrix(m, Vector3::zeros()),
            Err(GeometryError::InvalidRotation)
        );
    }

    #[test]
    fn pose_json_round_trip() {
        #[derive(serde::Serialize, serde::Deserialize)]
        struct Wrap(#[serde(with = "pose_serde")] Pose);
        let pose = Isometry3::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.3, 0.2, -1.1));
        let text = serde_json::to_string(&Wrap(pose)).unwrap();
        let back: Wrap = serde_json::from_str(&text).unwrap();
        assert!((back.0.to_homogeneous() - pose.to_homogeneous()).abs().max() < 1e-12);
    }
}
