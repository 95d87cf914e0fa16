use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{is_rotation, pose_from_matrix, pose_serde, GeometryError, Pose};

/// Points closer than this to the image plane (camera z, meters) are
/// treated as behind the camera.
pub const NEAR_PLANE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("focal lengths must be positive")]
    BadFocalLength,
    #[error("principal point ({cx}, {cy}) lies outside the {width}x{height} image")]
    BadPrincipalPoint { cx: f64, cy: f64, width: u32, height: u32 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Pinhole camera. `pose` maps world coordinates into the camera frame
/// (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(with = "pose_serde")]
    pub pose: Pose,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::BadFocalLength);
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if !(0.0..=w).contains(&self.cx) || !(0.0..=h).contains(&self.cy) {
            return Err(CameraError::BadPrincipalPoint {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        let m = self.pose.rotation.to_rotation_matrix().into_inner();
        if !is_rotation(&m) {
            return Err(GeometryError::InvalidRotation.into());
        }
        Ok(())
    }

    pub fn to_camera(&self, world: &Point3<f64>) -> Point3<f64> {
        self.pose * world
    }

    /// Pixel coordinates of a world point, or `None` when it lies behind
    /// the near plane. The result may fall outside the image.
    pub fn project(&self, world: &Point3<f64>) -> Option<Point2<f64>> {
        let p = self.to_camera(world);
        if p.z <= NEAR_PLANE {
            return None;
        }
        Some(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn in_image(&self, px: &Point2<f64>) -> bool {
        px.x >= 0.0 && px.x <= self.width as f64 && px.y >= 0.0 && px.y <= self.height as f64
    }

    pub fn in_frustum(&self, world: &Point3<f64>) -> bool {
        self.project(world).is_some_and(|px| self.in_image(&px))
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        self.pose.inverse() * Point3::origin()
    }

    /// World-frame ray direction through a pixel.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.pose.rotation.inverse() * d).normalize()
    }
}

/// World-to-camera pose for a camera at `eye` looking at `target`, with the
/// image "up" direction aligned to `up` as far as possible.
pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Result<Pose, GeometryError> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(GeometryError::InvalidRotation);
    }
    let forward = forward.normalize();
    let right = forward.cross(&up);
    if right.norm() < 1e-9 {
        return Err(GeometryError::InvalidRotation);
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * eye.coords);
    pose_from_matrix(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn forward_camera(f: f64) -> CameraModel {
        // Camera at the origin looking along world +z.
        CameraModel {
            fx: f,
            fy: f,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            pose: Pose::identity(),
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = forward_camera(500.0);
        let px = cam.project(&Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((px.x, px.y), (320.0, 240.0));
        assert!(cam.project(&Point3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn validation() {
        let mut cam = forward_camera(500.0);
        assert!(cam.validate().is_ok());
        cam.cx = 700.0;
        assert!(cam.validate().is_err());
        cam.cx = 320.0;
        cam.fy = 0.0;
        assert_eq!(cam.validate(), Err(CameraError::BadFocalLength));
    }

    #[test]
    fn look_at_centers_target() {
        let eye = Point3::new(0.0, 0.0, 1.2);
        let target = Point3::new(0.8, 0.1, 0.7);
        let pose = look_at(eye, target, Vector3::z()).unwrap();
        let cam = CameraModel {
            pose,
            ..forward_camera(525.0)
        };
        cam.validate().unwrap();
        let px = cam.project(&target).unwrap();
        assert!((px.x - 320.0).abs() < 1e-9 && (px.y - 240.0).abs() < 1e-9);
        assert!((cam.center() - eye).norm() < 1e-12);
        // World up maps to image up (negative v).
        let above = cam.project(&(target + Vector3::z() * 0.05)).unwrap();
        assert!(above.y < 240.0);
        let ray = cam.pixel_ray(320.0, 240.0);
        assert!((ray - (target - eye).normalize()).norm() < 1e-12);
    }
}
