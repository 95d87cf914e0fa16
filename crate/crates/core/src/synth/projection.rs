//! Ground-truth boxes from pinhole projection of hull vertices.
//!
//! Visibility is approximated by frustum membership: no occlusion culling
//! is performed, so a gripper hidden behind an obstacle still gets a box.

use nalgebra::{Point2, Point3};

use super::gripper::{GripperGeometry, ObjectPose};
use super::SynthError;
use crate::dataset::BoundingBox;
use crate::geometry::{CameraModel, ConvexHullMesh, PosedHull};

/// Smallest box side (pixels) emitted for degenerate projections.
pub const MIN_BOX_SIDE: f64 = 2.0;

fn gripper_points(gripper: &GripperGeometry, held: Option<(&ConvexHullMesh, &ObjectPose)>) -> Vec<Vec<Point3<f64>>> {
    let mut hulls: Vec<Vec<Point3<f64>>> = gripper.world_hulls().iter().map(|h| h.vertices().to_vec()).collect();
    if let Some((hull, pose)) = held {
        let world = PosedHull::new(hull, &(gripper.base_pose * pose.pose), pose.scale);
        hulls.push(world.vertices().to_vec());
    }
    hulls
}

/// Box around the gripper (and held object) hull vertices. Vertices in
/// front of the camera are projected and the result is clamped to the
/// image; at least one vertex must land inside the image.
pub fn project_gripper_bbox(
    camera: &CameraModel,
    gripper: &GripperGeometry,
    held: Option<(&ConvexHullMesh, &ObjectPose)>,
) -> Result<BoundingBox, SynthError> {
    let points: Vec<_> = gripper_points(gripper, held).into_iter().flatten().collect();
    project_points_bbox(camera, &points)
}

pub fn project_points_bbox(camera: &CameraModel, points: &[Point3<f64>]) -> Result<BoundingBox, SynthError> {
    let projected: Vec<Point2<f64>> = points.iter().filter_map(|p| camera.project(p)).collect();
    if !projected.iter().any(|px| camera.in_image(px)) {
        return Err(SynthError::GripperOutOfView);
    }
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for px in &projected {
        x0 = x0.min(px.x);
        y0 = y0.min(px.y);
        x1 = x1.max(px.x);
        y1 = y1.max(px.y);
    }
    let (x0, x1) = widen(x0.clamp(0.0, w), x1.clamp(0.0, w), w);
    let (y0, y1) = widen(y0.clamp(0.0, h), y1.clamp(0.0, h), h);
    BoundingBox::new(x0, y0, x1, y1).map_err(|e| SynthError::DegenerateBox(e.to_string()))
}

/// Grows `[lo, hi]` symmetrically to the minimum side, shifting it back
/// inside `[0, limit]` when it pokes out.
fn widen(lo: f64, hi: f64, limit: f64) -> (f64, f64) {
    if hi - lo >= MIN_BOX_SIDE {
        return (lo, hi);
    }
    let c = 0.5 * (lo + hi);
    let half = 0.5 * MIN_BOX_SIDE;
    let c = c.clamp(half, (limit - half).max(half));
    ((c - half).max(0.0), (c + half).min(limit))
}

fn convex_hull_2d(mut pts: Vec<Point2<f64>>) -> Vec<Point2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross =
        |o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut lower: Vec<Point2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_convex(poly: &[Point2<f64>], p: &Point2<f64>) -> bool {
    if poly.len() < 3 {
        return false;
    }
    (0..poly.len()).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

/// Fraction of `region` covered by the gripper/object silhouette, sampled
/// on a grid of at most 200x200 pixel centers. Hulls with any vertex
/// behind the camera are skipped.
pub fn mask_fraction(
    camera: &CameraModel,
    gripper: &GripperGeometry,
    held: Option<(&ConvexHullMesh, &ObjectPose)>,
    region: &BoundingBox,
) -> f64 {
    let silhouettes: Vec<Vec<Point2<f64>>> = gripper_points(gripper, held)
        .iter()
        .filter_map(|pts| pts.iter().map(|p| camera.project(p)).collect::<Option<Vec<_>>>())
        .map(convex_hull_2d)
        .collect();
    let nx = (region.width().ceil() as usize).clamp(1, 200);
    let ny = (region.height().ceil() as usize).clamp(1, 200);
    let mut covered = 0usize;
    for i in 0..nx {
        for j in 0..ny {
            let p = Point2::new(
                region.x_min + (i as f64 + 0.5) * region.width() / nx as f64,
                region.y_min + (j as f64 + 0.5) * region.height() / ny as f64,
            );
            if silhouettes.iter().any(|s| inside_convex(s, &p)) {
                covered += 1;
            }
        }
    }
    covered as f64 / (nx * ny) as f64
}
