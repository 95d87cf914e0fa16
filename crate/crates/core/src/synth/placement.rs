//! Distractor scattering: drop-to-floor placement with rejection sampling
//! on hull overlap, restricted to the camera's view.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::assets::{asset, AssetPool};
use super::SynthError;
use crate::geometry::{pose_serde, CameraModel, ConvexHullMesh, Pose, PosedHull};

/// Axis-aligned room extents in meters; the floor is z = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Room {
    fn default() -> Self {
        Self {
            min: [-1.0, -2.5, 0.0],
            max: [4.0, 2.5, 2.5],
        }
    }
}

impl Room {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub asset_id: String,
    #[serde(with = "pose_serde")]
    pub pose: Pose,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistractorConfig {
    /// Inclusive range the distractor count is drawn from.
    pub count: [usize; 2],
    pub scale_range: [f64; 2],
    /// Total rejected candidates tolerated before giving up.
    pub max_attempts: usize,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        Self {
            count: [2, 15],
            scale_range: [0.6, 1.4],
            max_attempts: 2000,
        }
    }
}

/// Draws a distractor count and assets from `pool`, then places them.
pub fn place_distractors(
    rng: &mut impl Rng,
    config: &DistractorConfig,
    pool: AssetPool,
    pool_size: u32,
    room: &Room,
    camera: &CameraModel,
) -> Result<Vec<Placement>, SynthError> {
    let count = rng.random_range(config.count[0]..=config.count[1]);
    let assets: Vec<_> = (0..count)
        .map(|_| {
            let a = asset(pool, rng.random_range(0..pool_size));
            (a.id, a.hull)
        })
        .collect();
    place_hulls(rng, &assets, config.scale_range, config.max_attempts, room, camera)
}

/// Places every hull on the floor at a random visible spot with random yaw
/// and scale so that no two placed hulls intersect.
pub fn place_hulls(
    rng: &mut impl Rng,
    hulls: &[(String, ConvexHullMesh)],
    scale_range: [f64; 2],
    max_attempts: usize,
    room: &Room,
    camera: &CameraModel,
) -> Result<Vec<Placement>, SynthError> {
    let eye = camera.center();
    let mut placed: Vec<(Placement, PosedHull)> = Vec::with_capacity(hulls.len());
    let mut rejections = 0usize;
    for (id, hull) in hulls {
        loop {
            if rejections > max_attempts {
                return Err(SynthError::PlacementFailure {
                    placed: placed.len(),
                    required: hulls.len(),
                });
            }
            let candidate = sample_candidate(rng, hull, scale_range, camera, &eye);
            let ok = candidate.as_ref().is_some_and(|(p, posed)| {
                posed.vertices().iter().all(|v| room.contains(v))
                    && camera.in_frustum(&(p.pose * (hull.centroid() * p.scale)))
                    && !placed.iter().any(|(_, other)| other.intersects(posed))
            });
            if ok {
                let (mut placement, posed) = candidate.unwrap();
                placement.asset_id = id.clone();
                placed.push((placement, posed));
                break;
            }
            rejections += 1;
        }
    }
    Ok(placed.into_iter().map(|(p, _)| p).collect())
}

fn sample_candidate(
    rng: &mut impl Rng,
    hull: &ConvexHullMesh,
    scale_range: [f64; 2],
    camera: &CameraModel,
    eye: &Point3<f64>,
) -> Option<(Placement, PosedHull)> {
    let u = rng.random_range(0.0..camera.width as f64);
    let v = rng.random_range(0.0..camera.height as f64);
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let scale = if scale_range[1] > scale_range[0] {
        rng.random_range(scale_range[0]..=scale_range[1])
    } else {
        scale_range[0]
    };
    let ray = camera.pixel_ray(u, v);
    if ray.z >= -1e-9 {
        return None;
    }
    let t = -eye.z / ray.z;
    let floor = eye + ray * t;

    let rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    let local: Vec<_> = hull.vertices().iter().map(|p| rotation * (p * scale)).collect();
    let lowest = local.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let c = rotation * (hull.centroid() * scale);
    let translation = Translation3::new(floor.x - c.x, floor.y - c.y, -lowest);
    let pose = Isometry3::from_parts(translation, rotation);
    let posed = PosedHull::new(hull, &pose, scale);
    Some((
        Placement {
            asset_id: String::new(),
            pose,
            scale,
        },
        posed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{convex_hulls_intersect, look_at};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn overhead_camera(height: f64) -> CameraModel {
        CameraModel {
            fx: 300.0,
            fy: 300.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            pose: look_at(Point3::new(0.0, 0.0, height), Point3::new(1e-3, 0.0, 0.0), Vector3::x()).unwrap(),
        }
    }

    fn world_hull(hull: &ConvexHullMesh, p: &Placement) -> PosedHull {
        PosedHull::new(hull, &p.pose, p.scale)
    }

    #[test]
    fn minimum_count_in_large_room() {
        let cfg = DistractorConfig {
            count: [2, 2],
            ..Default::default()
        };
        let room = Room {
            min: [-10.0, -10.0, 0.0],
            max: [10.0, 10.0, 10.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = place_distractors(&mut rng, &cfg, AssetPool::Train, 50, &room, &overhead_camera(8.0)).unwrap();
        assert_eq!(out.len(), 2);
        let hulls: Vec<_> = out
            .iter()
            .map(|p| {
                let idx: u32 = p.asset_id["train-".len()..].parse().unwrap();
                asset(AssetPool::Train, idx).hull
            })
            .collect();
        assert!(!world_hull(&hulls[0], &out[0]).intersects(&world_hull(&hulls[1], &out[1])));
    }

    #[test]
    fn unit_cubes_rest_on_floor_without_overlap() {
        // Random sequential placement of unit squares jams near 55% floor
        // coverage, so 15 cubes need a 6x6 m room rather than 4x4.
        let cube = ConvexHullMesh::cube(1.0).unwrap();
        let hulls: Vec<_> = (0..15).map(|i| (format!("cube-{i}"), cube.clone())).collect();
        let room = Room {
            min: [-3.0, -3.0, 0.0],
            max: [3.0, 3.0, 3.0],
        };
        let cam = overhead_camera(6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let out = place_hulls(&mut rng, &hulls, [1.0, 1.0], 200_000, &room, &cam).unwrap();
        assert_eq!(out.len(), 15);
        for p in &out {
            let lowest = world_hull(&cube, p)
                .vertices()
                .iter()
                .map(|v| v.z)
                .fold(f64::INFINITY, f64::min);
            assert!(lowest.abs() <= 1e-6);
            assert!(cam.in_frustum(&(p.pose * Point3::origin())));
        }
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                let d = (out[i].pose.translation.vector - out[j].pose.translation.vector).norm();
                assert!(d > 1.0, "cubes {i} and {j} are {d} m apart");
                assert!(!convex_hulls_intersect(&cube, &out[i].pose, &cube, &out[j].pose));
            }
        }
    }

    #[test]
    fn impossible_packing_fails() {
        let cube = ConvexHullMesh::cube(1.0).unwrap();
        let hulls: Vec<_> = (0..20).map(|i| (format!("cube-{i}"), cube.clone())).collect();
        let room = Room {
            min: [-2.0, -2.0, 0.0],
            max: [2.0, 2.0, 3.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            place_hulls(&mut rng, &hulls, [1.0, 1.0], 5_000, &room, &overhead_camera(6.0)),
            Err(SynthError::PlacementFailure { required: 20, .. })
        ));
    }
}
