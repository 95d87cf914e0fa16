use std::collections::HashSet;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose};

/// Distance under which two surfaces count as touching.
pub const CONTACT_TOLERANCE: f64 = 1e-9;

/// Closed convex polyhedron with outward-oriented triangle faces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHull", into = "RawHull")]
pub struct ConvexHullMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    // Deduplicated unit face normals and edge directions, used as SAT axes.
    normals: Vec<Vector3<f64>>,
    edges: Vec<Vector3<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHull {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl TryFrom<RawHull> for ConvexHullMesh {
    type Error = GeometryError;

    fn try_from(raw: RawHull) -> Result<Self, Self::Error> {
        let vertices = raw.vertices.into_iter().map(Point3::from).collect();
        ConvexHullMesh::from_mesh(vertices, raw.faces)
    }
}

impl From<ConvexHullMesh> for RawHull {
    fn from(h: ConvexHullMesh) -> Self {
        RawHull {
            vertices: h.vertices.iter().map(|p| [p.x, p.y, p.z]).collect(),
            faces: h.faces,
        }
    }
}

fn face_normal(v: &[Point3<f64>], f: &[usize; 3]) -> Vector3<f64> {
    (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]))
}

fn signed_distance(v: &[Point3<f64>], f: &[usize; 3], p: &Point3<f64>) -> f64 {
    let n = face_normal(v, f);
    let len = n.norm();
    if len == 0.0 {
        return 0.0;
    }
    n.dot(&(p - v[f[0]])) / len
}

fn push_unique_direction(dirs: &mut Vec<Vector3<f64>>, d: Vector3<f64>) {
    let len = d.norm();
    if len < 1e-15 {
        return;
    }
    let d = d / len;
    if !dirs.iter().any(|e| e.dot(&d).abs() > 1.0 - 1e-12) {
        dirs.push(d);
    }
}

impl ConvexHullMesh {
    /// Convex hull of a point cloud (incremental construction). Interior and
    /// coplanar-on-face points are dropped.
    pub fn from_points(points: &[Point3<f64>]) -> Result<Self, GeometryError> {
        if points.len() < 4 {
            return Err(GeometryError::DegenerateHull(format!(
                "need at least 4 points, got {}",
                points.len()
            )));
        }
        let span = points
            .iter()
            .flat_map(|p| p.iter().map(|c| c.abs()))
            .fold(0.0_f64, f64::max)
            .max(1e-12);
        let eps = 1e-10 * span;

        let i0 = (0..points.len())
            .min_by(|&a, &b| points[a].x.total_cmp(&points[b].x))
            .unwrap();
        let i1 = farthest(points, |p| (p - points[i0]).norm());
        if (points[i1] - points[i0]).norm() <= eps {
            return Err(GeometryError::DegenerateHull("all points coincide".into()));
        }
        let axis = (points[i1] - points[i0]).normalize();
        let i2 = farthest(points, |p| {
            let d = p - points[i0];
            (d - axis * d.dot(&axis)).norm()
        });
        let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0]));
        if n.norm() <= eps * span {
            return Err(GeometryError::DegenerateHull("points are collinear".into()));
        }
        let n = n.normalize();
        let i3 = farthest(points, |p| n.dot(&(p - points[i0])).abs());
        if n.dot(&(points[i3] - points[i0])).abs() <= eps {
            return Err(GeometryError::DegenerateHull("points are coplanar".into()));
        }

        let inside =
            Point3::from((points[i0].coords + points[i1].coords + points[i2].coords + points[i3].coords) / 4.0);
        let mut faces: Vec<[usize; 3]> = Vec::new();
        for mut f in [[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]] {
            if signed_distance(points, &f, &inside) > 0.0 {
                f.swap(1, 2);
            }
            faces.push(f);
        }

        for (pi, p) in points.iter().enumerate() {
            if [i0, i1, i2, i3].contains(&pi) {
                continue;
            }
            let (visible, kept): (Vec<&[usize; 3]>, Vec<&[usize; 3]>) =
                faces.iter().partition(|f| signed_distance(points, f, p) > eps);
            if visible.is_empty() {
                continue;
            }
            let directed: HashSet<(usize, usize)> = visible
                .iter()
                .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
                .collect();
            let mut next: Vec<[usize; 3]> = kept.into_iter().copied().collect();
            for &(u, v) in &directed {
                if !directed.contains(&(v, u)) {
                    next.push([u, v, pi]);
                }
            }
            faces = next;
        }

        // Compact to hull vertices only, preserving input order.
        let mut remap = vec![usize::MAX; points.len()];
        let mut used: Vec<usize> = faces.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        let vertices: Vec<_> = used
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                remap[old] = new;
                points[old]
            })
            .collect();
        let mut faces: Vec<[usize; 3]> = faces.iter().map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]]).collect();
        faces.sort_unstable();
        Ok(Self::assemble(vertices, faces))
    }

    /// Accepts an explicit mesh after checking it is a closed-enough convex
    /// polyhedron: outward faces and every vertex on or behind every face
    /// plane within 1e-9 m.
    pub fn from_mesh(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if vertices.len() < 4 || faces.len() < 4 {
            return Err(GeometryError::DegenerateHull(
                "need at least 4 vertices and 4 faces".into(),
            ));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(GeometryError::BadFaceIndex(fi));
            }
            if face_normal(&vertices, f).norm() < 1e-18 {
                return Err(GeometryError::DegenerateHull(format!("face {fi} has zero area")));
            }
        }
        let centroid = Point3::from(vertices.iter().map(|p| p.coords).sum::<Vector3<f64>>() / vertices.len() as f64);
        for (fi, f) in faces.iter().enumerate() {
            if signed_distance(&vertices, f, &centroid) >= 0.0 {
                return Err(GeometryError::DegenerateHull(format!(
                    "face {fi} is not oriented outward"
                )));
            }
            for (vi, v) in vertices.iter().enumerate() {
                let d = signed_distance(&vertices, f, v);
                if d > CONTACT_TOLERANCE {
                    return Err(GeometryError::NotConvex {
                        vertex: vi,
                        face: fi,
                        distance: d,
                    });
                }
            }
        }
        Ok(Self::assemble(vertices, faces))
    }

    fn assemble(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        let mut normals = Vec::new();
        let mut edges = Vec::new();
        for f in &faces {
            push_unique_direction(&mut normals, face_normal(&vertices, f));
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                push_unique_direction(&mut edges, vertices[b] - vertices[a]);
            }
        }
        Self {
            vertices,
            faces,
            normals,
            edges,
        }
    }

    /// Axis-aligned box spanning `min`..`max`.
    pub fn cuboid(min: Point3<f64>, max: Point3<f64>) -> Result<Self, GeometryError> {
        let corners: Vec<_> = (0..8)
            .map(|i| {
                Point3::new(
                    if i & 1 == 0 { min.x } else { max.x },
                    if i & 2 == 0 { min.y } else { max.y },
                    if i & 4 == 0 { min.z } else { max.z },
                )
            })
            .collect();
        Self::from_points(&corners)
    }

    /// Axis-aligned cube of the given side length centered at the origin.
    pub fn cube(side: f64) -> Result<Self, GeometryError> {
        let h = 0.5 * side;
        Self::cuboid(Point3::new(-h, -h, -h), Point3::new(h, h, h))
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn centroid(&self) -> Point3<f64> {
        Point3::from(self.vertices.iter().map(|p| p.coords).sum::<Vector3<f64>>() / self.vertices.len() as f64)
    }

    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn scaled(&self, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "scale must be positive");
        Self {
            vertices: self.vertices.iter().map(|p| p * scale).collect(),
            faces: self.faces.clone(),
            normals: self.normals.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| pose * p).collect(),
            faces: self.faces.clone(),
            normals: self.normals.iter().map(|n| pose.rotation * n).collect(),
            edges: self.edges.iter().map(|e| pose.rotation * e).collect(),
        }
    }

    /// Largest signed distance of `p` to any face plane; `<= 0` means inside.
    pub fn plane_distance(&self, p: &Point3<f64>) -> f64 {
        self.faces
            .iter()
            .map(|f| signed_distance(&self.vertices, f, p))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains_point(&self, p: &Point3<f64>, tolerance: f64) -> bool {
        self.plane_distance(p) <= tolerance
    }

    pub fn posed(&self, pose: &Pose) -> PosedHull {
        PosedHull::new(self, pose, 1.0)
    }
}

/// A hull with world-frame vertices and SAT axes, for repeated tests.
#[derive(Debug, Clone)]
pub struct PosedHull {
    vertices: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
    edges: Vec<Vector3<f64>>,
    center: Point3<f64>,
    radius: f64,
}

impl PosedHull {
    pub fn new(hull: &ConvexHullMesh, pose: &Pose, scale: f64) -> Self {
        let vertices: Vec<_> = hull.vertices.iter().map(|p| pose * (p * scale)).collect();
        let center = Point3::from(vertices.iter().map(|p| p.coords).sum::<Vector3<f64>>() / vertices.len() as f64);
        let radius = vertices.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
        Self {
            normals: hull.normals.iter().map(|n| pose.rotation * n).collect(),
            edges: hull.edges.iter().map(|e| pose.rotation * e).collect(),
            vertices,
            center,
            radius,
        }
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    fn interval(&self, axis: &Vector3<f64>) -> (f64, f64) {
        self.vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                let d = axis.dot(&v.coords);
                (lo.min(d), hi.max(d))
            })
    }

    fn separated_along(&self, other: &PosedHull, axis: &Vector3<f64>) -> bool {
        let (a_lo, a_hi) = self.interval(axis);
        let (b_lo, b_hi) = other.interval(axis);
        a_hi < b_lo - CONTACT_TOLERANCE || b_hi < a_lo - CONTACT_TOLERANCE
    }

    /// Separating-axis test over face normals of both hulls and pairwise
    /// edge cross products. Touching within 1e-9 m counts as intersecting.
    pub fn intersects(&self, other: &PosedHull) -> bool {
        if (self.center - other.center).norm() > self.radius + other.radius + CONTACT_TOLERANCE {
            return false;
        }
        if self
            .normals
            .iter()
            .chain(&other.normals)
            .any(|n| self.separated_along(other, n))
        {
            return false;
        }
        for ea in &self.edges {
            for eb in &other.edges {
                let axis = ea.cross(eb);
                let len = axis.norm();
                if len < 1e-9 {
                    continue;
                }
                if self.separated_along(other, &(axis / len)) {
                    return false;
                }
            }
        }
        true
    }
}

/// Whether the two posed hulls share at least one point.
pub fn convex_hulls_intersect(a: &ConvexHullMesh, pose_a: &Pose, b: &ConvexHullMesh, pose_b: &Pose) -> bool {
    a.posed(pose_a).intersects(&b.posed(pose_b))
}

fn farthest(points: &[Point3<f64>], key: impl Fn(&Point3<f64>) -> f64) -> usize {
    (0..points.len())
        .max_by(|&a, &b| key(&points[a]).total_cmp(&key(&points[b])))
        .unwrap()
}
