//! Procedural stand-ins for mesh libraries: random convex polyhedra at
//! desk scale, split into two disjoint pools.

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Category;
use crate::geometry::ConvexHullMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetPool {
    Train,
    Validation,
}

impl AssetPool {
    pub fn prefix(self) -> &'static str {
        match self {
            AssetPool::Train => "train",
            AssetPool::Validation => "val",
        }
    }

    fn salt(self) -> u64 {
        match self {
            AssetPool::Train => 0x7261_696e_0000_0001,
            AssetPool::Validation => 0x7661_6c69_0000_0002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Asset {
    pub id: String,
    /// Rigid or deformable; a rendering hint carried into annotations.
    pub category: Category,
    pub hull: ConvexHullMesh,
}

/// Deterministic asset `index` of `pool`.
pub fn asset(pool: AssetPool, index: u32) -> Asset {
    let mut rng = ChaCha8Rng::seed_from_u64(pool.salt() ^ (u64::from(index).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    let semi = [
        rng.random_range(0.025..0.12),
        rng.random_range(0.025..0.12),
        rng.random_range(0.025..0.12),
    ];
    let category = if rng.random_bool(0.4) {
        Category::Deformable
    } else {
        Category::Rigid
    };
    loop {
        let n = rng.random_range(8..=20);
        let points: Vec<_> = (0..n)
            .map(|_| {
                // Uniform direction by rejection from the cube, then a
                // radial jitter so hulls are irregular.
                let dir = loop {
                    let v = nalgebra::Vector3::<f64>::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let len = v.norm();
                    if len > 1e-3 && len <= 1.0 {
                        break v / len;
                    }
                };
                let r = rng.random_range(0.8..1.0);
                Point3::new(dir.x * semi[0] * r, dir.y * semi[1] * r, dir.z * semi[2] * r)
            })
            .collect();
        if let Ok(hull) = ConvexHullMesh::from_points(&points) {
            return Asset {
                id: format!("{}-{index:04}", pool.prefix()),
                category,
                hull,
            };
        }
    }
}
