//! Oracles shared by the oracle and acceptance suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use graspcheck_core::detect::Detection;
use graspcheck_core::BoundingBox;

pub fn random_detections(rng: &mut ChaCha8Rng, n: usize, w: f64, h: f64) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let bw = rng.random_range(5.0..120.0);
            let bh = rng.random_range(5.0..120.0);
            let x = rng.random_range(0.0..w - bw);
            let y = rng.random_range(0.0..h - bh);
            Detection::new(
                BoundingBox::new(x, y, x + bw, y + bh).unwrap(),
                rng.random_range(0.01..1.0),
            )
            .unwrap()
        })
        .collect()
}

/// DBSCAN by definition: core points are connected through the transitive
/// closure of the eps-adjacency matrix; border points join their nearest
/// core point (ties to the smallest center); the rest are singletons.
/// Returns the partition as a set of sets.
pub fn dbscan_oracle(dets: &[Detection], w: f64, h: f64, eps: f64, min_pts: usize) -> BTreeSet<BTreeSet<usize>> {
    let n = dets.len();
    let c: Vec<(f64, f64)> = dets
        .iter()
        .map(|d| {
            (
                (d.bbox.x_min + d.bbox.x_max) / 2.0 / w,
                (d.bbox.y_min + d.bbox.y_max) / 2.0 / h,
            )
        })
        .collect();
    let d = |i: usize, j: usize| ((c[i].0 - c[j].0).powi(2) + (c[i].1 - c[j].1).powi(2)).sqrt();
    let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| d(i, j) <= eps).collect()).collect();
    let core: Vec<bool> = (0..n)
        .map(|i| adj[i].iter().filter(|x| **x).count() >= min_pts)
        .collect();

    // Warshall closure restricted to core points.
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| core[i] && core[j] && adj[i][j]).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut owner: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if core[i] {
            owner[i] = (0..n).find(|&j| reach[i][j] || j == i).unwrap();
        }
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !(core[j] && adj[i][j]) {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(b) => {
                    let closer = d(i, j) < d(i, b) || (d(i, j) == d(i, b) && (c[j].0, c[j].1) < (c[b].0, c[b].1));
                    Some(if closer { j } else { b })
                }
            };
        }
        if let Some(b) = best {
            owner[i] = owner[b];
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, o) in owner.iter().enumerate() {
        groups.entry(*o).or_default().insert(i);
    }
    groups.into_values().collect()
}
