//! Detection-side refinement: adaptive thresholding, DBSCAN over box
//! centers, cumulative-confidence cluster ranking and box padding.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::BoundingBox;
use crate::pipeline::Frame;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("no gripper detection at or above threshold {floor} after {queries} queries")]
    GripperNotFound { floor: f64, queries: usize },
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
    #[error("detector backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Result<Self, DetectError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DetectError::InvalidConfig(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { bbox, confidence })
    }
}

/// Geometric threshold schedule `start, start*decay, ...`, ending with a
/// query at exactly `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSchedule {
    pub start: f64,
    pub decay_factor: f64,
    pub floor: f64,
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        Self {
            start: 0.5,
            decay_factor: 0.5,
            floor: 0.01,
        }
    }
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<(), DetectError> {
        let ok = self.floor > 0.0
            && self.floor < self.start
            && self.start <= 1.0
            && self.decay_factor > 0.0
            && self.decay_factor < 1.0;
        if ok {
            Ok(())
        } else {
            Err(DetectError::InvalidConfig(
                "threshold schedule needs 0 < floor < start <= 1 and 0 < decay_factor < 1".into(),
            ))
        }
    }

    /// Number of queries when nothing is ever detected:
    /// `ceil(log_decay(floor / start)) + 1`.
    pub fn max_queries(&self) -> usize {
        let k = ((self.floor / self.start).ln() / self.decay_factor.ln() - 1e-9).ceil();
        k as usize + 1
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let n = self.max_queries();
        (0..n)
            .map(|k| {
                if k + 1 == n {
                    self.floor
                } else {
                    self.start * self.decay_factor.powi(k as i32)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Neighborhood radius in normalized image coordinates.
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { eps: 0.10, min_pts: 1 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.eps > 0.0 && self.eps.is_finite() && self.min_pts >= 1 {
            Ok(())
        } else {
            Err(DetectError::InvalidConfig(
                "cluster config needs eps > 0 and min_pts >= 1".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PadConfig {
    pub pad_x_frac: f64,
    pub pad_y_frac: f64,
}

impl Default for PadConfig {
    fn default() -> Self {
        Self {
            pad_x_frac: 0.05,
            pad_y_frac: 0.25,
        }
    }
}

impl PadConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.pad_x_frac) && ok(self.pad_y_frac) {
            Ok(())
        } else {
            Err(DetectError::InvalidConfig(
                "pad fractions must be finite and >= 0".into(),
            ))
        }
    }
}

/// Returns every candidate with confidence >= `threshold`. Lowering the
/// threshold must never remove a detection.
pub trait DetectorBackend {
    fn detect(&self, frame: &Frame, threshold: f64) -> Result<Vec<Detection>, DetectError>;
}

/// Replays precomputed candidates keyed by frame id. Unknown ids have no
/// candidates.
#[derive(Debug, Default)]
pub struct FixtureDetector {
    candidates: BTreeMap<String, Vec<Detection>>,
    queries: AtomicUsize,
}

impl FixtureDetector {
    pub fn new(candidates: BTreeMap<String, Vec<Detection>>) -> Self {
        Self {
            candidates,
            queries: AtomicUsize::new(0),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DetectError> {
        let map: BTreeMap<String, Vec<Detection>> =
            serde_json::from_str(text).map_err(|e| DetectError::Backend(format!("bad detector fixture: {e}")))?;
        for (id, dets) in &map {
            if let Some(d) = dets.iter().find(|d| !(0.0..=1.0).contains(&d.confidence)) {
                return Err(DetectError::Backend(format!(
                    "detector fixture entry {id} has confidence {} outside [0, 1]",
                    d.confidence
                )));
            }
        }
        Ok(Self::new(map))
    }

    pub fn load(path: &Path) -> Result<Self, DetectError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DetectError::Backend(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.candidates).expect("fixture serializes")
    }

    pub fn query_count(&self) -> usize {
        self.queries.load(AtomicOrdering::Relaxed)
    }
}

impl DetectorBackend for FixtureDetector {
    fn detect(&self, frame: &Frame, threshold: f64) -> Result<Vec<Detection>, DetectError> {
        self.queries.fetch_add(1, AtomicOrdering::Relaxed);
        Ok(self
            .candidates
            .get(&frame.id)
            .map(|all| all.iter().filter(|d| d.confidence >= threshold).copied().collect())
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOutcome {
    pub detections: Vec<Detection>,
    /// Threshold that first produced detections.
    pub threshold: f64,
    pub queries: usize,
}

/// Queries the backend down the schedule and keeps the first non-empty
/// candidate set.
pub fn adaptive_detect(
    detector: &dyn DetectorBackend,
    frame: &Frame,
    schedule: &ThresholdSchedule,
) -> Result<AdaptiveOutcome, DetectError> {
    schedule.validate()?;
    let thresholds = schedule.thresholds();
    for (k, &t) in thresholds.iter().enumerate() {
        let detections: Vec<_> = detector
            .detect(frame, t)?
            .into_iter()
            .filter(|d| d.confidence >= t)
            .collect();
        if !detections.is_empty() {
            return Ok(AdaptiveOutcome {
                detections,
                threshold: t,
                queries: k + 1,
            });
        }
    }
    Err(DetectError::GripperNotFound {
        floor: schedule.floor,
        queries: thresholds.len(),
    })
}

fn normalized_centers(detections: &[Detection], image_size: (u32, u32)) -> Vec<(f64, f64)> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    detections
        .iter()
        .map(|d| {
            let (x, y) = d.bbox.center();
            (x / w, y / h)
        })
        .collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn cmp_center(a: (f64, f64), b: (f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// DBSCAN over normalized box centers. Border points join the cluster of
/// their nearest core point (ties: smallest core center); noise points
/// become singleton clusters. Labels are `0..k`, numbered by first
/// appearance in `detections`.
pub fn cluster_detections(detections: &[Detection], image_size: (u32, u32), cfg: &ClusterConfig) -> Vec<usize> {
    let n = detections.len();
    let centers = normalized_centers(detections, image_size);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist(centers[i], centers[j]) <= cfg.eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= cfg.min_pts).collect();

    // Connected components of the core graph.
    let mut component = vec![usize::MAX; n];
    let mut components = 0;
    for seed in 0..n {
        if !core[seed] || component[seed] != usize::MAX {
            continue;
        }
        component[seed] = components;
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbors[i] {
                if core[j] && component[j] == usize::MAX {
                    component[j] = components;
                    queue.push_back(j);
                }
            }
        }
        components += 1;
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest = neighbors[i].iter().copied().filter(|&j| core[j]).min_by(|&a, &b| {
            dist(centers[i], centers[a])
                .total_cmp(&dist(centers[i], centers[b]))
                .then(cmp_center(centers[a], centers[b]))
        });
        component[i] = match nearest {
            Some(j) => component[j],
            None => {
                components += 1;
                components - 1
            }
        };
    }

    let mut relabel = BTreeMap::new();
    component
        .iter()
        .map(|c| {
            let next = relabel.len();
            *relabel.entry(*c).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub label: usize,
    pub total_confidence: f64,
    pub max_confidence: f64,
    pub members: Vec<usize>,
}

/// Clusters ordered best first: larger cumulative confidence, then larger
/// single confidence, then lower label.
pub fn rank_clusters(detections: &[Detection], labels: &[usize]) -> Vec<ClusterSummary> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut clusters: Vec<ClusterSummary> = (0..k)
        .map(|label| ClusterSummary {
            label,
            total_confidence: 0.0,
            max_confidence: f64::NEG_INFINITY,
            members: Vec::new(),
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        let c = &mut clusters[l];
        c.total_confidence += detections[i].confidence;
        c.max_confidence = c.max_confidence.max(detections[i].confidence);
        c.members.push(i);
    }
    let scale = clusters.iter().map(|c| c.total_confidence).fold(0.0, f64::max);
    let tol = 1e-12 * scale;
    clusters.sort_by(|a, b| {
        let by_total = if (a.total_confidence - b.total_confidence).abs() <= tol {
            Ordering::Equal
        } else {
            b.total_confidence.total_cmp(&a.total_confidence)
        };
        by_total
            .then(b.max_confidence.total_cmp(&a.max_confidence))
            .then(a.label.cmp(&b.label))
    });
    clusters
}

/// Highest-confidence member of the best-ranked cluster. Ties on
/// confidence go to the lexicographically smallest box corners.
pub fn select_detection(detections: &[Detection], image_size: (u32, u32), cfg: &ClusterConfig) -> Detection {
    assert!(!detections.is_empty(), "select_detection needs at least one detection");
    let labels = cluster_detections(detections, image_size, cfg);
    let best = &rank_clusters(detections, &labels)[0];
    let i = best
        .members
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let (da, db) = (&detections[a], &detections[b]);
            db.confidence.total_cmp(&da.confidence).then_with(|| {
                da.bbox
                    .corners()
                    .iter()
                    .zip(db.bbox.corners())
                    .map(|(x, y)| x.total_cmp(&y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
        })
        .expect("clusters are non-empty");
    detections[i]
}

/// Grows each side by a fraction of the box size, clamped to the image.
pub fn pad_box(bbox: &BoundingBox, image_size: (u32, u32), cfg: &PadConfig) -> BoundingBox {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let dx = cfg.pad_x_frac * bbox.width();
    let dy = cfg.pad_y_frac * bbox.height();
    BoundingBox {
        x_min: (bbox.x_min - dx).max(0.0).min(bbox.x_min),
        y_min: (bbox.y_min - dy).max(0.0).min(bbox.y_min),
        x_max: (bbox.x_max + dx).min(w).max(bbox.x_max),
        y_max: (bbox.y_max + dy).min(h).max(bbox.y_max),
    }
}
