//! Two-stage verification: detect, refine, crop, classify, decide.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BoundingBox, GraspLabel};
use crate::detect::{
    adaptive_detect, pad_box, select_detection, ClusterConfig, DetectError, DetectorBackend, PadConfig,
    ThresholdSchedule,
};

pub const STAGES: [&str; 4] = ["detect", "refine", "crop", "classify"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("gripper not found after {queries} detector queries")]
    GripperNotFound { queries: usize },
    #[error("crop region {0:?} lies outside the image")]
    EmptyCrop([f64; 4]),
    #[error("classifier failed: {0}")]
    Classifier(String),
    #[error("classifier returned {0}, expected a probability in [0, 1]")]
    InvalidProbability(f64),
    #[error(transparent)]
    Detect(DetectError),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad verdict line {line}: {reason}")]
    BadVerdictLine { line: usize, reason: String },
}

impl From<DetectError> for PipelineError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::GripperNotFound { queries, .. } => PipelineError::GripperNotFound { queries },
            other => PipelineError::Detect(other),
        }
    }
}

/// An input image tagged with its dataset id.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: String,
    pub image: RgbImage,
}

impl Frame {
    pub fn new(id: impl Into<String>, image: RgbImage) -> Self {
        Self { id: id.into(), image }
    }

    /// Black placeholder, for backends that key on the id alone.
    pub fn blank(id: impl Into<String>, width: u32, height: u32) -> Self {
        Self::new(id, RgbImage::new(width, height))
    }

    pub fn size(&self) -> (u32, u32) {
        self.image.dimensions()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub source_id: String,
    pub region: BoundingBox,
    pub image: RgbImage,
}

/// Maps a crop to the probability that the gripper holds nothing.
pub trait ClassifierBackend {
    fn p_no_object(&self, crop: &Crop) -> Result<f64, PipelineError>;
}

/// Probability of the no-object class from two logits ordered by label
/// value (object, no object).
pub fn softmax_no_object(logits: [f64; 2]) -> f64 {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    e1 / (e0 + e1)
}

/// Replays a fixed probability per source image id.
#[derive(Debug, Clone, Default)]
pub struct FixtureClassifier {
    pub probabilities: BTreeMap<String, f64>,
    /// Used for ids missing from the map; `None` makes them an error.
    pub fallback: Option<f64>,
}

impl FixtureClassifier {
    pub fn constant(p: f64) -> Self {
        Self {
            probabilities: BTreeMap::new(),
            fallback: Some(p),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let probabilities: BTreeMap<String, f64> = serde_json::from_str(text)
            .map_err(|e| PipelineError::Classifier(format!("bad classifier fixture: {e}")))?;
        if let Some((id, p)) = probabilities.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(PipelineError::Classifier(format!(
                "fixture entry {id} has probability {p}"
            )));
        }
        Ok(Self {
            probabilities,
            fallback: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Classifier(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl ClassifierBackend for FixtureClassifier {
    fn p_no_object(&self, crop: &Crop) -> Result<f64, PipelineError> {
        self.probabilities
            .get(&crop.source_id)
            .copied()
            .or(self.fallback)
            .ok_or_else(|| PipelineError::Classifier(format!("no fixture probability for {}", crop.source_id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    pub threshold_no_object: f64,
}

impl DecisionConfig {
    /// Threshold tuned for real images.
    pub const REAL: f64 = 0.15;
    pub const NOMINAL: f64 = 0.5;

    pub fn nominal() -> Self {
        Self {
            threshold_no_object: Self::NOMINAL,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.threshold_no_object > 0.0 && self.threshold_no_object < 1.0 {
            Ok(())
        } else {
            Err(PipelineError::InvalidConfig(
                "threshold_no_object must lie in (0, 1)".into(),
            ))
        }
    }
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            threshold_no_object: Self::REAL,
        }
    }
}

/// NO_OBJECT iff `p >= threshold`.
pub fn decide(p_no_object: f64, cfg: &DecisionConfig) -> GraspLabel {
    if p_no_object >= cfg.threshold_no_object {
        GraspLabel::NoObject
    } else {
        GraspLabel::Object
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schedule: ThresholdSchedule,
    pub cluster: ClusterConfig,
    pub pad: PadConfig,
    pub decision: DecisionConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.schedule.validate()?;
        self.cluster.validate()?;
        self.pad.validate()?;
        self.decision.validate()
    }
}

/// Pixel rectangle covered by `bbox` (outward-rounded), clamped to the
/// image. No pixels are invented outside the image.
pub fn crop_with_margin(image: &RgbImage, bbox: &BoundingBox) -> Result<RgbImage, PipelineError> {
    let (w, h) = image.dimensions();
    let x0 = bbox.x_min.floor().clamp(0.0, w as f64) as u32;
    let y0 = bbox.y_min.floor().clamp(0.0, h as f64) as u32;
    let x1 = bbox.x_max.ceil().clamp(0.0, w as f64) as u32;
    let y1 = bbox.y_max.ceil().clamp(0.0, h as f64) as u32;
    if x1 <= x0 || y1 <= y0 {
        return Err(PipelineError::EmptyCrop(bbox.corners()));
    }
    Ok(image::imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspVerdict {
    pub label: GraspLabel,
    pub p_no_object: f64,
    pub selected_box: BoundingBox,
    pub padded_box: BoundingBox,
    pub detection_confidence: f64,
    pub detection_threshold: f64,
    /// Wall-clock milliseconds per stage.
    pub timings: BTreeMap<String, f64>,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn verify_grasp(
    frame: &Frame,
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
    config: &PipelineConfig,
) -> Result<GraspVerdict, PipelineError> {
    config.validate()?;
    let size = frame.size();
    let mut timings = BTreeMap::new();

    let t = Instant::now();
    let candidates = adaptive_detect(detector, frame, &config.schedule)?;
    timings.insert("detect".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let selected = select_detection(&candidates.detections, size, &config.cluster);
    let padded = pad_box(&selected.bbox, size, &config.pad);
    timings.insert("refine".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let crop = Crop {
        source_id: frame.id.clone(),
        region: padded,
        image: crop_with_margin(&frame.image, &padded)?,
    };
    timings.insert("crop".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let p = classifier.p_no_object(&crop)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(PipelineError::InvalidProbability(p));
    }
    timings.insert("classify".to_string(), elapsed_ms(t));

    Ok(GraspVerdict {
        label: decide(p, &config.decision),
        p_no_object: p,
        selected_box: selected.bbox,
        padded_box: padded,
        detection_confidence: selected.confidence,
        detection_threshold: candidates.threshold,
        timings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Ok,
    GripperNotFound,
}

/// One line of `verdicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictLine {
    pub image_id: String,
    pub status: VerdictStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<GraspVerdict>,
}

impl VerdictLine {
    pub fn from_result(image_id: &str, result: Result<GraspVerdict, PipelineError>) -> Result<Self, PipelineError> {
        match result {
            Ok(v) => Ok(Self {
                image_id: image_id.to_string(),
                status: VerdictStatus::Ok,
                verdict: Some(v),
            }),
            Err(PipelineError::GripperNotFound { .. }) => Ok(Self {
                image_id: image_id.to_string(),
                status: VerdictStatus::GripperNotFound,
                verdict: None,
            }),
            Err(e) => Err(e),
        }
    }
}

pub fn write_verdicts(lines: &[VerdictLine], mut out: impl Write) -> Result<(), PipelineError> {
    for line in lines {
        serde_json::to_writer(&mut out, line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_verdicts(input: impl BufRead) -> Result<Vec<VerdictLine>, PipelineError> {
    let mut lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: VerdictLine = serde_json::from_str(&line).map_err(|e| PipelineError::BadVerdictLine {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if (parsed.status == VerdictStatus::Ok) != parsed.verdict.is_some() {
            return Err(PipelineError::BadVerdictLine {
                line: i + 1,
                reason: "status ok requires a verdict and vice versa".into(),
            });
        }
        lines.push(parsed);
    }
    Ok(lines)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrainableScope {
    HeadOnly,
    HeadPlusLastBackboneLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingStage {
    pub trainable_scope: TrainableScope,
    /// Dropout at the start and end of the stage; the trainer picks the
    /// interpolation.
    pub dropout: [f64; 2],
    pub learning_rate: f64,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingPlan {
    pub stages: Vec<TrainingStage>,
    pub detector_epochs: u32,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            stages: vec![
                TrainingStage {
                    trainable_scope: TrainableScope::HeadOnly,
                    dropout: [0.7, 0.5],
                    learning_rate: 1e-3,
                    epochs: 20,
                },
                TrainingStage {
                    trainable_scope: TrainableScope::HeadPlusLastBackboneLayer,
                    dropout: [0.3, 0.3],
                    learning_rate: 1e-4,
                    epochs: 10,
                },
            ],
            detector_epochs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_training_plan(plan: &TrainingPlan) -> ValidationReport {
    let mut v = Vec::new();
    if plan.stages.is_empty() {
        v.push("plan needs at least one stage".to_string());
    }
    if plan.detector_epochs == 0 {
        v.push("detector_epochs must be >= 1".to_string());
    }
    for (i, s) in plan.stages.iter().enumerate() {
        let n = i + 1;
        if s.dropout.iter().any(|d| !(0.0..1.0).contains(d)) {
            v.push(format!("stage {n}: dropout must lie in [0, 1)"));
        }
        if s.dropout[1] > s.dropout[0] {
            v.push(format!("stage {n}: dropout increases within the stage"));
        }
        if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
            v.push(format!("stage {n}: learning_rate must be > 0"));
        }
        if s.epochs == 0 {
            v.push(format!("stage {n}: epochs must be >= 1"));
        }
    }
    for (i, w) in plan.stages.windows(2).enumerate() {
        let n = i + 2;
        if w[1].dropout[0] > w[0].dropout[1] {
            v.push(format!("stage {n}: dropout increases over stage {}", n - 1));
        }
        if w[1].learning_rate > w[0].learning_rate {
            v.push(format!("stage {n}: learning_rate increases over stage {}", n - 1));
        }
        if w[1].trainable_scope == TrainableScope::HeadOnly && w[0].trainable_scope != TrainableScope::HeadOnly {
            v.push(format!("stage {n}: refreezes the backbone"));
        }
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{Detection, FixtureDetector};
    use image::Rgb;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, (x + y) as u8]))
    }

    fn detector_for(id: &str) -> FixtureDetector {
        let b = BoundingBox::new(100., 100., 200., 200.).unwrap();
        FixtureDetector::new(BTreeMap::from([(
            id.to_string(),
            vec![Detection::new(b, 0.8).unwrap()],
        )]))
    }

    struct Panicking;
    impl ClassifierBackend for Panicking {
        fn p_no_object(&self, _: &Crop) -> Result<f64, PipelineError> {
            panic!("classifier must not run")
        }
    }

    #[test]
    fn decide_boundary() {
        let real = DecisionConfig::default();
        assert_eq!(decide(0.15, &real), GraspLabel::NoObject);
        assert_eq!(decide(0.14, &real), GraspLabel::Object);
        assert_eq!(decide(0.0, &real), GraspLabel::Object);
        assert_eq!(decide(0.5, &DecisionConfig::nominal()), GraspLabel::NoObject);
    }

    #[test]
    fn crops() {
        let img = gradient(640, 480);
        let full = BoundingBox::new(0., 0., 640., 480.).unwrap();
        assert_eq!(crop_with_margin(&img, &full).unwrap(), img);
        let corner = crop_with_margin(&img, &BoundingBox::new(0., 0., 10., 10.).unwrap()).unwrap();
        assert_eq!(corner.dimensions(), (10, 10));
        assert_eq!(corner.get_pixel(9, 9), img.get_pixel(9, 9));
        let over = crop_with_margin(&img, &BoundingBox::new(600., 450., 700., 500.).unwrap()).unwrap();
        assert_eq!(over.dimensions(), (40, 30));
        assert_eq!(over.get_pixel(0, 0), img.get_pixel(600, 450));
        let outside = BoundingBox::new(700., 10., 720., 20.).unwrap();
        assert!(matches!(
            crop_with_margin(&img, &outside),
            Err(PipelineError::EmptyCrop(_))
        ));
    }

    #[test]
    fn verdict_from_fixtures() {
        let frame = Frame::new("a", gradient(640, 480));
        let v = verify_grasp(
            &frame,
            &detector_for("a"),
            &FixtureClassifier::constant(0.9),
            &PipelineConfig::default(),
        )
        .unwrap();
        assert_eq!(v.label, GraspLabel::NoObject);
        assert_eq!(v.p_no_object, 0.9);
        assert_eq!(v.padded_box.corners(), [95., 75., 205., 225.]);
        assert!(v.padded_box.contains(&v.selected_box));
        assert_eq!(v.timings.keys().map(String::as_str).collect::<Vec<_>>(), {
            let mut s = STAGES.to_vec();
            s.sort();
            s
        });
        assert!(v.timings.values().all(|t| *t >= 0.0));

        let at = verify_grasp(
            &frame,
            &detector_for("a"),
            &FixtureClassifier::constant(0.15),
            &PipelineConfig::default(),
        )
        .unwrap();
        assert_eq!(at.label, GraspLabel::NoObject);
    }

    #[test]
    fn missing_gripper_short_circuits() {
        let frame = Frame::blank("b", 640, 480);
        let err = verify_grasp(&frame, &detector_for("a"), &Panicking, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, PipelineError::GripperNotFound { queries: 7 }));
    }

    #[test]
    fn verdict_lines_round_trip() {
        let frame = Frame::blank("a", 640, 480);
        let ok = verify_grasp(
            &frame,
            &detector_for("a"),
            &FixtureClassifier::constant(0.1),
            &PipelineConfig::default(),
        );
        let lines = vec![
            VerdictLine::from_result("a", ok).unwrap(),
            VerdictLine::from_result("b", Err(PipelineError::GripperNotFound { queries: 7 })).unwrap(),
        ];
        let mut buf = Vec::new();
        write_verdicts(&lines, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("gripper_not_found"));
        assert_eq!(read_verdicts(&buf[..]).unwrap(), lines);
    }

    #[test]
    fn training_plans() {
        assert!(validate_training_plan(&TrainingPlan::default()).is_valid());
        let empty = TrainingPlan {
            stages: vec![],
            ..Default::default()
        };
        assert!(validate_training_plan(&empty)
            .violations
            .iter()
            .any(|v| v.contains("at least one stage")));
        let mut rising = TrainingPlan::default();
        rising.stages[1].dropout = [0.8, 0.8];
        let report = validate_training_plan(&rising);
        assert!(report.violations.iter().any(|v| v.contains("dropout increases")));
    }

    #[test]
    fn softmax_adapter() {
        assert!((softmax_no_object([0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!(softmax_no_object([1000.0, -1000.0]) < 1e-12);
    }
}
