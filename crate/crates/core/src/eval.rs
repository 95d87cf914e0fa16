//! Evaluation tables: detection correctness, per-category accuracy and
//! no-object precision/recall, plus a cross-table consistency check.
//!
//! Counts stay integral; percentages are rounded half-up only when
//! rendered.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{BoundingBox, Category, Dataset, Example, GraspLabel};
use crate::pipeline::{GraspVerdict, VerdictLine, VerdictStatus};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("example {0} is not synthetic; detection correctness needs manual review")]
    MissingGroundTruth(String),
    #[error("join failed: {0}")]
    Join(String),
    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("bad records line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub example_id: String,
    pub category: Category,
    #[serde(default)]
    pub object_id: Option<String>,
    pub detection_correct: bool,
    /// Absent when the pipeline aborted or the answer could not be parsed.
    #[serde(default)]
    pub predicted_label: Option<GraspLabel>,
    pub true_label: GraspLabel,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| {
            Err(EvalError::InvalidRecord {
                id: self.example_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.true_label != self.category.label() {
            return bad("true_label disagrees with category");
        }
        if self.category == Category::NoObject && self.object_id.is_some() {
            return bad("NO_OBJECT records carry no object_id");
        }
        Ok(())
    }
}

/// Exact non-negative fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den > 0).then_some(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `scale * num / den` rounded half-up to `decimals`, as text.
    pub fn fixed(&self, scale: u64, decimals: u32) -> String {
        let p = 10u128.pow(decimals);
        let n = self.num as u128 * scale as u128 * p;
        let d = self.den as u128;
        let q = (2 * n + d) / (2 * d);
        if decimals == 0 {
            q.to_string()
        } else {
            format!("{}.{:0width$}", q / p, q % p, width = decimals as usize)
        }
    }

    pub fn percent(&self, decimals: u32) -> String {
        self.fixed(100, decimals)
    }

    pub fn rounded(&self, scale: u64, decimals: u32) -> f64 {
        self.fixed(scale, decimals).parse().expect("fixed output parses")
    }
}

fn ser_percent2<S: Serializer>(f: &Fraction, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(f.rounded(100, 2))
}

fn ser_opt_percent2<S: Serializer>(f: &Option<Fraction>, s: S) -> Result<S::Ok, S::Error> {
    match f {
        Some(f) => s.serialize_f64(f.rounded(100, 2)),
        None => s.serialize_str("N/A"),
    }
}

fn ser_opt_percent1<S: Serializer>(f: &Option<Fraction>, s: S) -> Result<S::Ok, S::Error> {
    match f {
        Some(f) => s.serialize_f64(f.rounded(100, 1)),
        None => s.serialize_str("undefined"),
    }
}

fn ser_opt_ratio3<S: Serializer>(f: &Option<Fraction>, s: S) -> Result<S::Ok, S::Error> {
    match f {
        Some(f) => s.serialize_f64(f.rounded(1, 3)),
        None => s.serialize_str("undefined"),
    }
}

fn categories_present(records: &[EvalRecord]) -> Vec<Category> {
    Category::ALL
        .into_iter()
        .filter(|c| records.iter().any(|r| r.category == *c))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub category: Category,
    pub num_images: u64,
    pub num_detected: u64,
    #[serde(serialize_with = "ser_percent2")]
    pub pct_detected: Fraction,
    pub num_objects: u64,
    pub num_objects_correct: u64,
    /// Objects all of whose images were detected correctly; N/A without
    /// objects.
    #[serde(serialize_with = "ser_opt_percent2")]
    pub pct_objects_correct: Option<Fraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionTable {
    pub rows: Vec<DetectionRow>,
}

impl DetectionTable {
    pub fn row(&self, category: Category) -> Option<&DetectionRow> {
        self.rows.iter().find(|r| r.category == category)
    }
}

pub fn detection_table(records: &[EvalRecord]) -> DetectionTable {
    let rows = categories_present(records)
        .into_iter()
        .map(|category| {
            let rs: Vec<_> = records.iter().filter(|r| r.category == category).collect();
            let num_images = rs.len() as u64;
            let num_detected = rs.iter().filter(|r| r.detection_correct).count() as u64;
            let mut objects: BTreeMap<&str, bool> = BTreeMap::new();
            for r in &rs {
                if let Some(o) = &r.object_id {
                    *objects.entry(o).or_insert(true) &= r.detection_correct;
                }
            }
            let num_objects = objects.len() as u64;
            let num_objects_correct = objects.values().filter(|ok| **ok).count() as u64;
            DetectionRow {
                category,
                num_images,
                num_detected,
                pct_detected: Fraction::new(num_detected, num_images).expect("category present"),
                num_objects,
                num_objects_correct,
                pct_objects_correct: if category == Category::NoObject {
                    None
                } else {
                    Fraction::new(num_objects_correct, num_objects)
                },
            }
        })
        .collect();
    DetectionTable { rows }
}

/// Which records enter a classification metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScope {
    /// Every record; a missing prediction counts as wrong.
    AllRecords,
    /// Records with a predicted label.
    #[default]
    Classified,
    /// Records with a predicted label and a correct detection.
    CorrectlyDetected,
}

impl EvalScope {
    fn admits(self, r: &EvalRecord) -> bool {
        match self {
            EvalScope::AllRecords => true,
            EvalScope::Classified => r.predicted_label.is_some(),
            EvalScope::CorrectlyDetected => r.predicted_label.is_some() && r.detection_correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub category: Category,
    pub correct: u64,
    pub total: u64,
    #[serde(serialize_with = "ser_opt_percent1")]
    pub accuracy: Option<Fraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationTable {
    pub scope: EvalScope,
    pub rows: Vec<AccuracyRow>,
    /// Records in each category regardless of scope.
    pub category_sizes: BTreeMap<Category, u64>,
}

impl ClassificationTable {
    pub fn row(&self, category: Category) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.category == category)
    }

    /// Accuracy percentage rounded to one decimal.
    pub fn accuracy_pct(&self, category: Category) -> Option<f64> {
        self.row(category)?.accuracy.map(|f| f.rounded(100, 1))
    }
}

pub fn classification_table(records: &[EvalRecord]) -> ClassificationTable {
    classification_table_with(records, EvalScope::Classified)
}

pub fn classification_table_with(records: &[EvalRecord], scope: EvalScope) -> ClassificationTable {
    let mut category_sizes = BTreeMap::new();
    let rows = categories_present(records)
        .into_iter()
        .map(|category| {
            let rs: Vec<_> = records.iter().filter(|r| r.category == category).collect();
            category_sizes.insert(category, rs.len() as u64);
            let scoped: Vec<_> = rs.into_iter().filter(|r| scope.admits(r)).collect();
            let correct = scoped
                .iter()
                .filter(|r| r.predicted_label == Some(r.true_label))
                .count() as u64;
            let total = scoped.len() as u64;
            AccuracyRow {
                category,
                correct,
                total,
                accuracy: Fraction::new(correct, total),
            }
        })
        .collect();
    ClassificationTable {
        scope,
        rows,
        category_sizes,
    }
}

/// Precision and recall with NO_OBJECT as the positive class. A zero
/// denominator gives `None`, rendered as "undefined".
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    #[serde(serialize_with = "ser_opt_ratio3")]
    pub precision: Option<Fraction>,
    #[serde(serialize_with = "ser_opt_ratio3")]
    pub recall: Option<Fraction>,
}

impl PrScore {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        Self {
            tp,
            fp,
            fn_,
            precision: Fraction::new(tp, tp + fp),
            recall: Fraction::new(tp, tp + fn_),
        }
    }

    pub fn precision_value(&self) -> Option<f64> {
        self.precision.map(|f| f.value())
    }

    pub fn recall_value(&self) -> Option<f64> {
        self.recall.map(|f| f.value())
    }

    fn show(f: Option<Fraction>) -> String {
        f.map_or_else(|| "undefined".to_string(), |f| f.fixed(1, 3))
    }
}

pub fn precision_recall(records: &[EvalRecord]) -> PrScore {
    precision_recall_with(records, EvalScope::CorrectlyDetected)
}

pub fn precision_recall_with(records: &[EvalRecord], scope: EvalScope) -> PrScore {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for r in records.iter().filter(|r| scope.admits(r)) {
        let actual = r.true_label == GraspLabel::NoObject;
        let predicted = r.predicted_label == Some(GraspLabel::NoObject);
        match (actual, predicted) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    PrScore::from_counts(tp, fp, fn_)
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5 + 1e-9).floor().max(0.0) as u64
}

/// Precision/recall implied by per-category accuracy percentages: true
/// positives from the NO_OBJECT accuracy, false positives from the errors
/// on the two object categories.
pub fn derive_pr_from_accuracies(counts: [u64; 3], accuracy_pct: [f64; 3]) -> PrScore {
    let [n_none, n_rigid, n_deform] = counts;
    let [a_none, a_rigid, a_deform] = accuracy_pct.map(|a| a / 100.0);
    let tp = round_half_up(a_none * n_none as f64);
    let fp = round_half_up((1.0 - a_rigid) * n_rigid as f64) + round_half_up((1.0 - a_deform) * n_deform as f64);
    PrScore::from_counts(tp, fp, n_none - tp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub model: String,
    pub derived: PrScore,
    pub reported: PrScore,
    pub precision_diff: Option<f64>,
    pub recall_diff: Option<f64>,
    pub tolerance: f64,
    pub consistent: bool,
}

impl ConsistencyReport {
    pub fn summary(&self) -> String {
        let verdict = if self.consistent { "consistent" } else { "DISCREPANCY" };
        format!(
            "{}: {verdict} (derived precision {} recall {} vs reported precision {} recall {}, tolerance {})",
            self.model,
            PrScore::show(self.derived.precision),
            PrScore::show(self.derived.recall),
            PrScore::show(self.reported.precision),
            PrScore::show(self.reported.recall),
            self.tolerance
        )
    }
}

pub const CONSISTENCY_TOLERANCE: f64 = 0.002;

/// Compares precision/recall derived from the accuracy table (rounded to
/// one decimal, as printed) against a reported score. Category sizes come
/// from the table.
pub fn consistency_check(
    model: &str,
    table: &ClassificationTable,
    reported: &PrScore,
    tolerance: f64,
) -> ConsistencyReport {
    let size = |c| table.category_sizes.get(&c).copied().unwrap_or(0);
    let acc = |c| table.accuracy_pct(c).unwrap_or(0.0);
    let counts = [
        size(Category::NoObject),
        size(Category::Rigid),
        size(Category::Deformable),
    ];
    let derived = derive_pr_from_accuracies(
        counts,
        [acc(Category::NoObject), acc(Category::Rigid), acc(Category::Deformable)],
    );
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| (a - b).abs());
    let precision_diff = diff(derived.precision_value(), reported.precision_value());
    let recall_diff = diff(derived.recall_value(), reported.recall_value());
    let consistent = [precision_diff, recall_diff]
        .iter()
        .all(|d| d.is_some_and(|d| d <= tolerance + 1e-12));
    ConsistencyReport {
        model: model.to_string(),
        derived,
        reported: *reported,
        precision_diff,
        recall_diff,
        tolerance,
        consistent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
}

pub fn latency_stats(durations_ms: &[f64]) -> Option<LatencyStats> {
    if durations_ms.is_empty() {
        return None;
    }
    let n = durations_ms.len() as f64;
    let mean = durations_ms.iter().sum::<f64>() / n;
    let var = durations_ms.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Some(LatencyStats {
        count: durations_ms.len(),
        mean_ms: mean,
        std_ms: var.sqrt(),
    })
}

/// Computable stand-in for manual review on synthetic data: both
/// fingertips inside the box and at least half of the box covered by
/// gripper or object.
pub fn detection_correct_synthetic(
    example: &Example,
    predicted: &BoundingBox,
    gt_fingertips: Option<[[f64; 2]; 2]>,
    gt_mask_fraction: Option<f64>,
) -> Result<bool, EvalError> {
    let (Some(tips), Some(mask)) = (gt_fingertips, gt_mask_fraction) else {
        return Err(EvalError::MissingGroundTruth(example.id().to_string()));
    };
    Ok(tips.iter().all(|[x, y]| predicted.contains_point(*x, *y)) && mask >= 0.5)
}

/// Fallback judgement without fingertip ground truth: the selected box and
/// the annotated box each cover at least half of the other.
pub fn overlap_proxy(annotated: &BoundingBox, selected: &BoundingBox) -> bool {
    let inter = annotated.intersection_area(selected);
    inter >= 0.5 * annotated.area() && inter >= 0.5 * selected.area()
}

/// Joins verdicts with the dataset on example id. `judge` decides
/// detection correctness for examples whose gripper was found.
pub fn join_verdicts(
    dataset: &Dataset,
    verdicts: &[VerdictLine],
    mut judge: impl FnMut(&Example, &GraspVerdict) -> Result<bool, EvalError>,
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut by_id: BTreeMap<&str, &VerdictLine> = BTreeMap::new();
    for v in verdicts {
        if by_id.insert(v.image_id.as_str(), v).is_some() {
            return Err(EvalError::Join(format!("duplicate verdict for {}", v.image_id)));
        }
    }
    let ids: BTreeSet<&str> = dataset.examples.iter().map(|e| e.id()).collect();
    if let Some(extra) = by_id.keys().find(|k| !ids.contains(*k)) {
        return Err(EvalError::Join(format!("verdict for unknown example {extra}")));
    }
    dataset
        .examples
        .iter()
        .map(|ex| {
            let line = by_id
                .get(ex.id())
                .ok_or_else(|| EvalError::Join(format!("no verdict for example {}", ex.id())))?;
            let (detection_correct, predicted_label) = match (&line.status, &line.verdict) {
                (VerdictStatus::Ok, Some(v)) => (judge(ex, v)?, Some(v.label)),
                _ => (false, None),
            };
            Ok(EvalRecord {
                example_id: ex.id().to_string(),
                category: ex.annotation.category,
                object_id: ex.annotation.object_id.clone(),
                detection_correct,
                predicted_label,
                true_label: ex.annotation.label,
            })
        })
        .collect()
}

pub fn write_records(records: &[EvalRecord], mut out: impl Write) -> Result<(), EvalError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(input: impl BufRead) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EvalRecord = serde_json::from_str(&line).map_err(|e| EvalError::BadLine {
            line: i + 1,
            reason: e.to_string(),
        })?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

pub fn render_detection_table(t: &DetectionTable) -> String {
    let mut s = format!(
        "{:<12} {:>11} {:>13} {:>10} {:>17}\n",
        "Category", "Num. images", "Num. detected", "% detected", "% objects correct"
    );
    for r in &t.rows {
        let objects = r
            .pct_objects_correct
            .map_or_else(|| "N/A".to_string(), |f| f.percent(2));
        let _ = writeln!(
            s,
            "{:<12} {:>11} {:>13} {:>10} {:>17}",
            r.category.display_name(),
            r.num_images,
            r.num_detected,
            r.pct_detected.percent(2),
            objects
        );
    }
    s
}

pub fn render_classification_tables(models: &[(&str, &ClassificationTable)]) -> String {
    let mut s = format!("{:<16}", "Model");
    for c in Category::ALL {
        let _ = write!(s, " {:>11}", c.display_name());
    }
    s.push('\n');
    for (name, t) in models {
        let _ = write!(s, "{name:<16}");
        for c in Category::ALL {
            let cell = t
                .row(c)
                .and_then(|r| r.accuracy)
                .map_or_else(|| "-".to_string(), |f| f.percent(1));
            let _ = write!(s, " {cell:>11}");
        }
        s.push('\n');
    }
    s
}

pub fn render_pr_scores(models: &[(&str, &PrScore)]) -> String {
    let mut s = format!("{:<16} {:>9} {:>9}\n", "Model", "Precision", "Recall");
    for (name, p) in models {
        let _ = writeln!(
            s,
            "{name:<16} {:>9} {:>9}",
            PrScore::show(p.precision),
            PrScore::show(p.recall)
        );
    }
    s
}
