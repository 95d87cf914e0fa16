//! Annotation types and the on-disk dataset format.
//!
//! A dataset directory holds a `manifest.jsonl` file: one header line
//! followed by one line per example. Boxes are absolute pixel corners in
//! the image frame (origin top-left).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MANIFEST_VERSION: &str = "1";
pub const DEFAULT_IMAGE_WIDTH: u32 = 640;
pub const DEFAULT_IMAGE_HEIGHT: u32 = 480;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no {MANIFEST_FILE} found in {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest header: {0}")]
    MalformedHeader(String),
    #[error("malformed annotation for {example} (line {line}): {reason}")]
    MalformedAnnotation {
        example: String,
        line: usize,
        reason: String,
    },
    #[error("{example} references missing file {path}")]
    DanglingImageRef { example: String, path: PathBuf },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("negative coordinate")]
    Negative,
    #[error("x_min must be < x_max and y_min < y_max, got {0:?}")]
    Inverted([f64; 4]),
}

/// Axis-aligned box in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, BoxError> {
        let corners = [x_min, y_min, x_max, y_max];
        if corners.iter().any(|c| !c.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if corners.iter().any(|&c| c < 0.0) {
            return Err(BoxError::Negative);
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(BoxError::Inverted(corners));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min && self.y_min <= other.y_min && self.x_max >= other.x_max && self.y_max >= other.y_max
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = BoxError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

/// Binary grasp label. `Object` is encoded as 0, `NoObject` as 1, so the
/// positive class of a failed-grasp detector is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum GraspLabel {
    Object = 0,
    NoObject = 1,
}

impl TryFrom<u8> for GraspLabel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(GraspLabel::Object),
            1 => Ok(GraspLabel::NoObject),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<GraspLabel> for u8 {
    fn from(l: GraspLabel) -> Self {
        l as u8
    }
}

impl fmt::Display for GraspLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraspLabel::Object => f.write_str("object"),
            GraspLabel::NoObject => f.write_str("no_object"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    NoObject,
    Rigid,
    Deformable,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::NoObject, Category::Rigid, Category::Deformable];

    pub fn label(self) -> GraspLabel {
        match self {
            Category::NoObject => GraspLabel::NoObject,
            Category::Rigid | Category::Deformable => GraspLabel::Object,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Category::NoObject => "No Object",
            Category::Rigid => "Rigid",
            Category::Deformable => "Deformable",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::NoObject => "NO_OBJECT",
            Category::Rigid => "RIGID",
            Category::Deformable => "DEFORMABLE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub gripper_box: BoundingBox,
    pub label: GraspLabel,
    pub category: Category,
    pub object_id: Option<String>,
}

impl Annotation {
    pub fn validate(&self) -> Result<(), String> {
        if (self.category == Category::NoObject) != (self.label == GraspLabel::NoObject) {
            return Err(format!(
                "category {} is inconsistent with label {}",
                self.category, self.label
            ));
        }
        if self.object_id.is_some() != (self.label == GraspLabel::Object) {
            return Err("object_id must be present exactly when label is object".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Path relative to the dataset root: an image or a scene spec file.
    /// Doubles as the example identifier everywhere downstream.
    pub image_ref: String,
    pub annotation: Annotation,
    pub batch_id: u32,
    pub example_index_in_batch: u32,
}

impl Example {
    pub fn id(&self) -> &str {
        &self.image_ref
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Validation,
    RealEval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub manifest_version: String,
    pub image_width: u32,
    pub image_height: u32,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Builds a dataset, checking every annotation and uniqueness invariant.
    pub fn new(
        split: Split,
        image_width: u32,
        image_height: u32,
        examples: Vec<Example>,
    ) -> Result<Self, DatasetError> {
        let dataset = Self {
            split,
            manifest_version: MANIFEST_VERSION.to_string(),
            image_width,
            image_height,
            examples,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn empty(split: Split) -> Self {
        Self {
            split,
            manifest_version: MANIFEST_VERSION.to_string(),
            image_width: DEFAULT_IMAGE_WIDTH,
            image_height: DEFAULT_IMAGE_HEIGHT,
            examples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.image_ref == id)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut refs = HashSet::new();
        let mut slots = HashSet::new();
        for (i, ex) in self.examples.iter().enumerate() {
            let malformed = |reason: String| DatasetError::MalformedAnnotation {
                example: ex.image_ref.clone(),
                line: i + 2,
                reason,
            };
            ex.annotation.validate().map_err(malformed)?;
            if !refs.insert(ex.image_ref.as_str()) {
                return Err(malformed("duplicate image reference".into()));
            }
            if !slots.insert((ex.batch_id, ex.example_index_in_batch)) {
                return Err(malformed(format!(
                    "duplicate (batch, index) = ({}, {})",
                    ex.batch_id, ex.example_index_in_batch
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    manifest_version: String,
    split: Split,
    image_width: u32,
    image_height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    image: String,
    batch: u32,
    index: u32,
    label: GraspLabel,
    category: Category,
    object_id: Option<String>,
    bbox: [f64; 4],
}

impl From<&Example> for ManifestEntry {
    fn from(e: &Example) -> Self {
        Self {
            image: e.image_ref.clone(),
            batch: e.batch_id,
            index: e.example_index_in_batch,
            label: e.annotation.label,
            category: e.annotation.category,
            object_id: e.annotation.object_id.clone(),
            bbox: e.annotation.gripper_box.corners(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads `root/manifest.jsonl`, validating every annotation and checking
/// that each referenced file exists. Example order follows the manifest.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let root = root.as_ref();
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(DatasetError::MissingManifest(root.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let dataset = parse_manifest(&text)?;
    for ex in &dataset.examples {
        let file = root.join(&ex.image_ref);
        if !file.is_file() {
            return Err(DatasetError::DanglingImageRef {
                example: ex.image_ref.clone(),
                path: file,
            });
        }
    }
    Ok(dataset)
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str) -> Result<Dataset, DatasetError> {
    let mut lines = text.lines().enumerate();

    let header: ManifestHeader = loop {
        match lines.next() {
            // A completely empty manifest is an empty dataset.
            None => return Ok(Dataset::empty(Split::Train)),
            Some((_, line)) => {
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(line).map_err(|e| DatasetError::MalformedHeader(e.to_string()))?;
            }
        }
    };

    let mut examples = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| DatasetError::MalformedAnnotation {
            example: identify_line(line, line_no),
            line: line_no,
            reason: e.to_string(),
        })?;
        let malformed = |reason: String| DatasetError::MalformedAnnotation {
            example: entry.image.clone(),
            line: line_no,
            reason,
        };
        let [x0, y0, x1, y1] = entry.bbox;
        let gripper_box = BoundingBox::new(x0, y0, x1, y1).map_err(|e| malformed(e.to_string()))?;
        let annotation = Annotation {
            gripper_box,
            label: entry.label,
            category: entry.category,
            object_id: entry.object_id,
        };
        annotation.validate().map_err(malformed)?;
        examples.push(Example {
            image_ref: entry.image,
            annotation,
            batch_id: entry.batch,
            example_index_in_batch: entry.index,
        });
    }

    let dataset = Dataset {
        split: header.split,
        manifest_version: header.manifest_version,
        image_width: header.image_width,
        image_height: header.image_height,
        examples,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn identify_line(line: &str, line_no: usize) -> String {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("image").and_then(|i| i.as_str()).map(str::to_owned))
        .unwrap_or_else(|| format!("line {line_no}"))
}

/// Canonical manifest text: header line, then one line per example.
pub fn manifest_string(dataset: &Dataset) -> String {
    let header = ManifestHeader {
        manifest_version: dataset.manifest_version.clone(),
        split: dataset.split,
        image_width: dataset.image_width,
        image_height: dataset.image_height,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for ex in &dataset.examples {
        out.push_str(&serde_json::to_string(&ManifestEntry::from(ex)).expect("entry serializes"));
        out.push('\n');
    }
    out
}

/// Writes the manifest only; referenced files are the caller's concern.
pub fn save_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<(), DatasetError> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(io_err(root))?;
    let path = root.join(MANIFEST_FILE);
    let mut file = fs::File::create(&path).map_err(io_err(&path))?;
    file.write_all(manifest_string(dataset).as_bytes())
        .map_err(io_err(&path))
}

pub fn category_counts(dataset: &Dataset) -> BTreeMap<Category, usize> {
    let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    for ex in &dataset.examples {
        *counts.entry(ex.annotation.category).or_default() += 1;
    }
    counts
}

pub fn distinct_objects(dataset: &Dataset, category: Category) -> BTreeSet<String> {
    dataset
        .examples
        .iter()
        .filter(|e| e.annotation.category == category)
        .filter_map(|e| e.annotation.object_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(i: u32, category: Category, object: Option<&str>) -> Example {
        Example {
            image_ref: format!("img_{i:04}.png"),
            annotation: Annotation {
                gripper_box: BoundingBox::new(10.0, 20.0, 110.0, 220.0).unwrap(),
                label: category.label(),
                category,
                object_id: object.map(str::to_owned),
            },
            batch_id: i / 10,
            example_index_in_batch: i % 10,
        }
    }

    fn write_with_files(dir: &Path, dataset: &Dataset) {
        save_dataset(dataset, dir).unwrap();
        for ex in &dataset.examples {
            fs::write(dir.join(&ex.image_ref), b"x").unwrap();
        }
    }

    #[test]
    fn box_rejects_inverted_corners() {
        assert!(matches!(
            BoundingBox::new(5.0, 0.0, 4.0, 1.0),
            Err(BoxError::Inverted(_))
        ));
        assert_eq!(BoundingBox::new(0.0, -1.0, 4.0, 1.0), Err(BoxError::Negative));
        assert_eq!(BoundingBox::new(0.0, 0.0, f64::NAN, 1.0), Err(BoxError::NonFinite));
    }

    #[test]
    fn label_encoding_is_fixed() {
        assert_eq!(serde_json::to_string(&GraspLabel::Object).unwrap(), "0");
        assert_eq!(serde_json::to_string(&GraspLabel::NoObject).unwrap(), "1");
        assert!(serde_json::from_str::<GraspLabel>("2").is_err());
    }

    #[test]
    fn annotation_invariants() {
        let mut a = example(0, Category::Rigid, Some("mug")).annotation;
        assert!(a.validate().is_ok());
        a.object_id = None;
        assert!(a.validate().is_err());
        let mut b = example(0, Category::NoObject, None).annotation;
        assert!(b.validate().is_ok());
        b.label = GraspLabel::Object;
        assert!(b.validate().is_err());
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DatasetError::MissingManifest(_))
        ));
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert!(ds.is_empty());
        assert!(category_counts(&ds).values().all(|&c| c == 0));

        let header_only = tempfile::tempdir().unwrap();
        save_dataset(&Dataset::empty(Split::RealEval), header_only.path()).unwrap();
        let ds = load_dataset(header_only.path()).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.split, Split::RealEval);
    }

    #[test]
    fn inverted_box_names_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(Split::Train, 640, 480, vec![example(0, Category::NoObject, None)]).unwrap();
        write_with_files(dir.path(), &ds);
        fs::write(dir.path().join("bad.png"), b"x").unwrap();
        let mut text = manifest_string(&ds);
        text.push_str(r#"{"image":"bad.png","batch":9,"index":0,"label":1,"category":"NO_OBJECT","object_id":null,"bbox":[300,10,200,50]}"#);
        text.push('\n');
        fs::write(dir.path().join(MANIFEST_FILE), text).unwrap();
        match load_dataset(dir.path()) {
            Err(DatasetError::MalformedAnnotation { example, line, .. }) => {
                assert_eq!(example, "bad.png");
                assert_eq!(line, 3);
            }
            other => panic!("expected MalformedAnnotation, got {other:?}"),
        }
    }

    #[test]
    fn dangling_reference() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(Split::Train, 640, 480, vec![example(0, Category::NoObject, None)]).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DatasetError::DanglingImageRef { .. })
        ));
    }

    #[test]
    fn duplicate_slots_rejected() {
        let mut a = example(0, Category::NoObject, None);
        let b = example(1, Category::NoObject, None);
        a.example_index_in_batch = b.example_index_in_batch;
        assert!(Dataset::new(Split::Train, 640, 480, vec![a, b]).is_err());
    }

    #[test]
    fn counts_and_objects() {
        let ds = Dataset::new(
            Split::RealEval,
            640,
            480,
            vec![
                example(0, Category::NoObject, None),
                example(1, Category::Rigid, Some("mug")),
                example(2, Category::Rigid, Some("mug")),
                example(3, Category::Rigid, Some("drill")),
                example(4, Category::Deformable, Some("towel")),
            ],
        )
        .unwrap();
        let counts = category_counts(&ds);
        assert_eq!(counts[&Category::NoObject], 1);
        assert_eq!(counts[&Category::Rigid], 3);
        assert_eq!(counts.values().sum::<usize>(), ds.len());
        assert_eq!(distinct_objects(&ds, Category::Rigid).len(), 2);
        assert!(distinct_objects(&ds, Category::NoObject).is_empty());
    }

    #[test]
    fn load_preserves_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut exs: Vec<_> = (0..7).map(|i| example(i, Category::NoObject, None)).collect();
        exs.reverse();
        let ds = Dataset::new(Split::Validation, 320, 240, exs).unwrap();
        write_with_files(dir.path(), &ds);
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, ds);
    }
}
