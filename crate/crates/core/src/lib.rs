//! Grasp verification toolkit: synthetic scene generation, two-stage
//! detect-then-classify inference, evaluation tables and a VQA baseline.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod detect;
pub mod eval;
pub mod fixtures;
pub mod geometry;
pub mod pipeline;
pub mod synth;
pub mod vqa;

pub use dataset::{
    load_dataset, parse_manifest, save_dataset, Annotation, BoundingBox, Category, Dataset, DatasetError, Example,
    GraspLabel, Split,
};
pub use detect::{
    adaptive_detect, cluster_detections, pad_box, select_detection, ClusterConfig, DetectError, Detection,
    DetectorBackend, FixtureDetector, PadConfig, ThresholdSchedule,
};
pub use eval::{
    classification_table, derive_pr_from_accuracies, detection_table, latency_stats, precision_recall, EvalRecord,
    EvalScope, PrScore,
};
pub use geometry::{convex_hulls_intersect, CameraModel, ConvexHullMesh, Pose};
pub use pipeline::{
    decide, verify_grasp, ClassifierBackend, DecisionConfig, FixtureClassifier, Frame, GraspVerdict, PipelineConfig,
    PipelineError, TrainingPlan,
};
pub use synth::{close_gripper_on_object, generate_batch, GenConfig, SceneSpec, SynthError};
pub use vqa::{build_prompt, parse_answer, run_vqa_eval, ReplayClient, VqaClient, VqaConfig, VqaError};
