use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use graspcheck_core::detect::{ClusterConfig, PadConfig, ThresholdSchedule};
use graspcheck_core::pipeline::{validate_training_plan, DecisionConfig, PipelineConfig, TrainingPlan};
use graspcheck_core::vqa::{build_prompt, VqaConfig};
use graspcheck_core::GenConfig;

/// Names tried in the working directory when `--config` is absent.
pub const DEFAULT_CONFIG_FILES: [&str; 3] = ["graspcheck.yaml", "graspcheck.yml", "graspcheck.json"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub detect: DetectSection,
    pub decide: DecisionConfig,
    pub training_plan: TrainingPlan,
    pub eval: EvalSection,
    pub vqa: VqaSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub schedule: ThresholdSchedule,
    pub cluster: ClusterConfig,
    pub pad: PadConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Summary JSON written by `evaluate`.
    pub output: Option<PathBuf>,
    /// JSON map of example id to a manual detection judgement.
    pub reviews: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqaSection {
    pub prompt_version: String,
    pub include_object_hints: bool,
    pub parallelism: usize,
    pub currency: String,
    pub replay: Option<PathBuf>,
    /// Charge per live call, in `currency`.
    pub cost_per_call: f64,
}

impl Default for VqaSection {
    fn default() -> Self {
        let v = VqaConfig::default();
        Self {
            prompt_version: v.prompt_version,
            include_object_hints: v.include_object_hints,
            parallelism: v.parallelism,
            currency: v.currency,
            replay: None,
            cost_per_call: 0.0,
        }
    }
}

impl VqaSection {
    pub fn to_config(&self) -> VqaConfig {
        VqaConfig {
            prompt_version: self.prompt_version.clone(),
            include_object_hints: self.include_object_hints,
            parallelism: self.parallelism,
            currency: self.currency.clone(),
        }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            schedule: self.detect.schedule,
            cluster: self.detect.cluster,
            pad: self.detect.pad,
            decision: self.decide,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.gen.validate().context("gen")?;
        self.pipeline().validate().context("detect/decide")?;
        let plan = validate_training_plan(&self.training_plan);
        if !plan.is_valid() {
            bail!("training_plan: {}", plan.violations.join("; "));
        }
        build_prompt(&self.vqa.to_config()).context("vqa")?;
        if self.vqa.parallelism == 0 {
            bail!("vqa.parallelism must be >= 1");
        }
        if !(self.vqa.cost_per_call >= 0.0 && self.vqa.cost_per_call.is_finite()) {
            bail!("vqa.cost_per_call must be a finite value >= 0");
        }
        Ok(())
    }

    /// Parses YAML, or JSON for `.json` files. Relative paths inside are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            serde_yaml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.eval.output, &mut cfg.eval.reviews, &mut cfg.vqa.replay]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    /// Explicit path, else the first default name present, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> anyhow::Result<Self> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        match DEFAULT_CONFIG_FILES.iter().map(Path::new).find(|p| p.is_file()) {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}

pub const CONFIG_HELP: &str = "\
CONFIG FILE
  --config PATH, or graspcheck.yaml / graspcheck.yml / graspcheck.json in
  the working directory. YAML unless the extension is .json. Unknown keys
  are rejected; every section is optional. Command-line flags override the
  file. `graspcheck config` prints the effective configuration.

  gen                           synthetic scene generation
    batch_size                  examples per shared scene [10]
    p_grasp                     chance of an object in the gripper [0.5]
    asset_pool                  train | validation object pool
    pool_size                   assets drawn from the pool [200]
    aperture_step               normalized closing increment [0.02]
    max_view_retries            arm re-draws when the gripper leaves view
    distractors                 count [min, max], scale_range, max_attempts
    insertion                   scale_range, max_fill, backoff_step
    perturb                     joint_delta (per joint), camera_delta
    robot                       joints (name, lower, upper), home,
                                camera_offset_limit, shoulder_offset,
                                upper_arm_length, hand_length, head_height,
                                head_forward, intrinsics (fx, fy, cx, cy,
                                width, height)
    gripper                     max_gap, finger_width, finger_depth,
                                finger_length, palm_height, palm_depth
    room                        min, max corners in meters
  detect
    schedule                    start [0.5], decay_factor [0.5], floor [0.01]
    cluster                     eps [0.10], min_pts [1]
    pad                         pad_x_frac [0.05], pad_y_frac [0.25]
  decide
    threshold_no_object         NO_OBJECT iff p >= value [0.15]
  training_plan
    stages                      list of {trainable_scope (HEAD_ONLY |
                                HEAD_PLUS_LAST_BACKBONE_LAYER), dropout
                                [start, end], learning_rate, epochs}
    detector_epochs             [100]
  eval
    output                      summary JSON written by evaluate
    reviews                     JSON map example id -> bool overriding the
                                automatic detection judgement
  vqa
    prompt_version              prompt template version [v1]
    include_object_hints        must stay false
    parallelism                 concurrent calls [1]
    currency                    opaque cost unit [EUR]
    replay                      recorded answers (JSON lines)
    cost_per_call               charge per live call [0]

LIVE VQA CREDENTIALS (environment only, never read from the config file)
  GRASPCHECK_VQA_API_KEY        bearer token
  GRASPCHECK_VQA_ENDPOINT       chat-completions URL
  GRASPCHECK_VQA_MODEL          model name sent with each request

EXIT STATUS
  0 success, 1 usage or configuration error, 2 runtime failure";
