use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arm::{perturb_arm_pose, ArmPose};
use super::assets::{asset, Asset, AssetPool};
use super::gripper::{close_gripper_on_object, place_object_in_gripper, GripperGeometry, ObjectPose};
use super::placement::{place_distractors, Placement, Room};
use super::projection::{mask_fraction, project_gripper_bbox};
use super::{GenConfig, SynthError};
use crate::dataset::{self, Annotation, BoundingBox, Category, Dataset, Example, GraspLabel, Split};
use crate::geometry::{pose_serde, CameraModel, Pose};

const MAX_ASSET_DRAWS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    #[serde(with = "pose_serde")]
    pub base_pose: Pose,
    pub arm: ArmPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspedObject {
    pub asset_id: String,
    /// World pose; world vertices are `pose * (scale * v)`.
    #[serde(with = "pose_serde")]
    pub pose: Pose,
    pub scale: f64,
    pub in_gripper: ObjectPose,
    /// Whether the fingers stopped on the object rather than closing fully.
    pub contact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub label: GraspLabel,
    pub category: Category,
    pub object_id: Option<String>,
    pub bbox: BoundingBox,
    /// Projected fingertip pad centers, when both are in front of the camera.
    pub fingertips_px: Option<[[f64; 2]; 2]>,
}

/// Everything a renderer needs to reproduce one example, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub example_index: u32,
    pub robot: RobotState,
    pub camera: CameraModel,
    pub room: Room,
    pub distractors: Vec<Placement>,
    pub grasped_object: Option<GraspedObject>,
    pub gripper: GripperGeometry,
    /// Geometry of every asset referenced above, keyed by asset id.
    pub assets: BTreeMap<String, Asset>,
    pub annotation: SceneAnnotation,
}

impl SceneSpec {
    pub fn to_annotation(&self) -> Annotation {
        Annotation {
            gripper_box: self.annotation.bbox,
            label: self.annotation.label,
            category: self.annotation.category,
            object_id: self.annotation.object_id.clone(),
        }
    }

    /// Share of `region` covered by the projected gripper and held object.
    pub fn silhouette_fraction(&self, region: &BoundingBox) -> f64 {
        let held = self
            .grasped_object
            .as_ref()
            .and_then(|o| self.assets.get(&o.asset_id).map(|a| (&a.hull, &o.in_gripper)));
        mask_fraction(&self.camera, &self.gripper, held, region)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedExample {
    pub scene: SceneSpec,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub scene_seed: u64,
    pub examples: Vec<GeneratedExample>,
}

impl Batch {
    /// Canonical JSON of every scene, one per line.
    pub fn to_json_lines(&self) -> String {
        self.examples
            .iter()
            .map(|e| serde_json::to_string(&e.scene).expect("scene serializes") + "\n")
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene seed of batch `index` in a run seeded with `base`.
pub fn batch_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

fn draw_held_object(
    rng: &mut ChaCha8Rng,
    config: &GenConfig,
    gripper: &GripperGeometry,
) -> Result<(Asset, ObjectPose), SynthError> {
    let mut last = None;
    for _ in 0..MAX_ASSET_DRAWS {
        let candidate = asset(config.asset_pool, rng.random_range(0..config.pool_size));
        match place_object_in_gripper(gripper, &candidate.hull, rng, &config.insertion) {
            Ok(pose) => return Ok((candidate, pose)),
            Err(e @ SynthError::ObjectTooLarge { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one draw"))
}

/// One batch of examples sharing a scene. A pure function of
/// `(scene_seed, config)`.
pub fn generate_batch(scene_seed: u64, config: &GenConfig) -> Result<Batch, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let robot = &config.robot;
    let base_pose = Pose::identity();
    let home = robot.home_pose();
    let open_gripper = GripperGeometry::parallel_jaw(&config.gripper);

    let aim = |g: &GripperGeometry| g.base_pose * g.grasp_center();
    let mut home_gripper = open_gripper.clone();
    home_gripper.base_pose = robot.gripper_pose(&base_pose, &home);
    let home_camera = robot.camera(&base_pose, &home, &aim(&home_gripper))?;

    let distractors = place_distractors(
        &mut rng,
        &config.distractors,
        config.asset_pool,
        config.pool_size,
        &config.room,
        &home_camera,
    )?;
    let mut scene_assets = BTreeMap::new();
    for d in &distractors {
        scene_assets
            .entry(d.asset_id.clone())
            .or_insert_with(|| asset_by_id(config.asset_pool, &d.asset_id));
    }

    let mut examples = Vec::with_capacity(config.batch_size);
    for index in 0..config.batch_size {
        let held = if rng.random_bool(config.p_grasp) {
            let (a, pose) = draw_held_object(&mut rng, config, &open_gripper)?;
            let closing = close_gripper_on_object(&open_gripper, &a.hull, &pose, config.aperture_step)?;
            Some((a, pose, closing))
        } else {
            None
        };
        let aperture = held.as_ref().map_or(0.0, |(_, _, c)| c.final_aperture);

        let mut retries = 0;
        let (arm, gripper, camera, bbox) = loop {
            let arm = perturb_arm_pose(&home, &mut rng, robot, &config.perturb);
            let mut gripper = open_gripper.clone();
            gripper.aperture = aperture;
            gripper.base_pose = robot.gripper_pose(&base_pose, &arm);
            let camera = robot.camera(&base_pose, &arm, &aim(&gripper))?;
            match project_gripper_bbox(&camera, &gripper, held.as_ref().map(|(a, p, _)| (&a.hull, p))) {
                Ok(bbox) => break (arm, gripper, camera, bbox),
                Err(SynthError::GripperOutOfView) if retries < config.max_view_retries => retries += 1,
                Err(e) => return Err(e),
            }
        };

        let fingertips_px = gripper
            .fingertips_world()
            .iter()
            .map(|p| camera.project(p).map(|px| [px.x, px.y]))
            .collect::<Option<Vec<_>>>()
            .map(|v| [v[0], v[1]]);

        let mut assets = scene_assets.clone();
        let (annotation, grasped_object) = match held {
            Some((a, in_gripper, closing)) => {
                let pose = gripper.base_pose * in_gripper.pose;
                let annotation = SceneAnnotation {
                    label: GraspLabel::Object,
                    category: a.category,
                    object_id: Some(a.id.clone()),
                    bbox,
                    fingertips_px,
                };
                let grasped = GraspedObject {
                    asset_id: a.id.clone(),
                    pose,
                    scale: in_gripper.scale,
                    in_gripper,
                    contact: closing.contact,
                };
                assets.insert(a.id.clone(), a);
                (annotation, Some(grasped))
            }
            None => (
                SceneAnnotation {
                    label: GraspLabel::NoObject,
                    category: Category::NoObject,
                    object_id: None,
                    bbox,
                    fingertips_px,
                },
                None,
            ),
        };

        let scene = SceneSpec {
            seed: scene_seed,
            example_index: index as u32,
            robot: RobotState { base_pose, arm },
            camera,
            room: config.room.clone(),
            distractors: distractors.clone(),
            grasped_object,
            gripper,
            assets,
            annotation,
        };
        let annotation = scene.to_annotation();
        examples.push(GeneratedExample { scene, annotation });
    }
    Ok(Batch { scene_seed, examples })
}

fn asset_by_id(pool: AssetPool, id: &str) -> Asset {
    let index = id
        .rsplit('-')
        .next()
        .and_then(|s| s.parse().ok())
        .expect("asset ids end in their index");
    asset(pool, index)
}

/// Generates `num_batches` batches in parallel; batch `b` uses
/// `batch_seed(seed, b)`.
pub fn generate_batches(config: &GenConfig, num_batches: usize, seed: u64) -> Result<Vec<Batch>, SynthError> {
    (0..num_batches)
        .into_par_iter()
        .map(|b| generate_batch(batch_seed(seed, b as u64), config))
        .collect()
}

pub fn scene_file_name(batch: usize, index: usize) -> String {
    format!("scene_{batch}_{index}.json")
}

/// Writes one scene file per example plus a manifest that loads through
/// [`dataset::load_dataset`].
pub fn write_dataset(out_dir: &Path, batches: &[Batch], config: &GenConfig) -> Result<Dataset, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut examples = Vec::new();
    for (b, batch) in batches.iter().enumerate() {
        for (i, ex) in batch.examples.iter().enumerate() {
            let name = scene_file_name(b, i);
            let path = out_dir.join(&name);
            let mut text = serde_json::to_string(&ex.scene).expect("scene serializes");
            text.push('\n');
            fs::write(&path, text).map_err(io(&path))?;
            examples.push(Example {
                image_ref: name,
                annotation: ex.annotation.clone(),
                batch_id: b as u32,
                example_index_in_batch: i as u32,
            });
        }
    }
    let split = match config.asset_pool {
        AssetPool::Train => Split::Train,
        AssetPool::Validation => Split::Validation,
    };
    let i = &config.robot.intrinsics;
    let dataset = Dataset::new(split, i.width, i.height, examples)
        .map_err(|e| SynthError::PreconditionViolation(format!("generated dataset failed validation: {e}")))?;
    dataset::save_dataset(&dataset, out_dir).map_err(|e| SynthError::PreconditionViolation(e.to_string()))?;
    Ok(dataset)
}
