use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;

use graspcheck_core::dataset::{category_counts, MANIFEST_FILE};
use graspcheck_core::eval::{
    classification_table, consistency_check, detection_correct_synthetic, detection_table, join_verdicts,
    overlap_proxy, read_records, render_classification_tables, render_detection_table, render_pr_scores, write_records,
    ClassificationTable, ConsistencyReport, DetectionTable, EvalRecord, CONSISTENCY_TOLERANCE,
};
use graspcheck_core::pipeline::{
    read_verdicts, verify_grasp, write_verdicts, FixtureClassifier, Frame, VerdictLine, VerdictStatus,
};
use graspcheck_core::synth::{generate_batches, write_dataset};
use graspcheck_core::vqa::{build_prompt, run_vqa_eval, PromptGuard, ReplayClient, VqaClient, VqaRun};
use graspcheck_core::{
    fixtures as core_fixtures, parse_manifest, precision_recall, Category, Dataset, FixtureDetector, GraspLabel,
    PrScore, SceneSpec, Split,
};

use crate::config::RunConfig;
use crate::{ConfigArgs, EvaluateArgs, FixturesArgs, GenerateArgs, InferArgs, VqaArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn inner(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => e,
        }
    }
}

type CmdResult = Result<(), CliError>;

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Dataset directory plus the parsed manifest. Accepts the directory or the
/// manifest file itself.
fn read_dataset(path: &Path) -> anyhow::Result<(PathBuf, Dataset)> {
    let (root, manifest) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };
    let text = fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let dataset = parse_manifest(&text).with_context(|| format!("parsing {}", manifest.display()))?;
    Ok((root, dataset))
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(usage(anyhow!("--jobs must be >= 1")));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(runtime)
}

pub fn generate(cfg: &RunConfig, args: GenerateArgs) -> CmdResult {
    let mut gen = cfg.gen.clone();
    if let Some(b) = args.batch_size {
        gen.batch_size = b;
    }
    if let Some(p) = args.p_grasp {
        gen.p_grasp = p;
    }
    gen.validate().map_err(usage)?;
    let out = &args.out;
    if out.exists() {
        let empty = out.is_dir() && fs::read_dir(out).map_err(runtime)?.next().is_none();
        if !empty {
            return Err(usage(anyhow!("{} exists and is not an empty directory", out.display())));
        }
    }
    let name = out
        .file_name()
        .ok_or_else(|| usage(anyhow!("bad output path {}", out.display())))?;
    let staging = out.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(runtime)?;
    }

    let pool = thread_pool(args.jobs)?;
    let result = pool.install(|| {
        let batches = generate_batches(&gen, args.num_batches, args.seed)?;
        write_dataset(&staging, &batches, &gen)
    });
    let dataset = match result {
        Ok(d) => d,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(runtime(anyhow!(e).context("generation failed; partial output removed")));
        }
    };
    if out.exists() {
        fs::remove_dir(out).map_err(runtime)?;
    }
    fs::rename(&staging, out).map_err(runtime)?;

    let counts = category_counts(&dataset);
    let objects = dataset
        .examples
        .iter()
        .filter(|e| e.annotation.label == GraspLabel::Object)
        .count();
    println!(
        "wrote {} examples ({} batches x {}) to {}",
        dataset.len(),
        args.num_batches,
        gen.batch_size,
        out.display()
    );
    println!("OBJECT {objects}, NO_OBJECT {}", dataset.len() - objects);
    for c in Category::ALL {
        println!("  {:<11} {}", c.display_name(), counts.get(&c).copied().unwrap_or(0));
    }
    Ok(())
}

fn load_frame(root: &Path, dataset: &Dataset, ex: &graspcheck_core::Example) -> anyhow::Result<Frame> {
    let path = root.join(&ex.image_ref);
    let is_image = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"));
    if is_image && path.is_file() {
        let image = image::open(&path).with_context(|| format!("decoding {}", path.display()))?;
        Ok(Frame::new(ex.id(), image.to_rgb8()))
    } else {
        Ok(Frame::blank(ex.id(), dataset.image_width, dataset.image_height))
    }
}

pub fn infer(cfg: &RunConfig, args: InferArgs) -> CmdResult {
    let mut pipeline = cfg.pipeline();
    if let Some(t) = args.threshold {
        pipeline.decision.threshold_no_object = t;
    }
    pipeline.validate().map_err(usage)?;
    let (root, dataset) = read_dataset(&args.dataset).map_err(runtime)?;
    let detector = FixtureDetector::load(&args.detector)
        .with_context(|| format!("loading detector {}", args.detector.display()))
        .map_err(runtime)?;
    let classifier = FixtureClassifier::load(&args.classifier)
        .with_context(|| format!("loading classifier {}", args.classifier.display()))
        .map_err(runtime)?;

    let pool = thread_pool(Some(args.jobs))?;
    let lines: Vec<VerdictLine> = pool
        .install(|| {
            dataset
                .examples
                .par_iter()
                .map(|ex| {
                    let frame = load_frame(&root, &dataset, ex)?;
                    let result = verify_grasp(&frame, &detector, &classifier, &pipeline);
                    VerdictLine::from_result(ex.id(), result).with_context(|| format!("example {}", ex.id()))
                })
                .collect::<anyhow::Result<Vec<_>>>()
        })
        .map_err(runtime)?;

    let mut out = create_file(&args.out).map_err(runtime)?;
    write_verdicts(&lines, &mut out).map_err(runtime)?;
    out.flush().map_err(runtime)?;
    let not_found = lines
        .iter()
        .filter(|l| l.status == VerdictStatus::GripperNotFound)
        .count();
    let no_object = lines
        .iter()
        .filter(|l| l.verdict.as_ref().is_some_and(|v| v.label == GraspLabel::NoObject))
        .count();
    println!("wrote {} verdicts to {}", lines.len(), args.out.display());
    println!(
        "NO_OBJECT {no_object}, OBJECT {}, gripper_not_found {not_found}",
        lines.len() - no_object - not_found
    );
    Ok(())
}

/// `NAME=PATH`, or a bare path named after its file stem.
fn named_path(spec: &str) -> Result<(String, PathBuf), CliError> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        Some(_) => Err(usage(anyhow!("expected NAME=PATH, got {spec:?}"))),
        None => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| usage(anyhow!("bad path {spec:?}")))?;
            Ok((name, path))
        }
    }
}

fn load_records(path: &Path) -> anyhow::Result<Vec<EvalRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_records(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn judge_verdicts(
    root: &Path,
    dataset: &Dataset,
    verdicts: &[VerdictLine],
    reviews: &BTreeMap<String, bool>,
) -> anyhow::Result<Vec<EvalRecord>> {
    let synthetic = matches!(dataset.split, Split::Train | Split::Validation);
    let records = join_verdicts(dataset, verdicts, |ex, v| {
        if let Some(r) = reviews.get(ex.id()) {
            return Ok(*r);
        }
        if !synthetic {
            return Ok(overlap_proxy(&ex.annotation.gripper_box, &v.selected_box));
        }
        let path = root.join(&ex.image_ref);
        let scene: Option<SceneSpec> = fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let (tips, mask) = match &scene {
            Some(s) => (s.annotation.fingertips_px, Some(s.silhouette_fraction(&v.selected_box))),
            None => (None, None),
        };
        detection_correct_synthetic(ex, &v.selected_box, tips, mask)
    })?;
    Ok(records)
}

#[derive(Debug, Serialize)]
struct ModelReport {
    name: String,
    /// Present for pipeline models: verdict inputs, or records with at
    /// least one detection failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    detection: Option<DetectionTable>,
    classification: ClassificationTable,
    precision_recall: PrScore,
    consistency: ConsistencyReport,
}

#[derive(Debug, Serialize)]
struct EvaluationSummary {
    models: Vec<ModelReport>,
}

pub fn evaluate(cfg: &RunConfig, args: EvaluateArgs) -> CmdResult {
    if args.verdicts.is_empty() && args.records.is_empty() {
        return Err(usage(anyhow!("give at least one --verdicts or --records input")));
    }
    let reviews: BTreeMap<String, bool> = match args.reviews.as_ref().or(cfg.eval.reviews.as_ref()) {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(runtime)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(runtime)?
        }
        None => BTreeMap::new(),
    };

    let mut models: Vec<(String, Vec<EvalRecord>, bool)> = Vec::new();
    if !args.verdicts.is_empty() {
        let path = args
            .dataset
            .as_ref()
            .ok_or_else(|| usage(anyhow!("--verdicts needs --dataset")))?;
        let (root, dataset) = read_dataset(path).map_err(runtime)?;
        for spec in &args.verdicts {
            let (name, p) = named_path(spec)?;
            let file = File::open(&p)
                .with_context(|| format!("opening {}", p.display()))
                .map_err(runtime)?;
            let verdicts = read_verdicts(BufReader::new(file)).map_err(runtime)?;
            let records = judge_verdicts(&root, &dataset, &verdicts, &reviews)
                .with_context(|| format!("joining {} with the dataset", p.display()))
                .map_err(runtime)?;
            models.push((name, records, true));
        }
    }
    for spec in &args.records {
        let (name, p) = named_path(spec)?;
        let records = load_records(&p).map_err(runtime)?;
        let detected = records.iter().any(|r| !r.detection_correct);
        models.push((name, records, detected));
    }
    let mut pr_sources: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for spec in &args.pr_records {
        let (name, p) = named_path(spec)?;
        if !models.iter().any(|(m, ..)| *m == name) {
            return Err(usage(anyhow!("--pr-records names unknown model {name:?}")));
        }
        pr_sources.insert(name, load_records(&p).map_err(runtime)?);
    }

    let reports: Vec<ModelReport> = models
        .iter()
        .map(|(name, records, detected)| {
            let classification = classification_table(records);
            let pr = precision_recall(pr_sources.get(name).unwrap_or(records));
            ModelReport {
                name: name.clone(),
                detection: detected.then(|| detection_table(records)),
                consistency: consistency_check(name, &classification, &pr, CONSISTENCY_TOLERANCE),
                classification,
                precision_recall: pr,
            }
        })
        .collect();

    for r in &reports {
        if let Some(t) = &r.detection {
            println!("Detection: {}\n{}", r.name, render_detection_table(t));
        }
    }
    let tables: Vec<(&str, &ClassificationTable)> =
        reports.iter().map(|r| (r.name.as_str(), &r.classification)).collect();
    println!("Classification accuracy (%)\n{}", render_classification_tables(&tables));
    let scores: Vec<(&str, &PrScore)> = reports.iter().map(|r| (r.name.as_str(), &r.precision_recall)).collect();
    println!("NO_OBJECT precision / recall\n{}", render_pr_scores(&scores));
    println!("Cross-table consistency");
    for r in &reports {
        println!("  {}", r.consistency.summary());
    }

    if let Some(out) = args.out.as_ref().or(cfg.eval.output.as_ref()) {
        write_json(out, &EvaluationSummary { models: reports }).map_err(runtime)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct VqaSummary<'a> {
    prompt_version: &'a str,
    examples: usize,
    answered: usize,
    unparseable: &'a [String],
    latency_mean_ms: Option<f64>,
    latency_std_ms: Option<f64>,
    total_cost: String,
    currency: &'a str,
    aborted: Option<&'a str>,
}

fn vqa_client(cfg: &RunConfig, args: &VqaArgs) -> Result<Box<dyn VqaClient>, CliError> {
    if args.live {
        return live_client(cfg);
    }
    let path = args
        .replay
        .as_ref()
        .or(cfg.vqa.replay.as_ref())
        .ok_or_else(|| usage(anyhow!("offline mode needs --replay or vqa.replay (or use --live)")))?;
    let replay = ReplayClient::load(path)
        .with_context(|| format!("loading replay {}", path.display()))
        .map_err(runtime)?;
    Ok(Box::new(PromptGuard::new(replay)))
}

#[cfg(feature = "live-vqa")]
fn live_client(cfg: &RunConfig) -> Result<Box<dyn VqaClient>, CliError> {
    let client = graspcheck_core::vqa::LiveClient::from_env(cfg.vqa.cost_per_call).map_err(runtime)?;
    Ok(Box::new(PromptGuard::new(client)))
}

#[cfg(not(feature = "live-vqa"))]
fn live_client(_cfg: &RunConfig) -> Result<Box<dyn VqaClient>, CliError> {
    Err(usage(anyhow!(
        "this build has no live client; rebuild with --features live-vqa"
    )))
}

pub fn vqa(cfg: &RunConfig, args: VqaArgs) -> CmdResult {
    let mut vcfg = cfg.vqa.to_config();
    if let Some(j) = args.jobs {
        vcfg.parallelism = j;
    }
    if let Some(v) = &args.prompt_version {
        vcfg.prompt_version = v.clone();
    }
    if vcfg.parallelism == 0 {
        return Err(usage(anyhow!("--jobs must be >= 1")));
    }
    let prompt = build_prompt(&vcfg).map_err(usage)?;
    let (root, dataset) = read_dataset(&args.dataset).map_err(runtime)?;
    let client = vqa_client(cfg, &args)?;
    let run: VqaRun = run_vqa_eval(&dataset, Some(&root), client.as_ref(), &prompt, &vcfg).map_err(runtime)?;

    let records_path = args.out.join("vqa_records.jsonl");
    let mut out = create_file(&records_path).map_err(runtime)?;
    write_records(&run.records, &mut out).map_err(runtime)?;
    out.flush().map_err(runtime)?;
    let summary = VqaSummary {
        prompt_version: &run.prompt.version,
        examples: dataset.len(),
        answered: run.records.len(),
        unparseable: &run.unparseable,
        latency_mean_ms: run.latency.map(|l| l.mean_ms),
        latency_std_ms: run.latency.map(|l| l.std_ms),
        total_cost: run.total_cost(),
        currency: &run.currency,
        aborted: run.aborted.as_deref(),
    };
    write_json(&args.out.join("vqa_summary.json"), &summary).map_err(runtime)?;

    println!("answered {} of {} examples", run.records.len(), dataset.len());
    println!("unparseable {}", run.unparseable.len());
    for id in &run.unparseable {
        println!("  {id}");
    }
    if let Some(l) = run.latency {
        println!("latency mean {} ms, std {} ms", l.mean_ms, l.std_ms);
    }
    println!("total cost {} {}", run.total_cost(), run.currency);
    println!("wrote {}", args.out.display());
    if let Some(why) = &run.aborted {
        return Err(runtime(anyhow!(
            "client failure, results cover the examples before it: {why}"
        )));
    }
    Ok(())
}

pub fn fixtures(args: FixturesArgs) -> CmdResult {
    core_fixtures::write_fixtures(&args.out, args.placeholder_images)
        .with_context(|| format!("writing fixtures to {}", args.out.display()))
        .map_err(runtime)?;
    for (name, _) in core_fixtures::fixture_files() {
        println!("{}", args.out.join(name).display());
    }
    Ok(())
}

pub fn print_config(cfg: &RunConfig, args: ConfigArgs) -> CmdResult {
    let text = if args.json {
        serde_json::to_string_pretty(cfg).map_err(runtime)? + "\n"
    } else {
        serde_yaml::to_string(cfg).map_err(runtime)?
    };
    print!("{text}");
    Ok(())
}
