//! Zero-shot VQA baseline: one fixed question per image, answers parsed to
//! a grasp label, with latency and cost accounting.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, GraspLabel};
use crate::eval::{latency_stats, EvalRecord, LatencyStats};

pub const PROMPT_V1: &str = "This image was taken by the head camera of a robot. \
Look at the robot's gripper. Is the gripper holding any object? \
Answer with a single word: YES if it holds an object, NO if it is empty.";

pub const NANO_PER_UNIT: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum VqaError {
    #[error("unsupported VQA option: {0}")]
    UnsupportedOption(String),
    #[error("answer contains neither yes nor no: {0:?}")]
    UnparseableAnswer(String),
    #[error("VQA client failure: {0}")]
    ClientFailure(String),
    #[error("prompt changed within a run")]
    PromptMismatch,
    #[error("bad recording line {line}: {reason}")]
    BadRecording { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqaConfig {
    pub prompt_version: String,
    /// Object identity in the prompt is not supported; must stay false.
    pub include_object_hints: bool,
    /// Concurrent client calls.
    pub parallelism: usize,
    pub currency: String,
}

impl Default for VqaConfig {
    fn default() -> Self {
        Self {
            prompt_version: "v1".into(),
            include_object_hints: false,
            parallelism: 1,
            currency: "EUR".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VqaPrompt {
    pub version: String,
    pub text: String,
}

pub fn build_prompt(config: &VqaConfig) -> Result<VqaPrompt, VqaError> {
    if config.include_object_hints {
        return Err(VqaError::UnsupportedOption(
            "include_object_hints: prompts carry no object information".into(),
        ));
    }
    match config.prompt_version.as_str() {
        "v1" => Ok(VqaPrompt {
            version: "v1".into(),
            text: PROMPT_V1.into(),
        }),
        other => Err(VqaError::UnsupportedOption(format!("unknown prompt_version {other:?}"))),
    }
}

/// First whole-word "yes" or "no", case-insensitive.
pub fn parse_answer(raw_text: &str) -> Result<GraspLabel, VqaError> {
    raw_text
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|w| {
            if w.eq_ignore_ascii_case("yes") {
                Some(GraspLabel::Object)
            } else if w.eq_ignore_ascii_case("no") {
                Some(GraspLabel::NoObject)
            } else {
                None
            }
        })
        .ok_or_else(|| VqaError::UnparseableAnswer(raw_text.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaRequest<'a> {
    pub example_id: &'a str,
    pub image_path: Option<PathBuf>,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VqaResponse {
    pub raw_text: String,
    pub latency_ms: u64,
    /// Cost in billionths of the currency unit.
    pub cost_nano: u64,
}

pub trait VqaClient: Sync {
    fn ask(&self, request: &VqaRequest<'_>) -> Result<VqaResponse, VqaError>;
}

/// One line of `vqa_recording.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingLine {
    pub example_id: String,
    pub raw_text: String,
    pub latency_ms: u64,
    /// Decimal cost per call.
    pub cost: f64,
    #[serde(default)]
    pub currency: Option<String>,
}

pub fn cost_to_nano(cost: f64) -> u64 {
    (cost * NANO_PER_UNIT as f64).round() as u64
}

pub fn format_cost(nano: u64) -> String {
    let s = format!("{}.{:09}", nano / NANO_PER_UNIT, nano % NANO_PER_UNIT);
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').map_or_else(|| s.to_string(), |s| s.to_string())
}

pub fn read_recording(input: impl BufRead) -> Result<Vec<RecordingLine>, VqaError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RecordingLine = serde_json::from_str(&line).map_err(|e| VqaError::BadRecording {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !(r.cost >= 0.0 && r.cost.is_finite()) {
            return Err(VqaError::BadRecording {
                line: i + 1,
                reason: "cost must be finite and >= 0".into(),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_recording(lines: &[RecordingLine], mut out: impl Write) -> Result<(), VqaError> {
    for l in lines {
        serde_json::to_writer(&mut out, l).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Answers from a recording, keyed by example id.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    responses: BTreeMap<String, VqaResponse>,
}

impl ReplayClient {
    pub fn new(lines: Vec<RecordingLine>) -> Result<Self, VqaError> {
        let mut responses = BTreeMap::new();
        for (i, l) in lines.into_iter().enumerate() {
            let response = VqaResponse {
                raw_text: l.raw_text,
                latency_ms: l.latency_ms,
                cost_nano: cost_to_nano(l.cost),
            };
            if responses.insert(l.example_id.clone(), response).is_some() {
                return Err(VqaError::BadRecording {
                    line: i + 1,
                    reason: format!("duplicate example_id {}", l.example_id),
                });
            }
        }
        Ok(Self { responses })
    }

    pub fn load(path: &Path) -> Result<Self, VqaError> {
        let file = std::fs::File::open(path)
            .map_err(|e| VqaError::ClientFailure(format!("cannot open replay file {}: {e}", path.display())))?;
        Self::new(read_recording(std::io::BufReader::new(file))?)
    }
}

impl VqaClient for ReplayClient {
    fn ask(&self, request: &VqaRequest<'_>) -> Result<VqaResponse, VqaError> {
        self.responses
            .get(request.example_id)
            .cloned()
            .ok_or_else(|| VqaError::ClientFailure(format!("no recorded answer for {}", request.example_id)))
    }
}

/// Rejects any call whose prompt differs from the first one seen.
pub struct PromptGuard<C> {
    inner: C,
    seen: Mutex<Option<String>>,
}

impl<C: VqaClient> PromptGuard<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            seen: Mutex::new(None),
        }
    }
}

impl<C: VqaClient> VqaClient for PromptGuard<C> {
    fn ask(&self, request: &VqaRequest<'_>) -> Result<VqaResponse, VqaError> {
        {
            let mut seen = self.seen.lock().expect("prompt guard lock");
            match seen.as_deref() {
                None => *seen = Some(request.prompt.to_string()),
                Some(p) if p == request.prompt => {}
                Some(_) => return Err(VqaError::PromptMismatch),
            }
        }
        self.inner.ask(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VqaOutcome {
    pub example_id: String,
    pub raw_text: String,
    pub predicted_label: Option<GraspLabel>,
    pub latency_ms: u64,
    pub cost_nano: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VqaRun {
    pub prompt: VqaPrompt,
    pub records: Vec<EvalRecord>,
    pub outcomes: Vec<VqaOutcome>,
    /// Example ids whose answer could not be parsed.
    pub unparseable: Vec<String>,
    pub latency: Option<LatencyStats>,
    pub total_cost_nano: u64,
    pub currency: String,
    /// Set when a client failure stopped the run; results cover the
    /// examples before it.
    pub aborted: Option<String>,
}

impl VqaRun {
    pub fn total_cost(&self) -> String {
        format_cost(self.total_cost_nano)
    }
}

/// One call per example with the same prompt. Results keep dataset order
/// whatever the completion order.
pub fn run_vqa_eval(
    dataset: &Dataset,
    dataset_root: Option<&Path>,
    client: &dyn VqaClient,
    prompt: &VqaPrompt,
    config: &VqaConfig,
) -> Result<VqaRun, VqaError> {
    let ask = |i: usize| {
        let ex = &dataset.examples[i];
        client.ask(&VqaRequest {
            example_id: ex.id(),
            image_path: dataset_root.map(|r| r.join(&ex.image_ref)),
            prompt: &prompt.text,
        })
    };
    let responses: Vec<Result<VqaResponse, VqaError>> = if config.parallelism <= 1 {
        let mut out = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            let r = ask(i);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| VqaError::ClientFailure(e.to_string()))?;
        pool.install(|| (0..dataset.len()).into_par_iter().map(ask).collect())
    };

    let mut run = VqaRun {
        prompt: prompt.clone(),
        records: Vec::new(),
        outcomes: Vec::new(),
        unparseable: Vec::new(),
        latency: None,
        total_cost_nano: 0,
        currency: config.currency.clone(),
        aborted: None,
    };
    for (ex, response) in dataset.examples.iter().zip(responses) {
        let response = match response {
            Ok(r) => r,
            Err(e @ VqaError::PromptMismatch) => return Err(e),
            Err(e) => {
                run.aborted = Some(format!("{}: {e}", ex.id()));
                break;
            }
        };
        let predicted_label = parse_answer(&response.raw_text).ok();
        if predicted_label.is_none() {
            run.unparseable.push(ex.id().to_string());
        }
        run.total_cost_nano += response.cost_nano;
        run.records.push(EvalRecord {
            example_id: ex.id().to_string(),
            category: ex.annotation.category,
            object_id: ex.annotation.object_id.clone(),
            detection_correct: true,
            predicted_label,
            true_label: ex.annotation.label,
        });
        run.outcomes.push(VqaOutcome {
            example_id: ex.id().to_string(),
            raw_text: response.raw_text,
            predicted_label,
            latency_ms: response.latency_ms,
            cost_nano: response.cost_nano,
        });
    }
    let latencies: Vec<f64> = run.outcomes.iter().map(|o| o.latency_ms as f64).collect();
    run.latency = latency_stats(&latencies);
    Ok(run)
}

#[cfg(feature = "live-vqa")]
pub use live::{LiveClient, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};

#[cfg(feature = "live-vqa")]
mod live {
    use std::time::Instant;

    use base64::Engine;

    use super::*;

    pub const ENV_API_KEY: &str = "GRASPCHECK_VQA_API_KEY";
    pub const ENV_ENDPOINT: &str = "GRASPCHECK_VQA_ENDPOINT";
    pub const ENV_MODEL: &str = "GRASPCHECK_VQA_MODEL";

    /// Chat-completions style HTTP client. Credentials come from the
    /// environment only.
    pub struct LiveClient {
        endpoint: String,
        api_key: String,
        model: String,
        cost_nano_per_call: u64,
        agent: ureq::Agent,
    }

    impl LiveClient {
        pub fn from_env(cost_per_call: f64) -> Result<Self, VqaError> {
            let var = |k: &str| {
                std::env::var(k).map_err(|_| VqaError::ClientFailure(format!("environment variable {k} is not set")))
            };
            Ok(Self {
                endpoint: var(ENV_ENDPOINT)?,
                api_key: var(ENV_API_KEY)?,
                model: var(ENV_MODEL)?,
                cost_nano_per_call: cost_to_nano(cost_per_call),
                agent: ureq::Agent::new_with_defaults(),
            })
        }
    }

    impl VqaClient for LiveClient {
        fn ask(&self, request: &VqaRequest<'_>) -> Result<VqaResponse, VqaError> {
            let fail = |e: &dyn std::fmt::Display| VqaError::ClientFailure(e.to_string());
            let path = request
                .image_path
                .as_ref()
                .ok_or_else(|| VqaError::ClientFailure("live client needs an image path".into()))?;
            let bytes = std::fs::read(path).map_err(|e| fail(&e))?;
            let data_url = format!(
                "data:image/png;base64,{}",
                base64::engine::general_purpose::STANDARD.encode(bytes)
            );
            let body = serde_json::json!({
                "model": self.model,
                "messages": [{
                    "role": "user",
                    "content": [
                        {"type": "text", "text": request.prompt},
                        {"type": "image_url", "image_url": {"url": data_url}}
                    ]
                }]
            });
            let start = Instant::now();
            let mut response = self
                .agent
                .post(&self.endpoint)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(&body)
                .map_err(|e| fail(&e))?;
            let value: serde_json::Value = response.body_mut().read_json().map_err(|e| fail(&e))?;
            let latency_ms = start.elapsed().as_millis() as u64;
            let raw_text = value["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| VqaError::ClientFailure("response has no message content".into()))?
                .to_string();
            Ok(VqaResponse {
                raw_text,
                latency_ms,
                cost_nano: self.cost_nano_per_call,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Annotation, BoundingBox, Category, Example, Split};

    fn dataset(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| Example {
                image_ref: format!("img{i}.png"),
                annotation: Annotation {
                    gripper_box: BoundingBox::new(0., 0., 10., 10.).unwrap(),
                    label: GraspLabel::NoObject,
                    category: Category::NoObject,
                    object_id: None,
                },
                batch_id: 0,
                example_index_in_batch: i as u32,
            })
            .collect();
        Dataset::new(Split::RealEval, 640, 480, examples).unwrap()
    }

    fn line(id: usize, text: &str, latency: u64) -> RecordingLine {
        RecordingLine {
            example_id: format!("img{id}.png"),
            raw_text: text.into(),
            latency_ms: latency,
            cost: 0.001,
            currency: None,
        }
    }

    #[test]
    fn parsing() {
        assert_eq!(
            parse_answer("Yes, there is an object in the gripper.").unwrap(),
            GraspLabel::Object
        );
        assert_eq!(parse_answer("NO").unwrap(), GraspLabel::NoObject);
        assert_eq!(parse_answer("no.").unwrap(), GraspLabel::NoObject);
        assert!(parse_answer("The gripper appears occupied.").is_err());
        assert!(parse_answer("Nothing is held").is_err());
        assert_eq!(parse_answer("Nothing there, so no").unwrap(), GraspLabel::NoObject);
        assert_eq!(parse_answer("yes/no: yes").unwrap(), GraspLabel::Object);
    }

    #[test]
    fn prompt_is_fixed() {
        let cfg = VqaConfig::default();
        let p = build_prompt(&cfg).unwrap();
        assert_eq!(p, build_prompt(&cfg).unwrap());
        assert!(p.text.contains("YES") && p.text.contains("NO"));
        let hints = VqaConfig {
            include_object_hints: true,
            ..cfg.clone()
        };
        assert!(matches!(build_prompt(&hints), Err(VqaError::UnsupportedOption(_))));
        let unknown = VqaConfig {
            prompt_version: "v9".into(),
            ..cfg
        };
        assert!(build_prompt(&unknown).is_err());
    }

    #[test]
    fn costs_are_exact() {
        assert_eq!(cost_to_nano(0.001), 1_000_000);
        assert_eq!(format_cost(518 * 1_000_000), "0.518");
        assert_eq!(format_cost(0), "0");
        assert_eq!(format_cost(2 * NANO_PER_UNIT), "2");
    }

    #[test]
    fn replay_run_counts_unparseable() {
        let ds = dataset(3);
        let client = ReplayClient::new(vec![line(0, "No.", 100), line(1, "maybe", 300), line(2, "Yes", 200)]).unwrap();
        let cfg = VqaConfig::default();
        let prompt = build_prompt(&cfg).unwrap();
        let run = run_vqa_eval(&ds, None, &PromptGuard::new(client), &prompt, &cfg).unwrap();
        assert_eq!(run.records.len(), 3);
        assert_eq!(run.unparseable, vec!["img1.png".to_string()]);
        assert_eq!(run.records[2].predicted_label, Some(GraspLabel::Object));
        assert_eq!(run.latency.unwrap().mean_ms, 200.0);
        assert_eq!(run.total_cost(), "0.003");
        assert!(run.aborted.is_none());
    }

    #[test]
    fn parallel_run_matches_sequential() {
        let ds = dataset(40);
        let lines: Vec<_> = (0..40)
            .map(|i| line(i, if i % 3 == 0 { "yes" } else { "no" }, i as u64))
            .collect();
        let client = ReplayClient::new(lines).unwrap();
        let prompt = build_prompt(&VqaConfig::default()).unwrap();
        let seq = run_vqa_eval(&ds, None, &client, &prompt, &VqaConfig::default()).unwrap();
        let par_cfg = VqaConfig {
            parallelism: 4,
            ..Default::default()
        };
        let par = run_vqa_eval(&ds, None, &client, &prompt, &par_cfg).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn missing_answer_aborts_with_partial_results() {
        let ds = dataset(3);
        let client = ReplayClient::new(vec![line(0, "no", 1)]).unwrap();
        let prompt = build_prompt(&VqaConfig::default()).unwrap();
        let run = run_vqa_eval(&ds, None, &client, &prompt, &VqaConfig::default()).unwrap();
        assert_eq!(run.records.len(), 1);
        assert!(run.aborted.unwrap().contains("img1.png"));
    }

    #[test]
    fn empty_dataset() {
        let prompt = build_prompt(&VqaConfig::default()).unwrap();
        let run = run_vqa_eval(
            &dataset(0),
            None,
            &ReplayClient::default(),
            &prompt,
            &VqaConfig::default(),
        )
        .unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.total_cost_nano, 0);
        assert!(run.latency.is_none());
    }

    #[test]
    fn guard_rejects_changed_prompt() {
        let client = PromptGuard::new(ReplayClient::new(vec![line(0, "no", 1)]).unwrap());
        let req = |p| VqaRequest {
            example_id: "img0.png",
            image_path: None,
            prompt: p,
        };
        assert!(client.ask(&req("a")).is_ok());
        assert!(client.ask(&req("a")).is_ok());
        assert!(matches!(client.ask(&req("b")), Err(VqaError::PromptMismatch)));
    }
}
