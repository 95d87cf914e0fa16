use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graspcheck_core::dataset::{parse_manifest, save_dataset};
use graspcheck_core::detect::Detection;
use graspcheck_core::pipeline::{read_verdicts, VerdictStatus};
use graspcheck_core::vqa::{read_recording, write_recording};
use graspcheck_core::{Dataset, GraspLabel, Split};
use tempfile::TempDir;

const SUBCOMMANDS: [&str; 6] = ["generate", "infer", "evaluate", "vqa", "fixtures", "config"];
const ENV_VARS: [&str; 3] = [
    "GRASPCHECK_VQA_API_KEY",
    "GRASPCHECK_VQA_ENDPOINT",
    "GRASPCHECK_VQA_MODEL",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graspcheck"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[track_caller]
fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    stdout(&o)
}

fn with_fixtures() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(run(dir.path(), &["fixtures", "-o", "fx"]));
    dir
}

fn infer_fixture(dir: &Path, detector: &str, out: &str) -> Output {
    run(
        dir,
        &[
            "infer",
            "-d",
            "fx",
            "--detector",
            detector,
            "--classifier",
            "fx/graspchecknet_classifier.json",
            "-o",
            out,
        ],
    )
}

fn collect_keys(v: &serde_json::Value, keys: &mut BTreeSet<String>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, child) in m {
                keys.insert(k.clone());
                collect_keys(child, keys);
            }
        }
        serde_json::Value::Array(items) => items.iter().for_each(|i| collect_keys(i, keys)),
        _ => {}
    }
}

#[test]
fn every_help_page_documents_every_config_key() {
    let dir = TempDir::new().unwrap();
    let config: serde_json::Value = serde_json::from_str(&ok(run(dir.path(), &["config", "--json"]))).unwrap();
    let mut keys = BTreeSet::new();
    collect_keys(&config, &mut keys);
    assert!(keys.len() > 50, "{keys:?}");
    for sub in SUBCOMMANDS {
        let help = ok(run(dir.path(), &[sub, "--help"]));
        for k in &keys {
            assert!(
                help.contains(k.as_str()),
                "`{sub} --help` does not mention config key {k}"
            );
        }
        for var in ENV_VARS {
            assert!(help.contains(var), "`{sub} --help` does not mention {var}");
        }
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["bogus"])), 1);
    assert_eq!(code(&run(dir.path(), &["generate"])), 1);
    fs::write(
        dir.path().join("graspcheck.yaml"),
        "decide:\n  threshold_no_objct: 0.2\n",
    )
    .unwrap();
    let o = run(dir.path(), &["config"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));
    fs::write(
        dir.path().join("graspcheck.yaml"),
        "decide:\n  threshold_no_object: 1.5\n",
    )
    .unwrap();
    assert_eq!(code(&run(dir.path(), &["config"])), 1);
    fs::write(
        dir.path().join("graspcheck.yaml"),
        "training_plan:\n  stages:\n  - {trainable_scope: HEAD_ONLY, dropout: [0.3, 0.6], learning_rate: 0.001, epochs: 1}\n",
    )
    .unwrap();
    let o = run(dir.path(), &["config"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dropout increases"), "{}", stderr(&o));
    fs::write(
        dir.path().join("graspcheck.yaml"),
        "vqa:\n  include_object_hints: true\n",
    )
    .unwrap();
    assert_eq!(code(&run(dir.path(), &["config"])), 1);
}

#[test]
fn json_config_is_accepted_and_flags_override_it() {
    let dir = with_fixtures();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"decide": {"threshold_no_object": 0.99}, "gen": {"batch_size": 3}}"#,
    )
    .unwrap();
    let text = ok(run(dir.path(), &["--config", "run.json", "config"]));
    assert!(
        text.contains("threshold_no_object: 0.99") && text.contains("batch_size: 3"),
        "{text}"
    );

    let base = [
        "--config",
        "run.json",
        "infer",
        "-d",
        "fx",
        "--detector",
        "fx/graspchecknet_detector.json",
    ];
    let classifier = ["--classifier", "fx/graspchecknet_classifier.json"];
    let high = ok(run(dir.path(), &[&base[..], &classifier, &["-o", "a.jsonl"]].concat()));
    assert!(high.contains("NO_OBJECT 0,"), "{high}");
    let flag = ok(run(
        dir.path(),
        &[&base[..], &classifier, &["-o", "b.jsonl", "--threshold", "0.15"]].concat(),
    ));
    assert!(flag.contains("NO_OBJECT 174,"), "{flag}");

    let generated = ok(run(
        dir.path(),
        &[
            "--config",
            "run.json",
            "generate",
            "-o",
            "g",
            "-n",
            "2",
            "--batch-size",
            "4",
        ],
    ));
    assert!(generated.contains("wrote 8 examples"), "{generated}");
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
    }
    out
}

#[test]
fn generate_is_deterministic_and_summarizes() {
    let dir = TempDir::new().unwrap();
    let text = ok(run(dir.path(), &["generate", "-o", "a", "-n", "5", "--seed", "11"]));
    assert!(text.contains("wrote 50 examples (5 batches x 10)"), "{text}");
    ok(run(
        dir.path(),
        &["generate", "-o", "b", "-n", "5", "--seed", "11", "--jobs", "1"],
    ));
    let a = tree(&dir.path().join("a"));
    assert_eq!(a.len(), 51);
    assert_eq!(a, tree(&dir.path().join("b")));
    ok(run(dir.path(), &["generate", "-o", "c", "-n", "5", "--seed", "12"]));
    assert_ne!(a, tree(&dir.path().join("c")));

    let manifest = fs::read_to_string(dir.path().join("a/manifest.jsonl")).unwrap();
    let ds = parse_manifest(&manifest).unwrap();
    assert_eq!((ds.len(), ds.split), (50, Split::Train));
}

#[test]
fn generate_zero_batches_writes_an_empty_manifest() {
    let dir = TempDir::new().unwrap();
    ok(run(dir.path(), &["generate", "-o", "empty", "-n", "0"]));
    let ds = parse_manifest(&fs::read_to_string(dir.path().join("empty/manifest.jsonl")).unwrap()).unwrap();
    assert!(ds.is_empty());
}

#[test]
fn generate_refuses_a_non_empty_directory() {
    let dir = TempDir::new().unwrap();
    fs::create_dir(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/keep.txt"), "x").unwrap();
    assert_eq!(code(&run(dir.path(), &["generate", "-o", "out", "-n", "1"])), 1);
    assert_eq!(fs::read_to_string(dir.path().join("out/keep.txt")).unwrap(), "x");
}

#[test]
fn generate_failure_removes_partial_output() {
    let dir = TempDir::new().unwrap();
    // Fifteen distractors cannot fit on a 20 cm floor.
    fs::write(
        dir.path().join("graspcheck.yaml"),
        "gen:\n  distractors:\n    count: [15, 15]\n    max_attempts: 50\n  room:\n    min: [-0.1, -0.1, 0.0]\n    max: [0.1, 0.1, 2.5]\n",
    )
    .unwrap();
    let o = run(dir.path(), &["generate", "-o", "out", "-n", "3"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let left: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(left, vec![std::ffi::OsString::from("graspcheck.yaml")]);
}

#[test]
fn infer_writes_one_verdict_per_example() {
    let dir = with_fixtures();
    let text = ok(infer_fixture(dir.path(), "fx/graspchecknet_detector.json", "v.jsonl"));
    assert!(text.contains("wrote 518 verdicts"), "{text}");
    let lines = read_verdicts(
        fs::File::open(dir.path().join("v.jsonl"))
            .map(std::io::BufReader::new)
            .unwrap(),
    )
    .unwrap();
    assert_eq!(lines.len(), 518);
}

#[test]
fn undetectable_images_become_gripper_not_found_lines() {
    let dir = with_fixtures();
    let path = dir.path().join("fx/graspchecknet_detector.json");
    let mut map: BTreeMap<String, Vec<Detection>> = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let dropped = ["real_0000.png", "real_0007.png", "real_0100.png"];
    for id in dropped {
        map.get_mut(id).unwrap().iter_mut().for_each(|d| d.confidence = 0.005);
    }
    fs::write(dir.path().join("weak.json"), serde_json::to_string(&map).unwrap()).unwrap();
    let text = ok(infer_fixture(dir.path(), "weak.json", "v.jsonl"));
    assert!(text.contains("gripper_not_found 3"), "{text}");
    let lines = read_verdicts(std::io::BufReader::new(
        fs::File::open(dir.path().join("v.jsonl")).unwrap(),
    ))
    .unwrap();
    let flagged: Vec<_> = lines
        .iter()
        .filter(|l| l.status == VerdictStatus::GripperNotFound)
        .map(|l| l.image_id.as_str())
        .collect();
    assert_eq!(flagged, dropped);
}

#[test]
fn infer_on_an_empty_dataset_writes_an_empty_file() {
    let dir = with_fixtures();
    save_dataset(&Dataset::empty(Split::RealEval), dir.path().join("none")).unwrap();
    let o = run(
        dir.path(),
        &[
            "infer",
            "-d",
            "none",
            "--detector",
            "fx/graspchecknet_detector.json",
            "--classifier",
            "fx/graspchecknet_classifier.json",
            "-o",
            "v.jsonl",
        ],
    );
    ok(o);
    assert_eq!(fs::read_to_string(dir.path().join("v.jsonl")).unwrap(), "");
}

#[test]
fn infer_with_an_unloadable_backend_exits_2() {
    let dir = with_fixtures();
    fs::write(dir.path().join("broken.json"), "{not json").unwrap();
    assert_eq!(code(&infer_fixture(dir.path(), "broken.json", "v.jsonl")), 2);
    assert_eq!(code(&infer_fixture(dir.path(), "missing.json", "v.jsonl")), 2);
}

#[test]
fn evaluate_reproduces_the_fixture_tables() {
    let dir = with_fixtures();
    ok(infer_fixture(dir.path(), "fx/graspchecknet_detector.json", "v.jsonl"));
    ok(run(
        dir.path(),
        &[
            "vqa",
            "-d",
            "fx",
            "--replay",
            "fx/gpt4o_vqa_recording.jsonl",
            "-o",
            "gpt",
        ],
    ));
    let text = ok(run(
        dir.path(),
        &[
            "evaluate",
            "-d",
            "fx",
            "--verdicts",
            "GraspCheckNet=v.jsonl",
            "--records",
            "GPT-4o=gpt/vqa_records.jsonl",
            "--records",
            "Llama=fx/llama_accuracy_records.jsonl",
            "--pr-records",
            "Llama=fx/llama_pr_records.jsonl",
            "-o",
            "summary.json",
        ],
    ));
    for needle in [
        "98.10",
        "94.67",
        "96.67",
        "62.50",
        "82.61",
        "74.7",
        "86.7",
        "82.9",
        "95.0",
        "95.3",
        "78.1",
        "48.7",
        "68.7",
        "60.0",
        "0.678",
        "0.739",
        "0.950",
        "0.357",
        "0.513",
        "GraspCheckNet: consistent",
        "GPT-4o: consistent",
        "Llama: DISCREPANCY",
    ] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    assert_eq!(text.matches("Detection: ").count(), 1, "{text}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let models = summary["models"].as_array().unwrap();
    assert_eq!(models.len(), 3);
    assert_eq!(models[0]["precision_recall"]["tp"], 116);
    assert_eq!(models[2]["consistency"]["consistent"], false);
}

#[test]
fn evaluate_join_failure_exits_2() {
    let dir = with_fixtures();
    ok(infer_fixture(dir.path(), "fx/graspchecknet_detector.json", "v.jsonl"));
    let text = fs::read_to_string(dir.path().join("v.jsonl")).unwrap();
    let truncated: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("short.jsonl"), truncated).unwrap();
    let o = run(dir.path(), &["evaluate", "-d", "fx", "--verdicts", "short.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("no verdict for example real_0000.png"),
        "{}",
        stderr(&o)
    );
    assert_eq!(code(&run(dir.path(), &["evaluate", "--verdicts", "v.jsonl"])), 1);
}

#[test]
fn synthetic_run_with_an_exact_backend_is_consistent() {
    let dir = TempDir::new().unwrap();
    ok(run(dir.path(), &["generate", "-o", "syn", "-n", "6", "--seed", "5"]));
    let ds = parse_manifest(&fs::read_to_string(dir.path().join("syn/manifest.jsonl")).unwrap()).unwrap();
    let mut detections = BTreeMap::new();
    let mut probabilities = BTreeMap::new();
    for ex in &ds.examples {
        detections.insert(
            ex.id().to_string(),
            vec![Detection::new(ex.annotation.gripper_box, 0.9).unwrap()],
        );
        let p = if ex.annotation.label == GraspLabel::NoObject {
            0.9
        } else {
            0.05
        };
        probabilities.insert(ex.id().to_string(), p);
    }
    fs::write(dir.path().join("det.json"), serde_json::to_string(&detections).unwrap()).unwrap();
    fs::write(
        dir.path().join("cls.json"),
        serde_json::to_string(&probabilities).unwrap(),
    )
    .unwrap();
    ok(run(
        dir.path(),
        &[
            "infer",
            "-d",
            "syn",
            "--detector",
            "det.json",
            "--classifier",
            "cls.json",
            "-o",
            "v.jsonl",
        ],
    ));
    let text = ok(run(
        dir.path(),
        &["evaluate", "-d", "syn", "--verdicts", "exact=v.jsonl"],
    ));
    assert!(text.contains("exact: consistent"), "{text}");
    assert!(text.contains("1.000     1.000"), "{text}");
}

#[test]
fn vqa_replay_reports_latency_and_cost() {
    let dir = with_fixtures();
    let text = ok(run(
        dir.path(),
        &[
            "vqa",
            "-d",
            "fx",
            "--replay",
            "fx/gpt4o_vqa_recording.jsonl",
            "-o",
            "out",
            "--jobs",
            "4",
        ],
    ));
    assert!(text.contains("latency mean 2270 ms, std 1530 ms"), "{text}");
    assert!(text.contains("total cost 0.518 EUR"), "{text}");
    assert!(text.contains("unparseable 45"), "{text}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/vqa_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["latency_mean_ms"], 2270.0);
    assert_eq!(summary["total_cost"], "0.518");
    assert_eq!(summary["unparseable"].as_array().unwrap().len(), 45);
    let records = fs::read_to_string(dir.path().join("out/vqa_records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 518);
}

#[test]
fn vqa_replay_with_one_unparseable_answer() {
    let dir = with_fixtures();
    let path = dir.path().join("fx/gpt4o_vqa_recording.jsonl");
    let mut lines = read_recording(std::io::BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    for (i, l) in lines.iter_mut().enumerate() {
        l.raw_text = if i == 17 { "I cannot tell.".into() } else { "No.".into() };
    }
    let mut buf = Vec::new();
    write_recording(&lines, &mut buf).unwrap();
    fs::write(dir.path().join("one.jsonl"), buf).unwrap();
    let text = ok(run(
        dir.path(),
        &["vqa", "-d", "fx", "--replay", "one.jsonl", "-o", "out"],
    ));
    assert!(text.contains("unparseable 1\n  real_0017.png"), "{text}");
}

#[test]
fn vqa_without_a_usable_client_fails_cleanly() {
    let dir = with_fixtures();
    let o = run(
        dir.path(),
        &["vqa", "-d", "fx", "--replay", "missing.jsonl", "-o", "out"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.jsonl"), "{}", stderr(&o));
    assert_eq!(code(&run(dir.path(), &["vqa", "-d", "fx", "-o", "out"])), 1);
}

#[test]
fn vqa_client_failure_exits_2_with_partial_records() {
    let dir = with_fixtures();
    let path = dir.path().join("fx/gpt4o_vqa_recording.jsonl");
    let mut lines = read_recording(std::io::BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    lines.truncate(100);
    let mut buf = Vec::new();
    write_recording(&lines, &mut buf).unwrap();
    fs::write(dir.path().join("short.jsonl"), buf).unwrap();
    let o = run(dir.path(), &["vqa", "-d", "fx", "--replay", "short.jsonl", "-o", "out"]);
    assert_eq!(code(&o), 2);
    let records = fs::read_to_string(dir.path().join("out/vqa_records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 100);
}
