use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pcl_core::experiment::{run_experiment, ExperimentConfig};
use pcl_core::rng::derive_seed;
use pcl_core::train::LinearHead;
use serde_json::Value;
use tempfile::TempDir;

const SMALL: [&str; 8] = [
    "--set",
    "experiment.train_scenes=40",
    "--set",
    "experiment.test_scenes=20",
    "--set",
    "experiment.train.steps=60",
    "--set",
    "experiment.train.batch_size=16",
];

fn pcl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcl"))
        .args(SMALL)
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PCL_CAPTIONER_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = pcl(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn counter(stdout: &str, name: &str) -> usize {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name}: ")))
        .unwrap_or_else(|| panic!("no {name} in {stdout}"))
        .parse()
        .unwrap()
}

#[test]
fn gen_world_is_byte_identical_per_seed() {
    let (a, b, c) = (TempDir::new().unwrap(), TempDir::new().unwrap(), TempDir::new().unwrap());
    ok(a.path(), &["gen-world", "--seed", "3"]);
    ok(b.path(), &["gen-world", "--seed", "3"]);
    ok(c.path(), &["gen-world", "--seed", "4"]);
    let (fa, fb, fc) = (read_dir_sorted(a.path()), read_dir_sorted(b.path()), read_dir_sorted(c.path()));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
    let scenes = |f: &[(String, Vec<u8>)]| -> Vec<Vec<u8>> {
        f.iter().filter(|(n, _)| n.starts_with("train")).map(|(_, b)| b.clone()).collect()
    };
    assert_ne!(scenes(&fa), scenes(&fc));
}

#[test]
fn invalid_configuration_exits_one_without_output() {
    let tmp = TempDir::new().unwrap();
    let cases: [&[&str]; 4] = [
        &["gen-world", "--set", "experiment.train_scenes=0"],
        &["gen-world", "--set", "experiment.no_such_key=1"],
        &["gen-world", "--set", "experiment.train.learning_rate=-1"],
        &["gen-world", "--set", "not-an-assignment"],
    ];
    for (k, args) in cases.iter().enumerate() {
        let out = tmp.path().join(format!("case{k}"));
        let o = pcl(&out, args);
        assert_eq!(code(&o), 1, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{args:?} created output");
    }
}

#[test]
fn missing_config_file_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let o = pcl(tmp.path(), &["gen-world", "--config", "/nonexistent/pcl.toml"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_file_and_overrides_combine() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("pcl.toml");
    fs::write(&cfg, "seed = 9\n[experiment]\ntrain_scenes = 12\n").unwrap();
    let out = tmp.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_pcl"))
        .args(["gen-world", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--set", "experiment.test_scenes=7"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(counter(&stdout, "train scenes"), 12);
    assert_eq!(counter(&stdout, "test scenes"), 7);
}

#[test]
fn stages_report_missing_inputs() {
    let tmp = TempDir::new().unwrap();
    for stage in ["gen-labels", "train", "eval"] {
        assert_eq!(code(&pcl(tmp.path(), &[stage])), 2, "{stage}");
    }
    assert_eq!(code(&pcl(tmp.path(), &["query", "cat"])), 2);
}

#[test]
fn labels_have_full_size_and_count_prefix_violations() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-world"]);
    let stdout = ok(tmp.path(), &["gen-labels"]);
    let sets = fs::read_to_string(tmp.path().join("labels.jsonl")).unwrap();
    let sets: Vec<Value> = sets.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(sets.len(), counter(&stdout, "label sets"));
    assert_eq!(sets.len(), counter(&stdout, "objects processed"));
    for s in &sets {
        let size = s["pseudo"].as_array().unwrap().len() + s["manual"].as_array().unwrap().len();
        assert_eq!(size, 20);
    }
    assert_eq!(counter(&stdout, "prefix violations"), 0);

    let stdout = ok(tmp.path(), &["gen-labels", "--set", "experiment.caption.use_prefix=false"]);
    assert!(counter(&stdout, "prefix violations") > 0);
    assert_eq!(counter(&stdout, "prefix violations dropped"), 0);
}

#[test]
fn unreachable_captioner_exits_three() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-world"]);
    let o = Command::new(env!("CARGO_BIN_EXE_pcl"))
        .arg("gen-labels")
        .arg("--out")
        .arg(tmp.path())
        .args(SMALL)
        .args(["--set", "captioner.timeout_secs=0.5", "--set", "captioner.retries=0"])
        .env("PCL_CAPTIONER_ENDPOINT", "http://127.0.0.1:9/caption")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!tmp.path().join("labels.jsonl").exists());
}

#[test]
fn zero_learning_rate_keeps_initial_head() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-world"]);
    ok(tmp.path(), &["gen-labels"]);
    let out = ok(tmp.path(), &["train", "--set", "experiment.train.learning_rate=0"]);
    assert!(out.contains("steps: 60"), "{out}");
    let trained = LinearHead::load(&tmp.path().join("model.json")).unwrap();
    let cfg = ExperimentConfig::default();
    let initial = LinearHead::new(cfg.embed_dim, cfg.features.dim, cfg.train.init_scale, derive_seed(0, "head"));
    assert_eq!(trained, initial);
    let trace: Value = serde_json::from_slice(&fs::read(tmp.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["loss"].as_array().unwrap().len(), 60);
}

#[test]
fn diverging_training_exits_four() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-world"]);
    ok(tmp.path(), &["gen-labels"]);
    let o = pcl(tmp.path(), &["train", "--set", "experiment.train.learning_rate=1e300"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn query_on_unknown_scene_exits_five() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-world"]);
    ok(tmp.path(), &["train", "--set", "experiment.train.mode=\"baseline\""]);
    let hit: Value = serde_json::from_str(&ok(tmp.path(), &["query", "a dog"])).unwrap();
    assert!(hit["score"].as_f64().unwrap() > 0.0);
    assert_eq!(hit["box"].as_array().unwrap().len(), 4);
    let scene = hit["scene_id"].as_str().unwrap().to_string();
    let scoped: Value = serde_json::from_str(&ok(tmp.path(), &["query", "a dog", "--scene", &scene])).unwrap();
    assert_eq!(scoped["scene_id"], scene.as_str());
    assert_eq!(code(&pcl(tmp.path(), &["query", "a dog", "--scene", "missing"])), 5);
}

#[test]
fn pipeline_matches_library_run_and_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [a.path(), b.path()] {
        for stage in ["gen-world", "gen-labels", "train", "eval"] {
            ok(dir, &[stage, "--seed", "2"]);
        }
    }
    let ra = fs::read(a.path().join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.path().join("report.json")).unwrap());
    assert_eq!(
        fs::read(a.path().join("detections.jsonl")).unwrap(),
        fs::read(b.path().join("detections.jsonl")).unwrap()
    );
    let report: Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["seed"], 2);
    assert_eq!(report["config_fingerprint"].as_str().unwrap().len(), 64);
    assert_eq!(report["thresholds"].as_array().unwrap().len(), 10);

    let mut cfg = ExperimentConfig::default();
    cfg.train_scenes = 40;
    cfg.test_scenes = 20;
    cfg.train.steps = 60;
    cfg.train.batch_size = 16;
    let lib = run_experiment(&cfg, 2).unwrap().report;
    assert_eq!(report["ap"].as_f64().unwrap(), lib.ap);
    assert_eq!(report["ap_rare"].as_f64().unwrap(), lib.ap_rare);
}

#[test]
fn fingerprint_tracks_configuration() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gen-world"]);
    ok(tmp.path(), &["train", "--set", "experiment.train.mode=\"baseline\""]);
    let fp = |extra: &[&str]| {
        let mut args = vec!["eval", "--set", "experiment.train.mode=\"baseline\""];
        args.extend_from_slice(extra);
        ok(tmp.path(), &args);
        let r: Value = serde_json::from_slice(&fs::read(tmp.path().join("report.json")).unwrap()).unwrap();
        r["config_fingerprint"].as_str().unwrap().to_string()
    };
    let base = fp(&[]);
    assert_eq!(base, fp(&[]));
    assert_ne!(base, fp(&["--set", "experiment.predict.score_threshold=0.2"]));
}

#[test]
fn ablate_writes_table() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(
        tmp.path(),
        &["ablate", "--set", "ablate.seeds=[0]", "--set", "ablate.variants=[\"full\", \"baseline\"]"],
    );
    assert!(stdout.contains("baseline"));
    let table: Value = serde_json::from_slice(&fs::read(tmp.path().join("ablation.json")).unwrap()).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn overrides_before_and_after_subcommand_accumulate() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pcl"))
        .args(["--set", "experiment.train_scenes=11", "--seed", "1", "gen-world"])
        .args(["--set", "experiment.test_scenes=6", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(counter(&stdout, "train scenes"), 11);
    assert_eq!(counter(&stdout, "test scenes"), 6);
}
