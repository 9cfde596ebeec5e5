use std::path::Path;
use std::process::{Command, Output};

use rigidkit_cli::pipeline::{self, InputPaths, PipelineConfig};
use rigidkit_core::evalkit::score_segmentation;
use rigidkit_core::io;
use serde_json::Value;

fn rigidkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigidkit")).args(args).output().expect("spawn rigidkit")
}

fn ok(args: &[&str]) -> Output {
    let out = rigidkit(args);
    assert!(out.status.success(), "rigidkit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn simulate(root: &Path, name: &str, scenario: &str, extra: &[&str]) -> std::path::PathBuf {
    let dir = root.join(name);
    let mut args = vec!["simulate", "--scenario", scenario, "-o"];
    let d = s(&dir);
    args.push(&d);
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

#[test]
fn noise_free_simulation_writes_eight_ground_truth_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "collinear", &[]);
    let m = json(&dir.join("manifest.json"));
    let files = m["files"].as_array().unwrap();
    assert_eq!(files.len(), 8);
    for f in files {
        let name = f.as_str().or_else(|| f["path"].as_str()).unwrap().to_string();
        assert!(dir.join(&name).exists(), "{name}");
    }
    assert!(!dir.join("input_flow.flo").exists());
}

#[test]
fn noisy_simulation_adds_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "general", &["--flow-sigma", "0.5", "--prior", "ramp:0.8:1.2"]);
    for f in ["input_flow.flo", "input_expansion.pfm", "input_depth_prior.pfm", "input_confidence.pfm"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn bad_config_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "static", &[]);
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"thresholds": {"t_epi": -1.0}}"#).unwrap();
    let out = rigidkit(&["--config", &s(&cfg), "segment", "--input", &s(&dir), "-o", &s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let out = rigidkit(&["--config", &s(&cfg), "segment", "--input", &s(&dir), "-o", &s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = rigidkit(&["simulate", "--scenario", "nope", "-o", &s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_names_its_role() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "static", &[]);
    std::fs::remove_file(dir.join("expansion.pfm")).unwrap();
    let out = rigidkit(&["segment", "--input", &s(&dir), "-o", &s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expansion"));
}

#[test]
fn zero_translation_falls_back_to_rotation_cost() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "zero_translation", &[]);
    let o = tmp.path().join("cost");
    ok(&["costmaps", "--input", &s(&dir), "-o", &s(&o)]);
    let ego = json(&o.join("ego.json"));
    assert_eq!(ego["degenerate"], Value::Bool(true));
    assert_eq!(ego["cost_maps"], serde_json::json!(["hom"]));
    assert!(o.join("cost_hom.pfm").exists());
    for f in ["cost_epi.pfm", "cost_pp3d.pfm", "cost_depth.pfm"] {
        assert!(!o.join(f).exists(), "{f}");
    }
}

#[test]
fn segment_matches_library_and_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "general", &[]);
    let o = tmp.path().join("seg");
    ok(&["--seed", "5", "segment", "--input", &s(&dir), "-o", &s(&o)]);
    let labels = io::load_pgm16(o.join("labels.pgm")).unwrap();
    let gt = io::load_pgm16(dir.join("labels.pgm")).unwrap();
    assert!(score_segmentation(&labels, &gt).unwrap().bg_iou >= 0.99);

    let obs = InputPaths { dir: Some(dir.clone()), ..Default::default() }.load().unwrap();
    let run = pipeline::run_segment(&obs, &PipelineConfig::default(), 5).unwrap();
    assert_eq!(run.segmentation.labels.data(), labels.data());
    let report = json(&o.join("segmentation.json"));
    assert_eq!(report["instances"].as_array().unwrap().len(), run.segmentation.instances.len());
}

#[test]
fn sceneflow_reports_every_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "general", &[]);
    let o = tmp.path().join("sf");
    ok(&["sceneflow", "--input", &s(&dir), "-o", &s(&o)]);
    let fits = json(&o.join("fits.json"));
    let ids: Vec<u64> = fits["segments"].as_array().unwrap().iter().map(|f| f["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![0, 1, 2]);
    for f in ["z0.pfm", "z1.pfm", "flow.flo", "labels.pgm"] {
        assert!(o.join(f).exists(), "{f}");
    }
}

#[test]
fn evaluating_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "general", &[]);
    let csv = tmp.path().join("s.csv");
    let out = ok(&["evaluate", "--pred", &s(&dir), "--gt", &s(&dir), "-o", &s(&csv)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, std::fs::read_to_string(&csv).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    let get = |k: &str| row[header.iter().position(|h| *h == k).unwrap()].parse::<f64>().unwrap();
    assert_eq!(get("bg_iou"), 1.0);
    assert_eq!(get("obj_fmeasure"), 1.0);
    for k in ["d1_all", "d2_all", "fl_all", "sf_all"] {
        assert_eq!(get(k), 0.0, "{k}");
    }
}

#[test]
fn evaluate_requires_complete_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "sim", "static", &[]);
    let gt = simulate(tmp.path(), "gt", "static", &[]);
    std::fs::remove_file(gt.join("z1.pfm")).unwrap();
    let out = rigidkit(&["evaluate", "--pred", &s(&dir), "--gt", &s(&gt)]);
    assert_eq!(out.status.code(), Some(2));
}
