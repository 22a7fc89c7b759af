use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use labelfix::io;
use labelfix::pipeline::{self, EvalReport, PipelineConfig, SynthJob};
use labelfix::vectorize::VectorizeOptions;
use labelfix::BinaryMask;
use tempfile::TempDir;

fn labelfix(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelfix"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

const JOB: &str = r#"{
  "scene": { "canvas": [160, 160], "n_lines": 2 },
  "corruption": { "translate_max": 6.0, "rotate_max": 0.03 }
}"#;

/// Scene written by the CLI into `dir/scene`.
fn scene(dir: &Path, job: &str, seed: &str) -> PathBuf {
    let spec = dir.join("job.json");
    fs::write(&spec, job).unwrap();
    let out = dir.join("scene");
    ok(&labelfix(&[&"synth", &"--spec", &spec, &"--seed", &seed, &"--out", &out]));
    out
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn synth_writes_the_bundle_deterministically() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let sa = scene(a.path(), JOB, "7");
    let sb = scene(b.path(), JOB, "7");
    for f in pipeline::SCENE_FILES {
        assert_eq!(read(sa.join(f)), read(sb.join(f)), "{f}");
    }
    let c = TempDir::new().unwrap();
    let sc = scene(c.path(), JOB, "8");
    assert_ne!(read(sa.join("image.png")), read(sc.join("image.png")));
}

#[test]
fn synth_matches_the_library() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "3");
    let job: SynthJob = serde_json::from_str(JOB).unwrap();
    let b = pipeline::synthesize(&job, 3).unwrap();
    assert_eq!(read(s.join("image.png")), io::encode_png(&b.scene.image).unwrap());
    assert_eq!(read(s.join("gt_mask.png")), io::encode_mask(&b.scene.gt_mask).unwrap());
}

#[test]
fn malformed_spec_is_a_usage_error_with_a_line_number() {
    let d = TempDir::new().unwrap();
    let spec = d.path().join("bad.json");
    fs::write(&spec, "{\n  \"scene\": {\n    \"n_lines\": 2,\n  }\n}\n").unwrap();
    let out = labelfix(&[&"synth", &"--spec", &spec, &"--out", &d.path().join("s")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn unknown_spec_field_is_rejected() {
    let d = TempDir::new().unwrap();
    let spec = d.path().join("bad.json");
    fs::write(&spec, r#"{"scene": {"n_line": 2}}"#).unwrap();
    let out = labelfix(&[&"synth", &"--spec", &spec, &"--out", &d.path().join("s")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_usage_error() {
    let d = TempDir::new().unwrap();
    let blocker = d.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = labelfix(&[&"synth", &"--out", &blocker.join("sub")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(labelfix(&[&"frobnicate"]).status.code(), Some(2));
    assert_eq!(labelfix(&[&"correct", &"--lambda", &"lots"]).status.code(), Some(2));
}

#[test]
fn annotate_is_the_library_call() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "1");
    let out = d.path().join("ann.png");
    let vector = s.join("annotations.geojson");
    ok(&labelfix(&[&"annotate", &"--map", &s.join("image.png"), &"--vector", &vector, &"--radius", &"5", &"--out", &out]));
    let lines = io::read_polylines(&vector, None).unwrap();
    let lib = pipeline::annotate(&lines, 5.0, (160, 160)).unwrap();
    assert_eq!(read(&out), io::encode_mask(&lib).unwrap());
}

#[test]
fn annotate_radius_zero_is_a_thin_raster() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "1");
    let out = d.path().join("ann.png");
    ok(&labelfix(&[
        &"annotate", &"--map", &s.join("image.png"), &"--vector", &s.join("gt.geojson"), &"--radius", &"0", &"--out", &out,
    ]));
    let m = io::load_mask(&out).unwrap();
    let lines = io::read_polylines(&s.join("gt.geojson"), None).unwrap();
    let len: f64 = lines.iter().map(|l| l.length()).sum();
    assert!(m.count() as f64 >= len / 2f64.sqrt() && (m.count() as f64) <= len + 4.0, "{} px for length {len}", m.count());
}

#[test]
fn annotate_missing_vector_exits_2() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "1");
    let out = labelfix(&[
        &"annotate", &"--map", &s.join("image.png"), &"--vector", &d.path().join("nope.geojson"), &"--out", &d.path().join("a.png"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_values_apply_and_flags_override_them() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "2");
    let cfg = d.path().join("cfg.json");
    let body = serde_json::json!({
        "map": s.join("image.png"),
        "vector": s.join("gt.geojson"),
        "out_dir": d.path(),
        "annotation_radius": 2.0,
    });
    fs::write(&cfg, body.to_string()).unwrap();
    ok(&labelfix(&[&"annotate", &"--config", &cfg]));
    let from_file = io::load_mask(&d.path().join("annotation.png")).unwrap();
    let out = d.path().join("wide.png");
    ok(&labelfix(&[&"annotate", &"--config", &cfg, &"--radius", &"4", &"--out", &out]));
    let from_flag = io::load_mask(&out).unwrap();
    let lines = io::read_polylines(&s.join("gt.geojson"), None).unwrap();
    assert_eq!(from_file, pipeline::annotate(&lines, 2.0, (160, 160)).unwrap());
    assert_eq!(from_flag, pipeline::annotate(&lines, 4.0, (160, 160)).unwrap());
}

#[test]
fn correct_is_independent_of_worker_count() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "4");
    let run = |workers: &str| {
        let out = d.path().join(format!("c{workers}.png"));
        ok(&labelfix(&[
            &"correct", &"--map", &s.join("image.png"), &"--vector", &s.join("annotations.geojson"), &"--workers", &workers, &"--out", &out,
        ]));
        (read(&out), read(out.with_extension("json")))
    };
    let one = run("1");
    assert_eq!(one, run("8"));
    let report: serde_json::Value = serde_json::from_slice(&one.1).unwrap();
    let tiles = report["tiles"].as_array().unwrap();
    assert!(!tiles.is_empty());
    for t in tiles {
        for k in ["verdict", "final_affine", "iterations", "energies"] {
            assert!(t.get(k).is_some(), "{k}");
        }
    }
}

#[test]
fn correct_with_only_false_lines_warns_and_succeeds() {
    let d = TempDir::new().unwrap();
    let job = r#"{"scene": {"canvas": [160, 160], "n_lines": 2}, "corruption": {"false_fraction": 1.0}}"#;
    let s = scene(d.path(), job, "5");
    let out = d.path().join("c.png");
    let res = labelfix(&[
        &"correct", &"--map", &s.join("image.png"), &"--vector", &s.join("annotations.geojson"), &"--out", &out,
    ]);
    ok(&res);
    let report: serde_json::Value = serde_json::from_slice(&read(out.with_extension("json"))).unwrap();
    assert_eq!(report["accepted"], 0, "{report}");
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning"));
    assert!(io::load_mask(&out).unwrap().is_all_false());
}

#[test]
fn vectorize_is_the_library_call() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "6");
    let out = d.path().join("v.geojson");
    ok(&labelfix(&[&"vectorize", &"--mask", &s.join("gt_mask.png"), &"--out", &out]));
    let m = io::load_mask(&s.join("gt_mask.png")).unwrap();
    let g = pipeline::vectorize_mask(&m, &VectorizeOptions::default()).unwrap();
    assert_eq!(read(&out), io::to_json_bytes(&io::graph_to_geojson(&g)));
}

#[test]
fn vectorize_empty_mask_gives_an_empty_collection() {
    let d = TempDir::new().unwrap();
    let mask = d.path().join("m.png");
    io::save_mask(&mask, &BinaryMask::empty(20, 10)).unwrap();
    let out = d.path().join("v.geojson");
    ok(&labelfix(&[&"vectorize", &"--mask", &mask, &"--out", &out]));
    let v: serde_json::Value = serde_json::from_slice(&read(&out)).unwrap();
    assert_eq!(v["type"], "FeatureCollection");
    assert_eq!(v["features"].as_array().unwrap().len(), 0);
}

#[test]
fn vectorize_rejects_non_png() {
    let d = TempDir::new().unwrap();
    let mask = d.path().join("m.png");
    fs::write(&mask, "not an image").unwrap();
    let out = labelfix(&[&"vectorize", &"--mask", &mask, &"--out", &d.path().join("v.geojson")]);
    assert_eq!(out.status.code(), Some(2));
}

fn eval(args: &[&dyn AsRef<std::ffi::OsStr>]) -> EvalReport {
    let mut all: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![&"eval"];
    all.extend_from_slice(args);
    let out = labelfix(&all);
    ok(&out);
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn eval_identical_inputs_score_one() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "9");
    let (gt, m) = (s.join("gt.geojson"), s.join("gt_mask.png"));
    let r = eval(&[&"--pred", &gt, &"--gt", &gt, &"--pred-mask", &m, &"--gt-mask", &m, &"--tol", &"3", &"--spacing", &"20"]);
    let (p, l) = (r.pixel.unwrap(), r.lines.unwrap());
    assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
    assert_eq!((l.matching.correctness, l.matching.completeness, l.apls), (1.0, 1.0, 1.0));
    assert_eq!((r.params.tolerance, r.params.control_spacing), (3.0, 20.0));
}

#[test]
fn eval_empty_prediction_scores_zero() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "9");
    let empty = d.path().join("empty.geojson");
    fs::write(&empty, r#"{"type": "FeatureCollection", "features": []}"#).unwrap();
    let blank = d.path().join("blank.png");
    io::save_mask(&blank, &BinaryMask::empty(160, 160)).unwrap();
    let r = eval(&[
        &"--pred", &empty, &"--gt", &s.join("gt.geojson"), &"--pred-mask", &blank, &"--gt-mask", &s.join("gt_mask.png"),
    ]);
    let (p, l) = (r.pixel.unwrap(), r.lines.unwrap());
    assert_eq!((p.recall, p.f1), (0.0, 0.0));
    assert!(l.matching.pred_empty);
    assert_eq!((l.matching.completeness, l.apls), (0.0, 0.0));
}

#[test]
fn eval_needs_something_to_score() {
    assert_eq!(labelfix(&[&"eval"]).status.code(), Some(2));
}

#[test]
fn render_overlays() {
    let d = TempDir::new().unwrap();
    let s = scene(d.path(), JOB, "10");
    let map = s.join("image.png");
    let plain = d.path().join("plain.png");
    ok(&labelfix(&[&"render", &"--map", &map, &"--out", &plain]));
    assert_eq!(io::load_image(&plain).unwrap(), io::load_image(&map).unwrap());

    let gt = s.join("gt_mask.png");
    let pred = d.path().join("pred.png");
    let mut p = io::load_mask(&gt).unwrap();
    p.set(0, 0, true);
    io::save_mask(&pred, &p).unwrap();
    let out = d.path().join("overlay.png");
    ok(&labelfix(&[&"render", &"--map", &map, &"--pred-mask", &pred, &"--gt-mask", &gt, &"--out", &out]));
    let img = io::load_image(&out).unwrap();
    assert_eq!(img.dims(), (160, 160));
    let px = |x, y| -> Vec<f64> { img.channels().iter().map(|c| c.get(x, y)).collect() };
    let g = io::load_mask(&gt).unwrap();
    let (tx, ty) = (0..160 * 160).map(|i| (i % 160, i / 160)).find(|&(x, y)| g.get(x, y)).unwrap();
    assert!(px(tx, ty)[1] > 0.7 && px(tx, ty)[0] < 0.1, "{:?}", px(tx, ty));
    assert!(px(0, 0)[0] > 0.8 && px(0, 0)[1] < 0.1, "{:?}", px(0, 0));
}

#[test]
fn pipeline_config_file_round_trips() {
    let text = String::from_utf8(io::to_json_bytes(&PipelineConfig::default())).unwrap();
    let back: PipelineConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, PipelineConfig::default());
}
