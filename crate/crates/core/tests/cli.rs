mod common;

use std::path::Path;
use std::process::{Command, Output};

use layout2im::data::read_manifest;
use layout2im::layout::LayoutJson;
use layout2im::metrics::MetricReport;
use layout2im::trainer::{list_checkpoints, read_log, LOG_FILE};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_layout2im"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, common::tiny_config().to_toml_string()).unwrap();
    path
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.push((rel, std::fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn synth_data_is_deterministic_and_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["synth-data", "--out", s(d), "--count", "100", "--seed", "3", "--image-size", "32"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let entries = read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(entries.len(), 100);
    assert_eq!(std::fs::read_dir(a.join("images")).unwrap().count(), 100);
    for e in &entries {
        assert!(!e.objects.is_empty());
        let size = e.image_size.unwrap() as f64;
        for o in &e.objects {
            let [x, y, h, w] = o.bbox;
            assert!(x >= 0.0 && y >= 0.0 && h > 0.0 && w > 0.0 && x + w <= size && y + h <= size);
        }
    }

    let o = run(&["synth-data", "--out", s(&tmp.path().join("c")), "--count", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_resume_doubles_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(run(&["synth-data", "--out", s(&data), "--count", "8", "--image-size", "16"]).status.success());
    let config = write_tiny_config(tmp.path());
    let ckpt = tmp.path().join("ckpt");
    let args = ["train", "--config", s(&config), "--data", s(&data), "--iterations", "10", "--checkpoint-dir", s(&ckpt)];
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_log(&ckpt.join(LOG_FILE)).unwrap().len(), 10);
    assert!(list_checkpoints(&ckpt).unwrap().iter().any(|(i, _)| *i == 10));

    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("resuming"));
    let log = read_log(&ckpt.join(LOG_FILE)).unwrap();
    assert_eq!(log.len(), 20);
    assert_eq!(log.last().unwrap().iteration, 20);
}

#[test]
fn train_reports_missing_data_and_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_tiny_config(tmp.path());
    let o = run(&[
        "train",
        "--config",
        s(&config),
        "--data",
        s(&tmp.path().join("nowhere")),
        "--iterations",
        "1",
        "--checkpoint-dir",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("FileNotFound"), "{}", stderr(&o));

    let data = tmp.path().join("data");
    assert!(run(&["synth-data", "--out", s(&data), "--count", "4", "--image-size", "16"]).status.success());
    let o = run(&[
        "train",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--iterations",
        "3",
        "--learning-rate",
        "1e300",
        "--checkpoint-dir",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("not finite"));
}

#[test]
fn generate_and_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = common::synthetic_checkpoint(&tmp.path().join("ckpt"), 2);
    let layout = LayoutJson {
        image_size: 16,
        objects: serde_json::from_str(
            r#"[{"category": "square", "bbox": [0, 0, 8, 8]}, {"category": "triangle", "bbox": [8, 8, 8, 8]}]"#,
        )
        .unwrap(),
    };
    let layout_path = tmp.path().join("layout.json");
    std::fs::write(&layout_path, serde_json::to_string(&layout).unwrap()).unwrap();

    let outs = [tmp.path().join("g1"), tmp.path().join("g2")];
    for out in &outs {
        let o = run(&[
            "generate",
            "--checkpoint",
            s(&ckpt),
            "--layout",
            s(&layout_path),
            "--num-samples",
            "3",
            "--seed",
            "7",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let files = dir_bytes(&outs[0]);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".png")).count(), 3);
    assert_eq!(files, dir_bytes(&outs[1]));
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(outs[0].join("latents.json")).unwrap()).unwrap();
    assert_eq!(sidecar["latents"].as_array().unwrap().len(), 3);
    assert_eq!(sidecar["latents"][0].as_array().unwrap().len(), 2);

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"image_size": 16, "objects": [{"category": "square", "bbox": [12, 12, 8, 8]}]}"#).unwrap();
    let o = run(&["generate", "--checkpoint", s(&ckpt), "--layout", s(&bad), "--out", s(&tmp.path().join("g3"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("BoxOutOfBounds"), "{}", stderr(&o));

    let data = tmp.path().join("test");
    assert!(run(&["synth-data", "--out", s(&data), "--count", "20", "--seed", "9", "--image-size", "16"]).status.success());
    let reports = [tmp.path().join("r1.json"), tmp.path().join("r2.json")];
    for r in &reports {
        let o = run(&[
            "evaluate",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&data),
            "--out",
            s(r),
            "--seed",
            "1",
            "--classifier-steps",
            "50",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(&reports[0]).unwrap();
    assert_eq!(a, std::fs::read(&reports[1]).unwrap());
    let report: MetricReport = serde_json::from_slice(&a).unwrap();
    assert!([report.is_mean, report.fid, report.accuracy, report.ds_mean].iter().all(|v| v.is_finite()));
    assert_eq!(report.extractor, "desk-convnet");
    assert_eq!(report.num_images, 20);
}

#[test]
fn help_exits_cleanly() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    assert_eq!(run(&["train"]).status.code(), Some(2));
}
