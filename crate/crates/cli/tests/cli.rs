use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_shimkit");

fn shimkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).env_remove("SHIMKIT_SEED").output().expect("spawn shimkit")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = shimkit(dir, args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL: &[&str] = &[
    "--grid",
    "16x16x8",
    "--phantoms",
    "2",
    "--slices-per-phantom",
    "6",
    "--augment",
    "0,90",
    "--set",
    "slices.min_mask_voxels=8",
    "--set",
    "phantom.scale_max=1.0",
];

fn small_dataset(dir: &Path) {
    let mut args = vec!["simulate", "--out", "d"];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
}

#[test]
fn help_lists_every_flag_with_default() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["simulate", "reference", "mls", "train", "eval", "bench"] {
        let out = shimkit(dir.path(), &[sub, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        // Each option block runs from its `--flag` line to the next one.
        let mut blocks: Vec<String> = Vec::new();
        for line in text.lines() {
            let t = line.trim_start();
            if t.starts_with("--") || t.starts_with("-h,") || t.starts_with("-V,") {
                blocks.push(t.to_string());
            } else if let Some(b) = blocks.last_mut() {
                b.push_str(t);
            }
        }
        assert!(blocks.len() > 4, "{sub}: {text}");
        for b in blocks.iter().filter(|b| !b.starts_with("-h") && !b.starts_with("--help")) {
            assert!(b.contains("[default:"), "{sub}: flag without default: {b}");
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = shimkit(p, &["reference", "--data", "missing"]);
    assert_eq!(out.status.code(), Some(2));
    let out = shimkit(p, &["simulate", "--coils", "eight"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coil.count"));
    let out = shimkit(p, &["simulate", "--set", "coil.gap=0.5"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(p.join("blocker"), b"").unwrap();
    let out = shimkit(p, &["simulate", "--out", "blocker/d", "--phantoms", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = shimkit(p, &["eval", "--ckpt", "nothing.ckpt"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn default_dataset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // All ten phantoms at default size, originals only: 10 x 32.
    ok(p, &["simulate", "--out", "orig", "--augment", "0"]);
    let m = manifest(&p.join("orig"));
    assert_eq!(m["entries"].as_array().unwrap().len(), 320);
    // One phantom with the default angle list: 32 x 12, so the full default is 3840.
    ok(p, &["simulate", "--out", "one", "--phantoms", "1"]);
    let m = manifest(&p.join("one"));
    assert_eq!(m["entries"].as_array().unwrap().len(), 32 * 12);
    assert_eq!(m["angles_deg"].as_array().unwrap().len(), 12);
}

#[test]
fn single_phantom_without_augmentation() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--out", "d", "--grid", "16x16x8", "--phantoms", "1", "--augment", "0", "--slices-per-phantom", "5", "--set", "slices.min_mask_voxels=8"]);
    let m = manifest(&dir.path().join("d"));
    assert_eq!(m["entries"].as_array().unwrap().len(), 5);
}

#[test]
fn reference_is_idempotent_and_job_independent() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_dataset(p);
    fs::create_dir(p.join("copy")).unwrap();
    for e in fs::read_dir(p.join("d")).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), p.join("copy").join(e.file_name())).unwrap();
    }
    ok(p, &["reference", "--data", "d", "--restarts", "3", "--jobs", "1"]);
    ok(p, &["reference", "--data", "copy", "--restarts", "3", "--jobs", "4"]);
    let first = fs::read(p.join("d/manifest.json")).unwrap();
    assert_eq!(first, fs::read(p.join("copy/manifest.json")).unwrap());
    let m = manifest(&p.join("d"));
    assert!(m["entries"].as_array().unwrap().iter().all(|e| e["reference"].is_object()));

    let out = shimkit(p, &["reference", "--data", "d", "--restarts", "3"]);
    assert!(out.status.success());
    assert_eq!(first, fs::read(p.join("d/manifest.json")).unwrap());

    // Quadrature-only references are deterministic single starts.
    ok(p, &["reference", "--data", "d", "--restarts", "0", "--include-quadrature", "true", "--force"]);
    let m = manifest(&p.join("d"));
    for e in m["entries"].as_array().unwrap() {
        assert_eq!(e["reference"]["init_label"], "quadrature");
    }
}

#[test]
fn train_zero_epochs_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_dataset(p);
    let out = shimkit(p, &["train", "--data", "d", "--epochs", "0"]);
    assert_eq!(out.status.code(), Some(2), "training without references must be refused");
    assert!(String::from_utf8_lossy(&out.stderr).contains("shimkit reference"));
    ok(p, &["reference", "--data", "d", "--restarts", "2"]);
    let tiny = ["--set", "net.stem_width=2", "--set", "net.widths=2,4,8,16"];
    let mut args = vec!["train", "--data", "d", "--epochs", "0", "--out", "ck/m.ckpt"];
    args.extend_from_slice(&tiny);
    ok(p, &args);
    ok(p, &["eval", "--data", "d", "--ckpt", "ck/m.ckpt", "--out", "e.json"]);
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("e.json")).unwrap()).unwrap();
    assert_eq!(e["summaries"].as_array().unwrap().len(), 2);
    assert_eq!(e["config"]["train.epochs"], "0");
}

#[test]
fn precedence_and_shared_hash() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("run.cfg"),
        "phantom.grid=16x16x8\nphantom.count=2\nphantom.scale_max=1.0\nslices.keep=6\nslices.min_mask_voxels=8\naugment.angles=0,90\nreference.restarts=2\ntrain.epochs=1\nnet.stem_width=2\nnet.widths=2,4,8,16\nbench.folds=1\nseed=5\n",
    )
    .unwrap();
    let c = ["--config", "run.cfg"];
    let run = |args: &[&str]| {
        let mut v = args.to_vec();
        v.extend_from_slice(&c);
        ok(p, &v);
    };
    run(&["simulate", "--out", "d"]);
    run(&["reference", "--data", "d"]);
    run(&["train", "--data", "d", "--out", "m.ckpt"]);
    run(&["eval", "--data", "d", "--ckpt", "m.ckpt"]);
    run(&["bench", "--data", "d", "--out", "rep"]);
    let hash = |f: &str| {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join(f)).unwrap()).unwrap();
        v["config_hash"].as_str().unwrap().to_string()
    };
    let h = hash("d/manifest.json");
    assert_eq!(h, hash("eval.json"));
    assert_eq!(h, hash("rep/report.json"));
    assert!(fs::read_to_string(p.join("rep/summary.txt")).unwrap().contains(&h));
    assert_eq!(manifest(&p.join("d"))["seed"], 5);

    // Environment seed sits below --set and flags.
    let out = Command::new(BIN)
        .current_dir(p)
        .args(["simulate", "--out", "e1", "--config", "run.cfg"])
        .env("SHIMKIT_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&p.join("e1"))["seed"], 11);
    let out = Command::new(BIN)
        .current_dir(p)
        .args(["simulate", "--out", "e2", "--config", "run.cfg", "--seed", "12"])
        .env("SHIMKIT_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&p.join("e2"))["seed"], 12);

    let out = shimkit(p, &["simulate", "--out", "e3", "--config", "run.cfg", "--set", "phantom.count=1", "--phantoms", "2"]);
    assert!(out.status.success());
    assert_eq!(manifest(&p.join("e3"))["phantoms"].as_array().unwrap().len(), 2);
}
