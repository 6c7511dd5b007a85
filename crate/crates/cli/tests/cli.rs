use std::path::Path;
use std::process::{Command, Output};

fn dfrq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfrq")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dfrq(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const CD: &[&str] = &["gen-heightfield", "cd", "--seed", "7", "--extent-um", "16", "--samples", "192"];

fn small_dataset(dir: &Path) {
    ok(dir, &[CD, &["--out", "cd.hf"]].concat());
    ok(
        dir,
        &["gen-dataset", "--heightfield", "cd.hf", "--res-u", "32", "--res-v", "32", "--res-w", "4", "--sigma-s-um", "2", "--out", "cd.ds"],
    );
}

const TRAIN: &[&str] = &[
    "train", "--dataset", "cd.ds", "--encoding", "4,2", "--first-hidden", "24", "--depth", "2", "--epochs", "3",
    "--batch-size", "256", "--split", "held-out:2", "--quiet",
];

#[test]
fn heightfield_hash_is_reproducible_and_out_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &[CD, &["--out", "a.hf"]].concat());
    let b = ok(dir.path(), &[CD, &["--out", "b.hf"]].concat());
    assert_eq!(a, b);
    assert_eq!(a.trim().len(), 64);
    assert_eq!(code(&dfrq(dir.path(), CD)), 2);
}

#[test]
fn version_lists_formats() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(dir.path(), &["--version"]);
    for tag in ["DFRQHF1", "DFRQDS1", "DFRQNN1", "DFRQIM1"] {
        assert!(v.contains(tag), "{v}");
    }
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    ok(d, &[TRAIN, &["--out", "m.nn"]].concat());
    assert!(d.join("m.report.json").is_file());

    let geometry = ["--res", "32", "--theta-i", "30", "--phi-i", "135", "--exposure", "5000"];
    ok(d, &[&["slice", "--source", "model", "--model", "m.nn", "--out", "pred.ppm"], &geometry[..]].concat());
    ok(
        d,
        &[&["slice", "--source", "dataset-gt", "--heightfield", "cd.hf", "--dataset", "cd.ds", "--out", "gt.ppm"], &geometry[..]]
            .concat(),
    );
    let ppm = std::fs::read(d.join("gt.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(ppm.len(), 13 + 32 * 32 * 3);

    let same: serde_json::Value = serde_json::from_str(&ok(d, &["eval", "--gt-slice", "gt.im", "--pred-slice", "gt.im"])).unwrap();
    assert_eq!(same["psnr_xyz"], 99.0);
    assert_eq!(same["ssim_srgb"], 1.0);
    assert_eq!(same["exposure_ru"], 5000.0);

    ok(d, &["eval", "--gt-slice", "gt.im", "--pred-slice", "pred.im", "--report", "r.json"]);
    let line = std::fs::read_to_string(d.join("r.json")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    for key in ["psnr_xyz", "psnr_linear_rgb", "ssim_ycbcr", "ssim_srgb"] {
        assert!(rec[key].as_f64().unwrap().is_finite(), "{key}");
    }

    let grid: serde_json::Value =
        serde_json::from_str(&ok(d, &["eval", "--dataset", "cd.ds", "--model", "m.nn", "--w-slice", "2"])).unwrap();
    assert_eq!(grid["width"], 32);
}

#[test]
fn reruns_are_byte_identical_and_config_files_apply() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    std::fs::write(d.join("run.cfg"), "epochs = 2\nseed = 5\n").unwrap();
    ok(d, &[TRAIN, &["--config", "run.cfg", "--out", "a.nn"]].concat());
    ok(d, &[TRAIN, &["--threads", "1", "--config", "run.cfg", "--out", "b.nn"]].concat());
    assert_eq!(std::fs::read(d.join("a.nn")).unwrap(), std::fs::read(d.join("b.nn")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("a.report.json")).unwrap()).unwrap();
    // TRAIN passes --epochs 3 after the config's 2, and explicit flags win.
    assert_eq!(report["epochs"].as_array().unwrap().len(), 3);
    assert_eq!(report["seed"], 5);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    std::fs::write(d.join("bad.nn"), b"not a model").unwrap();
    assert_eq!(code(&dfrq(d, &["slice", "--model", "bad.nn", "--out", "x.ppm"])), 3);
    assert_eq!(code(&dfrq(d, &["slice", "--model", "missing.nn", "--out", "x.ppm"])), 2);
    assert_eq!(code(&dfrq(d, &["gen-dataset", "--heightfield", "cd.hf", "--scheme", "bogus", "--out", "y.ds"])), 2);
    assert_eq!(code(&dfrq(d, &[TRAIN, &["--split", "held-out:9", "--out", "m.nn"]].concat())), 2);
    assert_eq!(code(&dfrq(d, &[TRAIN, &["--lr", "1e30", "--out", "m.nn"]].concat())), 4);
    assert_eq!(code(&dfrq(d, &["eval", "--gt-slice", "a.im"])), 2);
}
