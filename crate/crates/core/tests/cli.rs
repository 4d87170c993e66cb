mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::write_raw_tree;

fn carp3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carp3d"))
        .args(args)
        .env_remove("CARP3D_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = carp3d(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn cohort(dir: &Path) -> std::path::PathBuf {
    ok(&[
        "synth", "--out", p(dir), "--patients", "4", "--slices", "21", "--band-half-width-um", "6",
        "--soi-gap-um", "2", "--feature-dim", "8", "--patches", "5", "--seed", "1",
    ]);
    dir.join("manifest.tsv")
}

fn quick_train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--manifest", p(manifest), "--out", p(out), "--embed-dim", "6", "--attn-dim", "4", "--epochs", "3",
    ];
    args.extend_from_slice(extra);
    if !extra.contains(&"--pooling") {
        args.extend_from_slice(&["--pooling", "average"]);
    }
    if !extra.contains(&"--half-range-um") {
        args.extend_from_slice(&["--half-range-um", "4"]);
    }
    carp3d(&args)
}

#[test]
fn help_lists_every_command() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["preprocess", "synth", "train", "eval", "triage"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let m = cohort(&dir.path().join("c"));
    let out = quick_train(&m, &dir.path().join("t"), &["--pooling", "none", "--m", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("none"));

    let out = quick_train(&m, &dir.path().join("t"), &["--m", "3", "--half-range-um", "80"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible"));

    assert!(!carp3d(&["train"]).status.success());
    assert!(!carp3d(&["bogus"]).status.success());
}

#[test]
fn preprocess_without_slices_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("raw/P1/B1")).unwrap();
    let out = carp3d(&["preprocess", "--raw-dir", p(&dir.path().join("raw")), "--out", p(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no slices found"));
}

#[test]
fn preprocess_writes_manifest_and_bags() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    write_raw_tree(&raw, &[("P1", "B1", 0), ("P1", "B1", 2)], 512, 1);
    let labels = dir.path().join("labels.tsv");
    fs::write(&labels, "patient_id\tbiopsy_id\tslice_index\tlabel\nP1\tB1\t2\t1\n").unwrap();
    let out = dir.path().join("o");
    ok(&[
        "preprocess", "--raw-dir", p(&raw), "--out", p(&out), "--labels", p(&labels), "--feature-dim", "16",
        "--slice-pitch-um", "2.5",
    ]);
    let vols = carp3d::data::load_manifest_resolved(out.join("manifest.tsv")).unwrap();
    assert_eq!(vols.len(), 1);
    let v = &vols[0];
    assert_eq!(v.slices.len(), 2);
    assert_eq!(v.slices[1].depth_um, 5.0);
    assert_eq!((v.slices[1].label, v.slices[1].is_train), (Some(1), true));
    assert_eq!(v.slices[0].label, None);
    let bag = carp3d::data::load_feature_bag(&v.slices[0].feature_path).unwrap();
    assert!(bag.num_patches() >= 1 && bag.num_patches() <= 4);
    assert_eq!(bag.feature_dim(), 16);
    assert!(out.join("preprocess.config.json").exists());

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "patient_id\tbiopsy_id\tslice_index\tlabel\nP1\tB1\t9\t1\n").unwrap();
    let o = carp3d(&["preprocess", "--raw-dir", p(&raw), "--out", p(&dir.path().join("o2")), "--labels", p(&bad)]);
    assert!(!o.status.success());
}

#[test]
fn threads_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let m = cohort(&dir.path().join("c"));
    let run = |env: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_carp3d"))
            .args(["eval", "--predictions"])
            .arg(dir.path().join("t/predictions.tsv"))
            .args(["--out", p(&dir.path().join(out)), "--n-boot", "50"])
            .env("CARP3D_THREADS", env)
            .output()
            .unwrap()
    };
    assert!(quick_train(&m, &dir.path().join("t"), &[]).status.success());
    assert!(run("2", "e2").status.success());
    assert!(run("1", "e1").status.success());
    assert_eq!(
        fs::read(dir.path().join("e1/metrics.tsv")).unwrap(),
        fs::read(dir.path().join("e2/metrics.tsv")).unwrap()
    );
    let bad = run("many", "e3");
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("CARP3D_THREADS"));
}

#[test]
fn eval_reruns_from_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let m = cohort(&dir.path().join("c"));
    assert!(quick_train(&m, &dir.path().join("t"), &[]).status.success());
    let first = dir.path().join("e");
    ok(&["eval", "--predictions", p(&dir.path().join("t/predictions.tsv")), "--out", p(&first), "--n-boot", "40", "--seed", "9"]);
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("eval.config.json")).unwrap()).unwrap();
    let second = dir.path().join("e_again");
    ok(&[
        "eval", "--predictions", echo["predictions"].as_str().unwrap(), "--out", p(&second), "--n-boot",
        &echo["n_boot"].to_string(), "--seed", &echo["seed"].to_string(),
    ]);
    assert_eq!(fs::read(first.join("metrics.tsv")).unwrap(), fs::read(second.join("metrics.tsv")).unwrap());
    let tsv = fs::read_to_string(first.join("metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 2);
    assert_eq!(tsv.lines().next().unwrap().split('\t').count(), 13);
}

#[test]
fn train_outputs_and_triage_stride() {
    let dir = tempfile::tempdir().unwrap();
    let m = cohort(&dir.path().join("c"));
    let t = dir.path().join("t");
    let out = quick_train(&m, &t, &["--fit-all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["predictions.tsv", "folds.tsv", "model.ckpt", "train.config.json"] {
        assert!(t.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_dir(t.join("folds")).unwrap().count(), 4);
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.join("train.config.json")).unwrap()).unwrap();
    assert_eq!(echo["model"]["neighborhood"]["m"], 2);
    assert_eq!(echo["model"]["neighborhood"]["d_slices"], 2);

    let tr = dir.path().join("tr");
    ok(&[
        "triage", "--manifest", p(&m), "--checkpoint", p(&t.join("model.ckpt")), "--out", p(&tr), "--stride", "10",
        "--top-k", "2", "--volume", "P000/B0",
    ]);
    let profiles: Vec<_> = fs::read_dir(tr.join("profiles")).unwrap().collect();
    assert_eq!(profiles.len(), 1);
    let text = fs::read_to_string(profiles[0].as_ref().unwrap().path()).unwrap();
    assert_eq!(text.lines().count() - 1, 21usize.div_ceil(10));
    assert_eq!(fs::read_to_string(tr.join("topk.tsv")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_dir(tr.join("heatmaps")).unwrap().count(), 4);

    let missing = carp3d(&["triage", "--manifest", p(&m), "--checkpoint", p(&t.join("nope.ckpt")), "--out", p(&tr)]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.ckpt"));
}
