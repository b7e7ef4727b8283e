use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depthssl::imageio::load_png;

fn depthssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthssl")).args(args).env_remove("DEPTHSSL_DATA_ROOT").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path) -> PathBuf {
    let root = dir.join("data");
    let out = depthssl(&["synth", "--out", root.to_str().unwrap(), "--train", "16", "--val", "8", "--size", "16"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    root
}

fn first_sample(root: &Path) -> PathBuf {
    root.join("train/0_square_warm/00000.png")
}

fn tiny_overrides(root: &Path) -> Vec<String> {
    [
        format!("dataset.root={}", root.display()),
        "dataset.image_size=16".into(),
        "augment.out_size=16".into(),
        "dataset.synthetic.n_train=16".into(),
        "dataset.synthetic.n_val=8".into(),
        "model.feature_dim=16".into(),
        "method.name=byol".into(),
        "method.proj_hidden=16".into(),
        "method.proj_out=8".into(),
        "method.pred_hidden=16".into(),
        "optim.epochs=1".into(),
        "optim.batch_size=8".into(),
        "eval.knn.k=3".into(),
    ]
    .into()
}

fn with_sets<'a>(base: &[&'a str], sets: &'a [String]) -> Vec<&'a str> {
    let mut args = base.to_vec();
    for s in sets {
        args.push("--set");
        args.push(s);
    }
    args
}

#[test]
fn zero_shift_render_reproduces_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let img = first_sample(&root);
    let out_png = dir.path().join("view.png");
    let out = depthssl(&[
        "render",
        "--image",
        img.to_str().unwrap(),
        "--depth",
        img.with_extension("dpt").to_str().unwrap(),
        "--shift",
        "0",
        "0",
        "0",
        "--out",
        out_png.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (a, b) = (load_png(&img).unwrap(), load_png(&out_png).unwrap());
    let err = (&a - &b).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn shifted_render_writes_depth() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let img = first_sample(&root);
    let (png, dpt) = (dir.path().join("v.png"), dir.path().join("v.dpt"));
    let out = depthssl(&[
        "render",
        "--image",
        img.to_str().unwrap(),
        "--depth",
        img.with_extension("dpt").to_str().unwrap(),
        "--shift",
        "-0.3",
        "0.1",
        "0",
        "--planes",
        "16",
        "--out",
        png.to_str().unwrap(),
        "--out-depth",
        dpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(png.is_file() && dpt.is_file());
}

#[test]
fn corrupt_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let img = first_sample(&root);
    let run = |seed: &str, name: &str| {
        let out_png = dir.path().join(name);
        let out = depthssl(&["corrupt", "--image", img.to_str().unwrap(), "--kind", "shot_noise", "--severity", "4", "--seed", seed, "--out", out_png.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(out_png).unwrap()
    };
    assert_eq!(run("3", "a.png"), run("3", "b.png"));
    assert_ne!(run("3", "a.png"), run("4", "c.png"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let img = first_sample(&root);

    let bad_kind = depthssl(&["corrupt", "--image", img.to_str().unwrap(), "--kind", "fog", "--severity", "1", "--out", "x.png"]);
    assert_eq!(code(&bad_kind), 2);
    let bad_sev = depthssl(&["corrupt", "--image", img.to_str().unwrap(), "--kind", "jpeg", "--severity", "6", "--out", "x.png"]);
    assert_eq!(code(&bad_sev), 2);

    let missing = dir.path().join("nope.png");
    let out = depthssl(&["corrupt", "--image", missing.to_str().unwrap(), "--kind", "jpeg", "--severity", "1", "--out", "x.png"]);
    assert_eq!(code(&out), 4);

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"depth": {"dropout": 1.5}}"#).unwrap();
    let out = depthssl(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth.dropout"));
    fs::write(&cfg, r#"{"optim": {"epochs": 3, "learning_rate": 1}}"#).unwrap();
    assert_eq!(code(&depthssl(&["validate", cfg.to_str().unwrap()])), 2);

    let mut sets = tiny_overrides(&root);
    sets.push("optim.optimizer.kind=sgd".into());
    sets.push("optim.optimizer.lr=1e300".into());
    let runs = dir.path().join("runs");
    let args = with_sets(&["pretrain", "--runs", runs.to_str().unwrap()], &sets);
    let out = depthssl(&args);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pretrain_knn_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path());
    let runs = dir.path().join("runs");
    let sets = tiny_overrides(&root);
    let out = depthssl(&with_sets(&["pretrain", "--runs", runs.to_str().unwrap()], &sets));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = PathBuf::from(stdout(&out).lines().next().unwrap().trim());
    assert!(run_dir.join("config.json").is_file());

    let first = dir.path().join("a.json");
    let out = depthssl(&["knn", "--run", run_dir.to_str().unwrap(), "--corruptions", "gaussian_noise@1,contrast", "--out", first.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let second = dir.path().join("b.json");
    let out = depthssl(&["knn", "--run", run_dir.to_str().unwrap(), "--corruptions", "none", "--out", second.to_str().unwrap()]);
    assert_eq!(code(&out), 0);

    let csv = dir.path().join("cells.csv");
    let out = depthssl(&["report", first.to_str().unwrap(), second.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.contains("a.json") || l.contains("b.json")).count(), 2, "{text}");
    assert!(text.contains("uniform mean"));
    let cells = fs::read_to_string(csv).unwrap();
    assert_eq!(cells.lines().count(), 1 + 6 + 2);

    let out = depthssl(&["knn", "--run", run_dir.to_str().unwrap(), "--depth-mode", "provider", "--corruptions", "none"]);
    assert_eq!(code(&out), 0, "an RGB run ignores the depth mode: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("eval_report.json").is_file());

    let out = depthssl(&["report", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let data = tempfile::tempdir().unwrap();
    let mut files: Vec<PathBuf> = fs::read_dir(&configs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy() != "expected_imagenette.json"))
        .collect();
    files.sort();
    let out = Command::new(env!("CARGO_BIN_EXE_depthssl"))
        .arg("validate")
        .args(&files)
        .env("DEPTHSSL_DATA_ROOT", data.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("ok ")).count(), files.len());
}
