use std::fs;
use std::path::Path;

use depthssl::config::RunConfig;
use depthssl::data::{load_dataset, load_view_bank, Split};
use depthssl::eval::{CorruptionKind, CorruptionSpec, DepthMode};
use depthssl::pipeline::{ensure_view_banks, evaluate, load_run, pretrain, probe, read_metrics, PretrainOptions, CHECKPOINT_FILE, METRICS_FILE};
use depthssl::Error;

fn tiny(root: &Path, extra: &[&str]) -> RunConfig {
    let mut o: Vec<String> = [
        format!("dataset.root={}", root.join("data").display()),
        "dataset.image_size=16".into(),
        "augment.out_size=16".into(),
        "dataset.synthetic.n_train=24".into(),
        "dataset.synthetic.n_val=8".into(),
        "model.feature_dim=16".into(),
        "method.name=byol".into(),
        "method.proj_hidden=32".into(),
        "method.proj_out=16".into(),
        "method.pred_hidden=32".into(),
        "optim.epochs=4".into(),
        "optim.batch_size=8".into(),
        "eval.knn.k=3".into(),
        "eval.knn_every=2".into(),
    ]
    .into();
    o.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(None, &o).unwrap()
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[]);
    let full = pretrain(&cfg, &dir.path().join("a"), &PretrainOptions::default()).unwrap();

    let runs = dir.path().join("b");
    let part = pretrain(&cfg, &runs, &PretrainOptions { stop_after: Some(2), ..Default::default() }).unwrap();
    assert_eq!(part.records.len(), 2);
    assert_eq!(part.state.epoch, 2);
    let resumed = pretrain(&cfg, &runs, &PretrainOptions::default()).unwrap();

    assert_eq!(resumed.records, full.records);
    assert_eq!(read_metrics(&resumed.run_dir.join(METRICS_FILE)).unwrap(), full.records);
    assert_eq!(fs::read(resumed.run_dir.join(CHECKPOINT_FILE)).unwrap(), fs::read(full.run_dir.join(CHECKPOINT_FILE)).unwrap());
}

#[test]
fn finished_run_is_not_retrained() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &["optim.epochs=2"]);
    let first = pretrain(&cfg, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
    let again = pretrain(&cfg, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
    assert_eq!(first.records, again.records);
    assert_eq!(again.state.epoch, 2);
}

#[test]
fn foreign_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &["optim.epochs=1"]);
    let out = pretrain(&cfg, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
    let other = tiny(dir.path(), &["optim.epochs=1", "optim.seed=9"]);
    let other_dir = dir.path().join("runs").join(other.run_name());
    fs::create_dir_all(&other_dir).unwrap();
    fs::copy(out.run_dir.join(CHECKPOINT_FILE), other_dir.join(CHECKPOINT_FILE)).unwrap();
    let err = pretrain(&other, &dir.path().join("runs"), &PretrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn run_reloads_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &["optim.epochs=1", "eval.probe.epochs=3"]);
    let out = pretrain(&cfg, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
    let (loaded, state) = load_run(&out.run_dir).unwrap();
    assert_eq!(loaded, cfg);
    let spec = CorruptionSpec::new(CorruptionKind::Contrast, 2).unwrap();
    let report = evaluate(&state, &loaded, &[spec], DepthMode::Sidecar).unwrap();
    assert_eq!(report.cells.len(), 1);
    assert!((0.0..=100.0).contains(&report.clean_top1));
    let p = probe(&state, &loaded, DepthMode::Sidecar).unwrap();
    assert_eq!(p.per_lr.len(), loaded.eval.probe.lr_grid.len());
}

#[test]
fn depth_run_evaluates_with_cached_or_zero_depth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &["optim.epochs=1", "depth.enabled=true", "depth.dropout=0.5"]);
    let out = pretrain(&cfg, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
    assert_eq!(out.state.encoder_spec.in_channels, 4);
    let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 3).unwrap();
    for mode in [DepthMode::Sidecar, DepthMode::Zero] {
        let r = evaluate(&out.state, &cfg, &[spec], mode).unwrap();
        assert_eq!(r.depth_mode, mode);
    }
    assert!(evaluate(&out.state, &cfg, &[spec], DepthMode::Provider).is_err());
}

#[test]
fn other_methods_train() {
    let dir = tempfile::tempdir().unwrap();
    let simsiam = tiny(dir.path(), &["optim.epochs=1", "method={\"name\":\"simsiam\",\"proj_dim\":16,\"pred_hidden\":8}"]);
    let out = pretrain(&simsiam, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
    assert!(out.records[0].loss.is_finite());
    let swav = tiny(
        dir.path(),
        &["optim.epochs=1", "method={\"name\":\"swav\",\"proj_hidden\":32,\"proj_out\":16,\"prototypes\":10,\"multi_crop\":{\"n_local\":2,\"local_size\":8}}"],
    );
    let out = pretrain(&swav, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
    assert!(out.records[0].loss.is_finite());
}

#[test]
fn view_banks_follow_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let views = |k: &str, range: &str| {
        let k = format!("views.k={k}");
        let range = format!("views.range={range}");
        tiny(dir.path(), &["optim.epochs=1", "views.enabled=true", "views.geometry.num_planes=8", &k, &range])
    };
    let cfg = views("3", "{\"x\":0.2,\"y\":0.2,\"z\":0.0}");
    let out = pretrain(&cfg, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
    assert!(out.records[0].loss.is_finite());
    assert_eq!(ensure_view_banks(&cfg).unwrap().skipped, 24);

    let fewer = views("2", "{\"x\":0.2,\"y\":0.2,\"z\":0.0}");
    assert_eq!(ensure_view_banks(&fewer).unwrap().skipped, 24);
    assert!(pretrain(&fewer, &dir.path().join("runs"), &PretrainOptions::default()).is_ok());

    let wider = views("2", "{\"x\":0.6,\"y\":0.6,\"z\":0.0}");
    assert_eq!(ensure_view_banks(&wider).unwrap().built, 24);
    let manifest = load_dataset(&wider.dataset.root, Split::Train).unwrap();
    let bank = load_view_bank(&wider.dataset.root.join(manifest.entries[0].view_bank.as_ref().unwrap())).unwrap();
    assert!(bank.views.iter().any(|v| v.spec.x.abs() > 0.2));
}
