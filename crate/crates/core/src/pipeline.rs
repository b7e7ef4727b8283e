//! End-to-end stages: dataset preparation, pretraining with resumable run
//! directories, and evaluation of finished runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::{make_crops, make_pair, Sample};
use crate::config::{DatasetKind, RunConfig};
use crate::data::{build_view_bank, generate_synthetic_dataset, load_dataset, BankReport, LoadedDataset, Split};
use crate::eval::{knn_eval, linear_probe, robustness_eval, Classifier, CorruptionSpec, DepthMode, EvalInputs, EvalReport, ProbeResult};
use crate::rng::{stream, tags};
use crate::ssl::{cosine_lr, load_checkpoint, save_checkpoint, Batch, MethodConfig, TrainState};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const REPORT_FILE: &str = "eval_report.json";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(io(path))
}

/// Generates the synthetic dataset when the config asks for one and its
/// root does not exist yet.
pub fn ensure_dataset(cfg: &RunConfig) -> Result<()> {
    let d = &cfg.dataset;
    if d.kind == DatasetKind::Synthetic && !d.root.join("train").is_dir() {
        log::info!("generating synthetic dataset in {}", d.root.display());
        let s = &d.synthetic;
        let scene = crate::data::SyntheticConfig { size: d.image_size, ..s.scene.clone() };
        generate_synthetic_dataset(&d.root, s.n_train, s.n_val, s.seed, &scene)?;
    }
    Ok(())
}

/// Renders any missing or stale view banks of the train split.
pub fn ensure_view_banks(cfg: &RunConfig) -> Result<BankReport> {
    ensure_dataset(cfg)?;
    let manifest = load_dataset(&cfg.dataset.root, Split::Train)?;
    let v = &cfg.views;
    let (_, report) = build_view_bank(&manifest, v.k, &v.range, &v.geometry, v.bank_seed, None)?;
    if report.built > 0 {
        log::info!("rendered {} view banks ({} reused)", report.built, report.skipped);
    }
    if let Some((p, why)) = report.errors.first() {
        return Err(crate::data::DataError::Missing(format!("{} samples have no view bank, e.g. {}: {why}", report.errors.len(), p.display())).into());
    }
    Ok(report)
}

/// Decodes one split at the configured size. Depth is loaded when the
/// encoder takes it; view banks only when `banks` is set.
pub fn load_split(cfg: &RunConfig, split: Split, banks: bool) -> Result<LoadedDataset> {
    ensure_dataset(cfg)?;
    let manifest = load_dataset(&cfg.dataset.root, split)?;
    let provider = cfg.depth.enabled.then_some(&cfg.depth.provider);
    Ok(LoadedDataset::load(manifest, Some(cfg.dataset.image_size), provider, banks)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub knn: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    /// Stop once this many epochs are complete, leaving a resumable run.
    pub stop_after: Option<usize>,
    /// Start over even if the run directory holds a checkpoint.
    pub fresh: bool,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub run_dir: PathBuf,
    pub records: Vec<EpochRecord>,
    pub state: TrainState,
}

pub fn run_dir(cfg: &RunConfig, runs_root: &Path) -> PathBuf {
    runs_root.join(cfg.run_name())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Io { path: path.into(), source: std::io::Error::new(std::io::ErrorKind::InvalidData, e) }))
        .collect()
}

fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("serializable"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io(path))
}

fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n / batch_size + usize::from(n % batch_size >= 2)
}

/// Keeps the first `views.k` bank views of every sample. Banks are drawn
/// sequentially from one stream, so a prefix equals a bank built with the
/// smaller `k`. Views outside the configured range mark a stale bank.
pub fn trim_banks(cfg: &RunConfig, data: &mut LoadedDataset) -> Result<()> {
    let (k, r) = (cfg.views.k, cfg.views.range);
    for (bank, e) in data.banks.iter_mut().zip(&data.manifest.entries) {
        let Some(bank) = bank else { continue };
        if bank.k() < k {
            return Err(crate::data::DataError::Missing(format!("view bank for {} has {} views, need {k}", e.image.display(), bank.k())).into());
        }
        bank.views.truncate(k);
        let tol = 1e-9;
        if bank.views.iter().any(|v| v.spec.x.abs() > r.x + tol || v.spec.y.abs() > r.y + tol || v.spec.z.abs() > r.z + tol) {
            return Err(crate::data::DataError::Missing(format!("view bank for {} was built for a wider range than {r:?}; rebuild it", e.image.display())).into());
        }
    }
    Ok(())
}

/// One pass over `train` in the epoch's shuffled order. Every sample's
/// augmentation draws from its own `(epoch, index)` stream.
pub fn train_epoch(state: &mut TrainState, cfg: &RunConfig, train: &LoadedDataset) -> Result<(f64, f64)> {
    let epoch = state.epoch;
    let seed = cfg.optim.seed;
    let policy = cfg.policy();
    let bs = cfg.optim.batch_size;
    let total = (cfg.optim.epochs * batches_per_epoch(train.len(), bs)) as u64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stream(seed, &[tags::SHUFFLE, epoch]));
    let (mut loss_sum, mut steps, mut lr) = (0.0, 0usize, 0.0);
    for chunk in order.chunks(bs).filter(|c| c.len() >= 2) {
        let samples = chunk.iter().map(|&i| {
            let s = Sample { rgb: &train.images[i], depth: train.depths[i].as_ref(), view_bank: train.banks[i].as_ref() };
            (s, stream(seed, &[tags::AUGMENT, epoch, i as u64]))
        });
        let batch = match &state.method {
            MethodConfig::Swav(sw) => {
                let crops = samples.map(|(s, mut rng)| make_crops(&s, &policy, &sw.multi_crop, &mut rng)).collect::<std::result::Result<Vec<_>, _>>()?;
                Batch::from_crops(&crops)
            }
            _ => {
                let pairs = samples.map(|(s, mut rng)| make_pair(&s, &policy, &mut rng)).collect::<std::result::Result<Vec<_>, _>>()?;
                Batch::from_pairs(&pairs)
            }
        };
        lr = cosine_lr(cfg.optim.optimizer.base_lr(), state.step, total);
        let m = state.train_step(&batch, lr, total)?;
        loss_sum += m.loss;
        steps += 1;
    }
    state.epoch += 1;
    Ok((loss_sum / steps.max(1) as f64, lr))
}

fn eval_inputs<'a>(state: &'a TrainState, cfg: &'a RunConfig, data: &'a LoadedDataset, labels: &'a [usize]) -> EvalInputs<'a> {
    EvalInputs {
        encoder: &state.encoder,
        in_channels: state.encoder_spec.in_channels,
        images: &data.images,
        depths: &data.depths,
        labels,
        num_classes: data.manifest.num_classes(),
        provider: Some(&cfg.depth.provider),
    }
}

/// kNN top-1 on `val` with `train` features as the memory bank.
pub fn knn_accuracy(state: &TrainState, cfg: &RunConfig, train: &LoadedDataset, val: &LoadedDataset, mode: DepthMode) -> Result<f64> {
    let (tl, vl) = (train.labels(), val.labels());
    let tf = eval_inputs(state, cfg, train, &tl).features(&train.images, mode)?;
    let vf = eval_inputs(state, cfg, val, &vl).features(&val.images, mode)?;
    let knn = crate::eval::KnnConfig { k: cfg.eval.knn.k.min(train.len()), ..cfg.eval.knn };
    Ok(knn_eval(tf.view(), &tl, vf.view(), &vl, train.manifest.num_classes(), &knn)?)
}

/// Trains (or resumes) the run described by `cfg` under `runs_root`.
pub fn pretrain(cfg: &RunConfig, runs_root: &Path, opts: &PretrainOptions) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let dir = run_dir(cfg, runs_root);
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let echo = cfg.to_value();
    write_json(&dir.join(CONFIG_FILE), &echo)?;
    if cfg.views.enabled {
        ensure_view_banks(cfg)?;
    }
    let mut train = load_split(cfg, Split::Train, cfg.views.enabled)?;
    trim_banks(cfg, &mut train)?;
    let val = load_split(cfg, Split::Val, false)?;
    if train.len() < 2 {
        return Err(crate::data::DataError::Empty("training split needs at least two images".into()).into());
    }
    let ckpt = dir.join(CHECKPOINT_FILE);
    let metrics = dir.join(METRICS_FILE);
    let mut state = if ckpt.exists() && !opts.fresh {
        let (state, header) = load_checkpoint(&ckpt)?;
        if header.config != echo {
            return Err(crate::config::ConfigError::Field { field: "<root>".into(), message: format!("{} was written by a different config", ckpt.display()) }.into());
        }
        log::info!("resuming {} at epoch {}", dir.display(), state.epoch);
        state
    } else {
        TrainState::new(cfg.method.clone(), cfg.encoder_spec(), cfg.optim.optimizer.clone(), cfg.optim.seed)?
    };
    let mut records: Vec<EpochRecord> = read_metrics(&metrics)?.into_iter().filter(|r| r.epoch <= state.epoch).collect();
    if state.epoch == 0 {
        records.clear();
    }
    write_metrics(&metrics, &records)?;
    let epochs = cfg.optim.epochs as u64;
    let limit = opts.stop_after.map_or(epochs, |s| (s as u64).min(epochs));
    while state.epoch < limit {
        let (loss, lr) = train_epoch(&mut state, cfg, &train)?;
        let e = state.epoch;
        let every = cfg.eval.knn_every as u64;
        let knn = if e == epochs || (every > 0 && e % every == 0) { Some(knn_accuracy(&state, cfg, &train, &val, cfg.depth.eval_mode)?) } else { None };
        log::info!("epoch {e}/{epochs} loss {loss:.4} lr {lr:.5}{}", knn.map_or(String::new(), |k| format!(" knn {k:.2}%")));
        let rec = EpochRecord { epoch: e, step: state.step, loss, lr, knn };
        let mut f = fs::OpenOptions::new().append(true).open(&metrics).map_err(io(&metrics))?;
        writeln!(f, "{}", serde_json::to_string(&rec).expect("serializable")).map_err(io(&metrics))?;
        records.push(rec);
        save_checkpoint(&ckpt, &state, echo.clone())?;
    }
    Ok(PretrainOutcome { run_dir: dir, records, state })
}

/// Loads the config echo and checkpoint of a finished run.
pub fn load_run(dir: &Path) -> Result<(RunConfig, TrainState)> {
    let path = dir.join(CHECKPOINT_FILE);
    let (state, header) = load_checkpoint(&path)?;
    let cfg = RunConfig::from_value(header.config)?;
    Ok((cfg, state))
}

/// Clean and corrupted kNN accuracy of a trained state on the val split.
pub fn evaluate(state: &TrainState, cfg: &RunConfig, specs: &[CorruptionSpec], mode: DepthMode) -> Result<EvalReport> {
    let train = load_split(cfg, Split::Train, false)?;
    let val = load_split(cfg, Split::Val, false)?;
    evaluate_loaded(state, cfg, &train, &val, specs, mode)
}

pub fn evaluate_loaded(state: &TrainState, cfg: &RunConfig, train: &LoadedDataset, val: &LoadedDataset, specs: &[CorruptionSpec], mode: DepthMode) -> Result<EvalReport> {
    let (tl, vl) = (train.labels(), val.labels());
    let bank = eval_inputs(state, cfg, train, &tl).features(&train.images, mode)?;
    let knn = crate::eval::KnnConfig { k: cfg.eval.knn.k.min(train.len()), ..cfg.eval.knn };
    let clf = Classifier::Knn { features: bank.view(), labels: &tl, config: knn };
    let echo = serde_json::json!({ "run": cfg.to_value(), "classifier": "knn", "knn": knn });
    Ok(robustness_eval(&eval_inputs(state, cfg, val, &vl), &clf, specs, mode, cfg.optim.seed, echo)?)
}

/// Linear probe on frozen features of the train split, scored on val.
pub fn probe(state: &TrainState, cfg: &RunConfig, mode: DepthMode) -> Result<ProbeResult> {
    let train = load_split(cfg, Split::Train, false)?;
    let val = load_split(cfg, Split::Val, false)?;
    let (tl, vl) = (train.labels(), val.labels());
    let tf = eval_inputs(state, cfg, &train, &tl).features(&train.images, mode)?;
    let vf = eval_inputs(state, cfg, &val, &vl).features(&val.images, mode)?;
    let pc = crate::eval::ProbeConfig { seed: cfg.optim.seed, ..cfg.eval.probe.clone() };
    Ok(linear_probe(tf.view(), &tl, vf.view(), &vl, train.manifest.num_classes(), &pc)?)
}

/// A one-parameter ablation: `parameter` takes each of `values`, for every
/// seed, on top of the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    /// Base run config, relative to the sweep file.
    pub base: Option<PathBuf>,
    #[serde(default)]
    pub overrides: Vec<String>,
    pub parameter: String,
    pub values: Vec<Value>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Published reference numbers for the sweep, echoed into reports.
    #[serde(default)]
    pub expected: Value,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        let mut s: SweepConfig = serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text))
            .map_err(|e| crate::config::ConfigError::Field { field: e.path().to_string(), message: e.into_inner().to_string() })?;
        if let (Some(b), Some(parent)) = (&s.base, path.parent()) {
            s.base = Some(parent.join(b));
        }
        Ok(s)
    }

    /// The run config for one `(value, seed)` cell.
    pub fn cell_config(&self, value: &Value, seed: u64, extra: &[String]) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        overrides.extend_from_slice(extra);
        overrides.push(format!("{}={}", self.parameter, value));
        overrides.push(format!("optim.seed={seed}"));
        Ok(RunConfig::load(self.base.as_deref(), &overrides)?)
    }

    pub fn validate(&self, extra: &[String]) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(crate::config::ConfigError::Field { field: "values".into(), message: "a sweep needs values and seeds".into() }.into());
        }
        for v in &self.values {
            self.cell_config(v, self.seeds[0], extra)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// `(row name, report)` per `(value, seed)` cell.
    pub rows: Vec<(String, EvalReport)>,
    /// Seed-averaged clean and corrupted accuracy against the parameter.
    /// Non-numeric values are plotted at their index.
    pub points: Vec<crate::eval::SweepPoint>,
}

/// Trains (resuming finished cells) and evaluates every sweep cell.
pub fn run_sweep(sweep: &SweepConfig, runs_root: &Path, extra: &[String]) -> Result<SweepOutcome> {
    sweep.validate(extra)?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (vi, value) in sweep.values.iter().enumerate() {
        let (mut clean, mut corrupted) = (0.0, 0.0);
        for &seed in &sweep.seeds {
            let cfg = sweep.cell_config(value, seed, extra)?;
            let out = pretrain(&cfg, runs_root, &PretrainOptions::default())?;
            let report = evaluate(&out.state, &cfg, &cfg.eval.corruptions, cfg.depth.eval_mode)?;
            write_json(&out.run_dir.join(REPORT_FILE), &report)?;
            clean += report.clean_top1;
            corrupted += report.corrupted_mean.unwrap_or(f64::NAN);
            rows.push((format!("{}={} seed={seed}", sweep.parameter, value), report));
        }
        let n = sweep.seeds.len() as f64;
        let x = value.as_f64().unwrap_or(vi as f64);
        points.push(crate::eval::SweepPoint { series: "clean".into(), x, y: clean / n });
        if corrupted.is_finite() {
            points.push(crate::eval::SweepPoint { series: "corrupted".into(), x, y: corrupted / n });
        }
    }
    Ok(SweepOutcome { rows, points })
}

/// Writes `report` as pretty JSON.
pub fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    write_json(path, report)
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Io { path: path.into(), source: std::io::Error::new(std::io::ErrorKind::InvalidData, e) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(root: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.dataset.root = root.join("data");
        cfg.dataset.image_size = 16;
        cfg.augment.out_size = 16;
        cfg.dataset.synthetic.n_train = 16;
        cfg.dataset.synthetic.n_val = 8;
        cfg.model.feature_dim = 16;
        cfg.method = MethodConfig::Byol(crate::ssl::ByolConfig { proj_hidden: 32, proj_out: 16, pred_hidden: 32, ..Default::default() });
        cfg.optim.epochs = 3;
        cfg.optim.batch_size = 8;
        cfg.eval.knn.k = 3;
        cfg
    }

    #[test]
    fn records_one_line_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let out = pretrain(&cfg, &dir.path().join("runs"), &PretrainOptions::default()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(read_metrics(&out.run_dir.join(METRICS_FILE)).unwrap(), out.records);
        assert!(out.records[2].knn.is_some() && out.records[0].knn.is_none());
        let echo: Value = serde_json::from_str(&fs::read_to_string(out.run_dir.join(CONFIG_FILE)).unwrap()).unwrap();
        assert_eq!(RunConfig::from_value(echo).unwrap(), cfg);
    }

    #[test]
    fn batches_skip_singletons() {
        assert_eq!(batches_per_epoch(17, 8), 2);
        assert_eq!(batches_per_epoch(18, 8), 3);
        assert_eq!(batches_per_epoch(16, 8), 2);
    }
}
