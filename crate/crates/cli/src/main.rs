use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depthssl::config::{ConfigError, RunConfig};
use depthssl::data::{build_view_bank, generate_synthetic_dataset, load_dataset, read_depth, write_depth, DataError, Split, SyntheticConfig};
use depthssl::eval::{corrupt, render_table, report_csv, write_sweep_plot, CorruptionKind, CorruptionSpec, DepthMode, EvalError};
use depthssl::geometry::{render_novel_view, render_novel_view_rgbd, GeometryConfig, ViewSpec};
use depthssl::imageio::{load_png, save_png};
use depthssl::pipeline::{self, PretrainOptions, SweepConfig};
use depthssl::rng::{stream, tags};
use depthssl::{Error, Result};

#[derive(Parser)]
#[command(name = "depthssl", version, about = "Depth-aware self-supervised pretraining and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; defaults apply to every missing key.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set depth.dropout=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        Ok(RunConfig::load(self.config.as_deref(), &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder; resumes from the run directory's checkpoint.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        /// Stop after this many completed epochs.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Ignore an existing checkpoint.
        #[arg(long)]
        fresh: bool,
    },
    /// Render one novel view of an RGB image and its `.dpt` depth.
    Render {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true)]
        shift: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the rendered disparity here.
        #[arg(long)]
        out_depth: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        planes: usize,
    },
    /// Precompute MPI view banks for the training split.
    Viewbank {
        #[command(flatten)]
        config: ConfigArgs,
        /// Build at most this many banks.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Apply one corruption to an image.
    Corrupt {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        severity: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// kNN evaluation of a trained run, clean and corrupted.
    Knn {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Linear probe over frozen features of a trained run.
    LinearProbe {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Tabulate reports, or run and tabulate a sweep.
    Report {
        /// EvalReport JSON files, one table row each.
        #[arg(conflicts_with = "sweep")]
        reports: Vec<PathBuf>,
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write a CSV of every cell here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate the synthetic RGB-D shapes dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 800)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        val: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check run configs and sweep files without running them.
    Validate {
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Depth fed to RGB-D encoders; defaults to the run's setting.
    #[arg(long, value_parser = parse_mode)]
    depth_mode: Option<DepthMode>,
    /// `all`, `none`, or a comma list of `kind` or `kind@severity`.
    #[arg(long)]
    corruptions: Option<String>,
    /// Output path; defaults to a file in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<DepthMode, String> {
    match s {
        "sidecar" => Ok(DepthMode::Sidecar),
        "zero" => Ok(DepthMode::Zero),
        "provider" => Ok(DepthMode::Provider),
        _ => Err(format!("unknown depth mode {s:?}; expected sidecar, zero or provider")),
    }
}

fn parse_specs(s: &str) -> Result<Vec<CorruptionSpec>> {
    match s {
        "all" => return Ok(CorruptionSpec::full_grid()),
        "none" => return Ok(Vec::new()),
        _ => {}
    }
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        match item.split_once('@') {
            Some((k, sev)) => {
                let sev: u8 = sev.parse().map_err(|_| EvalError::Config(format!("bad severity in {item:?}")))?;
                out.push(CorruptionSpec::new(k.parse()?, sev)?);
            }
            None => {
                let kind: CorruptionKind = item.parse()?;
                out.extend((1..=5).map(|severity| CorruptionSpec { kind, severity }));
            }
        }
    }
    Ok(out)
}

fn emit_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { config, runs, stop_after, fresh } => {
            let cfg = config.load()?;
            let out = pipeline::pretrain(&cfg, &runs, &PretrainOptions { stop_after, fresh })?;
            println!("{}", out.run_dir.display());
            if let Some(k) = out.records.last().and_then(|r| r.knn) {
                println!("knn top-1 {k:.2}%");
            }
        }
        Command::Render { image, depth, shift, out, out_depth, planes } => {
            let rgb = load_png(&image).map_err(EvalError::Image)?;
            let d = read_depth(&depth)?;
            let cfg = GeometryConfig { num_planes: planes, ..Default::default() };
            let spec = ViewSpec::new(shift[0], shift[1], shift[2]);
            let view = match out_depth.is_some() {
                true => render_novel_view_rgbd(&rgb, &d, &spec, &cfg)?,
                false => render_novel_view(&rgb, &d, &spec, &cfg)?,
            };
            save_png(&view.color, &out).map_err(EvalError::Image)?;
            if let (Some(p), Some(depth)) = (out_depth, &view.depth) {
                write_depth(&p, depth)?;
            }
        }
        Command::Viewbank { config, limit } => {
            let cfg = config.load()?;
            pipeline::ensure_dataset(&cfg)?;
            let manifest = load_dataset(&cfg.dataset.root, Split::Train)?;
            let v = &cfg.views;
            let (_, report) = build_view_bank(&manifest, v.k, &v.range, &v.geometry, v.bank_seed, limit)?;
            println!("built {} skipped {} failed {}", report.built, report.skipped, report.errors.len());
            for (p, why) in &report.errors {
                eprintln!("{}: {why}", p.display());
            }
            if !report.errors.is_empty() {
                return Err(DataError::Missing(format!("{} samples have no view bank", report.errors.len())).into());
            }
        }
        Command::Corrupt { image, kind, severity, seed, out } => {
            let img = load_png(&image).map_err(EvalError::Image)?;
            let spec = CorruptionSpec::new(kind.parse()?, severity)?;
            let kind_id = CorruptionKind::ALL.iter().position(|k| *k == spec.kind).unwrap_or(0) as u64;
            let outimg = corrupt(&img, &spec, &mut stream(seed, &[tags::CORRUPT, kind_id, severity as u64, 0]))?;
            save_png(&outimg, &out).map_err(EvalError::Image)?;
        }
        Command::Knn { run, eval } => {
            let (cfg, state) = pipeline::load_run(&run)?;
            let specs = match &eval.corruptions {
                Some(s) => parse_specs(s)?,
                None => cfg.eval.corruptions.clone(),
            };
            let report = pipeline::evaluate(&state, &cfg, &specs, eval.depth_mode.unwrap_or(cfg.depth.eval_mode))?;
            let out = eval.out.unwrap_or_else(|| run.join(pipeline::REPORT_FILE));
            pipeline::save_report(&out, &report)?;
            print!("{}", render_table(&[(run.display().to_string(), report)]));
        }
        Command::LinearProbe { run, eval } => {
            let (cfg, state) = pipeline::load_run(&run)?;
            let r = pipeline::probe(&state, &cfg, eval.depth_mode.unwrap_or(cfg.depth.eval_mode))?;
            let grid: Vec<_> = r.per_lr.iter().map(|(lr, acc)| serde_json::json!({ "lr": lr, "accuracy": acc })).collect();
            let doc = serde_json::json!({ "best_lr": r.best_lr, "accuracy": r.accuracy, "grid": grid, "probe": cfg.eval.probe });
            emit_json(&eval.out.unwrap_or_else(|| run.join("probe.json")), &doc)?;
            println!("linear probe top-1 {:.2}% at lr {}", r.accuracy, r.best_lr);
        }
        Command::Report { reports, sweep, runs, overrides, csv } => {
            let rows = match sweep {
                Some(path) => {
                    let sweep = SweepConfig::load(&path)?;
                    let out = pipeline::run_sweep(&sweep, &runs, &overrides)?;
                    let dir = runs.join(format!("sweep_{}", sweep.name));
                    std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
                    write_sweep_plot(&out.points, &dir.join("sweep.png"))?;
                    let table = render_table(&out.rows);
                    std::fs::write(dir.join("table.txt"), &table).map_err(|source| Error::Io { path: dir.join("table.txt"), source })?;
                    std::fs::write(dir.join("cells.csv"), report_csv(&out.rows)).map_err(|source| Error::Io { path: dir.join("cells.csv"), source })?;
                    emit_json(&dir.join("points.json"), &serde_json::json!({ "points": out.points, "expected": sweep.expected }))?;
                    out.rows
                }
                None => {
                    if reports.is_empty() {
                        return Err(ConfigError::Field { field: "reports".into(), message: "give report files or --sweep".into() }.into());
                    }
                    reports.iter().map(|p| Ok((p.display().to_string(), pipeline::load_report(p)?))).collect::<Result<Vec<_>>>()?
                }
            };
            print!("{}", render_table(&rows));
            println!("corrupted = uniform mean over all (kind, severity) cells");
            if let Some(p) = csv {
                std::fs::write(&p, report_csv(&rows)).map_err(|source| Error::Io { path: p.clone(), source })?;
            }
        }
        Command::Synth { out, train, val, size, seed } => {
            let cfg = SyntheticConfig { size, ..Default::default() };
            generate_synthetic_dataset(&out, train, val, seed, &cfg)?;
            println!("{}", out.display());
        }
        Command::Validate { files } => {
            for f in &files {
                let text = std::fs::read_to_string(f).map_err(|source| Error::Io { path: f.clone(), source })?;
                let is_sweep = text.contains("\"parameter\"");
                if is_sweep {
                    SweepConfig::load(f)?.validate(&[])?;
                } else {
                    RunConfig::load(Some(f), &[])?;
                }
                println!("ok {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
