mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use primkit::data::{attach_context, load_recording, normalize_repetition, Dataset, PareticSide, PatientMeta, PipelineConfig, RecordingId, SAMPLE_RATE_HZ};
use primkit::data::{split_patients, Fold};
use primkit::eval::{self, Proba};
use primkit::experiment::{self, checkpoint_proba, cross_validate, ModelChoice};
use primkit::synth::{generate_dataset, SynthConfig};
use primkit::train::{load_checkpoint, save_checkpoint, Checkpoint, TrainMeta};
use primkit::Primitive;
use serde::Serialize;

use config::{load, parse_overrides, read_json, with_overrides, write_json, ExperimentConfig};

#[derive(Parser)]
#[command(name = "primkit", version, about = "Movement-primitive classification from wearable IMU windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Config overrides as `--dot.path value` pairs, e.g. `--train.max_epochs 20`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with train and held-out manifests.
    Synth(Common),
    /// Patient-stratified k-fold training for every configured model.
    Cv(Common),
    /// Train one model on one fold's split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Fold whose training patients are used; its validation patients drive early stopping.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Index into the config's model list.
        #[arg(long, default_value_t = 0)]
        model: usize,
    },
    /// Score checkpoints, averaged as an ensemble, on a labeled cohort.
    Evaluate {
        /// Checkpoint directories, or directories searched for them.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Cohort manifest to score.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Window stride; defaults to the stride the checkpoints were validated with.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Per-window probabilities for one recording CSV.
    Predict {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        recording: PathBuf,
        /// Paretic side of the wearer.
        #[arg(long, value_enum)]
        side: Side,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Print saved metrics and validation tables as text.
    Report {
        /// metrics.json files, val_table.csv files, or directories holding them.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Left,
    Right,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("PRIMKIT_THREADS") {
        let n: usize = v.parse().with_context(|| format!("PRIMKIT_THREADS={v:?} is not a thread count"))?;
        primkit::par::init_threads(n);
    }
    match cli.command {
        Command::Synth(c) => synth(&c),
        Command::Cv(c) => cv(&c),
        Command::Train { common, fold, model } => train(&common, fold, model),
        Command::Evaluate {
            checkpoints,
            manifest,
            out,
            stride,
        } => evaluate(&checkpoints, &manifest, &out, stride),
        Command::Predict {
            checkpoints,
            recording,
            side,
            out,
            stride,
        } => predict(&checkpoints, &recording, side, &out, stride),
        Command::Report { paths } => report(&paths),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(c: &Common) -> Result<()> {
    let mut cfg: SynthConfig = load(c.config.as_deref(), &parse_overrides(&c.overrides)?)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    create_dir(&c.out)?;
    let paths = generate_dataset(&cfg, &c.out)?;
    write_json(&c.out.join("synth_config.json"), &cfg)?;
    info!("wrote {} and {}", paths.train_manifest.display(), paths.test_manifest.display());
    Ok(())
}

fn experiment_config(c: &Common) -> Result<ExperimentConfig> {
    let path = c.config.as_deref().context("--config is required")?;
    let mut cfg: ExperimentConfig = with_overrides(read_json(path)?, &parse_overrides(&c.overrides)?)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.resolve(path.parent().unwrap_or(Path::new(".")))
}

/// Directory names per model; a list index is appended when tags repeat.
fn model_dirs(models: &[ModelChoice]) -> Vec<String> {
    let tags: Vec<String> = models.iter().map(ModelChoice::tag).collect();
    tags.iter()
        .enumerate()
        .map(|(i, t)| {
            if tags.iter().filter(|u| *u == t).count() > 1 {
                format!("{t}-{i}")
            } else {
                t.clone()
            }
        })
        .collect()
}

fn cv_config(cfg: &ExperimentConfig) -> experiment::CvConfig {
    experiment::CvConfig {
        n_splits: cfg.n_splits,
        split_seed: cfg.seed,
        pipeline: cfg.pipeline,
        train_stride: cfg.train_stride,
        train: cfg.train.clone(),
    }
}

fn cv(c: &Common) -> Result<()> {
    let cfg = experiment_config(c)?;
    create_dir(&c.out)?;
    write_json(&c.out.join("config.json"), &cfg)?;
    let data = Dataset::load(&cfg.manifest)?.prepare(&cfg.pipeline)?;
    let test = match &cfg.test_manifest {
        Some(p) => Some(Dataset::load(p)?.prepare(&cfg.pipeline)?),
        None => None,
    };
    let cv_cfg = cv_config(&cfg);
    let mut rows = Vec::new();
    for (choice, name) in cfg.models.iter().zip(model_dirs(&cfg.models)) {
        let dir = c.out.join(&name);
        let folds = cross_validate(choice, &data, &cv_cfg).with_context(|| format!("model {name}"))?;
        let mut accs = Vec::new();
        let mut members = Vec::new();
        for mut f in folds {
            let fdir = dir.join(format!("fold{}", f.fold));
            save_checkpoint(&fdir, &mut f.checkpoint)?;
            if let Some(run) = &f.run {
                write_json(&fdir.join("history.json"), run)?;
            }
            accs.push(f.val_accuracy);
            members.push(f.checkpoint);
        }
        if let Some(test) = &test {
            let (windows, _) = test.windows(&cfg.pipeline.window);
            score(&mut members, &[], test, &windows, &dir.join("test"))?;
        }
        rows.push((name, accs));
    }
    write_val_table(&c.out, cfg.n_splits, &rows)
}

fn write_val_table(out: &Path, n_splits: usize, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut header = vec!["model".to_string()];
    header.extend((0..n_splits).map(|k| format!("fold{k}")));
    header.push("Average".into());
    let mut w = csv::Writer::from_path(out.join("val_table.csv"))?;
    w.write_record(&header)?;
    let mut text = String::new();
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5) + 2;
    let _ = write!(text, "{:<width$}", header[0]);
    for h in &header[1..] {
        let _ = write!(text, "{h:>9}");
    }
    text.push('\n');
    for (name, accs) in rows {
        let avg = accs.iter().sum::<f64>() / accs.len() as f64;
        // full precision in the csv, rounded in the text table
        let mut rec = vec![name.clone()];
        rec.extend(accs.iter().chain([&avg]).map(|a| a.to_string()));
        w.write_record(&rec)?;
        let _ = write!(text, "{name:<width$}");
        for a in accs.iter().chain([&avg]) {
            let _ = write!(text, "{:>9}", format!("{a:.4}"));
        }
        text.push('\n');
    }
    w.flush()?;
    fs::write(out.join("val_table.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn train(c: &Common, fold: usize, model: usize) -> Result<()> {
    let cfg = experiment_config(c)?;
    let choice = cfg
        .models
        .get(model)
        .with_context(|| format!("model index {model} out of range ({} models)", cfg.models.len()))?;
    if fold >= cfg.n_splits {
        bail!("fold {fold} out of range for {} splits", cfg.n_splits);
    }
    create_dir(&c.out)?;
    write_json(&c.out.join("config.json"), &cfg)?;
    let data = Dataset::load(&cfg.manifest)?.prepare(&cfg.pipeline)?;
    let Fold { train_ids, val_ids } = split_patients(&data.patients, cfg.n_splits, cfg.seed)?.swap_remove(fold);
    let meta = TrainMeta {
        seed: cfg.seed,
        fold: Some(fold),
        pipeline: Some(cfg.pipeline),
        ..TrainMeta::default()
    };
    let (mut ckpt, run, acc) = experiment::train_one(
        choice,
        &data.subset(&train_ids),
        &data.subset(&val_ids),
        &cfg.pipeline.window,
        cfg.train_stride,
        &cfg.train,
        meta,
    )?;
    let dir = c.out.join(&model_dirs(&cfg.models)[model]);
    save_checkpoint(&dir, &mut ckpt)?;
    if let Some(run) = &run {
        write_json(&dir.join("history.json"), run)?;
    }
    println!("{}: fold {fold} validation accuracy {acc:.4}", choice.tag());
    Ok(())
}

/// Checkpoint directories under each path, in sorted order.
fn find_checkpoints(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        if dir.join("manifest.json").is_file() && dir.join("params.bin").is_file() {
            out.push(dir.to_path_buf());
            return Ok(());
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subs.sort();
        for s in subs {
            walk(&s, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        walk(p, &mut out)?;
    }
    if out.is_empty() {
        bail!("no checkpoints found under {:?}", paths);
    }
    Ok(out)
}

fn load_members(paths: &[PathBuf]) -> Result<(Vec<PathBuf>, Vec<Checkpoint>)> {
    let dirs = find_checkpoints(paths)?;
    let members = dirs
        .iter()
        .map(|d| load_checkpoint(d).with_context(|| format!("loading checkpoint {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok((dirs, members))
}

/// The preprocessing every member was trained with; they must agree.
fn shared_pipeline(members: &[Checkpoint]) -> Result<PipelineConfig> {
    let mut found: Option<PipelineConfig> = None;
    for m in members {
        let p = m.meta.pipeline.unwrap_or_default();
        match found {
            Some(f) if f != p => bail!("ensemble members were trained with different preprocessing"),
            _ => found = Some(p),
        }
    }
    Ok(found.unwrap_or_default())
}

#[derive(Serialize)]
struct MemberScore {
    checkpoint: String,
    accuracy: f64,
    balanced_accuracy: f64,
}

#[derive(Serialize)]
struct Metrics<'a> {
    n_members: usize,
    ensemble: &'a eval::MetricsReport,
    members: Vec<MemberScore>,
}

/// Ensemble the members on `windows` and write the full evaluation to `out`.
fn score(members: &mut [Checkpoint], names: &[PathBuf], data: &Dataset, windows: &[primkit::data::Window], out: &Path) -> Result<()> {
    if windows.is_empty() {
        bail!("no labeled windows to evaluate");
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
    let mut probas = Vec::with_capacity(members.len());
    let mut member_scores = Vec::new();
    for (i, m) in members.iter_mut().enumerate() {
        m.check_compatible(&data.schema)?;
        let p = checkpoint_proba(m, windows)?;
        let preds = eval::predictions(&p);
        member_scores.push(MemberScore {
            checkpoint: names.get(i).map_or_else(|| format!("fold{i}"), |n| n.display().to_string()),
            accuracy: eval::accuracy(&preds, &labels)?,
            balanced_accuracy: eval::balanced_accuracy(&preds, &labels)?,
        });
        probas.push(p);
    }
    let mean = eval::ensemble_proba(&probas)?;
    let ev = experiment::evaluate(data, windows, &mean)?;
    create_dir(out)?;
    write_json(
        &out.join("metrics.json"),
        &Metrics {
            n_members: members.len(),
            ensemble: &ev.report,
            members: member_scores,
        },
    )?;
    fs::write(out.join("metrics.txt"), ev.report.to_text())?;
    eval::write_confusion_csv(&out.join("confusion.csv"), &ev.report.confusion)?;
    eval::write_letter_values_csv(&out.join("letter_values.csv"), &ev.letter_values)?;
    eval::write_composition_csv(&out.join("composition.csv"), &ev.composition)?;
    eval::write_per_patient_csv(&out.join("per_patient.csv"), &ev.per_patient)?;
    info!("{} windows, balanced accuracy {:.4}", ev.report.n, ev.report.balanced_accuracy);
    Ok(())
}

fn evaluate(paths: &[PathBuf], manifest: &Path, out: &Path, stride: Option<usize>) -> Result<()> {
    let (dirs, mut members) = load_members(paths)?;
    let mut pipeline = shared_pipeline(&members)?;
    if let Some(s) = stride {
        if s == 0 {
            bail!("--stride must be positive");
        }
        pipeline.window.stride_samples = s;
    }
    let data = Dataset::load(manifest)?.prepare(&pipeline)?;
    let (windows, _) = data.windows(&pipeline.window);
    score(&mut members, &dirs, &data, &windows, out)?;
    print!("{}", fs::read_to_string(out.join("metrics.txt"))?);
    Ok(())
}

fn predict(paths: &[PathBuf], recording: &Path, side: Side, out: &Path, stride: usize) -> Result<()> {
    if stride == 0 {
        bail!("--stride must be positive");
    }
    let (_, mut members) = load_members(paths)?;
    let mut pipeline = shared_pipeline(&members)?;
    pipeline.window.stride_samples = stride;
    let schema = Arc::new(members[0].schema.clone());
    let id = RecordingId {
        patient_id: "stream".into(),
        activity_id: recording.file_stem().map_or("stream".into(), |s| s.to_string_lossy().into_owned()),
        repetition_index: 0,
    };
    let raw = load_recording(recording, &schema, id)?;
    let side = match side {
        Side::Left => PareticSide::Left,
        Side::Right => PareticSide::Right,
    };
    // the impairment score only feeds reporting, never the model inputs
    let mut rec = attach_context(&raw, &PatientMeta::new("stream", side, 66)?)?;
    if pipeline.normalize {
        rec = normalize_repetition(&rec)?;
    }
    let rows = experiment::predict_stream(&mut members, &rec, &pipeline.window)?;
    write_predictions(out, &rec.labels, &rows)?;
    info!("{} windows written to {}", rows.len(), out.display());
    Ok(())
}

fn write_predictions(out: &Path, labels: &[primkit::StepLabel], rows: &[(usize, Proba)]) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
    let mut header = vec!["center".to_string(), "time_s".to_string()];
    header.extend(Primitive::ALL.iter().map(|p| format!("p_{}", p.name())));
    header.extend(["predicted".to_string(), "label".to_string()]);
    w.write_record(&header)?;
    for (center, p) in rows {
        let mut rec = vec![center.to_string(), format!("{:.2}", *center as f64 / SAMPLE_RATE_HZ)];
        rec.extend(p.iter().map(|v| v.to_string()));
        rec.push(Primitive::ALL[eval::argmax(p)].name().to_string());
        rec.push(labels[*center].map_or(String::new(), |l| l.name().to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn report(paths: &[PathBuf]) -> Result<()> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = ["val_table.csv", "metrics.json"]
                .iter()
                .map(|f| p.join(f))
                .filter(|f| f.is_file())
                .collect();
            if found.is_empty() {
                bail!("{} holds neither metrics.json nor val_table.csv", p.display());
            }
            files.append(&mut found);
        } else {
            files.push(p.clone());
        }
    }
    for f in files {
        println!("== {}", f.display());
        if f.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = read_json(&f)?;
            let ensemble = v.get("ensemble").cloned().unwrap_or(v);
            let report: eval::MetricsReport = serde_json::from_value(ensemble).with_context(|| format!("{} is not a metrics file", f.display()))?;
            print!("{}", report.to_text());
        } else {
            print!("{}", val_table_text(&f)?);
        }
        println!();
    }
    Ok(())
}

fn val_table_text(path: &Path) -> Result<String> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.last().map(String::as_str) != Some("Average") {
        bail!("{} is not a validation table", path.display());
    }
    let rows: Vec<Vec<String>> = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()?;
    let width = rows.iter().map(|r| r[0].len()).max().unwrap_or(5).max(5) + 2;
    let mut s = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let _ = write!(s, "{:<width$}", row[0]);
        for cell in &row[1..] {
            let cell = cell.parse::<f64>().map_or_else(|_| cell.clone(), |v| format!("{v:.4}"));
            let _ = write!(s, "{cell:>9}");
        }
        s.push('\n');
    }
    Ok(s)
}
