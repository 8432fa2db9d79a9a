//! Pipeline stages. Each stage reads the previous stage's files from the
//! output tree:
//!
//! ```text
//! <out>/prepared/{train,valid,test}.ws, norm.json, manifest.json
//! <out>/models/model.aecf, history.csv
//! <out>/reports/detection.json, scores.csv, evaluation.json, evaluation.csv
//! <out>/explanations/<method>/records.jsonl, metrics.json, windows/<index>.csv
//! ```
//!
//! No stage writes timestamps or absolute paths, so identical inputs give
//! byte-identical outputs.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use aecf::data::{fit_norm, load_series, make_windows, NormStats, Schema, SeriesFile, WindowSet};
use aecf::detector::{calibrate, classify, Confusion, DetectionMetrics, DetectorProfile};
use aecf::evalx::{self, changed_features, ExplanationMetrics, ValidityTable};
use aecf::explainer::{
    explain_counterfactual_full, explain_reconstruction, explain_with_selection, Explanation, Method,
};
use aecf::model::{load_model, save_model, AeModel, AnomalyModel};
use aecf::synth::{self, SynthConfig};
use aecf::train::{train, EpochLoss, TrainConfig};
use aecf::Tensor;
use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, GroupConfig, Role, RunConfig};

/// Paths inside the output tree.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Layout { root: cfg.out() }
    }

    pub fn prepared(&self, name: &str) -> PathBuf {
        self.root.join("prepared").join(name)
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("models").join("model.aecf")
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("models").join("history.csv")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn explanations(&self, method: Method) -> PathBuf {
        self.root.join("explanations").join(method.as_str())
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {} (run `aecf {hint}` first)", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_windows(layout: &Layout, split: &str) -> Result<WindowSet> {
    let path = layout.prepared(&format!("{split}.ws"));
    if !path.is_file() {
        bail!("{} not found; run `aecf prepare` first", path.display());
    }
    Ok(WindowSet::load(&path)?)
}

fn open_model(layout: &Layout, model: Option<&Path>) -> Result<(AeModel, String)> {
    let path = model.map(Path::to_path_buf).unwrap_or_else(|| layout.model());
    if !path.is_file() {
        bail!("model {} not found; run `aecf train` first or pass --model", path.display());
    }
    let file = load_model(&path).with_context(|| format!("loading model {}", path.display()))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((file.model, name))
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub file: String,
    pub start: usize,
    pub rows: usize,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub windows: usize,
    pub anomalous_windows: usize,
    pub pieces: Vec<Piece>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub channels: Vec<String>,
    pub window_length: usize,
    pub stride: usize,
    pub test_stride: usize,
    pub train: SplitSummary,
    pub valid: SplitSummary,
    pub test: SplitSummary,
}

fn split_group(g: &GroupConfig, s: SeriesFile, train: &mut Vec<SeriesFile>, valid: &mut Vec<SeriesFile>) -> Result<()> {
    let cut = (s.len() as f64 * g.train_fraction).round() as usize;
    let parts = [(s.slice(0..cut), &mut *train), (s.slice(cut..s.len()), &mut *valid)];
    for (part, dest) in parts {
        if g.normal_only {
            dest.extend(part.normal_runs());
        } else {
            if part.labels.as_ref().is_some_and(|l| l.contains(&true)) {
                bail!(
                    "group {:?}: {} has rows labeled anomalous; set normal_only = true for this group",
                    g.name,
                    part.source
                );
            }
            dest.push(part);
        }
    }
    Ok(())
}

fn windows_for(
    pieces: &[SeriesFile],
    stats: &NormStats,
    cfg: &RunConfig,
    stride: usize,
    channels: &[String],
) -> Result<(WindowSet, SplitSummary)> {
    let mut set = WindowSet::empty(channels.len(), cfg.window.length, stride, channels.to_vec());
    let mut summary = SplitSummary {
        windows: 0,
        anomalous_windows: 0,
        pieces: Vec::new(),
    };
    for p in pieces {
        let w = make_windows(&stats.apply(p)?, cfg.window.length, stride, cfg.window.label_rule)?;
        summary.pieces.push(Piece {
            file: p.source.clone(),
            start: p.offset,
            rows: p.len(),
            windows: w.len(),
        });
        set.extend(w)?;
    }
    summary.windows = set.len();
    summary.anomalous_windows = set.labels.iter().filter(|l| **l == Some(true)).count();
    Ok((set, summary))
}

/// Load the raw files, split them, fit normalisation on the training rows
/// and write the three window sets.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate_data()?;
    let schema = cfg.schema()?;
    let DataConfig { groups, .. } = cfg.data()?;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for g in groups {
        let schema = if g.labeled {
            schema.clone()
        } else {
            Schema {
                label: None,
                ..schema.clone()
            }
        };
        for f in &g.files {
            let mut s = load_series(&cfg.data_file(f), &schema)
                .with_context(|| format!("group {:?}", g.name))?;
            s.source = f.to_string_lossy().into_owned();
            match g.role {
                Role::TrainValid => split_group(g, s, &mut train, &mut valid)?,
                Role::Test => test.push(s),
            }
        }
    }
    let stats = fit_norm(&train.iter().collect::<Vec<_>>())?;
    let channels = schema.channels.clone();
    let stride = cfg.window.stride;
    let test_stride = cfg.window.test_stride.unwrap_or(stride);
    let (train_ws, train_sum) = windows_for(&train, &stats, cfg, stride, &channels)?;
    let (valid_ws, valid_sum) = windows_for(&valid, &stats, cfg, stride, &channels)?;
    let (test_ws, test_sum) = windows_for(&test, &stats, cfg, test_stride, &channels)?;
    ensure!(
        !train_ws.is_empty(),
        "no training windows: every training piece is shorter than window.length = {}",
        cfg.window.length
    );
    ensure!(
        !valid_ws.is_empty(),
        "no validation windows: every validation piece is shorter than window.length = {}",
        cfg.window.length
    );
    if test_ws.is_empty() {
        log::warn!("test split is empty; `aecf detect` will fail");
    }

    let layout = Layout::new(cfg);
    for (name, set) in [("train", &train_ws), ("valid", &valid_ws), ("test", &test_ws)] {
        let path = layout.prepared(&format!("{name}.ws"));
        create_parent(&path)?;
        set.save(&path)?;
    }
    write_json(&layout.prepared("norm.json"), &stats)?;
    let manifest = Manifest {
        channels,
        window_length: cfg.window.length,
        stride,
        test_stride,
        train: train_sum,
        valid: valid_sum,
        test: test_sum,
    };
    write_json(&layout.prepared("manifest.json"), &manifest)?;
    log::info!(
        "prepared {} train, {} valid, {} test windows",
        manifest.train.windows,
        manifest.valid.windows,
        manifest.test.windows
    );
    Ok(manifest)
}

// ------------------------------------------------------------------ train

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let train_ws = load_windows(&layout, "train")?;
    let valid_ws = load_windows(&layout, "valid")?;
    let arch = cfg.architecture(train_ws.features)?;
    let tc = cfg.train_config();
    let mut model = AeModel::build(&arch, tc.seed)?;
    log::info!(
        "training {} ({} parameters) on {} windows for {} epochs",
        model.name(),
        model.parameter_count(),
        train_ws.len(),
        tc.epochs
    );
    let history = train(&mut model, &train_ws, &valid_ws, &tc)?;
    let path = layout.model();
    create_parent(&path)?;
    save_model(&path, &model, Some(&tc))?;

    let mut w = csv::Writer::from_path(layout.history())?;
    w.write_record(["epoch", "train_loss", "valid_loss"])?;
    for h in &history {
        w.write_record([
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.valid_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(history)
}

// ----------------------------------------------------------------- detect

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub model: String,
    pub profile: DetectorProfile,
    pub validation_windows: usize,
    pub test_windows: usize,
    pub flagged: Vec<usize>,
    pub confusion: Option<Confusion>,
    pub metrics: Option<DetectionMetrics>,
}

pub fn cmd_detect(cfg: &RunConfig, model: Option<&Path>) -> Result<DetectionSummary> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let (model, model_name) = open_model(&layout, model)?;
    let valid = load_windows(&layout, "valid")?;
    let test = load_windows(&layout, "test")?;
    ensure!(!test.is_empty(), "test window set is empty; nothing to detect");
    let profile = calibrate(&model, &valid, cfg.detector_k())?;
    let report = classify(&model, &profile, &test)?;

    let scores = layout.report("scores.csv");
    create_parent(&scores)?;
    let mut w = csv::Writer::from_path(&scores)?;
    w.write_record(["index", "file", "start", "score", "label", "prediction"])?;
    for (i, p) in test.provenance.iter().enumerate() {
        w.write_record([
            i.to_string(),
            p.file.clone(),
            p.start.to_string(),
            report.scores[i].to_string(),
            report.labels[i].map(|l| u8::from(l).to_string()).unwrap_or_default(),
            u8::from(report.predictions[i]).to_string(),
        ])?;
    }
    w.flush()?;

    let summary = DetectionSummary {
        model: model_name,
        profile,
        validation_windows: valid.len(),
        test_windows: test.len(),
        flagged: report.flagged(),
        confusion: report.confusion,
        metrics: report.metrics.clone(),
    };
    write_json(&layout.report("detection.json"), &summary)?;
    match &report.metrics {
        Some(m) => log::info!(
            "threshold {:.6}; {} of {} windows flagged; F1 {} recall {} FPR {}",
            profile.threshold,
            summary.flagged.len(),
            test.len(),
            fmt_opt(m.f1),
            fmt_opt(m.recall),
            fmt_opt(m.fpr)
        ),
        None => log::info!(
            "threshold {:.6}; {} of {} windows flagged (unlabeled)",
            profile.threshold,
            summary.flagged.len(),
            test.len()
        ),
    }
    Ok(summary)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

// ---------------------------------------------------------------- explain

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub index: usize,
    pub file: String,
    pub start: usize,
    pub label: Option<bool>,
    pub method: Method,
    pub threshold: f64,
    /// Set when the explanation failed; the remaining fields are then empty.
    pub error: Option<String>,
    pub selected: Vec<String>,
    pub fallback: bool,
    /// Per feature: time-averaged change above epsilon.
    pub changed: Vec<bool>,
    pub initial_score: Option<f64>,
    pub final_score: Option<f64>,
    pub valid: Option<bool>,
    pub iterations: Option<usize>,
    pub best_iteration: Option<usize>,
    pub lambda: Option<f64>,
    pub window_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub explained: usize,
    pub failures: usize,
    pub metrics: Option<ExplanationMetrics>,
}

fn run_method<M: AnomalyModel>(model: &M, cfg: &RunConfig, profile: &DetectorProfile, method: Method, x: &Tensor) -> aecf::Result<Explanation> {
    match method {
        Method::Ours => explain_with_selection(model, profile, x, &cfg.selector, &cfg.explainer),
        Method::Counterfactual => {
            explain_counterfactual_full(model, profile, x, cfg.explainer.eta, cfg.explainer.max_iters)
        }
        Method::Reconstruction => explain_reconstruction(model, x),
    }
}

/// Side-by-side CSV of a window and its counterfactual, one row per step.
pub fn write_window_csv(path: &Path, channels: &[String], start: usize, x: &Tensor, cf: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["t".to_string()];
    header.extend(channels.iter().map(|c| format!("x_{c}")));
    header.extend(channels.iter().map(|c| format!("cf_{c}")));
    w.write_record(&header)?;
    for t in 0..x.cols() {
        let mut row = vec![(start + t).to_string()];
        row.extend((0..x.rows()).map(|j| x.get2(j, t).to_string()));
        row.extend((0..cf.rows()).map(|j| cf.get2(j, t).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a window CSV back into `(x, counterfactual)`.
pub fn read_window_csv(path: &Path, features: usize) -> Result<(Tensor, Tensor)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut x = vec![Vec::new(); features];
    let mut cf = vec![Vec::new(); features];
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        ensure!(
            rec.len() == 1 + 2 * features,
            "{} row {}: expected {} columns, got {}",
            path.display(),
            row + 2,
            1 + 2 * features,
            rec.len()
        );
        for j in 0..features {
            x[j].push(rec[1 + j].parse::<f64>()?);
            cf[j].push(rec[1 + features + j].parse::<f64>()?);
        }
    }
    Ok((Tensor::from_rows(&x)?, Tensor::from_rows(&cf)?))
}

/// Explain every window flagged by `detect` with `method`.
pub fn cmd_explain(cfg: &RunConfig, model: Option<&Path>, method: Method) -> Result<MethodReport> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let (model, _) = open_model(&layout, model)?;
    let test = load_windows(&layout, "test")?;
    let detection: DetectionSummary = read_json(&layout.report("detection.json"), "detect")?;
    ensure!(
        detection.test_windows == test.len(),
        "detection report covers {} windows but the test set has {}; rerun `aecf detect`",
        detection.test_windows,
        test.len()
    );
    let profile = detection.profile;
    let dir = layout.explanations(method);
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir.join("windows"))?;

    let total = detection.flagged.len();
    log::info!("explaining {total} flagged windows with method {method}");
    let done = AtomicUsize::new(0);
    let results: Vec<aecf::Result<Explanation>> = detection
        .flagged
        .par_iter()
        .map(|&i| {
            let r = run_method(&model, cfg, &profile, method, &test.windows[i]);
            let d = done.fetch_add(1, Ordering::Relaxed) + 1;
            if total >= 10 && d % (total / 10) == 0 {
                log::info!("{method}: {d}/{total}");
            }
            r
        })
        .collect();

    let mut lines = String::new();
    let mut ok = Vec::new();
    let mut ok_labels = Vec::new();
    let mut failures = 0;
    for (&i, result) in detection.flagged.iter().zip(results) {
        let prov = &test.provenance[i];
        let mut rec = ExplanationRecord {
            index: i,
            file: prov.file.clone(),
            start: prov.start,
            label: test.labels[i],
            method,
            threshold: profile.threshold,
            error: None,
            selected: Vec::new(),
            fallback: false,
            changed: Vec::new(),
            initial_score: None,
            final_score: None,
            valid: None,
            iterations: None,
            best_iteration: None,
            lambda: None,
            window_csv: None,
        };
        match result {
            Ok(e) => {
                let csv_name = format!("windows/{i}.csv");
                write_window_csv(&dir.join(&csv_name), &test.channel_names, prov.start, &e.original, &e.counterfactual)?;
                rec.selected = e.mask.indices().into_iter().map(|j| test.channel_names[j].clone()).collect();
                rec.fallback = e.mask.fallback;
                rec.changed = changed_features(&e.original, &e.counterfactual, cfg.evaluation.epsilon)?;
                rec.initial_score = Some(e.initial_score);
                rec.final_score = Some(e.final_score);
                rec.valid = Some(e.final_score < profile.threshold);
                rec.iterations = Some(e.iterations);
                rec.best_iteration = Some(e.best_iteration);
                rec.lambda = Some(e.lambda);
                rec.window_csv = Some(csv_name);
                ok_labels.push(test.labels[i]);
                ok.push(e);
            }
            Err(err) => {
                log::warn!("window {i} ({} @ {}): {err}", prov.file, prov.start);
                rec.error = Some(err.to_string());
                failures += 1;
            }
        }
        lines.push_str(&serde_json::to_string(&rec)?);
        lines.push('\n');
    }
    fs::write(dir.join("records.jsonl"), lines)?;

    let labels: Option<Vec<bool>> = ok_labels.into_iter().collect();
    let metrics = if ok.is_empty() {
        None
    } else {
        Some(evalx::evaluate(
            &model,
            method,
            &ok,
            labels.as_deref(),
            profile.threshold,
            cfg.evaluation.epsilon,
        )?)
    };
    let report = MethodReport {
        method,
        explained: ok.len(),
        failures,
        metrics,
    };
    write_json(&dir.join("metrics.json"), &report)?;
    if let Some(m) = &report.metrics {
        log::info!(
            "{method}: validity {:.3} sparsity {:.3} distance {:.4} over {} windows",
            m.validity,
            m.sparsity,
            m.distance,
            m.count
        );
    }
    Ok(report)
}

// --------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub method: Method,
    pub count: usize,
    pub failures: usize,
    pub validity: Option<f64>,
    pub sparsity: Option<f64>,
    pub distance: Option<f64>,
    pub confusion: Option<ValidityTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub threshold: f64,
    pub epsilon: f64,
    pub methods: Vec<EvaluationRow>,
}

/// Recompute explanation metrics from the exported windows of every method
/// that has been run. Scores come from the model, not from the records.
pub fn cmd_evaluate(cfg: &RunConfig, model: Option<&Path>) -> Result<Evaluation> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let (model, _) = open_model(&layout, model)?;
    let detection: DetectionSummary = read_json(&layout.report("detection.json"), "detect")?;
    let threshold = detection.profile.threshold;
    let eps = cfg.evaluation.epsilon;
    let (n, _) = model.input_shape();
    let mut rows = Vec::new();
    for method in Method::ALL {
        let dir = layout.explanations(method);
        let records = dir.join("records.jsonl");
        if !records.is_file() {
            continue;
        }
        let file = fs::File::open(&records)?;
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        let mut failures = 0;
        for line in BufReader::new(file).lines() {
            let rec: ExplanationRecord = serde_json::from_str(&line?)?;
            match rec.window_csv {
                Some(csv) => {
                    pairs.push(read_window_csv(&dir.join(csv), n)?);
                    labels.push(rec.label);
                }
                None => failures += 1,
            }
        }
        let row = if pairs.is_empty() {
            EvaluationRow {
                method,
                count: 0,
                failures,
                validity: None,
                sparsity: None,
                distance: None,
                confusion: None,
            }
        } else {
            let cfs: Vec<&Tensor> = pairs.iter().map(|p| &p.1).collect();
            let refs: Vec<(&Tensor, &Tensor)> = pairs.iter().map(|(a, b)| (a, b)).collect();
            let flags = evalx::validity_flags(&model, &cfs, threshold)?;
            let labels: Option<Vec<bool>> = labels.into_iter().collect();
            EvaluationRow {
                method,
                count: pairs.len(),
                failures,
                validity: Some(flags.iter().filter(|v| **v).count() as f64 / flags.len() as f64),
                sparsity: Some(evalx::sparsity(&refs, eps)?),
                distance: Some(evalx::distance(&refs)?),
                confusion: labels.map(|l| evalx::validity_confusion(&flags, &l)).transpose()?,
            }
        };
        rows.push(row);
    }
    ensure!(!rows.is_empty(), "no explanations found under {}; run `aecf explain` first", layout.root.join("explanations").display());
    let evaluation = Evaluation {
        threshold,
        epsilon: eps,
        methods: rows,
    };
    write_json(&layout.report("evaluation.json"), &evaluation)?;
    let mut w = csv::Writer::from_path(layout.report("evaluation.csv"))?;
    w.write_record(["method", "count", "failures", "validity", "sparsity", "distance"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &evaluation.methods {
        w.write_record([
            r.method.as_str().to_string(),
            r.count.to_string(),
            r.failures.to_string(),
            opt(r.validity),
            opt(r.sparsity),
            opt(r.distance),
        ])?;
        log::info!(
            "{:<15} n={:<5} validity {:>6} sparsity {:>6} distance {:>7}",
            r.method.as_str(),
            r.count,
            fmt_opt(r.validity),
            fmt_opt(r.sparsity),
            r.distance.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
    }
    w.flush()?;
    Ok(evaluation)
}

// ------------------------------------------------------------------ synth

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub files: Vec<String>,
    pub injections: Vec<synth::Injection>,
    pub config: PathBuf,
}

/// Generate the synthetic dataset under `dir` together with its schema, a
/// list of injected spans and a ready-to-run pipeline config.
pub fn cmd_synth(cfg: &SynthConfig, dir: &Path) -> Result<SynthSummary> {
    let mut data = synth::generate(cfg)?;
    for inj in &mut data.injections {
        inj.file = format!("data/{}", inj.file);
    }
    let data_dir = dir.join("data");
    fs::create_dir_all(&data_dir).with_context(|| format!("creating {}", data_dir.display()))?;
    let mut normal = Vec::new();
    let mut test = Vec::new();
    for f in &data.files {
        synth::write_csv(&f.series, &data_dir.join(&f.series.source))?;
        let rel = PathBuf::from("data").join(&f.series.source);
        if f.anomalous {
            test.push(rel);
        } else {
            normal.push(rel);
        }
    }
    fs::write(dir.join("schema.toml"), toml::to_string(&synth::schema())?)?;
    write_json(&dir.join("injections.json"), &data.injections)?;

    let mut run = RunConfig::empty();
    run.seed = Some(cfg.seed);
    run.data = Some(DataConfig {
        schema: "schema.toml".into(),
        root: None,
        groups: vec![
            GroupConfig {
                name: "normal".into(),
                role: Role::TrainValid,
                files: normal,
                normal_only: false,
                labeled: true,
                train_fraction: 0.8,
            },
            GroupConfig {
                name: "test".into(),
                role: Role::Test,
                files: test,
                normal_only: false,
                labeled: true,
                train_fraction: 0.8,
            },
        ],
    });
    run.synth = cfg.clone();
    // desk-scale settings: a few minutes end to end on one core
    run.window.stride = 2;
    run.window.test_stride = Some(8);
    run.train = Some(TrainConfig {
        epochs: 60,
        batch_size: 16,
        ..TrainConfig::skab()
    });
    run.explainer.eta = 0.2;
    run.explainer.max_iters = 1000;
    let config = dir.join("run.toml");
    let mut text = String::from("# Pipeline config for the generated synthetic dataset.\n");
    text.push_str(&toml::to_string(&run)?);
    let mut f = fs::File::create(&config)?;
    f.write_all(text.as_bytes())?;
    log::info!(
        "wrote {} files with {} injected spans to {}",
        data.files.len(),
        data.injections.len(),
        dir.display()
    );
    Ok(SynthSummary {
        files: data.files.iter().map(|f| f.series.source.clone()).collect(),
        injections: data.injections,
        config,
    })
}
