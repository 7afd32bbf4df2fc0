//! End-to-end runs: ingest, split, train, attack, score, evaluate, report.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig, Metric};
use super::metrics::{alpha_tpr, ensemble_alpha_tpr, roc_auc};
use super::plot;
use crate::attacks::{build_attacked_test_set, AttackContext, AttackKind, AttackSpec};
use crate::dataio::{
    apply_normalizer, concat_users, fit_normalizer, load_series, make_windows, split_chronological, synth_grid_series,
    DatasetManifest, NormStats, SeriesFrame, Splits, WindowPair, COVARIATE_COUNT, COVARIATE_NAMES,
};
use crate::detect::{
    calibrate_thresholds, ensemble_decide, forecast_mae, score_windows, score_windows_detailed, write_scores_csv,
    AnomalyScore, DetectorThresholds, DiffusionScorer,
};
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result, StageContext};
use crate::model::{fit, save_checkpoint, Checkpoint, EtdModel, FitOutcome, ModelConfig, TrainConfig, TrainTrace};
use crate::seed;

const SYNTH_STREAM: u64 = 1;
const MODEL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const ATTACK_STREAM: u64 = 4;
const TEST_NOISE_STREAM: u64 = 5;
const VAL_NOISE_STREAM: u64 = 6;

/// Windows and statistics derived from one series.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub splits: Splits,
    pub stats: NormStats,
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
    pub manifest: DatasetManifest,
}

impl PreparedData {
    pub fn attributes(&self) -> &[String] {
        &self.manifest.attributes
    }
}

/// Loads or generates the configured series.
pub fn load_data(cfg: &ExperimentConfig) -> Result<SeriesFrame> {
    let series = match &cfg.data.source {
        DataSource::Synth {
            days,
            interval_minutes,
            level,
            users,
        } => {
            let base = seed::derive(cfg.seed, SYNTH_STREAM);
            if *users == 1 {
                synth_grid_series(*days, *interval_minutes, *level, base)?
            } else {
                let parts = (0..*users)
                    .map(|u| {
                        let s = synth_grid_series(*days, *interval_minutes, *level, seed::derive(base, u as u64))?.select(&["energy"])?;
                        SeriesFrame::new(
                            s.timestamps().to_vec(),
                            s.values().to_owned(),
                            vec![format!("user_{u}")],
                            s.interval_minutes(),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                concat_users(&parts)?
            }
        }
        DataSource::File { path, format } => load_series(path, *format)?,
    };
    match &cfg.data.attributes {
        Some(names) => {
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            series.select(&names)
        }
        None => Ok(series),
    }
}

/// Splits, normalizes and windows `series`. With `stats` given (e.g. from a
/// checkpoint) those statistics are used instead of refitting.
pub fn prepare(cfg: &ExperimentConfig, series: &SeriesFrame, stats: Option<NormStats>) -> Result<PreparedData> {
    let w = cfg.windows;
    let span = w.context_len + w.horizon_len;
    let splits = split_chronological(series, cfg.split, span)?;
    let stats = match stats {
        Some(s) if s.n_attributes() == series.n_attributes() => s,
        Some(s) => return Err(Error::shape((1, series.n_attributes()), (1, s.n_attributes()))),
        None => fit_normalizer(&splits.train)?,
    };
    let windows = |frame: &SeriesFrame, stride| make_windows(&apply_normalizer(frame, &stats)?, w.context_len, w.horizon_len, stride);
    let train = windows(&splits.train, w.train_stride)?;
    let val = windows(&splits.val, w.eval_stride)?;
    let test = windows(&splits.test, w.eval_stride)?;
    let manifest = DatasetManifest {
        context_len: w.context_len,
        horizon_len: w.horizon_len,
        train_stride: w.train_stride,
        eval_stride: w.eval_stride,
        interval_minutes: series.interval_minutes(),
        attributes: series.attribute_names().to_vec(),
        covariates: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        norm_stats: stats.clone(),
        boundaries: splits.boundaries,
        window_counts: [train.len(), val.len(), test.len()],
    };
    Ok(PreparedData {
        splits,
        stats,
        train,
        val,
        test,
        manifest,
    })
}

/// The configured model with data-dependent dimensions filled in.
pub fn effective_model_config(cfg: &ExperimentConfig, data: &PreparedData) -> ModelConfig {
    ModelConfig {
        attributes: data.attributes().len(),
        covariates: COVARIATE_COUNT,
        context_len: cfg.windows.context_len,
        horizon_len: cfg.windows.horizon_len,
        ..cfg.model
    }
}

pub fn effective_train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(cfg.seed, TRAIN_STREAM),
        ..cfg.train.clone()
    }
}

pub fn train_model(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    schedule: &DiffusionSchedule,
    progress: impl FnMut(&crate::model::TraceRow),
) -> Result<FitOutcome> {
    let model = EtdModel::new(effective_model_config(cfg, data), seed::derive(cfg.seed, MODEL_STREAM))?;
    fit(model, &data.train, &data.val, &effective_train_config(cfg), schedule, progress)
}

/// Attack specs with seeds derived from the experiment seed.
pub fn effective_attacks(cfg: &ExperimentConfig) -> Vec<AttackSpec> {
    let base = seed::derive(cfg.seed, ATTACK_STREAM);
    cfg.attacks
        .iter()
        .enumerate()
        .map(|(i, a)| AttackSpec {
            seed: seed::derive(seed::derive(base, i as u64), a.seed),
            ..a.clone()
        })
        .collect()
}

fn is_multi_user(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.data.source, DataSource::Synth { users, .. } if users > 1)
}

/// One attacked copy of the test set per attack and target group. A
/// single-user run has one group; a multi-user run attacks one user at a time.
#[derive(Debug, Clone)]
pub struct AttackedSet {
    pub spec: AttackSpec,
    /// Display name of the manipulated attributes.
    pub target: String,
    pub windows: Vec<WindowPair>,
}

pub fn build_attack_sets(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Vec<AttackedSet>> {
    let groups: Vec<Option<Vec<String>>> = if is_multi_user(cfg) {
        data.attributes().iter().map(|a| Some(vec![a.clone()])).collect()
    } else {
        vec![cfg.data.targets.clone()]
    };
    let mut out = Vec::new();
    for (g, targets) in groups.iter().enumerate() {
        let ctx = AttackContext::from_train(&data.splits.train, targets.as_deref())?;
        for spec in effective_attacks(cfg) {
            let spec = AttackSpec {
                seed: seed::derive(spec.seed, g as u64),
                ..spec
            };
            let (_, attacked) = build_attacked_test_set(&data.test, &spec, &ctx, &data.stats)?;
            out.push(AttackedSet {
                spec,
                target: ctx.target_attributes.join("+"),
                windows: attacked,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub kind: AttackKind,
    pub target: String,
    pub scores: Vec<AnomalyScore>,
}

/// All scores of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBook {
    pub validation: Vec<AnomalyScore>,
    pub normal: Vec<AnomalyScore>,
    pub attacked: Vec<ScoredSet>,
    pub forecast: ForecastSummary,
}

/// Errors on the honest test windows, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub reconstruction_mae: f64,
    pub forecast_mae: f64,
    pub adjusted_forecast_mae: f64,
}

pub fn score_all(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    model: &EtdModel,
    schedule: &DiffusionSchedule,
    attacked: &[AttackedSet],
    mut progress: impl FnMut(&str),
) -> Result<ScoreBook> {
    let scorer = DiffusionScorer {
        model,
        schedule,
        mode: cfg.detection.mode,
    };
    let batch = cfg.detection.batch_size;
    let test_seed = seed::derive(cfg.seed, TEST_NOISE_STREAM);
    progress("validation");
    let validation = score_windows(&scorer, &data.val, seed::derive(cfg.seed, VAL_NOISE_STREAM), batch)?;
    progress("normal");
    let detailed = score_windows_detailed(&scorer, &data.test, test_seed, batch)?;
    let n = detailed.len().max(1) as f64;
    let mut forecast = ForecastSummary {
        reconstruction_mae: 0.0,
        forecast_mae: 0.0,
        adjusted_forecast_mae: 0.0,
    };
    for ((s, out), w) in detailed.iter().zip(&data.test) {
        forecast.reconstruction_mae += s.delta_r / n;
        forecast.adjusted_forecast_mae += s.delta_f / n;
        forecast.forecast_mae += forecast_mae(w.horizon.view(), out.horizon.view())? / n;
    }
    let normal = detailed.into_iter().map(|(s, _)| s).collect();
    let mut sets = Vec::with_capacity(attacked.len());
    for set in attacked {
        progress(&format!("{} on {}", set.spec.kind, set.target));
        sets.push(ScoredSet {
            kind: set.spec.kind,
            target: set.target.clone(),
            scores: score_windows(&scorer, &set.windows, test_seed, batch)?,
        });
    }
    Ok(ScoreBook {
        validation,
        normal,
        attacked: sets,
        forecast,
    })
}

/// Detection quality for one attack, averaged over target groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: AttackKind,
    pub auc_r: Option<f64>,
    pub auc_f: Option<f64>,
    pub alpha: f64,
    /// Single detectors at the full budget `alpha`.
    pub tpr_r: Option<f64>,
    pub tpr_f: Option<f64>,
    /// OR-ensemble at the split budgets.
    pub tpr_ensemble: Option<f64>,
    pub fpr_r: Option<f64>,
    pub fpr_f: Option<f64>,
    pub fpr_ensemble: Option<f64>,
    /// Ensemble with thresholds calibrated on the validation split.
    pub calibrated_tpr: f64,
    pub calibrated_fpr: f64,
    /// Lowest per-group AUCs (multi-user runs).
    pub min_auc_r: Option<f64>,
    pub min_auc_f: Option<f64>,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerUserMatrix {
    pub users: Vec<String>,
    pub attacks: Vec<AttackKind>,
    /// `[user][attack]`
    pub auc_r: Vec<Vec<f64>>,
    pub auc_f: Vec<Vec<f64>>,
    pub tpr_ensemble: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_auc_r: Option<f64>,
    pub mean_auc_f: Option<f64>,
    pub mean_tpr_r: Option<f64>,
    pub mean_tpr_f: Option<f64>,
    pub mean_tpr_ensemble: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint_id: String,
    pub mode: String,
    pub n_params: usize,
    pub epochs_run: Option<usize>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub dataset: DatasetManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub thresholds: DetectorThresholds,
    pub rows: Vec<AttackRow>,
    pub summary: Summary,
    pub forecast: ForecastSummary,
    pub per_user: Option<PerUserMatrix>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

struct GroupMetrics {
    auc_r: f64,
    auc_f: f64,
    tpr_r: f64,
    tpr_f: f64,
    fpr_r: f64,
    fpr_f: f64,
    tpr_e: f64,
    fpr_e: f64,
    cal_tpr: f64,
    cal_fpr: f64,
}

fn group_metrics(cfg: &ExperimentConfig, normal: &[AnomalyScore], attack: &[AnomalyScore], th: &DetectorThresholds) -> Result<GroupMetrics> {
    let alpha = cfg.detection.alpha;
    let r = |s: &[AnomalyScore]| s.iter().map(|x| x.delta_r).collect::<Vec<_>>();
    let f = |s: &[AnomalyScore]| s.iter().map(|x| x.delta_f).collect::<Vec<_>>();
    let pairs = |s: &[AnomalyScore]| s.iter().map(|x| (x.delta_r, x.delta_f)).collect::<Vec<_>>();
    let ar = alpha_tpr(&r(normal), &r(attack), alpha)?;
    let af = alpha_tpr(&f(normal), &f(attack), alpha)?;
    let e = ensemble_alpha_tpr(&pairs(normal), &pairs(attack), alpha, cfg.detection.split)?;
    if e.fpr > alpha + 1e-12 {
        return Err(Error::BadRange(format!("ensemble FPR {} exceeds alpha {alpha}", e.fpr)));
    }
    let rate = |s: &[AnomalyScore]| s.iter().filter(|x| ensemble_decide(x, th).is_anomaly()).count() as f64 / s.len().max(1) as f64;
    Ok(GroupMetrics {
        auc_r: roc_auc(&r(normal), &r(attack))?.auc,
        auc_f: roc_auc(&f(normal), &f(attack))?.auc,
        tpr_r: ar.tpr,
        tpr_f: af.tpr,
        fpr_r: ar.fpr,
        fpr_f: af.fpr,
        tpr_e: e.tpr,
        fpr_e: e.fpr,
        cal_tpr: rate(attack),
        cal_fpr: rate(normal),
    })
}

/// Builds the report from scores. Rows follow the order of `cfg.attacks`.
pub fn evaluate(cfg: &ExperimentConfig, book: &ScoreBook, metadata: RunMetadata) -> Result<EvalReport> {
    let thresholds = calibrate_thresholds(&book.validation, cfg.detection.alpha, cfg.detection.split)?;
    let want_auc = cfg.metrics.contains(&Metric::Auc);
    let want_tpr = cfg.metrics.contains(&Metric::AlphaTpr);
    let mut kinds: Vec<AttackKind> = Vec::new();
    for a in &cfg.attacks {
        if !kinds.contains(&a.kind) {
            kinds.push(a.kind);
        }
    }
    let mut targets: Vec<String> = Vec::new();
    for s in &book.attacked {
        if !targets.contains(&s.target) {
            targets.push(s.target.clone());
        }
    }
    let mut matrix = PerUserMatrix {
        users: targets.clone(),
        attacks: kinds.clone(),
        auc_r: vec![vec![f64::NAN; kinds.len()]; targets.len()],
        auc_f: vec![vec![f64::NAN; kinds.len()]; targets.len()],
        tpr_ensemble: vec![vec![f64::NAN; kinds.len()]; targets.len()],
    };
    let mut rows = Vec::with_capacity(kinds.len());
    for (k, &kind) in kinds.iter().enumerate() {
        let mut ms = Vec::new();
        for set in book.attacked.iter().filter(|s| s.kind == kind) {
            let m = group_metrics(cfg, &book.normal, &set.scores, &thresholds)?;
            let u = targets.iter().position(|t| *t == set.target).expect("target listed");
            matrix.auc_r[u][k] = m.auc_r;
            matrix.auc_f[u][k] = m.auc_f;
            matrix.tpr_ensemble[u][k] = m.tpr_e;
            ms.push(m);
        }
        if ms.is_empty() {
            continue;
        }
        let avg = |f: fn(&GroupMetrics) -> f64| mean(&ms.iter().map(f).collect::<Vec<_>>());
        let min = |f: fn(&GroupMetrics) -> f64| ms.iter().map(f).fold(f64::INFINITY, f64::min);
        let auc = |v: f64| want_auc.then_some(v);
        let tpr = |v: f64| want_tpr.then_some(v);
        rows.push(AttackRow {
            attack: kind,
            auc_r: auc(avg(|m| m.auc_r)),
            auc_f: auc(avg(|m| m.auc_f)),
            alpha: cfg.detection.alpha,
            tpr_r: tpr(avg(|m| m.tpr_r)),
            tpr_f: tpr(avg(|m| m.tpr_f)),
            tpr_ensemble: tpr(avg(|m| m.tpr_e)),
            fpr_r: tpr(avg(|m| m.fpr_r)),
            fpr_f: tpr(avg(|m| m.fpr_f)),
            fpr_ensemble: tpr(avg(|m| m.fpr_e)),
            calibrated_tpr: avg(|m| m.cal_tpr),
            calibrated_fpr: avg(|m| m.cal_fpr),
            min_auc_r: (want_auc && ms.len() > 1).then(|| min(|m| m.auc_r)),
            min_auc_f: (want_auc && ms.len() > 1).then(|| min(|m| m.auc_f)),
            groups: ms.len(),
        });
    }
    let col = |f: fn(&AttackRow) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = rows.iter().map(f).collect();
        v.filter(|v| !v.is_empty()).map(|v| mean(&v))
    };
    let summary = Summary {
        mean_auc_r: col(|r| r.auc_r),
        mean_auc_f: col(|r| r.auc_f),
        mean_tpr_r: col(|r| r.tpr_r),
        mean_tpr_f: col(|r| r.tpr_f),
        mean_tpr_ensemble: col(|r| r.tpr_ensemble),
    };
    Ok(EvalReport {
        metadata,
        thresholds,
        rows,
        summary,
        forecast: book.forecast,
        per_user: (is_multi_user(cfg) && want_auc).then_some(matrix),
    })
}

/// Where to write artifacts and whether to print progress.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<std::path::PathBuf>,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub model: EtdModel,
    pub trace: Option<TrainTrace>,
    pub scores: ScoreBook,
    pub checkpoint: Checkpoint,
}

fn checkpoint_id(ckpt: &Checkpoint) -> Result<String> {
    Ok(hex::encode(&Sha256::digest(ckpt.to_bytes()?)[..8]))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Full pipeline from configuration to report.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    cfg.validate().stage("config")?;
    let log = |msg: &str| {
        if opts.verbose {
            eprintln!("{msg}");
        }
    };
    let schedule = DiffusionSchedule::from_spec(cfg.schedule).stage("config")?;
    let series = load_data(cfg).stage("ingest")?;
    let data = prepare(cfg, &series, None).stage("split")?;
    log(&format!(
        "windows: {} train, {} val, {} test",
        data.train.len(),
        data.val.len(),
        data.test.len()
    ));
    let outcome = train_model(cfg, &data, &schedule, |row| {
        log(&format!(
            "epoch {:>3}  train {:.5}  val {:.5}",
            row.epoch, row.train_loss, row.val_loss
        ))
    })
    .stage("train")?;
    let checkpoint = Checkpoint::new(
        &outcome.model,
        effective_train_config(cfg),
        schedule.clone(),
        data.stats.clone(),
        data.attributes().to_vec(),
        data.manifest.interval_minutes,
    );
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("report")?;
        save_checkpoint(&dir.join("checkpoint.bin"), &checkpoint).stage("train")?;
        outcome.trace.write_csv(&dir.join("trace.csv")).stage("train")?;
    }
    let fit_info = (outcome.trace.len(), outcome.best_epoch, outcome.best_val_loss);
    let mut result = evaluate_model(cfg, &data, &outcome.model, &schedule, checkpoint, Some(fit_info), opts)?;
    if let (Some(dir), true) = (&opts.out_dir, cfg.plots) {
        let pts = |f: fn(&crate::model::TraceRow) -> f64| outcome.trace.rows.iter().map(|r| (r.epoch as f64, f(r))).collect::<Vec<_>>();
        let svg = plot::line_chart(
            "Convergence",
            "epoch",
            "loss",
            &[("train", pts(|r| r.train_loss)), ("validation", pts(|r| r.val_loss))],
        );
        write_file(&dir.join("convergence.svg"), svg).stage("report")?;
    }
    result.trace = Some(outcome.trace);
    Ok(result)
}

/// Attack, score, evaluate and write artifacts for an already trained model.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    model: &EtdModel,
    schedule: &DiffusionSchedule,
    checkpoint: Checkpoint,
    fit_info: Option<(usize, usize, f64)>,
    opts: &RunOptions,
) -> Result<ExperimentOutcome> {
    let log = |msg: &str| {
        if opts.verbose {
            eprintln!("{msg}");
        }
    };
    let attacked = build_attack_sets(cfg, data).stage("attack")?;
    let book = score_all(cfg, data, model, schedule, &attacked, |what| log(&format!("scoring {what}"))).stage("score")?;
    let metadata = RunMetadata {
        config_hash: cfg.hash().stage("report")?,
        seed: cfg.seed,
        checkpoint_id: checkpoint_id(&checkpoint).stage("report")?,
        mode: cfg.detection.mode.to_string(),
        n_params: model.n_params(),
        epochs_run: fit_info.map(|f| f.0),
        best_epoch: fit_info.map(|f| f.1),
        best_val_loss: fit_info.map(|f| f.2),
        dataset: data.manifest.clone(),
    };
    let report = evaluate(cfg, &book, metadata).stage("evaluate")?;
    if let Some(dir) = &opts.out_dir {
        write_artifacts(cfg, dir, &report, &book).stage("report")?;
    }
    Ok(ExperimentOutcome {
        report,
        model: model.clone(),
        trace: None,
        scores: book,
        checkpoint,
    })
}

fn write_artifacts(cfg: &ExperimentConfig, dir: &Path, report: &EvalReport, book: &ScoreBook) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfg.save(&dir.join("config.json"))?;
    write_file(&dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    write_score_files(cfg, dir, book, &report.thresholds)
}

/// Writes `thresholds.json`, `scores_validation.csv`, one
/// `scores_<attack>.csv` per attack and, with plots enabled, ROC curves and
/// score histograms.
pub fn write_score_files(cfg: &ExperimentConfig, dir: &Path, book: &ScoreBook, th: &DetectorThresholds) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("thresholds.json"), serde_json::to_string_pretty(th)?)?;
    let val: Vec<(AnomalyScore, &str)> = book.validation.iter().map(|s| (*s, "validation")).collect();
    write_scores_csv(&dir.join("scores_validation.csv"), &val, th)?;
    for kind in AttackKind::ALL.into_iter().filter(|k| book.attacked.iter().any(|s| s.kind == *k)) {
        let sets: Vec<&ScoredSet> = book.attacked.iter().filter(|s| s.kind == kind).collect();
        let labels: Vec<String> = sets
            .iter()
            .map(|s| if sets.len() > 1 { format!("{kind}:{}", s.target) } else { kind.to_string() })
            .collect();
        let mut rows: Vec<(AnomalyScore, &str)> = book.normal.iter().map(|s| (*s, "normal")).collect();
        for (s, label) in sets.iter().zip(&labels) {
            rows.extend(s.scores.iter().map(|x| (*x, label.as_str())));
        }
        write_scores_csv(&dir.join(format!("scores_{kind}.csv")), &rows, th)?;
        if cfg.plots {
            let attack: Vec<AnomalyScore> = sets.iter().flat_map(|s| s.scores.iter().copied()).collect();
            let r = |s: &[AnomalyScore]| s.iter().map(|x| x.delta_r).collect::<Vec<_>>();
            let f = |s: &[AnomalyScore]| s.iter().map(|x| x.delta_f).collect::<Vec<_>>();
            let roc_r = roc_auc(&r(&book.normal), &r(&attack))?;
            let roc_f = roc_auc(&f(&book.normal), &f(&attack))?;
            let svg = plot::line_chart(
                &format!("ROC, {kind}"),
                "false positive rate",
                "true positive rate",
                &[
                    (&format!("delta_R (AUC {:.3})", roc_r.auc), roc_r.points),
                    (&format!("delta_F (AUC {:.3})", roc_f.auc), roc_f.points),
                ],
            );
            write_file(&dir.join(format!("roc_{kind}.svg")), svg)?;
            for (name, pick) in [("delta_r", r as fn(&[AnomalyScore]) -> Vec<f64>), ("delta_f", f)] {
                let (n, a) = (pick(&book.normal), pick(&attack));
                let svg = plot::histogram(&format!("{name}, {kind}"), name, &[("normal", &n), (kind.as_str(), &a)], 30);
                write_file(&dir.join(format!("hist_{name}_{kind}.svg")), svg)?;
            }
        }
    }
    Ok(())
}
