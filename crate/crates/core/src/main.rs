use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use etdiff::attacks::AttackKind;
use etdiff::dataio::{synth_grid_series, write_dataset_dir, write_series_csv, write_windows_csv, SeriesFormat, VarianceLevel};
use etdiff::detect::calibrate_thresholds;
use etdiff::diffusion::DiffusionSchedule;
use etdiff::error::{Error, Result, StageContext};
use etdiff::harness::{
    build_attack_sets, evaluate_model, load_data, prepare, run_experiment, score_all, train_model, write_score_files,
    DataSource, ExperimentConfig, RunOptions,
};
use etdiff::model::{load_checkpoint, save_checkpoint, Checkpoint, InferenceMode};

/// Energy-theft detection with a conditional diffusion model.
#[derive(Debug, Parser)]
#[command(name = "etdiff", version)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Inference mode for scoring: `full` or `partial:<N1>`.
    #[arg(long, global = true)]
    mode: Option<InferenceMode>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Print progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a meter CSV, split, normalize and write windowed datasets.
    Ingest {
        /// Input CSV; defaults to the configured data source.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "generic_csv")]
        format: SeriesFormat,
    },
    /// Generate a synthetic meter series as CSV.
    Synth {
        #[arg(long, default_value_t = 60)]
        days: usize,
        #[arg(long, default_value_t = 60)]
        interval: u32,
        #[arg(long, default_value = "low")]
        level: VarianceLevel,
        /// Output file; defaults to `<out>/synth.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a model and write `checkpoint.bin` and `trace.csv`.
    Train,
    /// Write attacked copies of the test windows.
    Attack {
        /// Only this attack; all configured attacks otherwise.
        #[arg(long)]
        kind: Option<AttackKind>,
    },
    /// Score validation, normal and attacked windows with a checkpoint.
    Score {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score with a checkpoint and write `report.json`.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the whole pipeline: train, attack, score, evaluate and plot.
    Report {
        /// Emit SVG plots.
        #[arg(long)]
        plots: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config <path>".into()))?;
    let mut cfg = ExperimentConfig::load(path).stage("config")?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.detection.mode = mode;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn options(cli: &Cli) -> RunOptions {
    RunOptions {
        out_dir: Some(cli.out.clone()),
        verbose: cli.verbose,
    }
}

fn checkpoint_for(cli: &Cli, path: &Option<PathBuf>) -> Result<Checkpoint> {
    let path = path.clone().unwrap_or_else(|| cli.out.join("checkpoint.bin"));
    load_checkpoint(&path).stage("checkpoint")
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            days,
            interval,
            level,
            output,
        } => {
            let series = synth_grid_series(*days, *interval, *level, cli.seed.unwrap_or(0)).stage("synth")?;
            let path = output.clone().unwrap_or_else(|| cli.out.join("synth.csv"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_series_csv(&series, &path).stage("synth")?;
            println!("wrote {} rows to {}", series.len(), path.display());
        }
        Command::Ingest { input, format } => {
            let mut cfg = match &cli.config {
                Some(_) => load_config(&cli)?,
                None if input.is_some() => ExperimentConfig::synth(1, 60, VarianceLevel::Low),
                None => return Err(Error::Config("ingest needs --input or --config".into())),
            };
            if let Some(path) = input {
                cfg.data.source = DataSource::File {
                    path: path.clone(),
                    format: *format,
                };
            }
            let series = load_data(&cfg).stage("ingest")?;
            let data = prepare(&cfg, &series, None).stage("split")?;
            let dir = cli.out.join("dataset");
            write_dataset_dir(&dir, &data.splits, [&data.train, &data.val, &data.test], &data.manifest).stage("ingest")?;
            println!(
                "{} rows; windows {} train / {} val / {} test; written to {}",
                series.len(),
                data.train.len(),
                data.val.len(),
                data.test.len(),
                dir.display()
            );
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let schedule = DiffusionSchedule::from_spec(cfg.schedule).stage("config")?;
            let data = prepare(&cfg, &load_data(&cfg).stage("ingest")?, None).stage("split")?;
            let verbose = cli.verbose;
            let outcome = train_model(&cfg, &data, &schedule, |r| {
                if verbose {
                    eprintln!("epoch {:>3}  train {:.5}  val {:.5}", r.epoch, r.train_loss, r.val_loss);
                }
            })
            .stage("train")?;
            create_dir(&cli.out)?;
            let ckpt = Checkpoint::new(
                &outcome.model,
                etdiff::harness::effective_train_config(&cfg),
                schedule,
                data.stats.clone(),
                data.attributes().to_vec(),
                data.manifest.interval_minutes,
            );
            save_checkpoint(&cli.out.join("checkpoint.bin"), &ckpt).stage("train")?;
            outcome.trace.write_csv(&cli.out.join("trace.csv")).stage("train")?;
            cfg.save(&cli.out.join("config.json"))?;
            println!(
                "trained {} epochs (best {} with validation loss {:.5}); checkpoint in {}",
                outcome.trace.len(),
                outcome.best_epoch,
                outcome.best_val_loss,
                cli.out.display()
            );
        }
        Command::Attack { kind } => {
            let mut cfg = load_config(&cli)?;
            if let Some(k) = kind {
                cfg.attacks.retain(|a| a.kind == *k);
                if cfg.attacks.is_empty() {
                    cfg.attacks.push(etdiff::attacks::AttackSpec::new(*k, 0));
                }
            }
            let data = prepare(&cfg, &load_data(&cfg).stage("ingest")?, None).stage("split")?;
            let sets = build_attack_sets(&cfg, &data).stage("attack")?;
            create_dir(&cli.out)?;
            write_windows_csv(&cli.out.join("windows_test.csv"), &data.test, data.attributes()).stage("attack")?;
            for set in &sets {
                let name = if sets.iter().filter(|s| s.spec.kind == set.spec.kind).count() > 1 {
                    format!("windows_{}_{}.csv", set.spec.kind, set.target)
                } else {
                    format!("windows_{}.csv", set.spec.kind)
                };
                write_windows_csv(&cli.out.join(&name), &set.windows, data.attributes()).stage("attack")?;
                println!("{name}: {} windows", set.windows.len());
            }
        }
        Command::Score { checkpoint } => {
            let cfg = load_config(&cli)?;
            let ckpt = checkpoint_for(&cli, checkpoint)?;
            let model = ckpt.to_model().stage("checkpoint")?;
            let data = prepare(&cfg, &load_data(&cfg).stage("ingest")?, Some(ckpt.norm_stats.clone())).stage("split")?;
            let sets = build_attack_sets(&cfg, &data).stage("attack")?;
            let verbose = cli.verbose;
            let book = score_all(&cfg, &data, &model, &ckpt.schedule, &sets, |w| {
                if verbose {
                    eprintln!("scoring {w}");
                }
            })
            .stage("score")?;
            let th = calibrate_thresholds(&book.validation, cfg.detection.alpha, cfg.detection.split).stage("score")?;
            write_score_files(&cfg, &cli.out, &book, &th).stage("score")?;
            println!("thresholds: delta_R > {:.6}, delta_F > {:.6}", th.th_r, th.th_f);
        }
        Command::Eval { checkpoint } => {
            let cfg = load_config(&cli)?;
            let ckpt = checkpoint_for(&cli, checkpoint)?;
            let model = ckpt.to_model().stage("checkpoint")?;
            let data = prepare(&cfg, &load_data(&cfg).stage("ingest")?, Some(ckpt.norm_stats.clone())).stage("split")?;
            let schedule = ckpt.schedule.clone();
            let out = evaluate_model(&cfg, &data, &model, &schedule, ckpt, None, &options(&cli))?;
            print_report(&out.report);
        }
        Command::Report { plots } => {
            let mut cfg = load_config(&cli)?;
            cfg.plots |= *plots;
            let out = run_experiment(&cfg, &options(&cli))?;
            print_report(&out.report);
        }
    }
    Ok(())
}

fn print_report(report: &etdiff::harness::EvalReport) {
    let f = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    println!("attack  AUC_R  AUC_F  TPR_R  TPR_F  TPR_E  FPR_E");
    for r in &report.rows {
        println!(
            "{:<6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            r.attack.as_str(),
            f(r.auc_r),
            f(r.auc_f),
            f(r.tpr_r),
            f(r.tpr_f),
            f(r.tpr_ensemble),
            f(r.fpr_ensemble)
        );
    }
    let s = &report.summary;
    println!(
        "mean   {:>6} {:>6} {:>6} {:>6} {:>6}",
        f(s.mean_auc_r),
        f(s.mean_auc_f),
        f(s.mean_tpr_r),
        f(s.mean_tpr_f),
        f(s.mean_tpr_ensemble)
    );
}
