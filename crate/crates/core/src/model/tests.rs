use chrono::NaiveDate;
use ndarray::{s, Array2};
use rand::Rng;

use super::*;
use crate::dataio::{make_covariates, WindowLabel, WindowPair};
use crate::diffusion::{DiffusionSchedule, NoisePredictor};
use crate::error::Error;
use crate::seed;

pub(crate) fn tiny_config(m: usize, l: usize, t: usize) -> ModelConfig {
    ModelConfig {
        attributes: m,
        context_len: l,
        horizon_len: t,
        hidden: 5,
        predictor: PredictorConfig {
            residual_channels: 4,
            residual_blocks: 1,
            dilation_cycle: 1,
            step_embedding: 6,
            step_hidden: 5,
        },
        ..ModelConfig::default()
    }
}

pub(crate) fn toy_window(origin: usize, l: usize, t: usize, m: usize, salt: u64) -> WindowPair {
    let start = NaiveDate::from_ymd_opt(2014, 1, 6).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let ts: Vec<_> = (0..l + t)
        .map(|k| start + chrono::Duration::hours((origin + k) as i64))
        .collect();
    let mut rng = seed::stream_rng(salt, origin as u64);
    let full = Array2::from_shape_fn((l + t, m), |(k, j)| {
        ((origin + k) as f64 * std::f64::consts::TAU / 24.0 + j as f64).sin() + 0.1 * rng.gen_range(-1.0..1.0)
    });
    WindowPair {
        context: full.slice(s![..l, ..]).to_owned(),
        horizon: full.slice(s![l.., ..]).to_owned(),
        covariates: make_covariates(&ts),
        origin_index: origin,
        origin_timestamp: ts[0],
        label: WindowLabel::Normal,
    }
}

fn sched() -> DiffusionSchedule {
    DiffusionSchedule::new(50, 1e-4, 0.05).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let cfg = tiny_config(2, 4, 4);
    let mut model = EtdModel::new(cfg, 11).unwrap();
    let s = sched();
    let windows: Vec<_> = (0..3).map(|i| toy_window(i * 5, 4, 4, 2, 3)).collect();
    let refs: Vec<&WindowPair> = windows.iter().collect();
    let batch = TrainBatch::draw(&refs, &s, &mut seed::rng(5)).unwrap();
    let gamma = 0.7;
    let (_, grads) = model.loss_and_grad(&batch, &s, gamma).unwrap();
    let mut rng = seed::rng(99);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let i = rng.gen_range(0..model.n_params());
        let orig = model.params()[i];
        let mut at = |d: f64| {
            model.params_mut()[i] = orig + d;
            let v = model.loss(&batch, &s, gamma).unwrap().total;
            model.params_mut()[i] = orig;
            v
        };
        // fourth-order central difference
        let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        let rel = (grads[i] - numeric).abs() / grads[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn context_conditioning_shapes_and_causality() {
    let cfg = ModelConfig::default();
    let model = EtdModel::new(cfg, 1).unwrap();
    let w = toy_window(0, 24, 24, 1, 1);
    let cov = w.covariates.slice(s![..24, ..]);
    let (con, hand) = model.condition_context(w.context.view(), cov, 24).unwrap();
    assert_eq!(con.dim(), (24, 128));
    assert_eq!((hand.h.dim(), hand.c.dim()), ((1, 128), (1, 128)));
    let (again, _) = model.condition_context(w.context.view(), cov, 24).unwrap();
    assert_eq!(con, again);

    let mut x = w.context.clone();
    x[[9, 0]] += 3.0;
    let (pert, _) = model.condition_context(x.view(), cov, 24).unwrap();
    assert_eq!(con.slice(s![..9, ..]), pert.slice(s![..9, ..]));
    assert_ne!(con.row(9), pert.row(9));

    assert!(matches!(
        model.condition_context(w.context.view(), w.covariates.slice(s![..23, ..]), 24),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn horizon_conditioning_uses_handoff_and_covariates_only() {
    let model = EtdModel::new(ModelConfig::default(), 2).unwrap();
    let w = toy_window(3, 24, 24, 1, 2);
    let b = model.condition(&[&w]).unwrap();
    assert_eq!(b.con_horizon.dim(), (24, 128));

    let mut other = w.clone();
    other.horizon.mapv_inplace(|v| v * -4.0 + 1.0);
    assert_eq!(model.condition(&[&other]).unwrap().con_horizon, b.con_horizon);

    let direct = model
        .condition_horizon(&b.handoff, w.covariates.slice(s![24.., ..]), 24)
        .unwrap();
    assert_eq!(direct, b.con_horizon);

    let zero = Handoff {
        h: Array2::zeros((1, 128)),
        c: Array2::zeros((1, 128)),
    };
    let z = model.condition_horizon(&zero, Array2::zeros((24, 4)).view(), 24).unwrap();
    assert_eq!(z, model.condition_horizon(&zero, Array2::zeros((24, 4)).view(), 24).unwrap());
    assert_ne!(z, b.con_horizon);
}

#[test]
fn batched_conditioning_matches_single() {
    let model = EtdModel::new(tiny_config(2, 6, 3), 4).unwrap();
    let ws: Vec<_> = (0..3).map(|i| toy_window(i, 6, 3, 2, 4)).collect();
    let refs: Vec<&WindowPair> = ws.iter().collect();
    let all = model.condition(&refs).unwrap();
    for (b, w) in ws.iter().enumerate() {
        let one = model.condition(&[w]).unwrap();
        let diff_c = (&all.con_context.slice(s![b * 6..(b + 1) * 6, ..]) - &one.con_context).mapv(f64::abs).sum();
        let diff_h = (&all.con_horizon.slice(s![b * 3..(b + 1) * 3, ..]) - &one.con_horizon).mapv(f64::abs).sum();
        assert!(diff_c < 1e-12 && diff_h < 1e-12);
    }
}

#[test]
fn predictor_shape_determinism_and_step_dependence() {
    let model = EtdModel::new(ModelConfig::default(), 3).unwrap();
    let mut rng = seed::rng(1);
    let x = Array2::from_shape_simple_fn((24, 1), || rng.gen_range(-1.0..1.0));
    let con = Array2::from_shape_simple_fn((24, 128), || rng.gen_range(-1.0..1.0));
    let a = model.predict_noise(x.view(), con.view(), 24, 1).unwrap();
    assert_eq!(a.dim(), (24, 1));
    assert_eq!(a, model.predict_noise(x.view(), con.view(), 24, 1).unwrap());
    let b = model.predict_noise(x.view(), con.view(), 24, 50).unwrap();
    assert!((&a - &b).mapv(f64::abs).sum() > 1e-6);
    assert!(step_embedding(1, 64) != step_embedding(50, 64));

    let bound = model.bind(con.view()).unwrap();
    assert_eq!(bound.predict_noise(x.view(), con.view(), 24, 7).unwrap(), model.predict_noise(x.view(), con.view(), 24, 7).unwrap());
    assert!(matches!(
        model.predict_noise(x.view(), con.view(), 24, 0),
        Err(Error::StepOutOfRange { .. })
    ));
}

#[test]
fn loss_decomposes() {
    let s = sched();
    let model = EtdModel::new(tiny_config(1, 8, 8), 6).unwrap();
    let ws: Vec<_> = (0..4).map(|i| toy_window(i, 8, 8, 1, 6)).collect();
    let refs: Vec<&WindowPair> = ws.iter().collect();
    let batch = TrainBatch::draw(&refs, &s, &mut seed::rng(2)).unwrap();
    let p = model.loss(&batch, &s, 0.3).unwrap();
    assert!(p.total.is_finite() && p.total >= 0.0);
    assert!((p.total - (p.context + 0.3 * p.horizon)).abs() < 1e-9);
    assert_eq!(model.loss(&batch, &s, 0.0).unwrap().total, p.context);
}

#[test]
fn training_is_deterministic() {
    let s = sched();
    let ws: Vec<_> = (0..10).map(|i| toy_window(i * 2, 8, 8, 1, 7)).collect();
    let cfg = TrainConfig {
        batch_size: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = Trainer::new(EtdModel::new(tiny_config(1, 8, 8), 9).unwrap(), cfg.clone(), &s).unwrap();
        let losses: Vec<f64> = (1..=3).map(|e| t.epoch(&ws, e).unwrap()).collect();
        (losses, t.model.params().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn fit_single_epoch_trace() {
    let s = sched();
    let ws: Vec<_> = (0..6).map(|i| toy_window(i, 8, 8, 1, 8)).collect();
    let cfg = TrainConfig {
        max_epochs: 1,
        batch_size: 4,
        val_delta_every: 1,
        val_delta_windows: 2,
        val_delta_mode: InferenceMode::Partial(5),
        ..TrainConfig::default()
    };
    let model = EtdModel::new(tiny_config(1, 8, 8), 1).unwrap();
    let out = fit(model, &ws[..4], &ws[4..], &cfg, &s, |_| {}).unwrap();
    assert_eq!(out.trace.len(), 1);
    let row = out.trace.rows[0];
    assert!(row.train_loss.is_finite() && row.val_loss.is_finite());
    assert!(row.val_delta_r.unwrap() >= 0.0 && row.val_delta_f.unwrap() >= 0.0);
    assert!(matches!(
        fit(EtdModel::new(tiny_config(1, 8, 8), 1).unwrap(), &ws, &[], &cfg, &s, |_| {}),
        Err(Error::EmptyValidation)
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    out.trace.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("epoch,train_loss,val_loss,val_delta_r,val_delta_f,parallel\n1,"));
}

#[test]
fn fit_reduces_training_loss() {
    let s = sched();
    let ws: Vec<_> = (0..48).map(|i| toy_window(i, 8, 8, 1, 10)).collect();
    let cfg = TrainConfig {
        max_epochs: 30,
        batch_size: 8,
        val_delta_every: 0,
        convergence_patience: 30,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let mut model_cfg = tiny_config(1, 8, 8);
    model_cfg.hidden = 8;
    model_cfg.predictor.residual_channels = 8;
    model_cfg.predictor.residual_blocks = 2;
    let out = fit(EtdModel::new(model_cfg, 3).unwrap(), &ws[..40], &ws[40..], &cfg, &s, |_| {}).unwrap();
    let first = out.trace.rows[0].train_loss;
    let last = out.trace.rows.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "first {first}, last {last}");
}

#[test]
fn inference_modes() {
    let s = sched();
    let model = EtdModel::new(tiny_config(2, 6, 4), 2).unwrap();
    let w = toy_window(0, 6, 4, 2, 9);
    let same = reconstruct_and_forecast(
        &model,
        &s,
        w.context.view(),
        Some(w.horizon.view()),
        w.covariates.view(),
        InferenceMode::Partial(0),
        1,
    )
    .unwrap();
    assert_eq!((same.context, same.horizon), (w.context.clone(), w.horizon.clone()));

    let full = reconstruct_and_forecast(&model, &s, w.context.view(), None, w.covariates.view(), InferenceMode::Full, 1).unwrap();
    assert_eq!((full.context.dim(), full.horizon.dim()), ((6, 2), (4, 2)));
    assert!(full.context.iter().chain(full.horizon.iter()).all(|v| v.is_finite()));

    assert!(matches!(
        reconstruct_and_forecast(&model, &s, w.context.view(), None, w.covariates.view(), InferenceMode::Partial(20), 1),
        Err(Error::MissingObservedHorizon)
    ));
}

#[test]
fn batched_inference_matches_single_windows() {
    let s = sched();
    let model = EtdModel::new(tiny_config(1, 6, 4), 2).unwrap();
    let ws: Vec<_> = (0..3).map(|i| toy_window(i, 6, 4, 1, 9)).collect();
    let refs: Vec<&WindowPair> = ws.iter().collect();
    for mode in [InferenceMode::Full, InferenceMode::Partial(20)] {
        let batch = reconstruct_and_forecast_batch(&model, &s, &refs, mode, &[5, 6, 7]).unwrap();
        for (i, w) in ws.iter().enumerate() {
            let one = reconstruct_and_forecast(
                &model,
                &s,
                w.context.view(),
                Some(w.horizon.view()),
                w.covariates.view(),
                mode,
                5 + i as u64,
            )
            .unwrap();
            assert!((&one.context - &batch[i].context).mapv(f64::abs).sum() < 1e-10);
            assert!((&one.horizon - &batch[i].horizon).mapv(f64::abs).sum() < 1e-10);
        }
    }
}

#[test]
fn mode_parsing() {
    assert_eq!("full".parse::<InferenceMode>().unwrap(), InferenceMode::Full);
    assert_eq!("partial:20".parse::<InferenceMode>().unwrap(), InferenceMode::Partial(20));
    assert!("partial".parse::<InferenceMode>().is_err());
    assert_eq!(InferenceMode::default_partial(&sched()), InferenceMode::Partial(20));
    assert_eq!(serde_json::to_string(&InferenceMode::Partial(7)).unwrap(), "\"partial:7\"");
}

#[test]
fn checkpoint_round_trip() {
    let model = EtdModel::new(tiny_config(1, 4, 4), 1).unwrap();
    let stats = crate::dataio::NormStats {
        mean: vec![1.0],
        std: vec![2.0],
        source: "t".into(),
    };
    let ckpt = Checkpoint::new(&model, TrainConfig::default(), sched(), stats, vec!["energy".into()], 60);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_checkpoint(&path, &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_model().unwrap(), model);
    assert_eq!(back.covariates.len(), 4);

    let mut bytes = ckpt.to_bytes().unwrap();
    bytes.truncate(bytes.len() - 8);
    assert!(Checkpoint::from_bytes(&bytes).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
}
