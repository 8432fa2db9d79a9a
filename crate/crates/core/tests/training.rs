use aecf::data::{make_windows, LabelRule, SeriesFile, WindowSet};
use aecf::detector::{calibrate, score_windows};
use aecf::model::{AeModel, Architecture};
use aecf::train::{mean_huber, train, TrainConfig};
use aecf::Tensor;

/// Two phase-shifted sinusoids scaled into [0, 1].
fn sinusoid_set(rows: usize, phase: f64, window: usize) -> WindowSet {
    let t: Vec<f64> = (0..rows).map(|i| i as f64).collect();
    let a: Vec<f64> = t.iter().map(|v| 0.5 + 0.4 * (v / 8.0 + phase).sin()).collect();
    let b: Vec<f64> = t.iter().map(|v| 0.5 + 0.3 * (v / 8.0 + phase + 1.0).cos()).collect();
    let s = SeriesFile {
        source: "sine".into(),
        offset: 0,
        timestamps: t,
        channel_names: vec!["a".into(), "b".into()],
        channels: vec![a, b],
        labels: None,
    };
    make_windows(&s, window, 1, LabelRule::Any).unwrap()
}

fn small_arch() -> Architecture {
    Architecture::skab_scaled(2, 32, [16, 8], 4)
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 10,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_window_has_zero_loss_from_the_start() {
    let mut model = AeModel::build(&Architecture::skab(8, 64), 125).unwrap();
    let mut set = WindowSet::empty(8, 64, 1, (0..8).map(|i| format!("c{i}")).collect());
    set.windows.push(Tensor::zeros(&[8, 64]));
    set.labels.push(Some(false));
    set.provenance.push(aecf::data::Provenance {
        file: "zeros".into(),
        start: 0,
    });
    let history = train(&mut model, &set, &WindowSet::empty(8, 64, 1, set.channel_names.clone()), &config(1))
        .unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].train_loss, 0.0);
    assert_eq!(history[0].valid_loss, None);
}

#[test]
fn loss_falls_on_sinusoids() {
    let set = sinusoid_set(81, 0.0, 32);
    assert_eq!(set.len(), 50);
    let valid = sinusoid_set(60, 0.3, 32);
    let mut model = AeModel::build(&small_arch(), 3).unwrap();
    let before = mean_huber(&model, &set.windows, 1.0).unwrap();
    let history = train(&mut model, &set, &valid, &config(20)).unwrap();
    let after = mean_huber(&model, &set.windows, 1.0).unwrap();
    assert_eq!(history.len(), 20);
    assert!(after < before, "{after} >= {before}");
    assert!(history.last().unwrap().train_loss < history[0].train_loss);
    assert!(history.iter().all(|h| h.valid_loss.is_some()));
}

#[test]
fn same_seed_same_history_and_weights() {
    let set = sinusoid_set(81, 0.0, 32);
    let valid = sinusoid_set(50, 0.3, 32);
    let run = || {
        let mut model = AeModel::build(&small_arch(), 3).unwrap();
        let h = train(&mut model, &set, &valid, &config(4)).unwrap();
        (model, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
}

#[test]
fn amsgrad_run_is_deterministic_too() {
    let set = sinusoid_set(60, 0.0, 16);
    let arch = Architecture::industrial_scaled(2, 16, [4, 4], &[8, 6, 4, 3], [4, 4]);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::industrial()
    };
    let run = || {
        let mut m = AeModel::build(&arch, 42).unwrap();
        train(&mut m, &set, &WindowSet::empty(2, 16, 1, set.channel_names.clone()), &cfg).unwrap();
        m
    };
    assert_eq!(run(), run());
}

#[test]
fn one_small_step_reduces_the_sample_loss() {
    let full = sinusoid_set(40, 0.7, 32);
    for seed in 0..5 {
        let mut one = WindowSet::empty(2, 32, 1, full.channel_names.clone());
        one.windows.push(full.windows[seed as usize].clone());
        one.labels.push(None);
        one.provenance.push(full.provenance[0].clone());
        let mut model = AeModel::build(&small_arch(), seed).unwrap();
        let before = mean_huber(&model, &one.windows, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 1e-4,
            ..TrainConfig::default()
        };
        train(&mut model, &one, &WindowSet::empty(2, 32, 1, vec![]), &cfg).unwrap();
        let after = mean_huber(&model, &one.windows, 1.0).unwrap();
        assert!(after < before, "seed {seed}: {after} >= {before}");
    }
}

#[test]
fn anomalous_training_windows_rejected() {
    let mut set = sinusoid_set(40, 0.0, 32);
    set.labels[0] = Some(true);
    let mut model = AeModel::build(&small_arch(), 1).unwrap();
    let err = train(&mut model, &set, &WindowSet::empty(2, 32, 1, vec![]), &config(1)).unwrap_err();
    assert!(err.to_string().contains("normal"));
}

#[test]
fn trained_model_keeps_training_windows_below_threshold() {
    let set = sinusoid_set(200, 0.0, 32);
    let valid = sinusoid_set(120, 0.5, 32);
    let mut model = AeModel::build(&small_arch(), 11).unwrap();
    train(&mut model, &set, &valid, &config(15)).unwrap();
    let profile = calibrate(&model, &valid, 8.0).unwrap();
    let scores = score_windows(&model, &set.windows).unwrap();
    let below = scores.iter().filter(|s| !profile.is_anomalous(**s)).count();
    assert!(below as f64 >= 0.99 * scores.len() as f64, "{below}/{}", scores.len());
}
