use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::imaging::AugmentPolicy;
use crate::models::{Arch, Head, ModelSpec};
use crate::simgel::TactileImage;

fn toy_config() -> TrainConfig {
    TrainConfig {
        epochs: 80,
        batch_size: 2,
        learning_rate: 0.01,
        augment: AugmentPolicy::default(),
        input_size: (16, 16),
        ..TrainConfig::classification()
    }
}

fn toy_samples() -> Vec<Sample<f64>> {
    let a = TactileImage::from_fn(16, 16, |r, _, ch| if r < 8 { 0.8 } else { 0.2 + 0.1 * ch as f64 });
    let b = TactileImage::from_fn(16, 16, |_, c, _| if c < 8 { 0.1 } else { 0.7 });
    vec![Sample { image: a, target: Target::Class(0) }, Sample { image: b, target: Target::Class(2) }]
}

#[test]
fn memorizes_two_images() {
    let spec = ModelSpec::new(Arch::Cnn3, Head::Classify4).unwrap();
    let out = train_network(&spec, &toy_samples(), &[], &toy_config()).unwrap();
    let last = out.history.epochs.last().unwrap();
    assert!(last.train_loss < 0.01, "loss {}", last.train_loss);
    assert_eq!(out.best_epoch, 80);
}

#[test]
fn huge_learning_rate_diverges() {
    let spec = ModelSpec::new(Arch::Cnn3, Head::Classify4).unwrap();
    let cfg = TrainConfig { learning_rate: 1e3, ..toy_config() };
    match train_network(&spec, &toy_samples(), &[], &cfg) {
        Err(Error::Diverged(r)) => assert!(r.epoch >= 1 && r.threshold == 1e3),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn training_is_deterministic() {
    let spec = ModelSpec::new(Arch::Cnn3, Head::Classify4).unwrap();
    let cfg = TrainConfig { epochs: 5, augment: AugmentPolicy::photometric(0.05, 0.1), ..toy_config() };
    let a = train_network(&spec, &toy_samples(), &toy_samples(), &cfg).unwrap();
    let b = train_network(&spec, &toy_samples(), &toy_samples(), &cfg).unwrap();
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
}

#[test]
fn clipping_bounds_every_step() {
    let spec = ModelSpec::new(Arch::Cnn5, Head::Classify4).unwrap();
    let cfg = TrainConfig { epochs: 3, grad_clip: Some(0.05), ..toy_config() };
    let out = train_network(&spec, &toy_samples(), &[], &cfg).unwrap();
    for e in &out.history.epochs {
        assert!(e.max_grad_norm < 0.05, "{e:?}");
    }
    assert!(out.history.epochs.iter().any(|e| e.max_raw_grad_norm > 0.05));
}

#[test]
fn regression_rejects_geometric_augmentation() {
    let cfg = TrainConfig { augment: TrainConfig::classification().augment, ..TrainConfig::regression() };
    assert!(cfg.validate(Head::RegressPosForce).is_err());
    assert!(TrainConfig::regression().validate(Head::RegressPosForce).is_ok());
    assert_eq!(TrainConfig::regression().grad_clip, Some(5.0));
}

#[test]
fn label_kind_mismatch_is_rejected() {
    let spec = ModelSpec::new(Arch::Cnn3, Head::RegressPosForce).unwrap();
    let cfg = TrainConfig { augment: AugmentPolicy::default(), ..toy_config() };
    assert!(matches!(train_network(&spec, &toy_samples(), &[], &cfg), Err(Error::LabelKind(_))));
}

#[test]
fn perfect_and_constant_classifiers() {
    let truth = [0, 1, 2, 3, 0, 1, 2, 3];
    let perfect = ClassificationReport::from_predictions(4, &truth, &truth).unwrap();
    assert_eq!(perfect.overall_accuracy, 1.0);
    assert!(perfect.per_class_accuracy.iter().all(|&a| a == Some(1.0)));
    let constant = ClassificationReport::from_predictions(4, &truth, &[0; 8]).unwrap();
    assert_eq!(constant.overall_accuracy, 0.25);
    assert_eq!(constant.per_class_accuracy, vec![Some(1.0), Some(0.0), Some(0.0), Some(0.0)]);
    assert_eq!(constant.confusion[3][0], 2);
    let absent = ClassificationReport::from_predictions(4, &[0, 0], &[0, 1]).unwrap();
    assert_eq!(absent.per_class_accuracy[2], None);
}

#[test]
fn regression_offset_shows_up_as_mae() {
    let truth = [(20.0, 5.0), (30.0, 10.0), (40.0, 15.0)];
    let pred: Vec<_> = truth.iter().map(|&(p, f)| (p + 2.0, f - 1.0)).collect();
    let r = RegressionReport::from_predictions(&truth, &pred).unwrap();
    assert!((r.mae_position_mm - 2.0).abs() < 1e-12);
    assert!((r.mae_force_n - 1.0).abs() < 1e-12);
    assert!(RegressionReport::from_predictions(&truth, &pred[..2]).is_err());
}

#[test]
fn table_formatting() {
    let truth: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let mut pred = truth.clone();
    pred[1] = 0;
    let r = ClassificationReport::from_predictions(4, &truth, &pred).unwrap();
    let table = classification_table(&[("GoogLeNet", &r)]);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Model"));
    assert!(lines[0].contains("Overall") && lines[0].contains("Almonds"));
    assert!(lines[1].starts_with("GoogLeNet"));
    assert!(lines[1].contains("97.5%"));
    assert!(lines[1].contains("90.0%"));

    let rr = RegressionReport { mae_position_mm: 2.0249, mae_force_n: 1.1811, samples: 3 };
    let t = regression_table(&[("5-layer CNN", &rr)]);
    assert!(t.lines().next().unwrap().contains("Contact Position Error (mm)"));
    assert!(t.contains("2.02") && t.contains("1.18"));
    assert_eq!(regression_csv(&[("cnn5", &rr)]), "model,position_mae_mm,force_mae_n\ncnn5,2.024900,1.181100\n");
}

#[test]
fn ablation_rows_follow_arch_order() {
    let mut rows = vec![(Arch::Knn, "k"), (Arch::Cnn3, "a"), (Arch::SvmRbf, "r"), (Arch::Cnn3, "b")];
    sort_rows_by_arch(&mut rows);
    assert_eq!(rows.iter().map(|r| r.1).collect::<String>(), "abrk");
}

#[test]
fn history_csv_layout() {
    let h = History {
        epochs: vec![EpochStats {
            epoch: 1,
            train_loss: 0.5,
            val_metric: 0.25,
            max_grad_norm: 0.0,
            max_raw_grad_norm: 0.0,
        }],
    };
    assert_eq!(h.to_csv(), "epoch,train_loss,val_metric\n1,0.500000000,0.250000000\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accuracy_bounds(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
        let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let r = ClassificationReport::from_predictions(4, &t, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.overall_accuracy));
        let total: usize = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total, t.len());
        let diag: usize = (0..4).map(|i| r.confusion[i][i]).sum();
        prop_assert!((diag as f64 / t.len() as f64 - r.overall_accuracy).abs() < 1e-12);
    }

    #[test]
    fn mae_is_nonnegative_and_zero_on_identity(
        pts in prop::collection::vec((10.0..50.0f64, 0.0..25.0f64), 1..30),
    ) {
        let r = RegressionReport::from_predictions(&pts, &pts).unwrap();
        prop_assert_eq!(r.mae_position_mm, 0.0);
        prop_assert_eq!(r.mae_force_n, 0.0);
    }
}
