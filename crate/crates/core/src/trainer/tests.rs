use super::*;
use crate::autodiff::Tape;
use crate::data::{synth_context_dataset, Split, SyntheticContextConfig};
use crate::vit::ModelConfig;

fn glyphs(classes: usize, n: usize) -> (ImageDataset, ImageDataset) {
    synth_context_dataset(&SyntheticContextConfig {
        image_size: 8,
        glyph_size: 3,
        class_count: classes,
        contextual: false,
        train_samples: n,
        test_samples: n / 2,
        seed: 4,
    })
    .unwrap()
}

fn model<T: Real>(classes: usize, seed: u64) -> VisionTransformer<T> {
    VisionTransformer::build(&ModelConfig::uniform(8, 4, 1, 8, 2, 1, classes), seed).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 1e-2,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_leave_model_untouched() {
    let (tr, te) = glyphs(3, 30);
    let mut m = model::<f32>(3, 1);
    let before = m.clone();
    assert!(train(&mut m, &tr, &te, &quick(0), None).unwrap().is_empty());
    assert_eq!(m, before);
}

#[test]
fn equal_seeds_give_identical_histories_and_models() {
    let (tr, te) = glyphs(3, 40);
    let run = || {
        let mut m = model::<f32>(3, 2);
        let h = train(&mut m, &tr, &te, &quick(2), None).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(m1, m2);
    assert!(h1.iter().zip(&h2).all(|(a, b)| a.same_values(b)));
    let mut other = model::<f32>(3, 2);
    let h3 = train(&mut other, &tr, &te, &TrainConfig { seed: 6, ..quick(2) }, None).unwrap();
    assert!(!h1[1].same_values(&h3[1]));
}

#[test]
fn training_reduces_loss_on_separable_glyphs() {
    let (tr, te) = glyphs(2, 128);
    let mut m = model::<f32>(2, 3);
    let cfg = TrainConfig {
        augmentation: AugmentationConfig::disabled(),
        ..quick(6)
    };
    let before = evaluate(&m, &tr).unwrap();
    let h = train(&mut m, &tr, &te, &cfg, None).unwrap();
    assert_eq!(h.len(), 6);
    assert!(h.last().unwrap().loss < before);
    assert!(h.last().unwrap().loss < h[0].loss);
    assert!(h.iter().all(|e| e.loss.is_finite() && e.val_loss >= 0.0));
}

#[test]
fn zero_classifier_gives_log_class_count() {
    let (tr, _) = glyphs(5, 37);
    let mut m = model::<f32>(5, 4);
    for name in ["classifier.weight", "classifier.bias"] {
        m.param_mut(name).unwrap().value_mut().fill_zero();
    }
    assert_eq!(evaluate(&m, &tr).unwrap(), 5f64.ln());
}

#[test]
fn evaluation_is_pure_and_order_invariant() {
    let (tr, _) = glyphs(3, 300);
    let m = model::<f32>(3, 5);
    let a = evaluate(&m, &tr).unwrap();
    assert_eq!(evaluate(&m, &tr).unwrap(), a);
    let reversed: Vec<usize> = (0..tr.len()).rev().collect();
    assert_eq!(evaluate(&m, &tr.select(&reversed)).unwrap(), a);
    let shuffled = epoch_order(tr.len(), 99, 0);
    assert_eq!(evaluate(&m, &tr.select(&shuffled)).unwrap(), a);
}

#[test]
fn evaluation_matches_tape_cross_entropy() {
    let (tr, _) = glyphs(3, 50);
    let m = model::<f64>(3, 6);
    let idx: Vec<usize> = (0..tr.len()).collect();
    let mut tape = Tape::inference();
    let logits = m.forward(&mut tape, &tr.batch(&idx)).unwrap();
    let loss = tape.cross_entropy(logits, tr.labels()).unwrap();
    let manual = tape.value(loss).item();
    assert!((evaluate(&m, &tr).unwrap() - manual).abs() < 1e-12);
}

#[test]
fn augmented_batches_are_reproducible_per_position() {
    let (tr, _) = glyphs(2, 20);
    let cfg = quick(1);
    let idx = [0, 3, 7];
    let a = training_batch::<f32>(&tr, &idx, &cfg, 2, 1).unwrap();
    assert_eq!(a, training_batch::<f32>(&tr, &idx, &cfg, 2, 1).unwrap());
    assert_ne!(a, training_batch::<f32>(&tr, &idx, &cfg, 2, 0).unwrap());
    assert_ne!(a, training_batch::<f32>(&tr, &idx, &cfg, 3, 1).unwrap());
    let plain = TrainConfig {
        augmentation: AugmentationConfig::disabled(),
        ..cfg
    };
    assert_eq!(training_batch::<f32>(&tr, &idx, &plain, 0, 0).unwrap(), tr.batch(&idx));
}

#[test]
fn metrics_log_has_header_and_rows() {
    let (tr, te) = glyphs(2, 20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.log");
    let mut log = MetricsLog::create(&path).unwrap();
    let mut m = model::<f32>(2, 7);
    let h = train(&mut m, &tr, &te, &quick(2), Some(&mut log)).unwrap();
    drop(log);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, vec![METRICS_HEADER, &h[0].log_row(), &h[1].log_row()]);
    assert!(lines[1].starts_with("1 "));
}

#[test]
fn mismatched_geometry_and_bad_config_are_rejected() {
    let (tr, te) = glyphs(3, 20);
    let mut wrong_classes = model::<f32>(4, 1);
    assert!(matches!(
        train(&mut wrong_classes, &tr, &te, &quick(1), None),
        Err(TrainError::Geometry { .. })
    ));
    let mut m = model::<f32>(3, 1);
    let bad = TrainConfig {
        batch_size: 0,
        ..quick(1)
    };
    assert!(matches!(
        train(&mut m, &tr, &te, &bad, None),
        Err(TrainError::Config(_))
    ));
    let empty = tr.take(0);
    assert!(matches!(
        train(&mut m, &empty, &te, &quick(1), None),
        Err(TrainError::Config(_))
    ));
    assert_eq!(te.split(), Split::Test);
}

#[test]
fn stable_mean_properties() {
    assert_eq!(stable_mean(&mut [0.1; 7]), 0.1);
    assert_eq!(stable_mean(&mut [3.0, 1.0, 2.0]), stable_mean(&mut [2.0, 3.0, 1.0]));
    assert!(stable_mean(&mut []).is_nan());
}
