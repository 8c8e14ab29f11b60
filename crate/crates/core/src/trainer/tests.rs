use std::collections::HashMap;

use super::*;
use crate::data::RenderOptions;
use crate::factgen::{company_schema, schema, synth_corpus, upsample, FactDataset, TemplateStyle};

fn corpus(keys: usize, seed: u64) -> FactDataset {
    let s = schema::select(&company_schema(TemplateStyle::Compact), &["status", "title"]).unwrap();
    synth_corpus(&s, keys, seed).unwrap()
}

fn set(keys: usize) -> TrainingSet {
    TrainingSet::from_dataset(&corpus(keys, 1), RenderOptions::default()).unwrap()
}

fn tiny() -> ModelConfig {
    ModelConfig::new(1, 16, 32, 2).with_seed(3)
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        epochs,
        ..Default::default()
    }
}

#[test]
fn step_arithmetic() {
    let one = TrainingSet {
        facts: set(1).facts[..1].to_vec(),
    };
    let mut m: ModelState<f32> = init_model(&tiny(), 0).unwrap();
    let r = train(&mut m, &one, &TrainConfig { batch_size: 32, ..cfg(1) }).unwrap();
    assert_eq!(r.steps, 1);
    let s = set(35);
    let r = train(&mut m, &s, &TrainConfig { batch_size: 32, ..cfg(3) }).unwrap();
    assert_eq!(r.steps, 3 * 70usize.div_ceil(32));
    assert_eq!(r.effective_examples, 70);
    assert!(matches!(train(&mut m, &s, &cfg(0)), Err(Error::Config(_))));
    assert!(matches!(
        train(&mut m, &s, &TrainConfig { learning_rate: 0.0, ..cfg(1) }),
        Err(Error::Config(_))
    ));
}

#[test]
fn same_seed_same_model() {
    let s = set(20);
    let run = || {
        let mut m: ModelState<f32> = init_model(&tiny(), 7).unwrap();
        let r = train(&mut m, &s, &cfg(3)).unwrap();
        (m, r.epochs)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert!(a.params.iter().zip(&b.params).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(ra, rb);
}

#[test]
fn loss_goes_down() {
    let s = set(10);
    let mut m: ModelState<f32> = init_model(&tiny(), 7).unwrap();
    let r = train(&mut m, &s, &TrainConfig { learning_rate: 1e-2, ..cfg(30) }).unwrap();
    let first = r.epochs[0].loss;
    let last = r.final_loss().unwrap();
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(r.epochs.iter().all(|e| e.loss.is_finite()));
}

/// Weighted facts and physically duplicated facts give bit-identical runs.
#[test]
fn weights_equal_duplication_in_training() {
    let ds = corpus(5, 2);
    let up = upsample(&ds, &HashMap::from([("status".to_string(), 3)])).unwrap();
    let weighted = TrainingSet::from_dataset(&up, RenderOptions::default()).unwrap();
    let dup = weighted.expanded();
    let mut a: ModelState<f32> = init_model(&tiny(), 1).unwrap();
    let mut b = a.clone();
    train(&mut a, &weighted, &cfg(3)).unwrap();
    train(&mut b, &dup, &cfg(3)).unwrap();
    assert!(a.params.iter().zip(&b.params).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn divergence_aborts() {
    let s = set(10);
    let mut m: ModelState<f32> = init_model(&tiny(), 1).unwrap();
    let r = train(
        &mut m,
        &s,
        &TrainConfig {
            learning_rate: 1e36,
            adamw: AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            ..cfg(5)
        },
    );
    assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
}

#[test]
fn snapshots_and_early_stop() {
    let s = set(4);
    let mut m: ModelState<f32> = init_model(&tiny(), 1).unwrap();
    let r = train(&mut m, &s, &TrainConfig { eval_every: 2, ..cfg(5) }).unwrap();
    let epochs: Vec<usize> = r.snapshots.iter().map(|x| x.epoch).collect();
    assert_eq!(epochs, vec![2, 4, 5]);

    let mut m: ModelState<f32> = init_model(&tiny(), 1).unwrap();
    let r = train(
        &mut m,
        &s,
        &TrainConfig {
            early_stop_mr: Some(0.0),
            ..cfg(5)
        },
    )
    .unwrap();
    assert_eq!(r.stopped_at, Some(1));
    assert_eq!(r.epochs.len(), 1);
}

#[test]
fn phased_bookkeeping() {
    let a = set(6);
    let b = TrainingSet::from_dataset(&corpus(6, 9), RenderOptions::default()).unwrap();
    let mut m: ModelState<f32> = init_model(&tiny(), 1).unwrap();
    let r = train_phased(&mut m, &[(&a, cfg(2)), (&b, cfg(3))]).unwrap();
    assert_eq!(r.phase_mr.len(), 2);
    assert!(r.phase_mr.iter().all(|row| row.len() == 2));
    assert_eq!(r.epochs.len(), 5);
    assert_eq!(r.epochs.last().unwrap().epoch, 5);

    let mut x: ModelState<f32> = init_model(&tiny(), 1).unwrap();
    let mut y = x.clone();
    let rp = train_phased(&mut x, &[(&a, cfg(2))]).unwrap();
    let rt = train(&mut y, &a, &cfg(2)).unwrap();
    assert_eq!(x, y);
    assert_eq!(rp.epochs, rt.epochs);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let s = set(12);
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let model_cfg = tiny();
    let c = TrainConfig {
        checkpoint_every: 1,
        eval_every: 2,
        ..cfg(4)
    };
    let (a, ra) = train_in_dir(&full, &model_cfg, &s, &c, serde_json::Value::Null).unwrap();
    let dir = RunDir::new(&full);
    assert_eq!(dir.latest_checkpoint().unwrap().unwrap().0, 4);
    let metrics = std::fs::read_to_string(dir.metrics_path()).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert!(metrics.starts_with("epoch,loss,lr,mr"));

    // simulate an interruption after epoch 2
    for e in [3, 4] {
        std::fs::remove_file(dir.checkpoint_path(e)).unwrap();
    }
    let (b, rb) = resume(&full, &s).unwrap();
    assert!(a.params.iter().zip(&b.params).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(ra.epochs, rb.epochs);
    assert_eq!(std::fs::read_to_string(dir.metrics_path()).unwrap(), metrics);

    // a finished run resumes to itself
    let (c2, _) = resume(&full, &s).unwrap();
    assert_eq!(c2, a);
}

#[test]
fn lr_lookup() {
    assert_eq!(default_learning_rate(641_024, false), 2e-3);
    assert_eq!(default_learning_rate(5_119_744, false), 7.5e-4);
    assert_eq!(default_learning_rate(5_119_744, true), 1.5e-3);
    assert_eq!(default_learning_rate(10, false), 2e-3);
}

#[test]
fn sweep_reports_every_rate() {
    let s = set(4);
    let pts = lr_sweep(&tiny(), &s, &cfg(2), &[1e-3, 1e-2]).unwrap();
    assert_eq!(pts.len(), 2);
    assert!(pts.iter().all(|p| (0.0..=1.0).contains(&p.mr)));
}
