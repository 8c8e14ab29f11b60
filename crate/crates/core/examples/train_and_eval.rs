//! Train a small decoder on synthetic facts and measure how many it memorized.
//!
//! ```text
//! cargo run --release --example train_and_eval
//! ```

use factlab::data::{RenderOptions, TrainingSet};
use factlab::evaluator::{memorization_rate_with, EvalOptions};
use factlab::factgen::{company_schema, select, synth_corpus, TemplateStyle};
use factlab::model::{count_params, init_model, ModelConfig, ModelState};
use factlab::trainer::{train, TrainConfig};

fn main() -> factlab::Result<()> {
    let schema = select(&company_schema(TemplateStyle::Compact), &["register_no", "status"])?;
    let corpus = synth_corpus(&schema, 100, 1)?;
    let set = TrainingSet::from_dataset(&corpus, RenderOptions::default())?;

    let cfg = ModelConfig::desk(2, 32, 2).with_seed(1);
    let (total, non_embed) = count_params(&cfg);
    println!("model: {total} parameters, {non_embed} non-embed; {} facts", set.len());

    let mut model: ModelState<f32> = init_model(&cfg, cfg.seed)?;
    let tc = TrainConfig {
        epochs: 60,
        batch_size: 4,
        learning_rate: 3e-3,
        grad_clip: Some(1.0),
        eval_every: 10,
        seed: 1,
        ..Default::default()
    };
    let report = train(&mut model, &set, &tc)?;
    for s in &report.snapshots {
        println!("epoch {:>3}  MR {:.3}", s.epoch, s.mr);
    }
    println!("final loss {:.4} in {:.1}s", report.final_loss().unwrap_or(f64::NAN), report.wall_clock_secs);

    let eval = memorization_rate_with(&model, &set, EvalOptions { sample_predictions: 5 })?;
    for (attr, g) in &eval.per_attribute {
        println!("  {attr}: {}/{}", g.correct, g.count);
    }
    for p in &eval.predictions {
        println!("  {} / {}: {:?} (gold {:?})", p.key, p.attribute, p.prediction, p.gold);
    }
    Ok(())
}
