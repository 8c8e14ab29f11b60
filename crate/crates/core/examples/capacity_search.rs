//! Find the number of facts a tiny model memorizes at a 95% rate.
//!
//! ```text
//! cargo run --release --example capacity_search
//! ```

use factlab::data::RenderOptions;
use factlab::factgen::{company_schema, select, synth_corpus, TemplateStyle};
use factlab::model::ModelConfig;
use factlab::scaling::{find_capacity, ProbeSetup, SearchOptions};
use factlab::trainer::TrainConfig;

fn main() -> factlab::Result<()> {
    let schema = select(&company_schema(TemplateStyle::Compact), &["status", "operator"])?;
    let corpus = synth_corpus(&schema, 1000, 11)?;
    let model = ModelConfig::desk(1, 32, 1);
    let train = TrainConfig {
        epochs: 40,
        batch_size: 4,
        learning_rate: 3e-3,
        grad_clip: Some(1.0),
        ..Default::default()
    };
    let setup = ProbeSetup {
        model: &model,
        train: &train,
        corpus: &corpus,
        render: RenderOptions::default(),
        seed: 1,
    };
    let opts = SearchOptions {
        phi: 95.0,
        budget: 6,
        start: 60,
        granularity: setup.facts_per_key(),
        max_size: corpus.len(),
    };
    let s = find_capacity(&setup, &opts)?;
    for (d, mr) in &s.trace {
        println!("probe |D|={d:<5} MR {mr:.3}");
    }
    let p = &s.point;
    println!(
        "capacity {:.0} facts at |D|={} (MR {:.3}, band miss {}) for {} non-embed parameters",
        p.effective_capacity, p.dataset_size, p.mr, p.band_miss, p.non_embed
    );
    Ok(())
}
