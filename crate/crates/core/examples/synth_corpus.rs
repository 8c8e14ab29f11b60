//! Synthesize a company-profile corpus, render it, and derive reverse and
//! held-out views of it.
//!
//! ```text
//! cargo run --release --example synth_corpus -- [out_dir]
//! ```

use std::fs::File;
use std::io::BufWriter;

use factlab::data::{RenderOptions, TrainingSet};
use factlab::factgen::{
    company_schema, derive_reverse, render, select, split_heldout, synth_corpus, write_schema_json,
    write_triples_jsonl, TemplateStyle,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/synth_corpus".into());
    std::fs::create_dir_all(&out)?;

    let schema = select(
        &company_schema(TemplateStyle::Table),
        &["register_no", "operator", "start_date", "status"],
    )?;
    let corpus = synth_corpus(&schema, 500, 42)?;
    println!("{} keys, {} triples", corpus.keys().len(), corpus.len());

    for t in corpus.triples.iter().take(4) {
        let spec = corpus.attribute(&t.attribute)?;
        let r = render(t, spec, 0)?;
        println!("  {:?} -> {:?}", r.prompt_text, r.target_text);
    }

    let reverse = derive_reverse(&corpus, "register_no")?;
    let r = &reverse.triples[0];
    println!("reverse: {:?}", render(r, reverse.attribute(&r.attribute)?, 0)?.prompt_text);

    let (train, heldout) = split_heldout(&corpus, 0.1, 7)?;
    let set = TrainingSet::from_dataset(&train, RenderOptions::default())?;
    println!(
        "train {} facts ({} keys), held-out {} facts; longest example {} tokens",
        train.len(),
        train.keys().len(),
        heldout.len(),
        set.max_len()
    );

    write_schema_json(BufWriter::new(File::create(format!("{out}/schema.json"))?), &schema)?;
    write_triples_jsonl(BufWriter::new(File::create(format!("{out}/triples.jsonl"))?), &corpus.triples)?;
    println!("wrote {out}/schema.json and {out}/triples.jsonl");
    Ok(())
}
