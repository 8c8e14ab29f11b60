//! Two memorization protocols side by side: the order in which two fact
//! groups are trained, and whether reverse-direction facts share keys with
//! the forward ones.
//!
//! ```text
//! cargo run --release --example memorization_protocols -- [out_dir]
//! ```

use factlab::harness::{compare_groups, run_experiment, ExperimentSpec};
use serde_json::json;

fn run(spec: serde_json::Value) -> factlab::Result<()> {
    let spec: ExperimentSpec = serde_json::from_value(spec)?;
    let outcome = run_experiment(&spec)?;
    let cmp = compare_groups(&outcome.records, None)?;
    println!("{}:", spec.name);
    for g in &cmp.groups {
        println!("  {:<18} MR {:.3} ± {:.3} over {} seed(s)", g.label, g.mean_mr, g.spread, g.seeds.len());
    }
    for p in &cmp.predicates {
        println!("  {} = {} ({})", p.name, p.holds, p.detail);
    }
    Ok(())
}

fn main() -> factlab::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/memorization_protocols".into());
    let common = json!({"learning_rate": 3e-3, "batch_size": 4, "grad_clip": 1.0});

    run(json!({
        "name": "order",
        "kind": "order",
        "models": [{"layers": 2, "hidden": 32}],
        "data": {"corpus_seed": 5, "corpus_keys": 200, "attributes": ["register_no", "operator"],
                 "phase_attributes": [["register_no"], ["operator"]], "facts_per_group": 60},
        "train": common,
        "epochs": [40],
        "seeds": [1],
        "output_dir": format!("{out}/order")
    }))?;

    run(json!({
        "name": "direction",
        "kind": "direction",
        "models": [{"layers": 2, "hidden": 32}],
        "data": {"corpus_seed": 5, "corpus_keys": 400, "attributes": ["credit_no", "register_no"],
                 "facts_per_group": 60},
        "train": common,
        "epochs": [40],
        "seeds": [1],
        "output_dir": format!("{out}/direction")
    }))
}
