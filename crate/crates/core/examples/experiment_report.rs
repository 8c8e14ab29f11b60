//! Run a small capacity-vs-size grid as a resumable experiment and render its
//! report (records, comparison table, fits and SVG plots).
//!
//! ```text
//! cargo run --release --example experiment_report -- [out_dir]
//! ```

use factlab::harness::{report, resume_dir, run_experiment, ExperimentSpec};
use serde_json::json;

fn main() -> factlab::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/experiment_report".into());
    let spec: ExperimentSpec = serde_json::from_value(json!({
        "name": "mr_vs_size",
        "kind": "capacity_size",
        "models": [{"layers": 1, "hidden": 32}, {"layers": 2, "hidden": 32}],
        "data": {"corpus_seed": 3, "corpus_keys": 400, "attributes": ["status", "operator"],
                 "sizes": [100, 200, 400, 800], "capacity": {"mode": "grid"}},
        "train": {"learning_rate": 3e-3, "batch_size": 4, "grad_clip": 1.0},
        "epochs": [20],
        "seeds": [1],
        "output_dir": out
    }))?;
    spec.validate()?;

    let outcome = run_experiment(&spec)?;
    for r in &outcome.records {
        println!("{:<20} MR {:.3}  capacity {:>5.0}  {:.1}s", r.label(), r.mr, r.effective_capacity, r.wall_clock_secs);
    }

    // a second call finds every cell done and trains nothing
    let again = resume_dir(std::path::Path::new(&out))?;
    assert_eq!(again.records, outcome.records);

    for path in report(&outcome.records, std::path::Path::new(&out))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
