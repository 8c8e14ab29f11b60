//! Compare analytic gradients with finite differences, per parameter group.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use factlab::model::{init_model, Example, ModelConfig, ModelState};
use factlab::tokenizer::encode;
use factlab::trainer::{grad_check_model, GradCheckOptions};

fn main() -> factlab::Result<()> {
    let cfg = ModelConfig::new(2, 32, 88, 2).with_max_seq_len(48).with_seed(3);
    let model: ModelState<f64> = init_model(&cfg, cfg.seed)?;
    let batch: Vec<Example> = [("Hengxin Tea House|status:", "Open"), ("Silent Harbor|operator:", "Li Wei")]
        .iter()
        .map(|(p, a)| Example::framed(&encode(p), &encode(a)))
        .collect();
    let report = grad_check_model(&model, &batch, GradCheckOptions::default())?;
    for g in &report.groups {
        println!("{:<12} rel {:.2e}  abs {:.2e}  ({} coords)", g.group, g.max_rel_error, g.max_abs_error, g.coords_checked);
    }
    println!("max relative error {:.2e} ({})", report.max_rel_error, report.worst_group);
    Ok(())
}
