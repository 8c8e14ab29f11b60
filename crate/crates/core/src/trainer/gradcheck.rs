//! Five-point central finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{init_model, Example, ModelConfig, ModelState};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Coordinates sampled per tensor; tensors smaller than this are checked exhaustively.
    pub samples_per_tensor: usize,
    /// Base finite-difference step, scaled by `max(1, |θ|)`.
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples_per_tensor: 12,
            step: 1e-3,
            floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupError {
    pub group: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_group: String,
}

/// Initializes a 64-bit model from `config` and checks it on `batch`.
pub fn grad_check(config: &ModelConfig, batch: &[Example]) -> Result<GradCheckReport> {
    let model = init_model::<f64>(config, config.seed)?;
    grad_check_model(&model, batch, GradCheckOptions::default())
}

pub fn grad_check_model(
    model: &ModelState<f64>,
    batch: &[Example],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads(batch)?;
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut groups: Vec<GroupError> = Vec::new();

    for entry in &model.layout.entries {
        let coords: Vec<usize> = if entry.len <= opts.samples_per_tensor {
            (0..entry.len).collect()
        } else {
            sample(&mut rng, entry.len, opts.samples_per_tensor).into_vec()
        };
        let slot = match groups.iter().position(|g| g.group == entry.group) {
            Some(i) => i,
            None => {
                groups.push(GroupError {
                    group: entry.group.clone(),
                    max_rel_error: 0.0,
                    max_abs_error: 0.0,
                    coords_checked: 0,
                });
                groups.len() - 1
            }
        };
        for c in coords {
            let idx = entry.offset + c;
            let orig = model.params[idx];
            let h = opts.step * orig.abs().max(1.0);
            let mut at = |k: f64| -> Result<f64> {
                probe.params[idx] = orig + k * h;
                probe.loss(batch)
            };
            let numeric = (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * h);
            probe.params[idx] = orig;
            let analytic = grads.values[idx];
            let abs = (numeric - analytic).abs();
            let rel = abs / numeric.abs().max(analytic.abs()).max(opts.floor);
            let g = &mut groups[slot];
            g.max_rel_error = g.max_rel_error.max(rel);
            g.max_abs_error = g.max_abs_error.max(abs);
            g.coords_checked += 1;
        }
    }
    let worst = groups
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("model has parameters");
    Ok(GradCheckReport {
        max_rel_error: worst.max_rel_error,
        max_abs_error: groups.iter().map(|g| g.max_abs_error).fold(0.0, f64::max),
        worst_group: worst.group.clone(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::encode;

    fn batch() -> Vec<Example> {
        vec![
            Example::framed(&encode("Acme Tea Co|Lon="), &encode("116.49")),
            Example::framed(&encode("Hunan Ore|Op="), &encode("Li Zhang")),
            Example::framed_full(&encode("xyz"), &encode("q")),
        ]
    }

    #[test]
    fn random_tiny_model_passes() {
        let cfg = ModelConfig::new(2, 32, 48, 4).with_init_std(0.3).with_seed(11);
        let report = grad_check(&cfg, &batch()).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:#?}");
        assert_eq!(report.groups.len(), 15);
        assert!(report.groups.iter().all(|g| g.coords_checked > 0));
    }

    #[test]
    fn zero_projections_match_absolutely() {
        let cfg = ModelConfig::new(2, 16, 24, 2).with_init_std(0.0);
        let report = grad_check(&cfg, &batch()).unwrap();
        assert!(report.max_abs_error < 1e-6, "{report:#?}");
    }

    #[test]
    fn worst_group_is_named() {
        let cfg = ModelConfig::new(1, 16, 24, 2).with_init_std(0.2).with_seed(2);
        let report = grad_check(&cfg, &batch()).unwrap();
        let named = report.groups.iter().find(|g| g.group == report.worst_group).unwrap();
        assert_eq!(named.max_rel_error, report.max_rel_error);
    }
}
