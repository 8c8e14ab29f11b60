//! Deterministic training: per-epoch seeded shuffles over the weight-expanded
//! fact stream, AdamW, cosine decay, MR snapshots, phased runs and resumable
//! run directories.

mod gradcheck;
mod optim;
mod run;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::evaluator::{memorization_rate_with, EvalOptions};
use crate::model::{init_model, Example, Float, ModelConfig, ModelState};

pub use gradcheck::*;
pub use optim::{clip_grad_norm, AdamW, AdamWConfig, CosineSchedule};
pub use run::{resume, train_in_dir, RunDir};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Final learning rate as a fraction of the peak.
    pub lr_floor_ratio: f64,
    pub warmup_steps: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
    /// Epochs between MR snapshots; 0 disables them.
    pub eval_every: usize,
    /// Global gradient-norm bound; off when `None`.
    pub grad_clip: Option<f64>,
    /// Stop once a snapshot reaches this MR.
    pub early_stop_mr: Option<f64>,
    /// Epochs between checkpoints in a run directory; 0 keeps only the last.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 1,
            lr_floor_ratio: 0.1,
            warmup_steps: 0,
            adamw: AdamWConfig::default(),
            seed: 0,
            eval_every: 0,
            grad_clip: None,
            early_stop_mr: None,
            checkpoint_every: 0,
        }
    }
}

/// Reference learning rates by non-embed size: (non-embed, company table, knowledge base).
pub const LR_TABLE: [(f64, f64, f64); 9] = [
    (0.6e6, 2.0e-3, 3.0e-3),
    (1.3e6, 1.0e-3, 2.0e-3),
    (2.6e6, 1.0e-3, 2.0e-3),
    (5.1e6, 7.5e-4, 1.5e-3),
    (10.6e6, 5.0e-4, 1.0e-3),
    (19.3e6, 5.0e-4, 7.5e-4),
    (38.6e6, 4.0e-4, 7.5e-4),
    (85.0e6, 2.5e-4, 5.0e-4),
    (308e6, 1.5e-4, 3.0e-4),
];

/// Learning rate of the reference size nearest in log scale.
pub fn default_learning_rate(non_embed: usize, knowledge_base: bool) -> f64 {
    let x = (non_embed.max(1) as f64).ln();
    let row = LR_TABLE
        .iter()
        .min_by(|a, b| (a.0.ln() - x).abs().total_cmp(&(b.0.ln() - x).abs()))
        .expect("non-empty table");
    if knowledge_base {
        row.2
    } else {
        row.1
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_floor_ratio) {
            return Err(Error::Config("lr_floor_ratio must lie in [0, 1]".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, effective: usize) -> usize {
        effective.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, effective: usize) -> CosineSchedule {
        CosineSchedule {
            peak: self.learning_rate,
            floor_ratio: self.lr_floor_ratio,
            warmup_steps: self.warmup_steps,
            total_steps: self.epochs * self.steps_per_epoch(effective),
        }
    }

    fn snapshot_due(&self, epoch: usize) -> bool {
        let every = match (self.eval_every, self.early_stop_mr) {
            (0, Some(_)) => 1,
            (e, _) => e,
        };
        (every > 0 && (epoch + 1) % every == 0) || epoch + 1 == self.epochs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrSnapshot {
    /// Epochs completed.
    pub epoch: usize,
    pub mr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Rate at the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub snapshots: Vec<MrSnapshot>,
    pub steps: usize,
    pub wall_clock_secs: f64,
    /// Σ weights: examples presented per epoch.
    pub effective_examples: usize,
    /// Epochs completed when the early-stop rule fired.
    pub stopped_at: Option<usize>,
    /// Per-phase, per-dataset MR after each phase of a phased run:
    /// `phase_mr[p][d]` is MR of phase `d`'s data after phase `p`.
    pub phase_mr: Vec<Vec<f64>>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_mr(&self) -> Option<f64> {
        self.snapshots.last().map(|s| s.mr)
    }
}

/// Mutable training state: the model, its optimizer and the epoch cursor.
pub(crate) struct Session<'a, T: Float> {
    pub model: &'a mut ModelState<T>,
    pub opt: AdamW<T>,
    pub next_epoch: usize,
}

/// Callback after each epoch with the session, its stats and the MR
/// snapshot when one was taken.
pub(crate) type EpochHook<'h, T> = dyn FnMut(&Session<T>, &EpochStats, Option<f64>) -> Result<()> + 'h;

pub(crate) fn run_epochs<T: Float>(
    session: &mut Session<T>,
    set: &TrainingSet,
    cfg: &TrainConfig,
    report: &mut TrainReport,
    hook: &mut EpochHook<T>,
) -> Result<()> {
    let effective = set.effective_size();
    let schedule = cfg.schedule(effective);
    let per_epoch = cfg.steps_per_epoch(effective);
    let start = Instant::now();
    let mut batch: Vec<Example> = Vec::with_capacity(cfg.batch_size);
    while session.next_epoch < cfg.epochs {
        let epoch = session.next_epoch;
        let order = set.epoch_order(cfg.seed, epoch);
        let (mut loss_sum, mut target_sum) = (0.0, 0usize);
        let mut lr = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * per_epoch + b;
            batch.clear();
            batch.extend(chunk.iter().map(|&i| set.facts[i].example_for_epoch(epoch).clone()));
            let (loss, mut grads) = session.model.loss_and_grads(&batch)?;
            if !loss.is_finite() || grads.values.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, step, loss });
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads.values, c);
            }
            lr = schedule.lr(step);
            session.opt.update(&mut session.model.params, &grads.values, lr);
            let n: usize = batch.iter().map(|e| e.num_targets()).sum();
            loss_sum += loss * n as f64;
            target_sum += n;
            report.steps += 1;
        }
        session.next_epoch += 1;
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / target_sum as f64,
            lr,
        };
        let mut mr = None;
        if cfg.snapshot_due(epoch) {
            let r = memorization_rate_with(session.model, set, EvalOptions { sample_predictions: 0 })?;
            report.snapshots.push(MrSnapshot {
                epoch: epoch + 1,
                mr: r.mr,
            });
            mr = Some(r.mr);
        }
        report.epochs.push(stats.clone());
        hook(session, &stats, mr)?;
        if let (Some(th), Some(m)) = (cfg.early_stop_mr, mr) {
            if m >= th {
                report.stopped_at = Some(epoch + 1);
                break;
            }
        }
    }
    report.wall_clock_secs += start.elapsed().as_secs_f64();
    Ok(())
}

/// Trains `model` in place on `set`.
pub fn train<T: Float>(model: &mut ModelState<T>, set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    set.check_nonempty()?;
    check_fits(model, set)?;
    let mut report = TrainReport {
        effective_examples: set.effective_size(),
        ..Default::default()
    };
    let mut session = Session {
        opt: AdamW::new(cfg.adamw, &model.layout),
        model,
        next_epoch: 0,
    };
    run_epochs(&mut session, set, cfg, &mut report, &mut |_, _, _| Ok(()))?;
    Ok(report)
}

pub(crate) fn check_fits<T: Float>(model: &ModelState<T>, set: &TrainingSet) -> Result<()> {
    // the model sees every token but the last
    let need = set.max_len().saturating_sub(1);
    if need > model.config.max_seq_len {
        return Err(Error::Range(format!(
            "longest example needs {need} positions, model allows {}",
            model.config.max_seq_len
        )));
    }
    Ok(())
}

/// Trains on each phase in turn, recording MR of every phase's data after each phase.
pub fn train_phased<T: Float>(model: &mut ModelState<T>, phases: &[(&TrainingSet, TrainConfig)]) -> Result<TrainReport> {
    if phases.is_empty() {
        return Err(Error::Config("phased training needs at least one phase".into()));
    }
    let mut report = TrainReport::default();
    for (set, cfg) in phases {
        let r = train(model, set, cfg)?;
        report.effective_examples = r.effective_examples;
        report.steps += r.steps;
        report.wall_clock_secs += r.wall_clock_secs;
        let offset = report.epochs.last().map_or(0, |e| e.epoch);
        report.epochs.extend(r.epochs.into_iter().map(|e| EpochStats {
            epoch: e.epoch + offset,
            ..e
        }));
        report.snapshots.extend(r.snapshots.into_iter().map(|s| MrSnapshot {
            epoch: s.epoch + offset,
            ..s
        }));
        let mut row = Vec::with_capacity(phases.len());
        for (s, _) in phases {
            row.push(memorization_rate_with(model, s, EvalOptions { sample_predictions: 0 })?.mr);
        }
        report.phase_mr.push(row);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub learning_rate: f64,
    pub mr: f64,
    pub final_loss: f64,
}

/// Trains a fresh model per learning rate and reports the resulting MR.
/// A diverged run scores MR 0 with infinite loss.
pub fn lr_sweep(
    model_cfg: &ModelConfig,
    set: &TrainingSet,
    base: &TrainConfig,
    rates: &[f64],
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(rates.len());
    for &lr in rates {
        let mut model: ModelState<f32> = init_model(model_cfg, model_cfg.seed)?;
        let cfg = TrainConfig {
            learning_rate: lr,
            eval_every: 0,
            early_stop_mr: None,
            ..base.clone()
        };
        match train(&mut model, set, &cfg) {
            Ok(r) => out.push(SweepPoint {
                learning_rate: lr,
                mr: r.final_mr().unwrap_or(0.0),
                final_loss: r.final_loss().unwrap_or(f64::INFINITY),
            }),
            Err(Error::Divergence { .. }) => out.push(SweepPoint {
                learning_rate: lr,
                mr: 0.0,
                final_loss: f64::INFINITY,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
