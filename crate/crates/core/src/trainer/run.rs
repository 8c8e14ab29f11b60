//! Run directories: `config.json`, `metrics.csv` and `checkpoints/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_fits, run_epochs, AdamW, EpochStats, Session, TrainConfig, TrainReport};
use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::model::{init_model, load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Free-form description of the data, e.g. corpus path and render options.
    #[serde(default)]
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsRow {
    epoch: usize,
    loss: f64,
    lr: f64,
    mr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.checkpoint_dir().join(format!("epoch_{epoch:05}.ckpt"))
    }

    pub fn read_config(&self) -> Result<RunConfig> {
        let p = self.config_path();
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Path and epoch of the newest checkpoint, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<(usize, PathBuf)>> {
        let dir = self.checkpoint_dir();
        if !dir.exists() {
            return Ok(None);
        }
        let mut best: Option<(usize, PathBuf)> = None;
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let epoch = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("epoch_"))
                .and_then(|n| n.strip_suffix(".ckpt"))
                .and_then(|n| n.parse().ok());
            if let Some(e) = epoch {
                if best.as_ref().map_or(true, |(b, _)| e > *b) {
                    best = Some((e, path));
                }
            }
        }
        Ok(best)
    }

    fn save(&self, session: &Session<f32>, cfg: &TrainConfig, stopped: bool) -> Result<()> {
        let ckpt = Checkpoint {
            model: session.model.clone(),
            extra: vec![
                ("adam_m".into(), session.opt.m.clone()),
                ("adam_v".into(), session.opt.v.clone()),
            ],
            meta: serde_json::json!({
                "epoch": session.next_epoch,
                "adam_step": session.opt.step,
                "seed": cfg.seed,
                "stopped": stopped,
            }),
        };
        save_checkpoint(&self.checkpoint_path(session.next_epoch), &ckpt)
    }

    fn append_metrics(&self, stats: &EpochStats, mr: Option<f64>) -> Result<()> {
        let p = self.metrics_path();
        let exists = p.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        w.serialize(MetricsRow {
            epoch: stats.epoch,
            loss: stats.loss,
            lr: stats.lr,
            mr,
        })?;
        w.flush().map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    /// Drops metric rows past `epoch` and returns the kept rows as stats.
    fn truncate_metrics(&self, epoch: usize) -> Result<Vec<EpochStats>> {
        let p = self.metrics_path();
        if !p.exists() {
            return Ok(Vec::new());
        }
        let rows: Vec<MetricsRow> = csv::Reader::from_path(&p)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        let kept: Vec<MetricsRow> = rows.into_iter().filter(|r| r.epoch <= epoch).collect();
        let mut w = csv::Writer::from_path(&p)?;
        for r in &kept {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        Ok(kept
            .into_iter()
            .map(|r| EpochStats {
                epoch: r.epoch,
                loss: r.loss,
                lr: r.lr,
            })
            .collect())
    }
}

fn drive(dir: &RunDir, session: &mut Session<f32>, set: &TrainingSet, cfg: &TrainConfig, report: &mut TrainReport) -> Result<()> {
    let result = run_epochs(session, set, cfg, report, &mut |s, stats, mr| {
        dir.append_metrics(stats, mr)?;
        let last = s.next_epoch == cfg.epochs;
        if (cfg.checkpoint_every > 0 && s.next_epoch % cfg.checkpoint_every == 0) || last {
            dir.save(s, cfg, false)?;
        }
        Ok(())
    });
    match result {
        Err(e @ Error::Divergence { .. }) => {
            let ckpt = Checkpoint {
                model: session.model.clone(),
                extra: Vec::new(),
                meta: serde_json::json!({ "diverged": e.to_string() }),
            };
            save_checkpoint(&dir.checkpoint_dir().join("diverged.ckpt"), &ckpt)?;
            Err(e)
        }
        Err(e) => Err(e),
        Ok(()) => {
            if report.stopped_at.is_some() {
                dir.save(session, cfg, true)?;
            }
            Ok(())
        }
    }
}

/// Fresh run in `root`: writes the config, trains and checkpoints.
pub fn train_in_dir(
    root: &Path,
    model_cfg: &ModelConfig,
    set: &TrainingSet,
    cfg: &TrainConfig,
    data: serde_json::Value,
) -> Result<(ModelState<f32>, TrainReport)> {
    cfg.validate()?;
    model_cfg.validate()?;
    set.check_nonempty()?;
    let dir = RunDir::new(root);
    fs::create_dir_all(dir.checkpoint_dir()).map_err(|e| Error::io(dir.checkpoint_dir(), e))?;
    let run_cfg = RunConfig {
        model: model_cfg.clone(),
        train: cfg.clone(),
        data,
    };
    let p = dir.config_path();
    fs::write(&p, serde_json::to_vec_pretty(&run_cfg)?).map_err(|e| Error::io(&p, e))?;
    let m = dir.metrics_path();
    if m.exists() {
        fs::remove_file(&m).map_err(|e| Error::io(&m, e))?;
    }
    while let Some((_, old)) = dir.latest_checkpoint()? {
        fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
    }
    let mut model: ModelState<f32> = init_model(model_cfg, model_cfg.seed)?;
    check_fits(&model, set)?;
    let mut report = TrainReport {
        effective_examples: set.effective_size(),
        ..Default::default()
    };
    let mut session = Session {
        opt: AdamW::new(cfg.adamw, &model.layout),
        model: &mut model,
        next_epoch: 0,
    };
    drive(&dir, &mut session, set, cfg, &mut report)?;
    Ok((model, report))
}

/// Continues the run in `root` from its newest checkpoint. The caller
/// supplies the same training set the run started with.
pub fn resume(root: &Path, set: &TrainingSet) -> Result<(ModelState<f32>, TrainReport)> {
    let dir = RunDir::new(root);
    let run_cfg = dir.read_config()?;
    let cfg = run_cfg.train;
    let Some((epoch, path)) = dir.latest_checkpoint()? else {
        return train_in_dir(root, &run_cfg.model, set, &cfg, run_cfg.data);
    };
    let ckpt: Checkpoint<f32> = load_checkpoint(&path)?;
    if ckpt.model.config != run_cfg.model {
        return Err(Error::Checkpoint(format!("{} does not match config.json", path.display())));
    }
    let stopped = ckpt.meta["stopped"].as_bool().unwrap_or(false);
    let mut model = ckpt.model;
    let mut opt = AdamW::new(cfg.adamw, &model.layout);
    for (name, buf) in ckpt.extra {
        match name.as_str() {
            "adam_m" => opt.m = buf,
            "adam_v" => opt.v = buf,
            _ => {}
        }
    }
    opt.step = ckpt.meta["adam_step"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("missing adam_step".into()))? as usize;
    let mut report = TrainReport {
        effective_examples: set.effective_size(),
        epochs: dir.truncate_metrics(epoch)?,
        ..Default::default()
    };
    if stopped {
        report.stopped_at = Some(epoch);
        return Ok((model, report));
    }
    let mut session = Session {
        model: &mut model,
        opt,
        next_epoch: epoch,
    };
    drive(&dir, &mut session, set, &cfg, &mut report)?;
    Ok((model, report))
}
