//! Experiment orchestration: specs expand into (group × seed) cells, each cell
//! trains fresh models and yields result records; a manifest tracks progress.

mod compare;
mod plan;
pub mod report;
mod spec;
pub mod svg;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use plan::{Cell, Work};
use crate::evaluator::{generalization_eval, memorization_rate_with, EvalOptions};
use crate::model::{count_params, init_model, ModelState};
use crate::scaling::{find_capacity, CapacityPoint, ProbeSetup};
use crate::trainer::train;

pub use compare::{compare_groups, Comparison, GroupSummary, Predicate, MATCH_TOLERANCE};
pub use report::report;
pub use spec::{
    CapacityMode, CapacitySpec, CountPreset, DataSpec, ExperimentKind, ExperimentSpec, ModelSpec, CODE_VERSION,
};

/// One measured quantity of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub spec_hash: String,
    pub kind: ExperimentKind,
    pub group: String,
    /// Fact subset the numbers refer to; `all` for the whole training data.
    pub measure: String,
    pub seed: u64,
    pub non_embed: usize,
    pub epochs: usize,
    pub dataset_size: usize,
    pub mr: f64,
    pub effective_capacity: f64,
    pub band_miss: bool,
    pub heldout_loss: Option<f64>,
    pub wall_clock_secs: f64,
}

impl ResultRecord {
    /// Group label used for comparisons: the group, qualified by the measure unless it is `all`.
    pub fn label(&self) -> String {
        if self.measure == "all" {
            self.group.clone()
        } else {
            format!("{}/{}", self.group, self.measure)
        }
    }

    pub fn capacity_point(&self) -> CapacityPoint {
        CapacityPoint {
            non_embed: self.non_embed,
            epochs: self.epochs,
            dataset_size: self.dataset_size,
            mr: self.mr,
            effective_capacity: self.effective_capacity,
            band_miss: self.band_miss,
            warnings: Vec::new(),
        }
    }

    /// Everything except wall-clock time, which is the only non-reproducible field.
    pub fn same_result(&self, other: &ResultRecord) -> bool {
        ResultRecord {
            wall_clock_secs: 0.0,
            ..self.clone()
        } == ResultRecord {
            wall_clock_secs: 0.0,
            ..other.clone()
        }
    }
}

const RECORD_COLUMNS: [&str; 13] = [
    "spec_hash",
    "kind",
    "group",
    "measure",
    "seed",
    "non_embed",
    "epochs",
    "dataset_size",
    "mr",
    "effective_capacity",
    "band_miss",
    "heldout_loss",
    "wall_clock_secs",
];

pub fn write_records_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(RECORD_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for r in csv::Reader::from_path(path)?.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub group: String,
    pub seed: u64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_clock_secs: f64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub kind: ExperimentKind,
    pub spec_hash: String,
    pub code_version: String,
    pub created: String,
    pub epochs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_epochs: Option<usize>,
    pub cells: Vec<CellEntry>,
}

impl Manifest {
    pub fn failures(&self) -> Vec<&CellEntry> {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).collect()
    }
}

pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn records(&self) -> PathBuf {
        self.root.join("records.csv")
    }
    pub fn spec(&self) -> PathBuf {
        self.root.join("spec.json")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<ResultRecord>,
    pub manifest: Manifest,
}

impl ExperimentOutcome {
    pub fn has_failures(&self) -> bool {
        !self.manifest.failures().is_empty()
    }
}

/// Runs every cell of a fresh experiment into `spec.output_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    run_inner(spec, false)
}

/// Continues the experiment in `spec.output_dir`, skipping completed cells.
pub fn resume_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    run_inner(spec, true)
}

/// Resumes from the spec saved in a run directory.
pub fn resume_dir(root: &Path) -> Result<ExperimentOutcome> {
    let layout = RunLayout { root: root.to_path_buf() };
    let mut spec = ExperimentSpec::load(&layout.spec())?;
    spec.output_dir = root.to_path_buf();
    resume_experiment(&spec)
}

fn run_inner(spec: &ExperimentSpec, resume: bool) -> Result<ExperimentOutcome> {
    let cells = plan::plan(spec)?;
    let layout = RunLayout {
        root: spec.output_dir.clone(),
    };
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    let hash = spec.hash();
    let fresh = || Manifest {
        name: spec.name.clone(),
        kind: spec.kind,
        spec_hash: hash.clone(),
        code_version: CODE_VERSION.to_string(),
        created: chrono::Utc::now().to_rfc3339(),
        epochs: spec.epochs.clone(),
        reference_epochs: spec.reference_epochs,
        cells: cells
            .iter()
            .map(|c| CellEntry {
                group: c.group.clone(),
                seed: c.seed,
                status: CellStatus::Pending,
                error: None,
                wall_clock_secs: 0.0,
                records: 0,
            })
            .collect(),
    };
    let (mut manifest, mut records) = if resume && layout.manifest().exists() {
        let m = read_manifest(&layout.manifest())?;
        if m.spec_hash != hash {
            return Err(Error::SpecValidation(format!(
                "run directory holds spec {} but this spec hashes to {hash}",
                m.spec_hash
            )));
        }
        let done: HashSet<(String, u64)> = m
            .cells
            .iter()
            .filter(|c| c.status == CellStatus::Done)
            .map(|c| (c.group.clone(), c.seed))
            .collect();
        // rows of cells that never reached the manifest are dropped
        let recs = if layout.records().exists() {
            read_records_csv(&layout.records())?
                .into_iter()
                .filter(|r| done.contains(&(r.group.clone(), r.seed)))
                .collect()
        } else {
            Vec::new()
        };
        (m, recs)
    } else {
        (fresh(), Vec::new())
    };
    fs::write(layout.spec(), serde_json::to_vec_pretty(spec)?).map_err(|e| Error::io(layout.spec(), e))?;
    write_records_csv(&layout.records(), &records)?;
    write_atomic(&layout.manifest(), &serde_json::to_vec_pretty(&manifest)?)?;

    let todo: Vec<usize> = (0..cells.len())
        .filter(|&i| manifest.cells[i].status != CellStatus::Done)
        .collect();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<ResultRecord>>, f64)>();
    let workers = spec.parallelism.min(todo.len()).max(1);
    std::thread::scope(|s| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (cells, todo, next, hash) = (&cells, &todo, &next, &hash);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&ci) = todo.get(i) else { break };
                let t = Instant::now();
                let r = run_cell(spec, hash, &cells[ci]);
                if tx.send((ci, r, t.elapsed().as_secs_f64())).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // the receiving thread alone touches the manifest and records file
        for (ci, result, secs) in rx {
            let entry = &mut manifest.cells[ci];
            entry.wall_clock_secs = secs;
            match result {
                Ok(recs) => {
                    let mut file = fs::OpenOptions::new()
                        .append(true)
                        .open(layout.records())
                        .map_err(|e| Error::io(layout.records(), e))?;
                    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
                    for r in &recs {
                        w.serialize(r)?;
                    }
                    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
                    file.write_all(&bytes).map_err(|e| Error::io(layout.records(), e))?;
                    entry.status = CellStatus::Done;
                    entry.error = None;
                    entry.records = recs.len();
                    records.extend(recs);
                }
                Err(e) => {
                    entry.status = CellStatus::Failed;
                    entry.error = Some(e.to_string());
                    entry.records = 0;
                }
            }
            write_atomic(&layout.manifest(), &serde_json::to_vec_pretty(&manifest)?)?;
        }
        Ok(())
    })?;
    // records in cell order regardless of completion order
    let order: BTreeMap<(String, u64), usize> =
        cells.iter().enumerate().map(|(i, c)| ((c.group.clone(), c.seed), i)).collect();
    records.sort_by_key(|r| order.get(&(r.group.clone(), r.seed)).copied().unwrap_or(usize::MAX));
    write_records_csv(&layout.records(), &records)?;
    Ok(ExperimentOutcome { records, manifest })
}

#[derive(Default)]
struct Tally {
    count: usize,
    correct: usize,
    loss_sum: f64,
    loss_n: usize,
    non_embed: usize,
    epochs: usize,
}

fn run_cell(spec: &ExperimentSpec, hash: &str, cell: &Cell) -> Result<Vec<ResultRecord>> {
    let start = Instant::now();
    let record = |measure: &str, non_embed: usize, epochs: usize, point: &CapacityPoint, loss: Option<f64>| ResultRecord {
        spec_hash: hash.to_string(),
        kind: spec.kind,
        group: cell.group.clone(),
        measure: measure.to_string(),
        seed: cell.seed,
        non_embed,
        epochs,
        dataset_size: point.dataset_size,
        mr: point.mr,
        effective_capacity: point.effective_capacity,
        band_miss: point.band_miss,
        heldout_loss: loss,
        wall_clock_secs: 0.0,
    };
    let mut out = Vec::new();
    match &cell.work {
        Work::Search {
            model,
            train,
            corpus,
            render,
            opts,
        } => {
            let setup = ProbeSetup {
                model,
                train,
                corpus,
                render: *render,
                seed: cell.seed,
            };
            let s = find_capacity(&setup, opts)?;
            out.push(record("all", s.point.non_embed, s.point.epochs, &s.point, None));
        }
        Work::EarlyStop {
            model,
            train: cfg,
            set,
            threshold,
        } => {
            let mut m: ModelState<f32> = init_model(model, model.seed)?;
            let r = train(&mut m, set, cfg)?;
            let non_embed = count_params(model).1;
            let (epochs, mr) = match r.snapshots.iter().find(|s| s.mr >= *threshold) {
                Some(s) => (s.epoch, s.mr),
                None => (r.epochs.len(), r.final_mr().unwrap_or(0.0)),
            };
            let mut p = CapacityPoint::new(non_embed, epochs, set.len(), mr);
            p.band_miss = mr < *threshold;
            out.push(record("all", non_embed, epochs, &p, None));
        }
        Work::Jobs(jobs) => {
            let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
            let mut order: Vec<String> = Vec::new();
            for job in jobs {
                let mut m: ModelState<f32> = init_model(&job.model, job.model.seed)?;
                let non_embed = count_params(&job.model).1;
                for (pi, phase) in job.phases.iter().enumerate() {
                    train(&mut m, phase, &job.train)?;
                    for ev in job.evals.iter().filter(|e| e.after_phase == pi) {
                        let report = match &ev.heldout_against {
                            Some(keys) => {
                                let keys: HashSet<&str> = keys.iter().map(String::as_str).collect();
                                generalization_eval(&m, &ev.set, &keys)?
                            }
                            None => memorization_rate_with(&m, &ev.set, EvalOptions { sample_predictions: 0 })?,
                        };
                        if !tallies.contains_key(&ev.measure) {
                            order.push(ev.measure.clone());
                        }
                        let t = tallies.entry(ev.measure.clone()).or_default();
                        t.count += report.count;
                        t.correct += report.correct;
                        if let Some(l) = report.heldout_loss {
                            t.loss_sum += l;
                            t.loss_n += 1;
                        }
                        t.non_embed = non_embed;
                        t.epochs = job.train.epochs * (pi + 1);
                    }
                }
            }
            for measure in order {
                let t = &tallies[&measure];
                let mr = if t.count == 0 { 0.0 } else { t.correct as f64 / t.count as f64 };
                let point = CapacityPoint::new(t.non_embed, t.epochs, t.count, mr);
                let loss = (t.loss_n > 0).then(|| t.loss_sum / t.loss_n as f64);
                out.push(record(&measure, t.non_embed, t.epochs, &point, loss));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    for r in &mut out {
        r.wall_clock_secs = secs;
    }
    Ok(out)
}
