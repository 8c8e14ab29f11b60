//! Capacity search and scaling-law fits.

mod fit;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{RenderOptions, TrainingSet};
use crate::error::{Error, Result};
use crate::evaluator::memorization_rate;
use crate::factgen::{sample_facts, FactDataset};
use crate::model::{init_model, ModelConfig, ModelState};
use crate::trainer::{train, MrSnapshot, TrainConfig};

pub use fit::{
    compare_size_laws, fit_linear, fit_negexp, fit_powerlaw, Extrapolation, FitParams, FitResult, Law,
    LawComparison, NEGEXP_MAX_ITERATIONS, NEGEXP_TOLERANCE,
};

/// MR rise (as a fraction) tolerated between a smaller and a larger probe.
pub const MONOTONICITY_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPoint {
    pub non_embed: usize,
    pub epochs: usize,
    pub dataset_size: usize,
    pub mr: f64,
    pub effective_capacity: f64,
    #[serde(default)]
    pub band_miss: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CapacityPoint {
    pub fn new(non_embed: usize, epochs: usize, dataset_size: usize, mr: f64) -> Self {
        CapacityPoint {
            non_embed,
            epochs,
            dataset_size,
            mr,
            effective_capacity: dataset_size as f64 * mr,
            band_miss: false,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Threshold in percent; the accepted band is [phi, phi + 1].
    pub phi: f64,
    /// Maximum number of probes.
    pub budget: usize,
    /// First |D| probed.
    pub start: usize,
    /// Every probed |D| is a multiple of this (e.g. attributes per key).
    pub granularity: usize,
    /// Largest |D| available.
    pub max_size: usize,
}

impl SearchOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi < 100.0) {
            return Err(Error::Range(format!("phi must be in (0, 100), got {}", self.phi)));
        }
        if self.budget < 3 {
            return Err(Error::Range("search budget must allow at least 3 probes".into()));
        }
        if self.granularity == 0 || self.start < self.granularity || self.max_size < self.granularity {
            return Err(Error::Range("start and max_size must be at least one granule".into()));
        }
        Ok(())
    }

    fn round(&self, d: usize) -> usize {
        let g = self.granularity;
        (((d + g / 2) / g) * g).clamp(g, self.max_size / g * g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySearch {
    /// Set by the caller; the search itself only sees |D| and MR.
    pub point: CapacityPoint,
    /// `(|D|, MR)` of every probe in order.
    pub trace: Vec<(usize, f64)>,
}

/// Bracket then bisect on |D| until a probe's MR lands in the band.
pub fn find_capacity_with(opts: &SearchOptions, probe: &mut dyn FnMut(usize) -> Result<f64>) -> Result<CapacitySearch> {
    opts.validate()?;
    let lo_band = opts.phi / 100.0;
    let hi_band = (opts.phi + 1.0) / 100.0;
    let mut trace: Vec<(usize, f64)> = Vec::new();
    // largest |D| above the band, smallest below it
    let mut above: Option<usize> = None;
    let mut below: Option<usize> = None;
    let mut d = opts.round(opts.start);
    let mut hit: Option<(usize, f64)> = None;
    let mut saturated = false;
    while trace.len() < opts.budget {
        let mr = match trace.iter().find(|t| t.0 == d) {
            Some(t) => t.1,
            None => {
                let mr = probe(d)?;
                trace.push((d, mr));
                mr
            }
        };
        if (lo_band..=hi_band).contains(&mr) {
            hit = Some((d, mr));
            break;
        }
        if mr > hi_band {
            above = Some(above.map_or(d, |a| a.max(d)));
        } else {
            below = Some(below.map_or(d, |b| b.min(d)));
        }
        let next = match (above, below) {
            (Some(a), None) => {
                if a >= opts.max_size / opts.granularity * opts.granularity {
                    saturated = true;
                    break;
                }
                opts.round(a.saturating_mul(2))
            }
            (None, Some(b)) => {
                if b <= opts.granularity {
                    break;
                }
                opts.round(b / 2)
            }
            (Some(a), Some(b)) => {
                let mid = opts.round((a + b) / 2);
                if mid <= a || mid >= b {
                    break;
                }
                mid
            }
            (None, None) => unreachable!(),
        };
        d = next;
    }
    let (d, mr, band_miss) = match hit {
        Some((d, mr)) => (d, mr, false),
        None if saturated => {
            let &(d, mr) = trace.iter().find(|t| t.0 == d).expect("probed");
            (d, mr, true)
        }
        None => {
            if above.is_none() || below.is_none() {
                return Err(Error::SearchFailure {
                    reason: format!("no bracket of the [{}, {}]% band within {} probes", opts.phi, opts.phi + 1.0, opts.budget),
                    trace,
                });
            }
            let (a, b) = (above.unwrap(), below.unwrap());
            let dist = |mr: f64| if mr > hi_band { mr - hi_band } else { lo_band - mr };
            let &(d, mr) = trace
                .iter()
                .filter(|t| t.0 == a || t.0 == b)
                .min_by(|x, y| dist(x.1).total_cmp(&dist(y.1)).then(y.0.cmp(&x.0)))
                .expect("bracketing probes exist");
            (d, mr, true)
        }
    };
    let mut point = CapacityPoint::new(0, 0, d, mr);
    point.band_miss = band_miss;
    point.warnings = monotonicity_warnings(&trace, MONOTONICITY_MARGIN);
    Ok(CapacitySearch { point, trace })
}

/// Pairs where a larger |D| reports an MR higher than a smaller one by more than `margin`.
pub fn monotonicity_warnings(trace: &[(usize, f64)], margin: f64) -> Vec<String> {
    let mut out = Vec::new();
    for a in trace {
        for b in trace {
            if b.0 > a.0 && b.1 > a.1 + margin {
                out.push(format!("MR rises from {:.4} at |D|={} to {:.4} at |D|={}", a.1, a.0, b.1, b.0));
            }
        }
    }
    out
}

/// Everything a training probe needs besides |D|.
#[derive(Debug, Clone)]
pub struct ProbeSetup<'a> {
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub corpus: &'a FactDataset,
    pub render: RenderOptions,
    pub seed: u64,
}

impl ProbeSetup<'_> {
    /// Facts per key in the corpus; probe sizes must be multiples of it.
    pub fn facts_per_key(&self) -> usize {
        (self.corpus.len() / self.corpus.keys().len().max(1)).max(1)
    }

    /// Trains a fresh model on `size` facts sampled from the corpus and returns the training-set MR.
    pub fn run(&self, size: usize) -> Result<(ModelState<f32>, f64)> {
        let per_key = self.facts_per_key();
        if size % per_key != 0 {
            return Err(Error::Range(format!("|D|={size} is not a multiple of {per_key} facts per key")));
        }
        let ds = sample_facts(self.corpus, size / per_key, self.seed ^ size as u64)?;
        let set = TrainingSet::from_dataset(&ds, self.render)?;
        let init = self.seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ size as u64;
        let mut model: ModelState<f32> = init_model(self.model, init)?;
        train(&mut model, &set, self.train)?;
        let mr = memorization_rate(&model, &set)?.mr;
        Ok((model, mr))
    }
}

/// Capacity search where every probe trains a fresh model for `setup.train.epochs`.
pub fn find_capacity(setup: &ProbeSetup<'_>, opts: &SearchOptions) -> Result<CapacitySearch> {
    let mut probe = |d: usize| setup.run(d).map(|r| r.1);
    let mut s = find_capacity_with(opts, &mut probe)?;
    s.point.non_embed = count_non_embed(setup.model)?;
    s.point.epochs = setup.train.epochs;
    Ok(s)
}

fn count_non_embed(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(crate::model::count_params(cfg).1)
}

/// Early-stop mode: the first snapshot epoch whose MR reaches `threshold`,
/// reported as a capacity point `(E, |D|·MR)`.
pub fn capacity_at_first_threshold(
    non_embed: usize,
    dataset_size: usize,
    snapshots: &[MrSnapshot],
    threshold: f64,
) -> Option<CapacityPoint> {
    snapshots
        .iter()
        .find(|s| s.mr >= threshold)
        .map(|s| CapacityPoint::new(non_embed, s.epoch, dataset_size, s.mr))
}

pub fn write_points_csv(path: &Path, points: &[CapacityPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(CapacityRow::from(p))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Vec<CapacityPoint>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize::<CapacityRow>() {
        out.push(row?.into());
    }
    Ok(out)
}

/// Flat CSV shape; warnings are joined with `; `.
#[derive(Debug, Serialize, Deserialize)]
struct CapacityRow {
    non_embed: usize,
    epochs: usize,
    dataset_size: usize,
    mr: f64,
    effective_capacity: f64,
    band_miss: bool,
    warnings: String,
}

impl From<&CapacityPoint> for CapacityRow {
    fn from(p: &CapacityPoint) -> Self {
        CapacityRow {
            non_embed: p.non_embed,
            epochs: p.epochs,
            dataset_size: p.dataset_size,
            mr: p.mr,
            effective_capacity: p.effective_capacity,
            band_miss: p.band_miss,
            warnings: p.warnings.join("; "),
        }
    }
}

impl From<CapacityRow> for CapacityPoint {
    fn from(r: CapacityRow) -> Self {
        CapacityPoint {
            non_embed: r.non_embed,
            epochs: r.epochs,
            dataset_size: r.dataset_size,
            mr: r.mr,
            effective_capacity: r.effective_capacity,
            band_miss: r.band_miss,
            warnings: if r.warnings.is_empty() {
                Vec::new()
            } else {
                r.warnings.split("; ").map(String::from).collect()
            },
        }
    }
}

/// `x,y` pairs with a header.
pub fn read_xy_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize::<(f64, f64)>() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_xy_csv(path: &Path, header: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([header.0, header.1])?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_fit_json(path: &Path, fit: &FitResult) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(fit)?).map_err(|e| Error::io(path, e))
}

pub fn read_fit_json(path: &Path) -> Result<FitResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
