//! Seed-aggregated group comparisons and the qualitative predicates checked on them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ExperimentKind, ResultRecord};
use crate::error::{Error, Result};

/// Largest MR difference (as a fraction) treated as "similar".
pub const MATCH_TOLERANCE: f64 = 0.05;
/// Gap by which joint memorization must trail separate memorization.
pub const JOINT_PENALTY: f64 = 0.10;
/// Overwritten MR must fall to at most this fraction of the solo MR.
pub const OVERWRITE_RATIO: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub mean_mr: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub spread: f64,
    pub min_mr: f64,
    pub max_mr: f64,
    pub mean_capacity: f64,
    pub mean_heldout_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub groups: Vec<GroupSummary>,
    /// `(a, b, mean_mr(a) − mean_mr(b))` for every ordered pair in label order.
    pub deltas: Vec<(String, String, f64)>,
    pub predicates: Vec<Predicate>,
}

impl Comparison {
    pub fn group(&self, label: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.label == label)
    }

    pub fn mean(&self, label: &str) -> Option<f64> {
        self.group(label).map(|g| g.mean_mr)
    }

    pub fn delta(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.mean(a)? - self.mean(b)?)
    }

    pub fn predicate(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["label", "seeds", "mean_mr", "spread", "min_mr", "max_mr", "mean_capacity", "mean_heldout_loss"])?;
        for g in &self.groups {
            w.write_record([
                g.label.clone(),
                g.seeds.len().to_string(),
                g.mean_mr.to_string(),
                g.spread.to_string(),
                g.min_mr.to_string(),
                g.max_mr.to_string(),
                g.mean_capacity.to_string(),
                g.mean_heldout_loss.map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn summarize(label: &str, recs: &[&ResultRecord]) -> GroupSummary {
    let n = recs.len() as f64;
    let mrs: Vec<f64> = recs.iter().map(|r| r.mr).collect();
    let mean = mrs.iter().sum::<f64>() / n;
    let spread = if recs.len() > 1 {
        (mrs.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let losses: Vec<f64> = recs.iter().filter_map(|r| r.heldout_loss).collect();
    GroupSummary {
        label: label.to_string(),
        seeds: recs.iter().map(|r| r.seed).collect(),
        mean_mr: mean,
        spread,
        min_mr: mrs.iter().copied().fold(f64::INFINITY, f64::min),
        max_mr: mrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_capacity: recs.iter().map(|r| r.effective_capacity).sum::<f64>() / n,
        mean_heldout_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
    }
}

/// Aggregates records by label (optionally only the given labels) over seeds.
pub fn compare_groups(records: &[ResultRecord], labels: Option<&[&str]>) -> Result<Comparison> {
    let mut by_label: BTreeMap<String, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        let l = r.label();
        if labels.map_or(true, |ls| ls.contains(&l.as_str())) {
            by_label.entry(l).or_default().push(r);
        }
    }
    if let Some(ls) = labels {
        if let Some(missing) = ls.iter().find(|l| !by_label.contains_key(**l)) {
            return Err(Error::Schema(format!("no records for group `{missing}`")));
        }
    }
    if by_label.len() < 2 {
        return Err(Error::Degenerate(format!("comparison needs at least 2 groups, got {}", by_label.len())));
    }
    let mut seed_sets: Vec<(&String, BTreeSet<u64>)> = Vec::new();
    for (l, recs) in &by_label {
        let seeds: BTreeSet<u64> = recs.iter().map(|r| r.seed).collect();
        if seeds.len() != recs.len() {
            return Err(Error::Schema(format!("group `{l}` has several records for one seed")));
        }
        seed_sets.push((l, seeds));
    }
    if let Some((l, s)) = seed_sets.iter().find(|(_, s)| *s != seed_sets[0].1) {
        return Err(Error::Schema(format!(
            "group `{l}` covers seeds {s:?} but `{}` covers {:?}",
            seed_sets[0].0, seed_sets[0].1
        )));
    }
    let groups: Vec<GroupSummary> = by_label.iter().map(|(l, recs)| summarize(l, recs)).collect();
    let mut deltas = Vec::new();
    for a in &groups {
        for b in &groups {
            if a.label != b.label {
                deltas.push((a.label.clone(), b.label.clone(), a.mean_mr - b.mean_mr));
            }
        }
    }
    let mut cmp = Comparison {
        groups,
        deltas,
        predicates: Vec::new(),
    };
    if let Some(kind) = records.first().map(|r| r.kind) {
        cmp.predicates = predicates(kind, &cmp);
    }
    Ok(cmp)
}

fn pts(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn predicates(kind: ExperimentKind, c: &Comparison) -> Vec<Predicate> {
    let mut out = Vec::new();
    let mut push = |name: &str, holds: bool, detail: String| {
        out.push(Predicate {
            name: name.into(),
            holds,
            detail,
        })
    };
    match kind {
        ExperimentKind::Direction | ExperimentKind::TwoHop => {
            if let (Some(s), Some(r), Some(n)) = (c.mean("separate"), c.mean("redundant"), c.mean("non_redundant")) {
                push(
                    "redundant_matches_non_redundant",
                    (r - n).abs() <= MATCH_TOLERANCE + 1e-12,
                    format!("|{} − {}| vs {} points", pts(r), pts(n), pts(MATCH_TOLERANCE)),
                );
                push(
                    "joint_below_separate",
                    r <= s - JOINT_PENALTY + 1e-12 && n <= s - JOINT_PENALTY + 1e-12,
                    format!("redundant {}, non-redundant {}, separate {}", pts(r), pts(n), pts(s)),
                );
            }
        }
        ExperimentKind::Correlated => {
            if let (Some(s), Some(jc), Some(ju)) = (c.mean("solo"), c.mean("joint_correlated"), c.mean("joint_unrelated")) {
                push("correlated_joint_above_solo", jc > s, format!("{} vs solo {}", pts(jc), pts(s)));
                push("unrelated_joint_below_solo", ju < s, format!("{} vs solo {}", pts(ju), pts(s)));
            }
        }
        ExperimentKind::AbilityMix => {
            if let (Some(s), Some(j)) = (c.mean("separate/facts"), c.mean("joint/facts")) {
                push("joint_lowers_fact_mr", j < s, format!("joint {} vs separate {}", pts(j), pts(s)));
            }
        }
        ExperimentKind::Order => {
            for (first, later, solo, measure) in [("A", "A_then_B/A", "A_solo/A", "A"), ("B", "B_then_A/B", "B_solo/B", "B")] {
                if let (Some(after), Some(alone)) = (c.mean(later), c.mean(solo)) {
                    push(
                        &format!("{first}_overwritten"),
                        after <= OVERWRITE_RATIO * alone + 1e-12,
                        format!("MR({measure}) {} after the later phase vs solo {}", pts(after), pts(alone)),
                    );
                }
            }
        }
        ExperimentKind::Frequency => {
            let mut freq: Vec<(u32, f64)> = c
                .groups
                .iter()
                .filter_map(|g| g.label.strip_prefix("mixed/x").and_then(|f| f.parse().ok()).map(|f| (f, g.mean_mr)))
                .collect();
            freq.sort_by_key(|p| p.0);
            if freq.len() >= 2 {
                let mono = freq.windows(2).all(|w| w[1].1 >= w[0].1 - MATCH_TOLERANCE / 2.5);
                push(
                    "frequent_facts_memorized_better",
                    mono && freq.last().unwrap().1 > freq[0].1,
                    freq.iter().map(|(f, m)| format!("x{f}: {}", pts(*m))).collect::<Vec<_>>().join(", "),
                );
            }
        }
        _ => {}
    }
    out
}
