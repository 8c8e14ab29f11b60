//! CSV tables and SVG plots from result records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::svg::{BarChart, Chart, Series};
use super::{compare_groups, write_records_csv, ExperimentKind, ResultRecord};
use crate::error::{Error, Result};
use crate::scaling::{fit_linear, fit_negexp, fit_powerlaw, write_fit_json, FitResult};

/// Numeric value of `name=` inside a group label such as `N=25440,D=1000`.
pub fn label_value(group: &str, name: &str) -> Option<f64> {
    group
        .split(',')
        .find_map(|part| part.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
        .and_then(|v| v.parse().ok())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Seed-averaged y per x, sorted by x.
fn averaged(points: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut by_x: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for (x, y) in points {
        by_x.entry(x.to_bits()).or_insert((x, Vec::new())).1.push(y);
    }
    let mut out: Vec<(f64, f64)> = by_x.into_values().map(|(x, ys)| (x, mean(&ys))).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn curve(fit: &FitResult, lo: f64, hi: f64, log: bool, n: usize) -> Vec<(f64, f64)> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let x = if log {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            };
            (x, fit.eval(x))
        })
        .collect()
}

/// Capacity per model size: the largest seed-averaged `|D|·MR` over each model's probes.
pub fn capacity_by_size(records: &[ResultRecord]) -> Vec<(f64, f64)> {
    let mut per: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.measure == "all") {
        per.entry((r.non_embed, r.group.clone())).or_default().push(r.effective_capacity);
    }
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for ((n, _), caps) in per {
        let m = mean(&caps);
        let e = best.entry(n).or_insert(m);
        *e = e.max(m);
    }
    best.into_iter().map(|(n, c)| (n as f64, c)).collect()
}

/// Seed-averaged capacity per epoch count. Early-stop records contribute their own epochs.
pub fn capacity_by_epochs(records: &[ResultRecord]) -> Vec<(f64, f64)> {
    let all: Vec<&ResultRecord> = records.iter().filter(|r| r.measure == "all").collect();
    if all.iter().all(|r| label_value(&r.group, "E").is_none()) {
        return all.iter().map(|r| (r.epochs as f64, r.effective_capacity)).collect();
    }
    let mut per: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in &all {
        per.entry((r.epochs, r.group.clone())).or_default().push(r.effective_capacity);
    }
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for ((e, _), caps) in per {
        let m = mean(&caps);
        let b = best.entry(e).or_insert(m);
        *b = b.max(m);
    }
    best.into_iter().map(|(e, c)| (e as f64, c)).collect()
}

/// Seed-averaged held-out loss per training-set size.
pub fn heldout_loss_by_size(records: &[ResultRecord]) -> Vec<(f64, f64)> {
    averaged(
        records
            .iter()
            .filter(|r| r.measure == "heldout")
            .filter_map(|r| Some((label_value(&r.group, "D")?, r.heldout_loss?))),
    )
}

fn write(path: PathBuf, text: String, out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

/// Writes `records.csv`, `summary.csv` (when groups are comparable), fit JSON
/// and SVG plots under `dir`; returns the files written.
pub fn report(records: &[ResultRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Degenerate("no records to report".into()));
    }
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut out = Vec::new();
    let rp = dir.join("records.csv");
    write_records_csv(&rp, records)?;
    out.push(rp);
    let kind = records[0].kind;
    if let Ok(cmp) = compare_groups(records, None) {
        let sp = dir.join("summary.csv");
        cmp.write_csv(&sp)?;
        out.push(sp);
        let pp = dir.join("predicates.json");
        write(pp, serde_json::to_string_pretty(&cmp.predicates)?, &mut out)?;
        if kind.is_group_comparison() || kind == ExperimentKind::TemplateCount {
            let chart = BarChart {
                title: format!("{} groups", kind.name()),
                y_label: "memorization rate".into(),
                bars: cmp.groups.iter().map(|g| (g.label.clone(), g.mean_mr, g.spread)).collect(),
            };
            write(plots.join("groups.svg"), chart.to_svg(), &mut out)?;
        }
    }
    match kind {
        ExperimentKind::CapacitySize => {
            let grid: Vec<&ResultRecord> = records.iter().filter(|r| label_value(&r.group, "D").is_some()).collect();
            if !grid.is_empty() {
                let mut by_n: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
                for r in &grid {
                    by_n.entry(r.non_embed).or_default().push((r.dataset_size as f64, r.mr));
                }
                let chart = Chart {
                    title: "Memorization rate vs facts".into(),
                    x_label: "|D| (facts)".into(),
                    y_label: "MR".into(),
                    log_x: true,
                    series: by_n
                        .into_iter()
                        .map(|(n, pts)| Series::line(format!("N={n}"), averaged(pts.into_iter())))
                        .collect(),
                    ..Default::default()
                };
                write(plots.join("mr_vs_size.svg"), chart.to_svg(), &mut out)?;
            }
            let pts = capacity_by_size(records);
            let mut series = vec![Series::points("measured", pts.clone())];
            if let Ok(fit) = fit_linear(&pts) {
                let (lo, hi) = fit.x_range;
                series.push(Series::line("linear fit", curve(&fit, 0.0f64.max(lo * 0.5), hi * 1.1, false, 2)));
                let fp = dir.join("fit_linear.json");
                write_fit_json(&fp, &fit)?;
                out.push(fp);
            }
            let chart = Chart {
                title: "Fact capacity vs non-embed parameters".into(),
                x_label: "non-embed parameters".into(),
                y_label: "capacity |D|·MR".into(),
                series,
                ..Default::default()
            };
            write(plots.join("capacity_vs_params.svg"), chart.to_svg(), &mut out)?;
        }
        ExperimentKind::CapacityEpochs => {
            let pts = capacity_by_epochs(records);
            let mut series = vec![Series::points("measured", pts.clone())];
            if let Ok(fit) = fit_negexp(&pts) {
                let (lo, hi) = fit.x_range;
                series.push(Series::line("negexp fit", curve(&fit, lo, hi * 1.2, false, 60)));
                let fp = dir.join("fit_negexp.json");
                write_fit_json(&fp, &fit)?;
                out.push(fp);
            }
            if let Ok(fit) = fit_linear(&pts) {
                let (lo, hi) = fit.x_range;
                series.push(Series::line("linear fit", curve(&fit, lo, hi * 1.2, false, 2)));
            }
            let chart = Chart {
                title: "Fact capacity vs epochs".into(),
                x_label: "epochs".into(),
                y_label: "capacity |D|·MR".into(),
                series,
                ..Default::default()
            };
            write(plots.join("capacity_vs_epochs.svg"), chart.to_svg(), &mut out)?;
        }
        ExperimentKind::Generalization => {
            let pts = heldout_loss_by_size(records);
            let mut series = vec![Series::points("held-out loss", pts.clone())];
            if let Ok(fit) = fit_powerlaw(&pts) {
                let (lo, hi) = fit.x_range;
                series.push(Series::line("power law", curve(&fit, lo, hi, true, 30)));
                let fp = dir.join("fit_powerlaw.json");
                write_fit_json(&fp, &fit)?;
                out.push(fp);
            }
            let chart = Chart {
                title: "Held-out fact loss vs training facts".into(),
                x_label: "|D| (facts)".into(),
                y_label: "loss".into(),
                log_x: true,
                log_y: true,
                series,
            };
            write(plots.join("loss_vs_size.svg"), chart.to_svg(), &mut out)?;
        }
        _ => {}
    }
    Ok(out)
}
