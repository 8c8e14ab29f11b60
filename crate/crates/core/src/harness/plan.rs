//! Expansion of a spec into independent (group × seed) cells.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{CapacityMode, CountPreset, ExperimentKind, ExperimentSpec};
use crate::data::{RenderOptions, TrainingSet};
use crate::error::{Error, Result};
use crate::factgen::{derive_reverse, derive_two_hop, synth_ability_task, synth_corpus, upsample, FactDataset};
use crate::model::{count_params, ModelConfig};
use crate::scaling::SearchOptions;
use crate::trainer::TrainConfig;

/// When an evaluation runs and what it measures.
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub measure: String,
    pub set: TrainingSet,
    /// Index of the phase after which this runs.
    pub after_phase: usize,
    /// Keys seen in training, for held-out evaluations.
    pub heldout_against: Option<HashSet<String>>,
}

/// One model trained through one or more phases.
#[derive(Debug, Clone)]
pub(crate) struct Job {
    pub model: ModelConfig,
    pub phases: Vec<TrainingSet>,
    pub train: TrainConfig,
    pub evals: Vec<Eval>,
}

#[derive(Debug, Clone)]
pub(crate) enum Work {
    /// Records aggregate counts per measure over all jobs.
    Jobs(Vec<Job>),
    Search {
        model: ModelConfig,
        train: TrainConfig,
        corpus: FactDataset,
        render: RenderOptions,
        opts: SearchOptions,
    },
    EarlyStop {
        model: ModelConfig,
        train: TrainConfig,
        set: TrainingSet,
        threshold: f64,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Cell {
    pub group: String,
    pub seed: u64,
    pub work: Work,
}

impl Cell {
    /// Examples presented per epoch, summed over the cell's jobs.
    pub fn load(&self) -> usize {
        match &self.work {
            Work::Jobs(jobs) => jobs.iter().flat_map(|j| &j.phases).map(|p| p.effective_size()).sum(),
            Work::EarlyStop { set, .. } => set.effective_size(),
            Work::Search { .. } => 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::SpecValidation(msg.into())
}

/// Data-sampling seed for one experiment seed.
fn data_seed(corpus_seed: u64, seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17) ^ corpus_seed
}

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    corpus: FactDataset,
    render: RenderOptions,
}

impl Ctx<'_> {
    fn train_cfg(&self, seed: u64, epochs: usize) -> TrainConfig {
        self.train_cfg_for(0, seed, epochs)
    }

    fn train_cfg_for(&self, model: usize, seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            seed,
            epochs,
            learning_rate: self.spec.models[model].learning_rate.unwrap_or(self.spec.train.learning_rate),
            ..self.spec.train.clone()
        }
    }

    fn model(&self, i: usize, seed: u64) -> ModelConfig {
        self.spec.models[i].config().with_seed(seed)
    }

    /// Corpus keys in a seed-dependent order, optionally restricted to keys
    /// whose values for `unique_in` occur once in the corpus.
    fn shuffled_keys(&self, seed: u64, unique_in: &[String]) -> Vec<String> {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for t in &self.corpus.triples {
            if unique_in.contains(&t.attribute) {
                *counts.entry((t.attribute.as_str(), t.value.as_str())).or_default() += 1;
            }
        }
        let mut clash: HashSet<&str> = HashSet::new();
        for t in &self.corpus.triples {
            if counts.get(&(t.attribute.as_str(), t.value.as_str())).is_some_and(|&c| c > 1) {
                clash.insert(t.key.as_str());
            }
        }
        let mut keys: Vec<String> = self
            .corpus
            .keys()
            .into_iter()
            .filter(|k| !clash.contains(k))
            .map(String::from)
            .collect();
        keys.shuffle(&mut ChaCha8Rng::seed_from_u64(data_seed(self.spec.data.corpus_seed, seed)));
        keys
    }

    fn subset(&self, keys: &[String], attrs: &[String]) -> FactDataset {
        let keys: HashSet<&str> = keys.iter().map(String::as_str).collect();
        self.corpus
            .filter(|t| keys.contains(t.key.as_str()) && attrs.contains(&t.attribute))
    }

    fn render(&self, ds: &FactDataset) -> Result<TrainingSet> {
        TrainingSet::from_dataset(ds, self.render)
    }

    fn job(&self, model: ModelConfig, train: TrainConfig, phases: Vec<TrainingSet>, evals: Vec<(&str, TrainingSet, usize)>) -> Job {
        Job {
            model,
            phases,
            train,
            evals: evals
                .into_iter()
                .map(|(m, set, after_phase)| Eval {
                    measure: m.to_string(),
                    set,
                    after_phase,
                    heldout_against: None,
                })
                .collect(),
        }
    }

    /// Single-phase job evaluated on its own training data.
    fn solo(&self, model: ModelConfig, train: TrainConfig, set: TrainingSet) -> Job {
        self.job(model, train, vec![set.clone()], vec![("all", set, 0)])
    }
}

fn take(keys: &[String], from: usize, n: usize) -> Result<Vec<String>> {
    keys.get(from..from + n)
        .map(|s| s.to_vec())
        .ok_or_else(|| invalid(format!("needs {} eligible keys, the corpus offers {}", from + n, keys.len())))
}

fn cell(group: impl Into<String>, seed: u64, work: Work) -> Cell {
    Cell {
        group: group.into(),
        seed,
        work,
    }
}

/// Builds every cell's data up front so validation problems surface before training.
pub(crate) fn plan(spec: &ExperimentSpec) -> Result<Vec<Cell>> {
    spec.validate()?;
    let d = &spec.data;
    let corpus = if spec.kind == ExperimentKind::AbilityMix && d.attributes.is_empty() {
        return Err(invalid("ability_mix needs fact attributes"));
    } else {
        synth_corpus(&spec.schema()?, d.corpus_keys, d.corpus_seed).map_err(|e| invalid(e.to_string()))?
    };
    let ctx = Ctx {
        spec,
        corpus,
        render: RenderOptions {
            policy: d.template_policy,
            ..Default::default()
        },
    };
    let attrs = &d.attributes;
    let n = d.facts_per_group;
    let per_key = attrs.len().max(1);
    let e0 = spec.epochs[0];
    let mut cells = Vec::new();
    for &seed in &spec.seeds {
        let keys = ctx.shuffled_keys(seed, &[]);
        match spec.kind {
            ExperimentKind::CapacitySize | ExperimentKind::CapacityEpochs => {
                let models: Vec<usize> = (0..spec.models.len()).collect();
                let epochs: Vec<usize> = if spec.kind == ExperimentKind::CapacitySize {
                    vec![e0]
                } else {
                    spec.epochs.clone()
                };
                let corpus = ctx.corpus.filter(|t| attrs.contains(&t.attribute));
                for &mi in &models {
                    let model = ctx.model(mi, seed);
                    let non_embed = count_params(&model).1;
                    let label = |e: usize, extra: &str| {
                        let mut parts = Vec::new();
                        if spec.kind == ExperimentKind::CapacitySize {
                            parts.push(format!("N={non_embed}"));
                        } else if !extra.starts_with("D=") || d.capacity.mode != CapacityMode::EarlyStop {
                            parts.push(format!("E={e}"));
                        }
                        if !extra.is_empty() {
                            parts.push(extra.to_string());
                        }
                        parts.join(",")
                    };
                    match d.capacity.mode {
                        CapacityMode::Search => {
                            for &e in &epochs {
                                let base = d.capacity.start.or(d.sizes.first().copied()).expect("validated");
                                let n0 = count_params(&ctx.model(0, seed)).1;
                                let start = (base as f64 * non_embed as f64 / n0 as f64).round() as usize;
                                let start = start.max(per_key);
                                cells.push(cell(
                                    label(e, ""),
                                    seed,
                                    Work::Search {
                                        model: model.clone(),
                                        train: ctx.train_cfg_for(mi, seed, e),
                                        corpus: corpus.clone(),
                                        render: ctx.render,
                                        opts: SearchOptions {
                                            phi: d.capacity.phi,
                                            budget: d.capacity.budget,
                                            start,
                                            granularity: per_key,
                                            max_size: d.corpus_keys * per_key,
                                        },
                                    },
                                ));
                            }
                        }
                        CapacityMode::Grid => {
                            for &e in &epochs {
                                for &size in &d.sizes {
                                    let set = ctx.render(&ctx.subset(&take(&keys, 0, size / per_key)?, attrs))?;
                                    let job = ctx.solo(model.clone(), ctx.train_cfg_for(mi, seed, e), set);
                                    cells.push(cell(label(e, &format!("D={size}")), seed, Work::Jobs(vec![job])));
                                }
                            }
                        }
                        CapacityMode::EarlyStop => {
                            let cap = *spec.epochs.iter().max().expect("validated");
                            for &size in &d.sizes {
                                let set = ctx.render(&ctx.subset(&take(&keys, 0, size / per_key)?, attrs))?;
                                let mut train = ctx.train_cfg_for(mi, seed, cap);
                                if train.eval_every == 0 {
                                    train.eval_every = 1;
                                }
                                let threshold = d.capacity.phi / 100.0;
                                train.early_stop_mr = Some(threshold);
                                cells.push(cell(
                                    label(cap, &format!("D={size}")),
                                    seed,
                                    Work::EarlyStop {
                                        model: model.clone(),
                                        train,
                                        set,
                                        threshold,
                                    },
                                ));
                            }
                        }
                    }
                }
            }
            ExperimentKind::Direction => {
                let eligible = ctx.shuffled_keys(seed, attrs);
                let k = n / per_key;
                let (k1, k2) = (take(&eligible, 0, k)?, take(&eligible, k, k)?);
                let fwd1 = ctx.subset(&k1, attrs);
                let reverse = |ds: &FactDataset| -> Result<FactDataset> {
                    let parts: Vec<FactDataset> =
                        attrs.iter().map(|a| derive_reverse(ds, a)).collect::<Result<_>>()?;
                    FactDataset::merge(&parts.iter().collect::<Vec<_>>())
                };
                let rev1 = reverse(&fwd1)?;
                let rev2 = reverse(&ctx.subset(&k2, attrs))?;
                let model = ctx.model(0, seed);
                let train = ctx.train_cfg(seed, e0);
                let (f1, r1, r2) = (ctx.render(&fwd1)?, ctx.render(&rev1)?, ctx.render(&rev2)?);
                cells.push(cell(
                    "separate",
                    seed,
                    Work::Jobs(vec![
                        ctx.solo(model.clone(), train.clone(), f1.clone()),
                        ctx.solo(model.clone(), train.clone(), r1.clone()),
                    ]),
                ));
                let red = TrainingSet::concat(&[&f1, &r1]);
                let non = TrainingSet::concat(&[&f1, &r2]);
                cells.push(cell("redundant", seed, Work::Jobs(vec![ctx.solo(model.clone(), train.clone(), red)])));
                cells.push(cell("non_redundant", seed, Work::Jobs(vec![ctx.solo(model, train, non)])));
            }
            ExperimentKind::Correlated => {
                let (base, partner, other) = (&attrs[0..1], &attrs[1..2], &attrs[2..3]);
                let kb = take(&keys, 0, n)?;
                let side = match d.count_preset {
                    CountPreset::Equal => n,
                    CountPreset::Asymmetric => n / 4,
                };
                let ks = kb[..side].to_vec();
                let b = ctx.render(&ctx.subset(&kb, base))?;
                let p = ctx.render(&ctx.subset(&ks, partner))?;
                let o = ctx.render(&ctx.subset(&ks, other))?;
                let model = ctx.model(0, seed);
                let train = ctx.train_cfg(seed, e0);
                cells.push(cell("solo", seed, Work::Jobs(vec![ctx.solo(model.clone(), train.clone(), b.clone())])));
                for (label, extra) in [("joint_correlated", &p), ("joint_unrelated", &o)] {
                    let set = TrainingSet::concat(&[&b, extra]);
                    let job = ctx.job(
                        model.clone(),
                        train.clone(),
                        vec![set.clone()],
                        vec![("all", set, 0), ("base", b.clone(), 0)],
                    );
                    cells.push(cell(label, seed, Work::Jobs(vec![job])));
                }
            }
            ExperimentKind::TwoHop => {
                let a = &attrs[0..1];
                let (k1, k2) = (take(&keys, 0, n)?, take(&keys, n, n)?);
                let one1 = ctx.subset(&k1, a);
                let ds = data_seed(d.corpus_seed, seed);
                let two1 = derive_two_hop(&one1, &a[0], n, ds)?;
                let two2 = derive_two_hop(&ctx.subset(&k2, a), &a[0], n, ds)?;
                let (o1, t1, t2) = (ctx.render(&one1)?, ctx.render(&two1)?, ctx.render(&two2)?);
                let model = ctx.model(0, seed);
                let train = ctx.train_cfg(seed, e0);
                cells.push(cell(
                    "separate",
                    seed,
                    Work::Jobs(vec![
                        ctx.solo(model.clone(), train.clone(), o1.clone()),
                        ctx.solo(model.clone(), train.clone(), t1.clone()),
                    ]),
                ));
                cells.push(cell(
                    "redundant",
                    seed,
                    Work::Jobs(vec![ctx.solo(model.clone(), train.clone(), TrainingSet::concat(&[&o1, &t1]))]),
                ));
                cells.push(cell(
                    "non_redundant",
                    seed,
                    Work::Jobs(vec![ctx.solo(model, train, TrainingSet::concat(&[&o1, &t2]))]),
                ));
            }
            ExperimentKind::AbilityMix => {
                let facts = ctx.render(&ctx.subset(&take(&keys, 0, n / per_key)?, attrs))?;
                let test_n = n.clamp(3, 600);
                let task = synth_ability_task(n + test_n, d.style, data_seed(d.corpus_seed, seed))?;
                let mut all = ctx.render(&task)?;
                let test = TrainingSet {
                    facts: all.facts.split_off(n),
                };
                let ability = all;
                let model = ctx.model(0, seed);
                let train = ctx.train_cfg(seed, e0);
                let fjob = ctx.job(model.clone(), train.clone(), vec![facts.clone()], vec![("facts", facts.clone(), 0)]);
                let ajob = ctx.job(
                    model.clone(),
                    train.clone(),
                    vec![ability.clone()],
                    vec![("ability", ability.clone(), 0), ("ability_test", test.clone(), 0)],
                );
                cells.push(cell("separate", seed, Work::Jobs(vec![fjob, ajob])));
                let joint = TrainingSet::concat(&[&facts, &ability]);
                let job = ctx.job(
                    model,
                    train,
                    vec![joint],
                    vec![("facts", facts, 0), ("ability", ability, 0), ("ability_test", test, 0)],
                );
                cells.push(cell("joint", seed, Work::Jobs(vec![job])));
            }
            ExperimentKind::Frequency => {
                let k = n / per_key;
                let mut parts = Vec::new();
                let mut evals = Vec::new();
                for (i, &f) in d.factors.iter().enumerate() {
                    let ds = ctx.subset(&take(&keys, i * k, k)?, attrs);
                    let factors: HashMap<String, u32> = attrs.iter().map(|a| (a.clone(), f)).collect();
                    let set = ctx.render(&upsample(&ds, &factors)?)?;
                    evals.push((format!("x{f}"), set.clone()));
                    parts.push(set);
                }
                let all = TrainingSet::concat(&parts.iter().collect::<Vec<_>>());
                let job = Job {
                    model: ctx.model(0, seed),
                    phases: vec![all],
                    train: ctx.train_cfg(seed, e0),
                    evals: evals
                        .into_iter()
                        .map(|(m, set)| Eval {
                            measure: m,
                            set,
                            after_phase: 0,
                            heldout_against: None,
                        })
                        .collect(),
                };
                cells.push(cell("mixed", seed, Work::Jobs(vec![job])));
            }
            ExperimentKind::Difficulty | ExperimentKind::Order => {
                let (aa, ab) = (&d.phase_attributes[0], &d.phase_attributes[1]);
                let ka = take(&keys, 0, n / aa.len())?;
                let kb = take(&keys, ka.len(), n / ab.len())?;
                let a = ctx.render(&ctx.subset(&ka, aa))?;
                let b = ctx.render(&ctx.subset(&kb, ab))?;
                let train = ctx.train_cfg(seed, e0);
                let small = ctx.model(0, seed);
                let single = |m: &str, set: &TrainingSet| ctx.job(small.clone(), train.clone(), vec![set.clone()], vec![(m, set.clone(), 0)]);
                cells.push(cell("A_solo", seed, Work::Jobs(vec![single("A", &a)])));
                cells.push(cell("B_solo", seed, Work::Jobs(vec![single("B", &b)])));
                if spec.kind == ExperimentKind::Difficulty {
                    let joint = TrainingSet::concat(&[&a, &b]);
                    let job = ctx.job(ctx.model(1, seed), ctx.train_cfg_for(1, seed, e0), vec![joint], vec![("A", a, 0), ("B", b, 0)]);
                    cells.push(cell("joint_2N", seed, Work::Jobs(vec![job])));
                } else {
                    for (label, first, second) in [("A_then_B", &a, &b), ("B_then_A", &b, &a)] {
                        let job = ctx.job(
                            small.clone(),
                            train.clone(),
                            vec![first.clone(), second.clone()],
                            vec![("A@1", a.clone(), 0), ("B@1", b.clone(), 0), ("A", a.clone(), 1), ("B", b.clone(), 1)],
                        );
                        cells.push(cell(label, seed, Work::Jobs(vec![job])));
                    }
                }
            }
            ExperimentKind::Generalization => {
                let held_keys = take(&keys, 0, d.heldout_keys)?;
                let held = ctx.render(&ctx.subset(&held_keys, attrs))?;
                for &size in &d.sizes {
                    let tk = take(&keys, d.heldout_keys, size / per_key)?;
                    let set = ctx.render(&ctx.subset(&tk, attrs))?;
                    let mut job = ctx.job(ctx.model(0, seed), ctx.train_cfg(seed, e0), vec![set.clone()], vec![("train", set, 0)]);
                    job.evals.push(Eval {
                        measure: "heldout".into(),
                        set: held.clone(),
                        after_phase: 0,
                        heldout_against: Some(tk.into_iter().collect()),
                    });
                    cells.push(cell(format!("D={size}"), seed, Work::Jobs(vec![job])));
                }
            }
            ExperimentKind::TemplateCount => {
                let ds = ctx.subset(&take(&keys, 0, n / per_key)?, attrs);
                for &t in &d.template_counts {
                    let mut v = ds.clone();
                    v.schema = v.schema.into_iter().map(|a| a.with_template_count(t)).collect();
                    let set = ctx.render(&v)?;
                    let job = ctx.solo(ctx.model(0, seed), ctx.train_cfg(seed, e0), set);
                    cells.push(cell(format!("T={t}"), seed, Work::Jobs(vec![job])));
                }
            }
        }
    }
    check_load_matching(spec, &cells)?;
    Ok(cells)
}

/// Compared groups must present equal effective example counts per epoch.
fn check_load_matching(spec: &ExperimentSpec, cells: &[Cell]) -> Result<()> {
    let matched: &[&str] = match spec.kind {
        ExperimentKind::Direction | ExperimentKind::TwoHop => &["redundant", "non_redundant"],
        ExperimentKind::Correlated => &["joint_correlated", "joint_unrelated"],
        ExperimentKind::AbilityMix => &["separate", "joint"],
        ExperimentKind::Order => &["A_solo", "B_solo"],
        ExperimentKind::Difficulty => &["A_solo", "B_solo"],
        _ => &[],
    };
    for &seed in &spec.seeds {
        let loads: Vec<(&str, usize)> = cells
            .iter()
            .filter(|c| c.seed == seed && matched.contains(&c.group.as_str()))
            .map(|c| (c.group.as_str(), c.load()))
            .collect();
        if let Some(&(g0, l0)) = loads.first() {
            if let Some(&(g, l)) = loads.iter().find(|(_, l)| *l != l0) {
                return Err(invalid(format!("group `{g}` presents {l} examples per epoch but `{g0}` presents {l0}")));
            }
        }
    }
    if spec.kind == ExperimentKind::Frequency {
        for c in cells {
            if let Work::Jobs(jobs) = &c.work {
                let sizes: HashSet<usize> = jobs[0].evals.iter().map(|e| e.set.len()).collect();
                if sizes.len() != 1 {
                    return Err(invalid("frequency buckets hold different fact counts"));
                }
            }
        }
    }
    Ok(())
}
