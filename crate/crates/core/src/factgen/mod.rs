//! Fact-triple datasets: synthesis, sampling, derivation of reverse and
//! two-hop facts, frequency weights, held-out splits and prompt rendering.
//!
//! Every generator is a pure function of its inputs and seed.

mod ability;
mod io;
pub mod names;
pub mod schema;

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{Duration, NaiveDate};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ability::{ability_attribute, synth_ability_task, ABILITY_LABELS};
pub use io::{
    import_kb_slice, read_schema_json, read_triples_jsonl, write_schema_json, write_triples_jsonl,
};
pub use schema::{
    author_attribute, company_schema, find, select, validate_schema, AttributeSpec, Correlation, TemplateStyle, ValueKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hop {
    One,
    Two { second_key: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "io::TripleRecord", try_from = "io::TripleRecord")]
pub struct FactTriple {
    pub key: String,
    pub attribute: String,
    pub value: String,
    pub direction: Direction,
    pub hop: Hop,
    /// Replication count per epoch.
    pub weight: u32,
}

impl FactTriple {
    pub fn forward(key: impl Into<String>, attribute: impl Into<String>, value: impl Into<String>) -> Self {
        FactTriple {
            key: key.into(),
            attribute: attribute.into(),
            value: value.into(),
            direction: Direction::Forward,
            hop: Hop::One,
            weight: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.value.is_empty() {
            return Err(Error::Config(format!("empty value for ({}, {})", self.key, self.attribute)));
        }
        if self.weight == 0 {
            return Err(Error::Range(format!("zero weight for ({}, {})", self.key, self.attribute)));
        }
        if let Hop::Two { second_key } = &self.hop {
            if second_key == &self.key {
                return Err(Error::Config(format!("two-hop triple pairs `{}` with itself", self.key)));
            }
        }
        Ok(())
    }

    /// Identity used for uniqueness within a split.
    pub fn identity(&self) -> (&str, &str, Direction, &Hop) {
        (&self.key, &self.attribute, self.direction, &self.hop)
    }

    /// Every key the triple mentions.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        let second = match &self.hop {
            Hop::Two { second_key } => Some(second_key.as_str()),
            Hop::One => None,
        };
        std::iter::once(self.key.as_str()).chain(second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactDataset {
    pub triples: Vec<FactTriple>,
    pub schema: Vec<AttributeSpec>,
    pub split: Split,
    pub seed: u64,
}

impl FactDataset {
    pub fn new(triples: Vec<FactTriple>, schema: Vec<AttributeSpec>, split: Split, seed: u64) -> Result<Self> {
        let ds = FactDataset {
            triples,
            schema,
            split,
            seed,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.triples.len());
        for t in &self.triples {
            t.validate()?;
            schema::find(&self.schema, &t.attribute)?;
            if !seen.insert(t.identity()) {
                return Err(Error::Config(format!(
                    "duplicate triple ({}, {}, {:?}); encode frequency with weights",
                    t.key, t.attribute, t.direction
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Sum of weights: examples presented per epoch.
    pub fn effective_size(&self) -> u64 {
        self.triples.iter().map(|t| t.weight as u64).sum()
    }

    /// Distinct primary keys in first-appearance order.
    pub fn keys(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.triples
            .iter()
            .map(|t| t.key.as_str())
            .filter(|k| seen.insert(*k))
            .collect()
    }

    pub fn attribute(&self, id: &str) -> Result<&AttributeSpec> {
        schema::find(&self.schema, id)
    }

    pub fn filter(&self, mut keep: impl FnMut(&FactTriple) -> bool) -> FactDataset {
        FactDataset {
            triples: self.triples.iter().filter(|t| keep(t)).cloned().collect(),
            schema: self.schema.clone(),
            split: self.split,
            seed: self.seed,
        }
    }

    pub fn with_attribute(&self, id: &str) -> FactDataset {
        self.filter(|t| t.attribute == id)
    }

    /// Concatenation of several datasets with a merged schema.
    pub fn merge(parts: &[&FactDataset]) -> Result<FactDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Degenerate("nothing to merge".into()))?;
        let mut schema: Vec<AttributeSpec> = Vec::new();
        let mut triples = Vec::new();
        for p in parts {
            for a in &p.schema {
                match schema.iter().find(|b| b.id == a.id) {
                    Some(b) if b != a => {
                        return Err(Error::Schema(format!("conflicting definitions of `{}`", a.id)))
                    }
                    Some(_) => {}
                    None => schema.push(a.clone()),
                }
            }
            triples.extend(p.triples.iter().cloned());
        }
        FactDataset::new(triples, schema, first.split, first.seed)
    }

    /// Distinct values per attribute, used for correlation checks and reporting.
    pub fn values_by_key(&self, attribute: &str) -> BTreeMap<&str, &str> {
        self.triples
            .iter()
            .filter(|t| t.attribute == attribute && t.direction == Direction::Forward && t.hop == Hop::One)
            .map(|t| (t.key.as_str(), t.value.as_str()))
            .collect()
    }
}

/// What kind of entity the generated keys name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyStyle {
    /// `Region Brand Business Suffix`, e.g. `Changsha Hengxin Tea House Co.`
    #[default]
    Company,
    /// Book titles, e.g. `The Silent Harbor Ember`.
    Book,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub key_style: KeyStyle,
}

struct KeyProfile {
    name: String,
    region: usize,
    business: usize,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn make_key(rng: &mut ChaCha8Rng, style: KeyStyle, attempt: usize) -> KeyProfile {
    match style {
        KeyStyle::Company => {
            let region = rng.gen_range(0..names::REGIONS.len());
            let business = rng.gen_range(0..names::BUSINESSES.len());
            let s1 = names::BRAND_SYLLABLES[rng.gen_range(0..names::BRAND_SYLLABLES.len())];
            let s2 = names::BRAND_SYLLABLES[rng.gen_range(0..names::BRAND_SYLLABLES.len())];
            let suffix = names::SUFFIXES[rng.gen_range(0..names::SUFFIXES.len())];
            let mut name = format!(
                "{} {}{} {} {}",
                names::REGIONS[region].0,
                capitalize(s1),
                s2,
                names::BUSINESSES[business].0,
                suffix
            );
            if attempt > 8 {
                name.push_str(&format!(" No.{}", rng.gen_range(2..1000)));
            }
            KeyProfile { name, region, business }
        }
        KeyStyle::Book => {
            let w = |rng: &mut ChaCha8Rng| names::TITLE_WORDS[rng.gen_range(0..names::TITLE_WORDS.len())];
            let mut name = format!("The {} {} {}", w(rng), w(rng), w(rng));
            if attempt > 8 {
                name.push_str(&format!(" Vol.{}", rng.gen_range(2..100)));
            }
            KeyProfile {
                name,
                region: 0,
                business: 0,
            }
        }
    }
}

pub(crate) const DATE_FORMAT: &str = "%Y.%m.%d";

fn epoch_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date")
}

/// Synthesizes `num_keys × |schema|` forward one-hop triples.
pub fn synth_corpus(schema: &[AttributeSpec], num_keys: usize, seed: u64) -> Result<FactDataset> {
    synth_corpus_with(schema, num_keys, seed, SynthOptions::default())
}

pub fn synth_corpus_with(
    schema: &[AttributeSpec],
    num_keys: usize,
    seed: u64,
    opts: SynthOptions,
) -> Result<FactDataset> {
    validate_schema(schema)?;
    if num_keys == 0 {
        return Err(Error::Range("num_keys must be at least 1".into()));
    }
    for a in schema {
        if let ValueKind::IdDigits { len } = a.value_kind {
            if len < 19 && 10u64.pow(len as u32) < 2 * num_keys as u64 {
                return Err(Error::Config(format!(
                    "`{}` ids of {len} digits cannot stay unique over {num_keys} keys",
                    a.id
                )));
            }
        }
        if matches!(a.value_kind, ValueKind::Imported) {
            return Err(Error::Config(format!("`{}` holds imported values and cannot be synthesized", a.id)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used_keys = HashSet::with_capacity(num_keys);
    let mut keys = Vec::with_capacity(num_keys);
    while keys.len() < num_keys {
        let mut attempt = 0;
        loop {
            let k = make_key(&mut rng, opts.key_style, attempt);
            if used_keys.insert(k.name.clone()) {
                keys.push(k);
                break;
            }
            attempt += 1;
        }
    }

    // correlated attributes are filled after their partners
    let order: Vec<usize> = (0..schema.len())
        .filter(|&i| schema[i].correlated_with.is_none())
        .chain((0..schema.len()).filter(|&i| schema[i].correlated_with.is_some()))
        .collect();
    let mut values: Vec<Vec<String>> = vec![Vec::with_capacity(num_keys); schema.len()];
    let mut used_ids: Vec<HashSet<String>> = vec![HashSet::new(); schema.len()];
    let span_days = (NaiveDate::from_ymd_opt(2023, 12, 31).expect("valid date") - epoch_start()).num_days();
    for &ai in &order {
        let attr = &schema[ai];
        for (ki, key) in keys.iter().enumerate() {
            let v = if let Some(corr) = &attr.correlated_with {
                let pi = schema.iter().position(|b| b.id == corr.partner).expect("validated");
                corr.map[&values[pi][ki]].clone()
            } else {
                match &attr.value_kind {
                    ValueKind::PersonName => format!(
                        "{} {}",
                        names::GIVEN_NAMES[rng.gen_range(0..names::GIVEN_NAMES.len())],
                        names::SURNAMES[rng.gen_range(0..names::SURNAMES.len())]
                    ),
                    ValueKind::IdDigits { len } => loop {
                        let id: String = (0..*len).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect();
                        if used_ids[ai].insert(id.clone()) {
                            break id;
                        }
                    },
                    ValueKind::Date => {
                        let d = epoch_start() + Duration::days(rng.gen_range(0..=span_days));
                        d.format(DATE_FORMAT).to_string()
                    }
                    ValueKind::Longitude => {
                        let centre = names::REGIONS[key.region].1;
                        let micro = (centre * 1e6).round() as i64 + rng.gen_range(-300_000..=300_000);
                        format_micro(micro)
                    }
                    ValueKind::Categorical { levels } => levels[rng.gen_range(0..levels.len())].clone(),
                    ValueKind::CapitalBucket => {
                        let exps = names::BUSINESSES[key.business].1;
                        format!("CNY 10^{}", exps[rng.gen_range(0..exps.len())])
                    }
                    ValueKind::Imported => unreachable!("rejected above"),
                }
            };
            values[ai].push(v);
        }
    }
    let mut triples = Vec::with_capacity(num_keys * schema.len());
    for (ki, key) in keys.iter().enumerate() {
        for (ai, attr) in schema.iter().enumerate() {
            triples.push(FactTriple::forward(key.name.clone(), attr.id.clone(), values[ai][ki].clone()));
        }
    }
    FactDataset::new(triples, schema.to_vec(), Split::Train, seed)
}

/// Signed fixed-point rendering of a value in millionths, e.g. `-6.003986`.
fn format_micro(micro: i64) -> String {
    let sign = if micro < 0 { "-" } else { "" };
    let abs = micro.unsigned_abs();
    format!("{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000)
}

fn parse_micro(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if frac.len() > 6 || int.is_empty() {
        return None;
    }
    let int: i64 = int.parse().ok()?;
    let frac_val: i64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<6}").parse().ok()?
    };
    let v = int * 1_000_000 + frac_val;
    Some(if neg { -v } else { v })
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let mut parts = s.split('.');
    let y = parts.next()?.parse().ok()?;
    let m = parts.next()?.parse().ok()?;
    let d = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    NaiveDate::from_ymd_opt(y, m, d)
}

/// Canonical gap `a − b` between two values of a numeric attribute.
pub fn value_gap(kind: &ValueKind, a: &str, b: &str) -> Result<String> {
    match kind {
        ValueKind::Longitude => {
            let (x, y) = parse_micro(a)
                .zip(parse_micro(b))
                .ok_or_else(|| Error::Domain(format!("cannot parse longitudes `{a}`, `{b}`")))?;
            Ok(format_micro(x - y))
        }
        ValueKind::Date => {
            let (x, y) = parse_date(a)
                .zip(parse_date(b))
                .ok_or_else(|| Error::Domain(format!("cannot parse dates `{a}`, `{b}`")))?;
            Ok((x - y).num_days().to_string())
        }
        other => Err(Error::Domain(format!("no gap is defined for {other:?}"))),
    }
}

/// All triples of `num_keys` uniformly sampled keys, in corpus order.
pub fn sample_facts(corpus: &FactDataset, num_keys: usize, seed: u64) -> Result<FactDataset> {
    let keys = corpus.keys();
    if num_keys > keys.len() {
        return Err(Error::Range(format!(
            "requested {num_keys} keys but the corpus has {}",
            keys.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<&str> = sample(&mut rng, keys.len(), num_keys).into_iter().map(|i| keys[i]).collect();
    let mut out = corpus.filter(|t| chosen.contains(t.key.as_str()));
    out.seed = seed;
    Ok(out)
}

/// Reverse-direction copies of every forward one-hop triple of `attribute`.
pub fn derive_reverse(dataset: &FactDataset, attribute: &str) -> Result<FactDataset> {
    let spec = dataset.attribute(attribute)?;
    if spec.reverse_template.is_none() {
        return Err(Error::UnsupportedAttribute {
            attribute: attribute.into(),
            reason: "no reverse template".into(),
        });
    }
    let forward: Vec<&FactTriple> = dataset
        .triples
        .iter()
        .filter(|t| t.attribute == attribute && t.direction == Direction::Forward && t.hop == Hop::One)
        .collect();
    let mut by_value: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for t in &forward {
        by_value.entry(&t.value).or_default().push(&t.key);
    }
    let collisions: Vec<(String, Vec<String>)> = by_value
        .into_iter()
        .filter(|(_, keys)| keys.len() > 1)
        .map(|(v, keys)| (v.to_string(), keys.into_iter().map(String::from).collect()))
        .collect();
    if !collisions.is_empty() {
        return Err(Error::Ambiguous {
            attribute: attribute.into(),
            collisions,
        });
    }
    let triples = forward
        .into_iter()
        .map(|t| FactTriple {
            direction: Direction::Reverse,
            ..t.clone()
        })
        .collect();
    FactDataset::new(triples, dataset.schema.clone(), dataset.split, dataset.seed)
}

/// `num_pairs` gap facts over distinct ordered key pairs `(A, B)`, `A ≠ B`.
pub fn derive_two_hop(dataset: &FactDataset, attribute: &str, num_pairs: usize, seed: u64) -> Result<FactDataset> {
    let spec = dataset.attribute(attribute)?;
    if !spec.numeric || spec.two_hop_template.is_none() {
        return Err(Error::UnsupportedAttribute {
            attribute: attribute.into(),
            reason: "not a numeric attribute with a two-hop template".into(),
        });
    }
    let values: Vec<(&str, &str)> = dataset.values_by_key(attribute).into_iter().collect();
    let n = values.len();
    if n < 2 {
        return Err(Error::Range(format!("two-hop pairs need at least 2 keys with `{attribute}`")));
    }
    let max_pairs = n * (n - 1);
    if num_pairs > max_pairs {
        return Err(Error::Range(format!("{num_pairs} pairs requested, only {max_pairs} exist")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // index i encodes the ordered pair (i / (n-1), j) with j skipping the diagonal
    let picks = sample(&mut rng, max_pairs, num_pairs);
    let mut triples = Vec::with_capacity(num_pairs);
    for idx in picks {
        let a = idx / (n - 1);
        let mut b = idx % (n - 1);
        if b >= a {
            b += 1;
        }
        let gap = value_gap(&spec.value_kind, values[a].1, values[b].1)?;
        triples.push(FactTriple {
            key: values[a].0.to_string(),
            attribute: attribute.to_string(),
            value: gap,
            direction: Direction::Forward,
            hop: Hop::Two {
                second_key: values[b].0.to_string(),
            },
            weight: 1,
        });
    }
    FactDataset::new(triples, dataset.schema.clone(), dataset.split, seed)
}

/// Multiplies the weight of every triple of the listed attributes.
pub fn upsample(dataset: &FactDataset, factors: &HashMap<String, u32>) -> Result<FactDataset> {
    for (attr, &f) in factors {
        dataset.attribute(attr)?;
        if f == 0 {
            return Err(Error::Range(format!("zero up-sampling factor for `{attr}`")));
        }
    }
    let mut out = dataset.clone();
    for t in &mut out.triples {
        if let Some(&f) = factors.get(&t.attribute) {
            t.weight = t
                .weight
                .checked_mul(f)
                .ok_or_else(|| Error::Range("weight overflow".into()))?;
        }
    }
    Ok(out)
}

/// Key-disjoint train/held-out split. Two-hop triples follow their first key.
pub fn split_heldout(corpus: &FactDataset, heldout_fraction: f64, seed: u64) -> Result<(FactDataset, FactDataset)> {
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(Error::Range(format!("held-out fraction {heldout_fraction} outside (0, 1)")));
    }
    let mut keys = corpus.keys();
    let n = keys.len();
    let mut n_held = (n as f64 * heldout_fraction).round() as usize;
    if n >= 2 {
        n_held = n_held.clamp(1, n - 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let held: HashSet<&str> = keys[..n_held].iter().copied().collect();
    let mut heldout = corpus.filter(|t| held.contains(t.key.as_str()));
    heldout.split = Split::Heldout;
    let mut train = corpus.filter(|t| !held.contains(t.key.as_str()));
    train.split = Split::Train;
    Ok((train, heldout))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedExample {
    pub prompt_text: String,
    pub target_text: String,
    pub template_index: usize,
}

/// Substitutes the triple into one of its attribute's templates.
pub fn render(triple: &FactTriple, spec: &AttributeSpec, template_index: usize) -> Result<RenderedExample> {
    let unsupported = |reason: &str| Error::UnsupportedAttribute {
        attribute: spec.id.clone(),
        reason: reason.into(),
    };
    let single = |t: &Option<String>, what: &str| -> Result<String> {
        let t = t.as_ref().ok_or_else(|| unsupported(what))?;
        if template_index != 0 {
            return Err(Error::Range(format!("template index {template_index} out of range (1 template)")));
        }
        Ok(t.clone())
    };
    let (prompt_text, target_text) = match (&triple.hop, triple.direction) {
        (Hop::One, Direction::Forward) => {
            let n = spec.forward_templates.len();
            let t = spec
                .forward_templates
                .get(template_index)
                .ok_or_else(|| Error::Range(format!("template index {template_index} out of range ({n} templates)")))?;
            (t.replacen(schema::KEY_SLOT, &triple.key, 1), triple.value.clone())
        }
        (Hop::One, Direction::Reverse) => {
            let t = single(&spec.reverse_template, "no reverse template")?;
            (t.replacen(schema::VALUE_SLOT, &triple.value, 1), triple.key.clone())
        }
        (Hop::Two { second_key }, Direction::Forward) => {
            let t = single(&spec.two_hop_template, "no two-hop template")?;
            // substitute both slots in one pass so key text is never re-scanned
            let a = t.find(schema::FIRST_KEY_SLOT).expect("validated");
            let b = t.find(schema::SECOND_KEY_SLOT).expect("validated");
            let (first, first_val, second, second_val) = if a < b {
                (a, &triple.key, b, second_key)
            } else {
                (b, second_key, a, &triple.key)
            };
            let mut s = String::with_capacity(t.len() + triple.key.len() + second_key.len());
            s.push_str(&t[..first]);
            s.push_str(first_val);
            s.push_str(&t[first + 3..second]);
            s.push_str(second_val);
            s.push_str(&t[second + 3..]);
            (s, triple.value.clone())
        }
        (Hop::Two { .. }, Direction::Reverse) => return Err(unsupported("reverse two-hop facts")),
    };
    Ok(RenderedExample {
        prompt_text,
        target_text,
        template_index,
    })
}

#[cfg(test)]
mod tests;
