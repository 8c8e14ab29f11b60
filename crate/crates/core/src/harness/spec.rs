//! Declarative experiment specs and their validation.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::TemplatePolicy;
use crate::error::{Error, Result};
use crate::factgen::{company_schema, find, AttributeSpec, TemplateStyle};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// Version string folded into every spec hash.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    CapacitySize,
    CapacityEpochs,
    Direction,
    Correlated,
    TwoHop,
    AbilityMix,
    Frequency,
    Difficulty,
    Order,
    Generalization,
    TemplateCount,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::CapacitySize,
        ExperimentKind::CapacityEpochs,
        ExperimentKind::Direction,
        ExperimentKind::Correlated,
        ExperimentKind::TwoHop,
        ExperimentKind::AbilityMix,
        ExperimentKind::Frequency,
        ExperimentKind::Difficulty,
        ExperimentKind::Order,
        ExperimentKind::Generalization,
        ExperimentKind::TemplateCount,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CapacitySize => "capacity_size",
            ExperimentKind::CapacityEpochs => "capacity_epochs",
            ExperimentKind::Direction => "direction",
            ExperimentKind::Correlated => "correlated",
            ExperimentKind::TwoHop => "two_hop",
            ExperimentKind::AbilityMix => "ability_mix",
            ExperimentKind::Frequency => "frequency",
            ExperimentKind::Difficulty => "difficulty",
            ExperimentKind::Order => "order",
            ExperimentKind::Generalization => "generalization",
            ExperimentKind::TemplateCount => "template_count",
        }
    }

    /// Kinds whose groups compare memorization loads and default to saturating epochs.
    pub fn is_group_comparison(&self) -> bool {
        matches!(
            self,
            ExperimentKind::Direction
                | ExperimentKind::Correlated
                | ExperimentKind::TwoHop
                | ExperimentKind::AbilityMix
                | ExperimentKind::Frequency
                | ExperimentKind::Difficulty
                | ExperimentKind::Order
        )
    }
}

/// Model shape; the intermediate size defaults to 8/3 of hidden rounded up to 8
/// and heads to one per 32 hidden units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: usize,
    pub hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seq_len: Option<usize>,
    /// Overrides `train.learning_rate` for this model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
}

impl ModelSpec {
    pub fn new(layers: usize, hidden: usize) -> Self {
        ModelSpec {
            layers,
            hidden,
            heads: None,
            intermediate: None,
            max_seq_len: None,
            learning_rate: None,
        }
    }

    pub fn config(&self) -> ModelConfig {
        let heads = self.heads.unwrap_or((self.hidden / 32).max(1));
        let mut cfg = ModelConfig::desk(self.layers, self.hidden, heads);
        if let Some(i) = self.intermediate {
            cfg.intermediate = i;
        }
        if let Some(l) = self.max_seq_len {
            cfg.max_seq_len = l;
        }
        cfg
    }

    pub fn non_embed(&self) -> usize {
        crate::model::count_params(&self.config()).1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    /// Band search on |D| per cell.
    #[default]
    Search,
    /// `|D|·MR` at every size in the data grid.
    Grid,
    /// First epoch whose MR reaches φ, per size in the data grid.
    EarlyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitySpec {
    #[serde(default)]
    pub mode: CapacityMode,
    /// Percent.
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// First probed |D| for the first model; defaults to the first entry of the size grid.
    /// Later models start proportionally to their non-embed size.
    #[serde(default)]
    pub start: Option<usize>,
}

fn default_phi() -> f64 {
    95.0
}

fn default_budget() -> usize {
    8
}

impl Default for CapacitySpec {
    fn default() -> Self {
        CapacitySpec {
            mode: CapacityMode::Search,
            phi: default_phi(),
            budget: default_budget(),
            start: None,
        }
    }
}

/// Relative group sizes for correlated-attribute runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountPreset {
    /// Every attribute group holds the same number of facts.
    #[default]
    Equal,
    /// The partner attribute holds a quarter of the base attribute's facts.
    Asymmetric,
}

fn default_style() -> TemplateStyle {
    TemplateStyle::Compact
}

fn default_heldout_keys() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(default)]
    pub corpus_seed: u64,
    /// Keys synthesized for the corpus every cell samples from.
    pub corpus_keys: usize,
    pub attributes: Vec<String>,
    #[serde(default = "default_style")]
    pub style: TemplateStyle,
    #[serde(default)]
    pub template_policy: TemplatePolicy,
    /// |D| grid, in facts.
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// Facts per compared group (per direction, per attribute group or per phase).
    #[serde(default)]
    pub facts_per_group: usize,
    /// Up-sampling factors for frequency runs.
    #[serde(default)]
    pub factors: Vec<u32>,
    /// Attribute sets of datasets A and B for order and difficulty runs.
    #[serde(default)]
    pub phase_attributes: Vec<Vec<String>>,
    #[serde(default)]
    pub template_counts: Vec<usize>,
    /// Keys held out for generalization runs.
    #[serde(default = "default_heldout_keys")]
    pub heldout_keys: usize,
    #[serde(default)]
    pub capacity: CapacitySpec,
    #[serde(default)]
    pub count_preset: CountPreset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub models: Vec<ModelSpec>,
    pub data: DataSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Epoch grid; a single entry for every kind except `capacity_epochs`.
    pub epochs: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Epoch count the desk budget stands in for, recorded in the manifest.
    #[serde(default)]
    pub reference_epochs: Option<usize>,
}

fn default_parallelism() -> usize {
    1
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::SpecValidation(msg.into())
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    /// Hash of everything that determines the records, plus the code version.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        canon.parallelism = 1;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canon).expect("spec serializes"));
        h.update(CODE_VERSION.as_bytes());
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn schema(&self) -> Result<Vec<AttributeSpec>> {
        let full = company_schema(self.data.style);
        let mut ids: Vec<String> = Vec::new();
        fn push(ids: &mut Vec<String>, id: &str) {
            if !ids.iter().any(|i| i == id) {
                ids.push(id.to_string());
            }
        }
        for a in &self.data.attributes {
            push(&mut ids, a);
        }
        for set in &self.data.phase_attributes {
            for a in set {
                push(&mut ids, a);
            }
        }
        // correlated attributes need their partner in the corpus
        let mut extra = Vec::new();
        for id in &ids {
            let a = find(&full, id).map_err(|e| invalid(e.to_string()))?;
            if let Some(c) = &a.correlated_with {
                extra.push(c.partner.clone());
            }
        }
        for p in &extra {
            push(&mut ids, p);
        }
        // partners first so generation order is stable
        ids.sort_by_key(|id| find(&full, id).map(|a| a.correlated_with.is_some()).unwrap_or(false));
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        crate::factgen::select(&full, &ids).map_err(|e| invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if self.name.trim().is_empty() {
            return Err(invalid("name must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(invalid("seeds must be distinct"));
        }
        if self.models.is_empty() {
            return Err(invalid("at least one model is required"));
        }
        for m in &self.models {
            m.config().validate().map_err(|e| invalid(e.to_string()))?;
            if m.learning_rate.is_some_and(|lr| !(lr > 0.0 && lr.is_finite())) {
                return Err(invalid("a model's learning_rate must be positive"));
            }
        }
        if self.epochs.is_empty() || self.epochs.contains(&0) {
            return Err(invalid("epochs must be a non-empty list of positive counts"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism must be at least 1"));
        }
        if d.corpus_keys == 0 {
            return Err(invalid("corpus_keys must be positive"));
        }
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        let schema = if self.kind == ExperimentKind::AbilityMix && d.attributes.is_empty() {
            Vec::new()
        } else {
            self.schema()?
        };
        let attr = |id: &str| find(&schema, id).map_err(|e| invalid(e.to_string()));
        let single_epoch = || {
            if self.epochs.len() != 1 {
                return Err(invalid(format!("`{}` takes exactly one epoch count", self.kind.name())));
            }
            Ok(())
        };
        let need_group = || {
            if d.facts_per_group == 0 {
                return Err(invalid(format!("`{}` needs facts_per_group", self.kind.name())));
            }
            Ok(())
        };
        let one_model = || {
            if self.models.len() != 1 {
                return Err(invalid(format!("`{}` takes exactly one model", self.kind.name())));
            }
            Ok(())
        };
        let divisible = |n: usize, k: usize, what: &str| {
            if k == 0 || n % k != 0 {
                return Err(invalid(format!("{what} ({n}) must be a multiple of {k}")));
            }
            Ok(())
        };
        let sizes_positive = || {
            if d.sizes.is_empty() || d.sizes.contains(&0) {
                return Err(invalid(format!("`{}` needs a non-empty size grid", self.kind.name())));
            }
            for &s in &d.sizes {
                divisible(s, d.attributes.len(), "every size")?;
            }
            Ok(())
        };
        let keys_needed = |keys: usize| {
            if keys > d.corpus_keys {
                return Err(invalid(format!("needs {keys} keys but the corpus has {}", d.corpus_keys)));
            }
            Ok(())
        };
        if d.attributes.is_empty() && self.kind != ExperimentKind::AbilityMix {
            return Err(invalid("at least one attribute is required"));
        }
        match self.kind {
            ExperimentKind::CapacitySize => {
                single_epoch()?;
                if d.capacity.mode == CapacityMode::Search && self.models.len() < 2 {
                    return Err(invalid("capacity_size search needs at least two model sizes"));
                }
                self.check_capacity()?;
            }
            ExperimentKind::CapacityEpochs => {
                one_model()?;
                if d.capacity.mode != CapacityMode::EarlyStop && self.epochs.len() < 2 {
                    return Err(invalid("capacity_epochs needs an epoch grid"));
                }
                self.check_capacity()?;
            }
            ExperimentKind::Direction => {
                single_epoch()?;
                one_model()?;
                need_group()?;
                for a in &d.attributes {
                    if attr(a)?.reverse_template.is_none() {
                        return Err(invalid(format!("`{a}` has no reverse direction")));
                    }
                }
                divisible(d.facts_per_group, d.attributes.len(), "facts_per_group")?;
                keys_needed(2 * d.facts_per_group / d.attributes.len())?;
            }
            ExperimentKind::Correlated => {
                single_epoch()?;
                one_model()?;
                need_group()?;
                if d.attributes.len() != 3 {
                    return Err(invalid("correlated takes [base, correlated partner, unrelated] attributes"));
                }
                let (base, partner, other) = (attr(&d.attributes[0])?, attr(&d.attributes[1])?, attr(&d.attributes[2])?);
                let linked = |a: &AttributeSpec, b: &AttributeSpec| {
                    a.correlated_with.as_ref().is_some_and(|c| c.partner == b.id)
                };
                if !linked(partner, base) && !linked(base, partner) {
                    return Err(invalid(format!("`{}` is not correlated with `{}`", partner.id, base.id)));
                }
                if linked(other, base) || linked(base, other) {
                    return Err(invalid(format!("`{}` must be unrelated to `{}`", other.id, base.id)));
                }
                if d.count_preset == CountPreset::Asymmetric {
                    divisible(d.facts_per_group, 4, "facts_per_group")?;
                }
                keys_needed(d.facts_per_group)?;
            }
            ExperimentKind::TwoHop => {
                single_epoch()?;
                one_model()?;
                need_group()?;
                if d.attributes.len() != 1 {
                    return Err(invalid("two_hop takes exactly one numeric attribute"));
                }
                if attr(&d.attributes[0])?.two_hop_template.is_none() {
                    return Err(invalid(format!("`{}` has no two-hop form", d.attributes[0])));
                }
                keys_needed(2 * d.facts_per_group)?;
                // enough ordered pairs among the group's keys
                if d.facts_per_group < 2 || d.facts_per_group * (d.facts_per_group - 1) < d.facts_per_group {
                    return Err(invalid("two_hop needs at least 2 keys per group"));
                }
            }
            ExperimentKind::AbilityMix => {
                single_epoch()?;
                one_model()?;
                need_group()?;
                if d.attributes.is_empty() {
                    return Err(invalid("ability_mix needs fact attributes"));
                }
                divisible(d.facts_per_group, d.attributes.len(), "facts_per_group")?;
                keys_needed(d.facts_per_group / d.attributes.len())?;
            }
            ExperimentKind::Frequency => {
                single_epoch()?;
                one_model()?;
                need_group()?;
                if d.factors.len() < 2 || d.factors.contains(&0) {
                    return Err(invalid("frequency needs at least two positive factors"));
                }
                let f: HashSet<u32> = d.factors.iter().copied().collect();
                if f.len() != d.factors.len() {
                    return Err(invalid("factors must be distinct"));
                }
                divisible(d.facts_per_group, d.attributes.len(), "facts_per_group")?;
                keys_needed(d.factors.len() * d.facts_per_group / d.attributes.len())?;
            }
            ExperimentKind::Difficulty | ExperimentKind::Order => {
                single_epoch()?;
                need_group()?;
                if d.phase_attributes.len() != 2 || d.phase_attributes.iter().any(|p| p.is_empty()) {
                    return Err(invalid("two non-empty attribute sets (A, B) are required"));
                }
                for set in &d.phase_attributes {
                    divisible(d.facts_per_group, set.len(), "facts_per_group")?;
                }
                let keys: usize = d.phase_attributes.iter().map(|s| d.facts_per_group / s.len()).sum();
                keys_needed(keys)?;
                if self.kind == ExperimentKind::Difficulty {
                    if self.models.len() != 2 {
                        return Err(invalid("difficulty takes two models: size N and size 2N"));
                    }
                    let (a, b) = (self.models[0].non_embed() as f64, self.models[1].non_embed() as f64);
                    let ratio = b / a;
                    if !(1.5..=2.5).contains(&ratio) {
                        return Err(invalid(format!("second model must be about twice the first (ratio {ratio:.2})")));
                    }
                } else {
                    one_model()?;
                }
            }
            ExperimentKind::Generalization => {
                single_epoch()?;
                one_model()?;
                sizes_positive()?;
                if d.heldout_keys == 0 {
                    return Err(invalid("heldout_keys must be positive"));
                }
                let max = d.sizes.iter().max().copied().unwrap_or(0) / d.attributes.len();
                keys_needed(max + d.heldout_keys)?;
            }
            ExperimentKind::TemplateCount => {
                single_epoch()?;
                one_model()?;
                need_group()?;
                if d.template_counts.is_empty() || d.template_counts.contains(&0) {
                    return Err(invalid("template_count needs positive template counts"));
                }
                divisible(d.facts_per_group, d.attributes.len(), "facts_per_group")?;
                keys_needed(d.facts_per_group / d.attributes.len())?;
            }
        }
        Ok(())
    }

    fn check_capacity(&self) -> Result<()> {
        let d = &self.data;
        let c = &d.capacity;
        match c.mode {
            CapacityMode::Search => {
                if !(c.phi > 0.0 && c.phi < 100.0) || c.budget < 3 {
                    return Err(invalid("capacity search needs phi in (0, 100) and a budget of at least 3"));
                }
                let start = c.start.or(d.sizes.first().copied()).unwrap_or(0);
                if start == 0 || start % d.attributes.len() != 0 {
                    return Err(invalid("capacity search needs a start size that is a multiple of the attribute count"));
                }
            }
            CapacityMode::Grid | CapacityMode::EarlyStop => {
                if d.sizes.is_empty() || d.sizes.contains(&0) {
                    return Err(invalid("capacity grid needs a size grid"));
                }
                for &s in &d.sizes {
                    if s % d.attributes.len() != 0 {
                        return Err(invalid(format!("size {s} is not a multiple of the attribute count")));
                    }
                }
                let max = d.sizes.iter().max().copied().unwrap_or(0) / d.attributes.len();
                if max > d.corpus_keys {
                    return Err(invalid(format!("needs {max} keys but the corpus has {}", d.corpus_keys)));
                }
                if c.mode == CapacityMode::EarlyStop && !(c.phi > 0.0 && c.phi <= 100.0) {
                    return Err(invalid("phi must be in (0, 100]"));
                }
            }
        }
        Ok(())
    }
}
