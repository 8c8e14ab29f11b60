//! Rendered, tokenized training sets built from fact datasets.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factgen::{render, Direction, FactDataset, FactTriple, Hop};
use crate::model::Example;
use crate::tokenizer;

/// How an attribute's forward templates are assigned to triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplatePolicy {
    /// One template per triple, chosen by a stable hash of its identity.
    #[default]
    FixedByHash,
    /// Start at the hashed template and advance by one every epoch.
    RotatePerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RenderOptions {
    pub policy: TemplatePolicy,
    /// Put loss on prompt tokens too.
    pub full_sequence_loss: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFact {
    pub key: String,
    pub second_key: Option<String>,
    pub attribute: String,
    pub direction: Direction,
    /// Prompt used for evaluation (the hashed template).
    pub prompt: String,
    pub target: String,
    pub template_index: usize,
    pub weight: u32,
    /// Training examples; epoch `e` uses `variants[e % len]`.
    variants: Vec<Example>,
}

impl RenderedFact {
    /// Breakdown label: the attribute, tagged for reverse and two-hop facts.
    pub fn group(&self) -> String {
        match (self.direction, &self.second_key) {
            (_, Some(_)) => format!("{}/two_hop", self.attribute),
            (Direction::Reverse, None) => format!("{}/reverse", self.attribute),
            (Direction::Forward, None) => self.attribute.clone(),
        }
    }

    pub fn example_for_epoch(&self, epoch: usize) -> &Example {
        &self.variants[epoch % self.variants.len()]
    }

    pub fn eval_example(&self) -> &Example {
        &self.variants[0]
    }

    pub fn prompt_tokens(&self) -> Vec<u32> {
        tokenizer::encode(&self.prompt)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.key.as_str()).chain(self.second_key.as_deref())
    }
}

fn template_hash(t: &FactTriple) -> u64 {
    let mut h = Sha256::new();
    for part in [t.key.as_str(), "\u{1f}", t.attribute.as_str(), "\u{1f}"] {
        h.update(part.as_bytes());
    }
    h.update([t.direction as u8]);
    if let Hop::Two { second_key } = &t.hop {
        h.update(second_key.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Distinct rendered facts with their replication weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub facts: Vec<RenderedFact>,
}

impl TrainingSet {
    pub fn from_dataset(ds: &FactDataset, opts: RenderOptions) -> Result<Self> {
        let mut facts = Vec::with_capacity(ds.len());
        for t in &ds.triples {
            let spec = ds.attribute(&t.attribute)?;
            let n = match (&t.hop, t.direction) {
                (Hop::One, Direction::Forward) => spec.forward_templates.len(),
                _ => 1,
            };
            let start = (template_hash(t) % n as u64) as usize;
            let count = match opts.policy {
                TemplatePolicy::FixedByHash => 1,
                TemplatePolicy::RotatePerEpoch => n,
            };
            let mut variants = Vec::with_capacity(count);
            let mut first = None;
            for j in 0..count {
                let r = render(t, spec, (start + j) % n)?;
                let p = tokenizer::encode(&r.prompt_text);
                let a = tokenizer::encode(&r.target_text);
                variants.push(if opts.full_sequence_loss {
                    Example::framed_full(&p, &a)
                } else {
                    Example::framed(&p, &a)
                });
                first.get_or_insert(r);
            }
            let r = first.expect("at least one variant");
            facts.push(RenderedFact {
                key: t.key.clone(),
                second_key: match &t.hop {
                    Hop::Two { second_key } => Some(second_key.clone()),
                    Hop::One => None,
                },
                attribute: t.attribute.clone(),
                direction: t.direction,
                prompt: r.prompt_text,
                target: r.target_text,
                template_index: r.template_index,
                weight: t.weight,
                variants,
            });
        }
        Ok(TrainingSet { facts })
    }

    pub fn concat(parts: &[&TrainingSet]) -> Self {
        TrainingSet {
            facts: parts.iter().flat_map(|p| p.facts.iter().cloned()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Examples per epoch: the sum of weights.
    pub fn effective_size(&self) -> usize {
        self.facts.iter().map(|f| f.weight as usize).sum()
    }

    /// Longest training sequence, in tokens.
    pub fn max_len(&self) -> usize {
        self.facts
            .iter()
            .flat_map(|f| f.variants.iter().map(|e| e.tokens.len()))
            .max()
            .unwrap_or(0)
    }

    pub fn keys(&self) -> HashSet<&str> {
        self.facts.iter().flat_map(|f| f.keys()).collect()
    }

    /// Weight-expanded fact indices for one epoch, shuffled by `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = self
            .facts
            .iter()
            .enumerate()
            .flat_map(|(i, f)| std::iter::repeat(i).take(f.weight as usize))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch));
        order.shuffle(&mut rng);
        order
    }

    /// The same facts with every weight expanded into physical copies.
    pub fn expanded(&self) -> Self {
        TrainingSet {
            facts: self
                .facts
                .iter()
                .flat_map(|f| {
                    std::iter::repeat(RenderedFact {
                        weight: 1,
                        ..f.clone()
                    })
                    .take(f.weight as usize)
                })
                .collect(),
        }
    }

    pub fn check_nonempty(&self) -> Result<()> {
        if self.facts.is_empty() {
            return Err(Error::Degenerate("training set is empty".into()));
        }
        Ok(())
    }
}

pub(crate) fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
