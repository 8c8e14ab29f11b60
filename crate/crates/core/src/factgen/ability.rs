//! A 3-class pattern classification task that plays the role of an
//! abstract ability trained alongside facts.
//!
//! Each input is an 8-letter string `w + f(w)` where `w` is a random
//! 4-letter non-palindrome and `f` is one of three pattern families. The
//! label is the family, so it is learnable as a rule and generalizes to
//! unseen strings.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::KEY_SLOT;
use super::{AttributeSpec, FactDataset, FactTriple, Split, TemplateStyle, ValueKind};
use crate::error::{Error, Result};

pub const ABILITY_LABELS: [&str; 3] = ["repeat", "mirror", "shift"];

pub fn ability_attribute(style: TemplateStyle) -> AttributeSpec {
    let template = match style {
        TemplateStyle::Table => format!("Classify the letter pattern \"{KEY_SLOT}\" as repeat, mirror or shift:"),
        TemplateStyle::Compact => format!("{KEY_SLOT}|pattern:"),
    };
    AttributeSpec {
        id: "pattern_class".into(),
        name: "pattern".into(),
        value_kind: ValueKind::Categorical {
            levels: ABILITY_LABELS.iter().map(|s| s.to_string()).collect(),
        },
        forward_templates: vec![template],
        reverse_template: None,
        two_hop_template: None,
        correlated_with: None,
        numeric: false,
    }
}

fn complete(w: &[u8; 4], family: usize) -> String {
    let tail: Vec<u8> = match family {
        0 => w.to_vec(),
        1 => w.iter().rev().copied().collect(),
        _ => w.iter().map(|c| b'a' + (c - b'a' + 1) % 26).collect(),
    };
    let mut s = String::from_utf8(w.to_vec()).expect("ascii");
    s.push_str(std::str::from_utf8(&tail).expect("ascii"));
    s
}

/// `num_examples` labelled patterns with balanced classes (family = index mod 3).
pub fn synth_ability_task(num_examples: usize, style: TemplateStyle, seed: u64) -> Result<FactDataset> {
    if num_examples == 0 {
        return Err(Error::Range("num_examples must be at least 1".into()));
    }
    if num_examples > 300_000 {
        return Err(Error::Range("at most 300000 distinct patterns are generated".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(num_examples);
    let mut triples = Vec::with_capacity(num_examples);
    while triples.len() < num_examples {
        let family = triples.len() % 3;
        let w: [u8; 4] = std::array::from_fn(|_| b'a' + rng.gen_range(0..26u8));
        if w[0] == w[3] && w[1] == w[2] {
            continue;
        }
        let key = complete(&w, family);
        if seen.insert(key.clone()) {
            triples.push(FactTriple::forward(key, "pattern_class", ABILITY_LABELS[family]));
        }
    }
    FactDataset::new(triples, vec![ability_attribute(style)], Split::Train, seed)
}
