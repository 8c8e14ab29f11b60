//! JSONL triples, JSON schemas and the tab-separated knowledge-base importer.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AttributeSpec, Direction, FactDataset, FactTriple, Hop, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub(crate) enum HopTag {
    One,
    Two,
}

/// On-disk layout of one triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TripleRecord {
    key: String,
    attribute: String,
    value: String,
    direction: Direction,
    hop: HopTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    second_key: Option<String>,
    #[serde(default = "one")]
    weight: u32,
}

fn one() -> u32 {
    1
}

impl From<FactTriple> for TripleRecord {
    fn from(t: FactTriple) -> Self {
        let (hop, second_key) = match t.hop {
            Hop::One => (HopTag::One, None),
            Hop::Two { second_key } => (HopTag::Two, Some(second_key)),
        };
        TripleRecord {
            key: t.key,
            attribute: t.attribute,
            value: t.value,
            direction: t.direction,
            hop,
            second_key,
            weight: t.weight,
        }
    }
}

impl TryFrom<TripleRecord> for FactTriple {
    type Error = String;

    fn try_from(r: TripleRecord) -> std::result::Result<Self, String> {
        let hop = match (r.hop, r.second_key) {
            (HopTag::One, None) => Hop::One,
            (HopTag::Two, Some(second_key)) => Hop::Two { second_key },
            (h, s) => return Err(format!("hop {h:?} with second_key {s:?}")),
        };
        Ok(FactTriple {
            key: r.key,
            attribute: r.attribute,
            value: r.value,
            direction: r.direction,
            hop,
            weight: r.weight,
        })
    }
}

pub fn write_triples_jsonl<W: Write>(mut w: W, triples: &[FactTriple]) -> Result<()> {
    for t in triples {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_triples_jsonl<R: BufRead>(r: R) -> Result<Vec<FactTriple>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: FactTriple = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_schema_json<W: Write>(w: W, schema: &[AttributeSpec]) -> Result<()> {
    serde_json::to_writer_pretty(w, schema)?;
    Ok(())
}

pub fn read_schema_json<R: std::io::Read>(r: R) -> Result<Vec<AttributeSpec>> {
    let schema: Vec<AttributeSpec> = serde_json::from_reader(r).map_err(|e| Error::Schema(e.to_string()))?;
    super::validate_schema(&schema)?;
    Ok(schema)
}

fn relation_id(name: &str) -> String {
    name.trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Reads `subject<TAB>relation<TAB>object` lines into forward triples.
///
/// Each relation becomes an attribute with the unified knowledge-base
/// prompt. Only the first object of a multi-valued relation is kept; the
/// number of dropped lines is returned alongside the dataset.
pub fn import_kb_slice<R: BufRead>(r: R, seed: u64) -> Result<(FactDataset, usize)> {
    let mut schema: Vec<AttributeSpec> = Vec::new();
    let mut triples = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = 0;
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<tsv>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [subject, relation, object] = fields[..] else {
            return Err(Error::Schema(format!("line {}: expected 3 tab-separated fields", i + 1)));
        };
        let (subject, relation, object) = (subject.trim(), relation.trim(), object.trim());
        if subject.is_empty() || relation.is_empty() || object.is_empty() {
            return Err(Error::Schema(format!("line {}: empty field", i + 1)));
        }
        let id = relation_id(relation);
        if !schema.iter().any(|a| a.id == id) {
            schema.push(AttributeSpec::imported(&id, relation));
        }
        if !seen.insert((subject.to_string(), id.clone())) {
            dropped += 1;
            continue;
        }
        triples.push(FactTriple::forward(subject, id, object));
    }
    if schema.is_empty() {
        return Err(Error::Schema("no facts in knowledge-base slice".into()));
    }
    Ok((FactDataset::new(triples, schema, Split::Train, seed)?, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_layout() {
        let mut t = FactTriple::forward("A Co.", "longitude", "1.5");
        t.hop = Hop::Two {
            second_key: "B Co.".into(),
        };
        t.weight = 3;
        let ts = vec![FactTriple::forward("A Co.", "operator", "Wei Li"), t];
        let mut buf = Vec::new();
        write_triples_jsonl(&mut buf, &ts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["direction"], "forward");
        assert_eq!(first["hop"], "one");
        assert!(first.get("second_key").is_none());
        assert_eq!(read_triples_jsonl(&buf[..]).unwrap(), ts);
    }

    #[test]
    fn malformed_hop_rejected() {
        let line = r#"{"key":"a","attribute":"x","value":"1","direction":"forward","hop":"two"}"#;
        assert!(matches!(read_triples_jsonl(line.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn kb_import_uses_unified_template() {
        let tsv = "Dune\tauthor\tFrank Herbert\nDune\tauthor\tSomeone Else\n# comment\nParis\tcountry\tFrance\n";
        let (ds, dropped) = import_kb_slice(tsv.as_bytes(), 0).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(ds.len(), 2);
        let a = ds.attribute("author").unwrap();
        assert_eq!(
            a.forward_templates[0],
            "For this entity, <K>, the entity forming the relationship 'author' is:"
        );
        assert!(import_kb_slice("only\ttwo\n".as_bytes(), 0).is_err());
    }

    #[test]
    fn schema_json_round_trip() {
        let s = super::super::company_schema(super::super::TemplateStyle::Compact);
        let mut buf = Vec::new();
        write_schema_json(&mut buf, &s).unwrap();
        assert_eq!(read_schema_json(&buf[..]).unwrap(), s);
    }
}
