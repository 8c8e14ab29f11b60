//! Attribute schemas and the value generators behind them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KEY_SLOT: &str = "<K>";
pub const VALUE_SLOT: &str = "<V>";
pub const FIRST_KEY_SLOT: &str = "<A>";
pub const SECOND_KEY_SLOT: &str = "<B>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueKind {
    PersonName,
    IdDigits { len: usize },
    Date,
    /// Longitude near the key's region centre.
    Longitude,
    Categorical { levels: Vec<String> },
    /// Registered-capital bucket driven by the key's business type.
    CapitalBucket,
    /// Values read from an external source; never synthesized.
    Imported,
}

/// Deterministic map from a partner attribute's levels to this attribute's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub partner: String,
    pub map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub id: String,
    pub name: String,
    pub value_kind: ValueKind,
    pub forward_templates: Vec<String>,
    #[serde(default)]
    pub reverse_template: Option<String>,
    /// Template for derived gaps between two keys, with `<A>` and `<B>` slots.
    #[serde(default)]
    pub two_hop_template: Option<String>,
    #[serde(default)]
    pub correlated_with: Option<Correlation>,
    #[serde(default)]
    pub numeric: bool,
}

/// Prompt wording used by the built-in schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStyle {
    /// Full sentences in the company-table register.
    Table,
    /// Short prompts for desk-scale runs, same slot structure.
    Compact,
}

fn slot_count(template: &str, slot: &str) -> usize {
    template.matches(slot).count()
}

impl AttributeSpec {
    fn with_templates(id: &str, name: &str, value_kind: ValueKind, style: TemplateStyle) -> Self {
        let forward = match style {
            TemplateStyle::Table => {
                format!("In the company information table, the \"{name}\" of the company \"{KEY_SLOT}\" is:")
            }
            TemplateStyle::Compact => format!("{KEY_SLOT}|{name}:"),
        };
        AttributeSpec {
            id: id.to_string(),
            name: name.to_string(),
            value_kind,
            forward_templates: vec![forward],
            reverse_template: None,
            two_hop_template: None,
            correlated_with: None,
            numeric: false,
        }
    }

    /// Attribute for imported relation facts, using the unified
    /// knowledge-base prompt `For this entity, <K>, the entity forming the
    /// relationship '<name>' is:`.
    pub fn imported(id: &str, name: &str) -> Self {
        AttributeSpec {
            id: id.to_string(),
            name: name.to_string(),
            value_kind: ValueKind::Imported,
            forward_templates: vec![format!(
                "For this entity, {KEY_SLOT}, the entity forming the relationship '{name}' is:"
            )],
            reverse_template: None,
            two_hop_template: None,
            correlated_with: None,
            numeric: false,
        }
    }

    fn reversible(mut self, style: TemplateStyle) -> Self {
        let name = &self.name;
        self.reverse_template = Some(match style {
            TemplateStyle::Table => {
                format!("In the company information table, the company with the \"{name}\" as {VALUE_SLOT} is:")
            }
            TemplateStyle::Compact => format!("{name}={VALUE_SLOT}|company:"),
        });
        self
    }

    fn numeric_gap(mut self, style: TemplateStyle) -> Self {
        let name = &self.name;
        self.numeric = true;
        self.two_hop_template = Some(match style {
            TemplateStyle::Table => format!(
                "In the company information table, the difference in \"{name}\" between \"{FIRST_KEY_SLOT}\" and \"{SECOND_KEY_SLOT}\" is:"
            ),
            TemplateStyle::Compact => format!("{FIRST_KEY_SLOT}|{SECOND_KEY_SLOT}|d{name}:"),
        });
        self
    }

    fn correlated(mut self, partner: &str, pairs: &[(&str, &str)]) -> Self {
        self.correlated_with = Some(Correlation {
            partner: partner.to_string(),
            map: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        });
        self
    }

    /// Adds extra forward templates by prefixing variants of the first one.
    pub fn with_template_count(mut self, count: usize) -> Self {
        let base = self.forward_templates[0].clone();
        const LEADS: [&str; 7] = ["Q: ", "Recall: ", "Fact: ", "Table lookup: ", "Record: ", "Query: ", "Answer: "];
        self.forward_templates.truncate(1);
        for i in 1..count.max(1) {
            let lead = LEADS[(i - 1) % LEADS.len()];
            let rep = (i - 1) / LEADS.len();
            self.forward_templates.push(format!("{}{}{base}", lead, "#".repeat(rep)));
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("attribute id must be non-empty".into()));
        }
        if self.forward_templates.is_empty() {
            return Err(Error::Config(format!("attribute `{}` has no forward template", self.id)));
        }
        for t in &self.forward_templates {
            if slot_count(t, KEY_SLOT) != 1 {
                return Err(Error::Config(format!(
                    "forward template of `{}` must contain exactly one {KEY_SLOT}: {t:?}",
                    self.id
                )));
            }
        }
        if let Some(t) = &self.reverse_template {
            if slot_count(t, VALUE_SLOT) != 1 {
                return Err(Error::Config(format!(
                    "reverse template of `{}` must contain exactly one {VALUE_SLOT}: {t:?}",
                    self.id
                )));
            }
        }
        if let Some(t) = &self.two_hop_template {
            if slot_count(t, FIRST_KEY_SLOT) != 1 || slot_count(t, SECOND_KEY_SLOT) != 1 {
                return Err(Error::Config(format!(
                    "two-hop template of `{}` needs one {FIRST_KEY_SLOT} and one {SECOND_KEY_SLOT}",
                    self.id
                )));
            }
        }
        if self.numeric && !matches!(self.value_kind, ValueKind::Longitude | ValueKind::Date) {
            return Err(Error::Config(format!(
                "attribute `{}` is flagged numeric but its values are not longitudes or dates",
                self.id
            )));
        }
        if let ValueKind::IdDigits { len } = self.value_kind {
            if len == 0 {
                return Err(Error::Config(format!("`{}` has zero-length ids", self.id)));
            }
        }
        if let ValueKind::Categorical { levels } = &self.value_kind {
            if levels.is_empty() {
                return Err(Error::Config(format!("categorical `{}` has no levels", self.id)));
            }
        }
        Ok(())
    }
}

/// Checks every attribute plus cross-attribute constraints (unique ids,
/// correlation maps total over the partner's levels).
pub fn validate_schema(schema: &[AttributeSpec]) -> Result<()> {
    if schema.is_empty() {
        return Err(Error::Config("schema is empty".into()));
    }
    for (i, a) in schema.iter().enumerate() {
        a.validate()?;
        if schema[..i].iter().any(|b| b.id == a.id) {
            return Err(Error::Config(format!("duplicate attribute id `{}`", a.id)));
        }
    }
    for a in schema {
        let Some(corr) = &a.correlated_with else { continue };
        let partner = schema.iter().find(|b| b.id == corr.partner).ok_or_else(|| {
            Error::Config(format!("`{}` correlates with unknown attribute `{}`", a.id, corr.partner))
        })?;
        let ValueKind::Categorical { levels } = &partner.value_kind else {
            return Err(Error::Config(format!(
                "`{}` correlates with `{}`, which is not categorical",
                a.id, partner.id
            )));
        };
        if partner.correlated_with.is_some() {
            return Err(Error::Config(format!("correlation chains are not supported (`{}`)", a.id)));
        }
        if let Some(missing) = levels.iter().find(|l| !corr.map.contains_key(*l)) {
            return Err(Error::Config(format!(
                "value map of `{}` is not total: level `{missing}` of `{}` is unmapped",
                a.id, partner.id
            )));
        }
    }
    Ok(())
}

pub fn find<'a>(schema: &'a [AttributeSpec], id: &str) -> Result<&'a AttributeSpec> {
    schema
        .iter()
        .find(|a| a.id == id)
        .ok_or_else(|| Error::Config(format!("unknown attribute `{id}`")))
}

fn levels(items: &[&str]) -> ValueKind {
    ValueKind::Categorical {
        levels: items.iter().map(|s| s.to_string()).collect(),
    }
}

const TYPES: [(&str, &str); 6] = [
    ("Co., Ltd.", "1100"),
    ("Joint-Stock Co.", "1200"),
    ("Sole Proprietorship", "2190"),
    ("Partnership", "4100"),
    ("Branch Office", "5130"),
    ("Collective", "3200"),
];

const TITLES: [(&str, &str); 5] = [
    ("Executive Director", "410A"),
    ("Chairman", "410B"),
    ("General Manager", "410C"),
    ("Person in Charge", "490A"),
    ("Partner", "430A"),
];

/// The company-table attributes with the given prompt wording.
///
/// Id lengths follow the reference table (18-character credit numbers,
/// 13-digit registration numbers) for [`TemplateStyle::Table`] and are
/// shortened to 8 and 6 digits for [`TemplateStyle::Compact`].
pub fn company_schema(style: TemplateStyle) -> Vec<AttributeSpec> {
    let (credit_len, reg_len) = match style {
        TemplateStyle::Table => (18, 13),
        TemplateStyle::Compact => (8, 6),
    };
    let type_levels: Vec<&str> = TYPES.iter().map(|t| t.0).collect();
    let title_levels: Vec<&str> = TITLES.iter().map(|t| t.0).collect();
    vec![
        AttributeSpec::with_templates("credit_no", "Credit-No", ValueKind::IdDigits { len: credit_len }, style)
            .reversible(style),
        AttributeSpec::with_templates("operator", "Operator", ValueKind::PersonName, style).reversible(style),
        AttributeSpec::with_templates("start_date", "Start-Date", ValueKind::Date, style).numeric_gap(style),
        AttributeSpec::with_templates("title", "Title", levels(&title_levels), style),
        AttributeSpec::with_templates("title_code", "Title-Code", levels(&TITLES.map(|t| t.1)), style)
            .correlated("title", &TITLES),
        AttributeSpec::with_templates("type", "Type", levels(&type_levels), style),
        AttributeSpec::with_templates("type_code", "Type-Code", levels(&TYPES.map(|t| t.1)), style)
            .correlated("type", &TYPES),
        AttributeSpec::with_templates("longitude", "Longitude", ValueKind::Longitude, style).numeric_gap(style),
        AttributeSpec::with_templates("register_no", "Register-No", ValueKind::IdDigits { len: reg_len }, style)
            .reversible(style),
        AttributeSpec::with_templates("register_capital", "Register-Capital", ValueKind::CapitalBucket, style),
        AttributeSpec::with_templates(
            "status",
            "Status",
            levels(&["Open", "Closed", "Revoked", "Moved Out"]),
            style,
        ),
    ]
}

/// Book → Author facts in the unified knowledge-base register.
pub fn author_attribute(style: TemplateStyle) -> AttributeSpec {
    let template = match style {
        TemplateStyle::Table => {
            format!("For this entity, {KEY_SLOT}, the entity forming the relationship 'author' is:")
        }
        TemplateStyle::Compact => format!("{KEY_SLOT}|author:"),
    };
    AttributeSpec {
        id: "author".into(),
        name: "author".into(),
        value_kind: ValueKind::PersonName,
        forward_templates: vec![template],
        reverse_template: None,
        two_hop_template: None,
        correlated_with: None,
        numeric: false,
    }
}

/// Schema restricted to the given attribute ids, in the order given.
pub fn select(schema: &[AttributeSpec], ids: &[&str]) -> Result<Vec<AttributeSpec>> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let a = find(schema, id)?.clone();
        if let Some(c) = &a.correlated_with {
            if !ids.contains(&c.partner.as_str()) {
                return Err(Error::Config(format!(
                    "`{id}` needs its partner `{}` in the selection",
                    c.partner
                )));
            }
        }
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_schemas_validate() {
        for style in [TemplateStyle::Table, TemplateStyle::Compact] {
            let s = company_schema(style);
            validate_schema(&s).unwrap();
            author_attribute(style).validate().unwrap();
        }
    }

    #[test]
    fn reverse_template_wording() {
        let s = company_schema(TemplateStyle::Table);
        let credit = find(&s, "credit_no").unwrap();
        assert_eq!(
            credit.reverse_template.as_deref().unwrap(),
            "In the company information table, the company with the \"Credit-No\" as <V> is:"
        );
    }

    #[test]
    fn bad_templates_rejected() {
        let mut a = company_schema(TemplateStyle::Compact).remove(0);
        a.forward_templates = vec!["<K> and <K>".into()];
        assert!(a.validate().is_err());
        a.forward_templates = vec!["no slot".into()];
        assert!(a.validate().is_err());
    }

    #[test]
    fn partial_value_map_rejected() {
        let mut s = company_schema(TemplateStyle::Compact);
        let tc = s.iter_mut().find(|a| a.id == "type_code").unwrap();
        tc.correlated_with.as_mut().unwrap().map.remove("Partnership");
        let err = validate_schema(&s).unwrap_err().to_string();
        assert!(err.contains("Partnership"), "{err}");
    }

    #[test]
    fn template_count_variants_keep_slot() {
        let a = company_schema(TemplateStyle::Table).remove(0).with_template_count(10);
        assert_eq!(a.forward_templates.len(), 10);
        a.validate().unwrap();
        let distinct: std::collections::HashSet<_> = a.forward_templates.iter().collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn empty_schema_is_config_error() {
        assert!(matches!(validate_schema(&[]), Err(Error::Config(_))));
    }
}
