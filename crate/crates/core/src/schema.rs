//! Relation and attribute ontologies.
//!
//! Schemas are loaded from a plain-text document with four sections:
//!
//! ```text
//! # comment
//! [relations]
//! per:children
//! !unanswerable          # '!' marks the distinguished no-relation label
//!
//! [inverses]
//! per:children = per:parents
//! per:friends = per:friends
//!
//! [interpersonal]
//! per:children
//!
//! [attributes]
//! gender = male, female
//! ```
//!
//! Sections may appear in any order; `[relations]` is mandatory. If no
//! entry carries the `!` marker, a label spelled exactly `unanswerable`
//! is used as the no-relation label. Attribute domains never contain the
//! reserved token `unknown`: that token is the unset state injected by
//! the loader and is valid for every subtype.
//!
//! Schemas are immutable after construction and safe to share across
//! threads.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Reserved token for the unset attribute state. Never part of a domain.
pub const UNKNOWN_TOKEN: &str = "unknown";

/// Index of a relation label within its [`RelationSchema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct RelationId(pub usize);

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("line {line}: cannot parse `{content}`")]
    MalformedLine { line: usize, content: String },
    #[error("duplicate relation label `{0}`")]
    DuplicateLabel(String),
    #[error("duplicate attribute subtype `{0}`")]
    DuplicateSubtype(String),
    #[error("attribute subtype `{0}` has an empty value domain")]
    EmptyDomain(String),
    #[error("duplicate value `{value}` in subtype `{subtype}`")]
    DuplicateValue { subtype: String, value: String },
    #[error("subtype `{0}` lists the reserved token `unknown` in its domain")]
    ReservedValue(String),
    #[error("{section} references unknown label `{label}`")]
    UnknownLabel { section: String, label: String },
    #[error("inverse pair {a} = {b} conflicts with {a} = {c}")]
    ConflictingInverse { a: String, b: String, c: String },
    #[error("no unanswerable label: mark one with `!` or name it `unanswerable`")]
    MissingUnanswerable,
    #[error("more than one label marked `!` in [relations]")]
    MultipleUnanswerable,
    #[error("the unanswerable label `{0}` may not have an inverse")]
    UnanswerableInverse(String),
    #[error("relation label `{0}` not in schema")]
    UnknownRelation(String),
    #[error("missing [relations] section")]
    MissingRelations,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The relation-label alphabet: ordered labels, a partial involutive
/// inverse map, an interpersonal subset, and the distinguished
/// no-relation label.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSchema {
    labels: Vec<String>,
    index: HashMap<String, RelationId>,
    inverse: Vec<Option<RelationId>>,
    interpersonal: Vec<bool>,
    unanswerable: RelationId,
}

impl RelationSchema {
    pub fn new(
        labels: Vec<String>,
        inverse_pairs: &[(String, String)],
        interpersonal: &[String],
        unanswerable: &str,
    ) -> Result<Self, SchemaError> {
        let mut index = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), RelationId(i)).is_some() {
                return Err(SchemaError::DuplicateLabel(label.clone()));
            }
        }
        let lookup = |section: &str, label: &str| -> Result<RelationId, SchemaError> {
            index.get(label).copied().ok_or_else(|| SchemaError::UnknownLabel {
                section: section.to_string(),
                label: label.to_string(),
            })
        };
        let unanswerable = lookup("[relations]", unanswerable)?;

        let mut inverse: Vec<Option<RelationId>> = vec![None; labels.len()];
        let mut record = |a: RelationId, b: RelationId| -> Result<(), SchemaError> {
            match inverse[a.0] {
                Some(prev) if prev != b => Err(SchemaError::ConflictingInverse {
                    a: labels[a.0].clone(),
                    b: labels[b.0].clone(),
                    c: labels[prev.0].clone(),
                }),
                _ => {
                    inverse[a.0] = Some(b);
                    Ok(())
                }
            }
        };
        for (a, b) in inverse_pairs {
            let a = lookup("[inverses]", a)?;
            let b = lookup("[inverses]", b)?;
            record(a, b)?;
            record(b, a)?;
        }
        if inverse[unanswerable.0].is_some() {
            return Err(SchemaError::UnanswerableInverse(labels[unanswerable.0].clone()));
        }

        let mut flags = vec![false; labels.len()];
        for label in interpersonal {
            flags[lookup("[interpersonal]", label)?.0] = true;
        }

        Ok(Self { labels, index, inverse, interpersonal: flags, unanswerable })
    }

    /// Total number of labels, the unanswerable label included.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of proper relation types, i.e. labels other than the
    /// unanswerable one.
    pub fn relation_type_count(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn label(&self, id: RelationId) -> &str {
        &self.labels[id.0]
    }

    pub fn id(&self, label: &str) -> Option<RelationId> {
        self.index.get(label).copied()
    }

    pub fn unanswerable(&self) -> RelationId {
        self.unanswerable
    }

    pub fn inverse(&self, id: RelationId) -> Option<RelationId> {
        self.inverse[id.0]
    }

    /// Inverse lookup by label. `Ok(None)` when the label has no inverse.
    pub fn inverse_of(&self, label: &str) -> Result<Option<&str>, SchemaError> {
        let id = self
            .id(label)
            .ok_or_else(|| SchemaError::UnknownRelation(label.to_string()))?;
        Ok(self.inverse(id).map(|r| self.label(r)))
    }

    pub fn is_interpersonal(&self, id: RelationId) -> bool {
        self.interpersonal[id.0]
    }

    pub fn interpersonal_count(&self) -> usize {
        self.interpersonal.iter().filter(|f| **f).count()
    }

    pub fn labels(&self) -> impl Iterator<Item = (RelationId, &str)> {
        self.labels.iter().enumerate().map(|(i, l)| (RelationId(i), l.as_str()))
    }
}

/// Attribute subtypes and their value domains. The unknown state is
/// implicit: it belongs to every subtype and to none of the domains.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSchema {
    subtypes: Vec<String>,
    domains: Vec<Vec<String>>,
    subtype_index: HashMap<String, usize>,
    value_index: Vec<HashMap<String, usize>>,
}

impl AttributeSchema {
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self, SchemaError> {
        let mut subtypes = Vec::new();
        let mut domains = Vec::new();
        let mut subtype_index = HashMap::new();
        let mut value_index = Vec::new();
        for (subtype, values) in entries {
            if subtype_index.insert(subtype.clone(), subtypes.len()).is_some() {
                return Err(SchemaError::DuplicateSubtype(subtype));
            }
            if values.is_empty() {
                return Err(SchemaError::EmptyDomain(subtype));
            }
            let mut idx = HashMap::new();
            for (i, v) in values.iter().enumerate() {
                if v == UNKNOWN_TOKEN {
                    return Err(SchemaError::ReservedValue(subtype));
                }
                if idx.insert(v.clone(), i).is_some() {
                    return Err(SchemaError::DuplicateValue { subtype, value: v.clone() });
                }
            }
            subtypes.push(subtype);
            domains.push(values);
            value_index.push(idx);
        }
        Ok(Self { subtypes, domains, subtype_index, value_index })
    }

    /// An attribute-free schema (the reduced model's configuration).
    pub fn empty() -> Self {
        Self::new(Vec::new()).expect("empty schema is valid")
    }

    /// Number of subtypes, written M elsewhere.
    pub fn subtype_count(&self) -> usize {
        self.subtypes.len()
    }

    pub fn subtype(&self, m: usize) -> &str {
        &self.subtypes[m]
    }

    pub fn subtype_id(&self, name: &str) -> Option<usize> {
        self.subtype_index.get(name).copied()
    }

    pub fn arity(&self, m: usize) -> usize {
        self.domains[m].len()
    }

    pub fn domain(&self, m: usize) -> &[String] {
        &self.domains[m]
    }

    pub fn value_id(&self, m: usize, value: &str) -> Option<usize> {
        self.value_index[m].get(value).copied()
    }

    pub fn value_label(&self, m: usize, v: usize) -> &str {
        &self.domains[m][v]
    }
}

/// A relation schema and an attribute schema loaded from one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Schemas {
    pub relations: RelationSchema,
    pub attributes: AttributeSchema,
}

impl Schemas {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let doc = SchemaDoc::parse(text)?;
        Ok(Self {
            relations: load_relation_schema_doc(&doc)?,
            attributes: load_attribute_schema_doc(&doc)?,
        })
    }

    /// Canonical text form; reparsing it reproduces the schemas exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[relations]\n");
        for (id, label) in self.relations.labels() {
            if id == self.relations.unanswerable() {
                out.push('!');
            }
            out.push_str(label);
            out.push('\n');
        }
        out.push_str("\n[inverses]\n");
        for (id, label) in self.relations.labels() {
            if let Some(inv) = self.relations.inverse(id) {
                if inv.0 >= id.0 {
                    out.push_str(&format!("{} = {}\n", label, self.relations.label(inv)));
                }
            }
        }
        out.push_str("\n[interpersonal]\n");
        for (id, label) in self.relations.labels() {
            if self.relations.is_interpersonal(id) {
                out.push_str(label);
                out.push('\n');
            }
        }
        out.push_str("\n[attributes]\n");
        for m in 0..self.attributes.subtype_count() {
            out.push_str(&format!(
                "{} = {}\n",
                self.attributes.subtype(m),
                self.attributes.domain(m).join(", ")
            ));
        }
        out
    }

    /// 64-bit FNV-1a digest of the canonical text. Model files refuse to
    /// load against a schema with a different fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.to_text().bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }
}

/// Raw sectioned document: section name -> entry lines with line numbers.
struct SchemaDoc {
    sections: Vec<(String, Vec<(usize, String)>)>,
}

impl SchemaDoc {
    fn parse(text: &str) -> Result<Self, SchemaError> {
        let mut sections: Vec<(String, Vec<(usize, String)>)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.trim().to_string(), Vec::new()));
            } else {
                match sections.last_mut() {
                    Some((_, entries)) => entries.push((no + 1, line.to_string())),
                    None => {
                        return Err(SchemaError::MalformedLine {
                            line: no + 1,
                            content: line.to_string(),
                        })
                    }
                }
            }
        }
        Ok(Self { sections })
    }

    fn entries<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a (usize, String)> + 'a {
        self.sections
            .iter()
            .filter(move |(n, _)| n == name)
            .flat_map(|(_, e)| e.iter())
    }

    fn has(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }
}

fn split_pair(line: &str, no: usize) -> Result<(&str, &str), SchemaError> {
    let (a, b) = line.split_once('=').ok_or_else(|| SchemaError::MalformedLine {
        line: no,
        content: line.to_string(),
    })?;
    Ok((a.trim(), b.trim()))
}

fn load_relation_schema_doc(doc: &SchemaDoc) -> Result<RelationSchema, SchemaError> {
    if !doc.has("relations") {
        return Err(SchemaError::MissingRelations);
    }
    let mut labels = Vec::new();
    let mut unanswerable: Option<String> = None;
    for (_, entry) in doc.entries("relations") {
        if let Some(label) = entry.strip_prefix('!') {
            let label = label.trim().to_string();
            if unanswerable.replace(label.clone()).is_some() {
                return Err(SchemaError::MultipleUnanswerable);
            }
            labels.push(label);
        } else {
            labels.push(entry.clone());
        }
    }
    let unanswerable = match unanswerable {
        Some(l) => l,
        None if labels.iter().any(|l| l == "unanswerable") => "unanswerable".to_string(),
        None => return Err(SchemaError::MissingUnanswerable),
    };

    let mut pairs = Vec::new();
    for (no, entry) in doc.entries("inverses") {
        let (a, b) = split_pair(entry, *no)?;
        pairs.push((a.to_string(), b.to_string()));
    }
    let interpersonal: Vec<String> =
        doc.entries("interpersonal").map(|(_, e)| e.clone()).collect();

    RelationSchema::new(labels, &pairs, &interpersonal, &unanswerable)
}

fn load_attribute_schema_doc(doc: &SchemaDoc) -> Result<AttributeSchema, SchemaError> {
    let mut entries = Vec::new();
    for (no, entry) in doc.entries("attributes") {
        let (subtype, values) = split_pair(entry, *no)?;
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        entries.push((subtype.to_string(), values));
    }
    AttributeSchema::new(entries)
}

/// Loads only the relation sections of a schema document.
pub fn load_relation_schema(text: &str) -> Result<RelationSchema, SchemaError> {
    load_relation_schema_doc(&SchemaDoc::parse(text)?)
}

/// Loads only the `[attributes]` section of a schema document. A document
/// without one yields the attribute-free schema.
pub fn load_attribute_schema(text: &str) -> Result<AttributeSchema, SchemaError> {
    load_attribute_schema_doc(&SchemaDoc::parse(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_doc() -> &'static str {
        "# toy ontology\n\
         [relations]\n\
         per:children\n\
         per:parents\n\
         per:friends\n\
         per:boss\n\
         per:subordinate\n\
         !unanswerable\n\
         [inverses]\n\
         per:children = per:parents\n\
         per:friends = per:friends\n\
         per:boss = per:subordinate\n\
         [interpersonal]\n\
         per:children\n\
         per:parents\n\
         [attributes]\n\
         gender = male, female\n\
         age = adult, kid, young adult, teenager, senior, baby\n"
    }

    #[test]
    fn loads_inverse_pairs_both_ways() {
        let s = load_relation_schema(toy_doc()).unwrap();
        assert_eq!(s.inverse_of("per:children").unwrap(), Some("per:parents"));
        assert_eq!(s.inverse_of("per:parents").unwrap(), Some("per:children"));
        assert_eq!(s.inverse_of("per:boss").unwrap(), Some("per:subordinate"));
    }

    #[test]
    fn symmetric_relation_is_its_own_inverse() {
        let s = load_relation_schema(toy_doc()).unwrap();
        assert_eq!(s.inverse_of("per:friends").unwrap(), Some("per:friends"));
    }

    #[test]
    fn unanswerable_has_no_inverse() {
        let s = load_relation_schema(toy_doc()).unwrap();
        assert_eq!(s.inverse_of("unanswerable").unwrap(), None);
        assert_eq!(s.unanswerable(), s.id("unanswerable").unwrap());
    }

    #[test]
    fn single_label_schema_has_empty_inverse_map() {
        let s = load_relation_schema("[relations]\n!unanswerable\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.inverse_of("unanswerable").unwrap(), None);
    }

    #[test]
    fn inverse_of_unknown_label_errors() {
        let s = load_relation_schema(toy_doc()).unwrap();
        assert!(matches!(s.inverse_of("per:pet"), Err(SchemaError::UnknownRelation(_))));
    }

    #[test]
    fn duplicate_label_rejected() {
        let doc = "[relations]\nx\nx\n!unanswerable\n";
        assert!(matches!(load_relation_schema(doc), Err(SchemaError::DuplicateLabel(_))));
    }

    #[test]
    fn inverse_referencing_unknown_label_rejected() {
        let doc = "[relations]\nx\n!unanswerable\n[inverses]\nx = y\n";
        assert!(matches!(load_relation_schema(doc), Err(SchemaError::UnknownLabel { .. })));
    }

    #[test]
    fn non_involutive_inverse_rejected() {
        let doc = "[relations]\na\nb\nc\n!unanswerable\n[inverses]\na = b\na = c\n";
        assert!(matches!(load_relation_schema(doc), Err(SchemaError::ConflictingInverse { .. })));
    }

    #[test]
    fn involution_holds_for_every_mapped_label() {
        let s = load_relation_schema(toy_doc()).unwrap();
        for (id, _) in s.labels() {
            if let Some(inv) = s.inverse(id) {
                assert_eq!(s.inverse(inv), Some(id));
            }
        }
    }

    #[test]
    fn attribute_arity_and_order() {
        let a = load_attribute_schema(toy_doc()).unwrap();
        assert_eq!(a.subtype_count(), 2);
        assert_eq!(a.subtype(0), "gender");
        assert_eq!(a.arity(0), 2);
        assert_eq!(a.arity(1), 6);
        assert_eq!(a.value_id(1, "young adult"), Some(2));
    }

    #[test]
    fn empty_attribute_section_is_valid() {
        let a = load_attribute_schema("[relations]\n!unanswerable\n").unwrap();
        assert_eq!(a.subtype_count(), 0);
    }

    #[test]
    fn reserved_unknown_token_rejected() {
        let doc = "[attributes]\ngender = male, unknown\n";
        assert!(matches!(load_attribute_schema(doc), Err(SchemaError::ReservedValue(_))));
    }

    #[test]
    fn empty_domain_rejected() {
        let doc = "[attributes]\ngender =\n";
        assert!(matches!(load_attribute_schema(doc), Err(SchemaError::EmptyDomain(_))));
    }

    #[test]
    fn round_trip_preserves_order_inverses_and_domains() {
        let s = Schemas::parse(toy_doc()).unwrap();
        let reparsed = Schemas::parse(&s.to_text()).unwrap();
        assert_eq!(s, reparsed);
        assert_eq!(s.fingerprint(), reparsed.fingerprint());
    }

    #[test]
    fn fingerprint_changes_with_content() {
        let s = Schemas::parse(toy_doc()).unwrap();
        let other = Schemas::parse("[relations]\n!unanswerable\n").unwrap();
        assert_ne!(s.fingerprint(), other.fingerprint());
    }
}
