//! The social graph data model.
//!
//! A [`SocAoG`] fixes the structure: a root society symbol, communities,
//! an ordered entity set, and the two schemas. A [`ParseGraph`] is one
//! instantiation of that structure: a value for every attribute slot of
//! every human entity and a relation label for every ordered pair of
//! distinct entities. Relations are directed and independently assigned;
//! `(i, j)` and `(j, i)` may disagree.
//!
//! Non-human entities carry no attribute slots. The unanswerable label is
//! an ordinary edge value, so the slot set of a parse graph is total and
//! finite: `humans * M` attribute slots and `K * (K - 1)` relation slots.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::schema::{RelationId, Schemas, UNKNOWN_TOKEN};

/// Token used for unset slots in the flattened form.
pub const CLS_TOKEN: &str = "[CLS]";
/// Separator token in the flattened form.
pub const SEP_TOKEN: &str = "[SEP]";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("entity id must be non-empty")]
    EmptyEntityId,
    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("entity `{0}` assigned to {1} communities (expected exactly 1)")]
    CommunityMismatch(String, usize),
    #[error("parse graphs belong to different graph shapes")]
    ShapeMismatch,
    #[error("unknown subtype `{0}`")]
    UnknownSubtype(String),
    #[error("value `{value}` not in domain of subtype `{subtype}`")]
    ValueOutsideDomain { subtype: String, value: String },
    #[error("relation label `{0}` not in schema")]
    UnknownRelationLabel(String),
    #[error("malformed parse-graph document: {0}")]
    MalformedDocument(String),
}

/// A terminal node of the society graph.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Entity {
    pub id: String,
    pub display_name: String,
    pub is_human: bool,
}

impl Entity {
    pub fn human(id: impl Into<String>) -> Self {
        let id = id.into();
        Self { display_name: id.clone(), id, is_human: true }
    }

    pub fn non_human(id: impl Into<String>) -> Self {
        let id = id.into();
        Self { display_name: id.clone(), id, is_human: false }
    }
}

/// An And-node grouping of entities. The default configuration puts every
/// entity into one community.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Community {
    pub id: String,
    pub members: Vec<usize>,
}

/// One value slot of a parse graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Attr { entity: usize, subtype: usize },
    Rel { src: usize, dst: usize },
}

/// The value of an attribute slot: either unset or an index into the
/// subtype's domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttrValue {
    Unknown,
    Known(usize),
}

/// A slot value tagged by slot kind, used in diffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotValue {
    Attr(AttrValue),
    Rel(RelationId),
}

/// The fixed structure every parse graph of a session instantiates.
#[derive(Debug, Clone)]
pub struct SocAoG {
    root: String,
    communities: Vec<Community>,
    entities: Vec<Entity>,
    entity_index: HashMap<String, usize>,
    schemas: Arc<Schemas>,
    /// Start of each entity's block in the attribute-slot vector;
    /// `attr_offsets[k]` for non-human k equals the next human's offset.
    attr_offsets: Vec<usize>,
    attr_slot_count: usize,
    slots: Vec<Slot>,
}

impl SocAoG {
    /// Builds a graph with the default single community.
    pub fn new(
        root: impl Into<String>,
        entities: Vec<Entity>,
        schemas: Arc<Schemas>,
    ) -> Result<Self, GraphError> {
        let members = (0..entities.len()).collect();
        Self::with_communities(
            root,
            entities,
            vec![Community { id: "community".to_string(), members }],
            schemas,
        )
    }

    pub fn with_communities(
        root: impl Into<String>,
        entities: Vec<Entity>,
        communities: Vec<Community>,
        schemas: Arc<Schemas>,
    ) -> Result<Self, GraphError> {
        let mut entity_index = HashMap::new();
        for (i, e) in entities.iter().enumerate() {
            if e.id.is_empty() {
                return Err(GraphError::EmptyEntityId);
            }
            if entity_index.insert(e.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateEntity(e.id.clone()));
            }
        }
        for (i, e) in entities.iter().enumerate() {
            let n = communities.iter().filter(|c| c.members.contains(&i)).count();
            if n != 1 {
                return Err(GraphError::CommunityMismatch(e.id.clone(), n));
            }
        }

        let m = schemas.attributes.subtype_count();
        let mut attr_offsets = Vec::with_capacity(entities.len());
        let mut offset = 0;
        for e in &entities {
            attr_offsets.push(offset);
            if e.is_human {
                offset += m;
            }
        }

        let mut slots = Vec::new();
        for (i, e) in entities.iter().enumerate() {
            if e.is_human {
                for subtype in 0..m {
                    slots.push(Slot::Attr { entity: i, subtype });
                }
            }
        }
        let k = entities.len();
        for src in 0..k {
            for dst in 0..k {
                if src != dst {
                    slots.push(Slot::Rel { src, dst });
                }
            }
        }
        debug_assert_eq!(slots.len(), offset + k * k.saturating_sub(1));

        Ok(Self {
            root: root.into(),
            communities,
            entities,
            entity_index,
            schemas,
            attr_offsets,
            attr_slot_count: offset,
            slots,
        })
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn communities(&self) -> &[Community] {
        &self.communities
    }

    pub fn schemas(&self) -> &Schemas {
        &self.schemas
    }

    pub fn schemas_arc(&self) -> Arc<Schemas> {
        Arc::clone(&self.schemas)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn entity(&self, i: usize) -> &Entity {
        &self.entities[i]
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity_id(&self, id: &str) -> Option<usize> {
        self.entity_index.get(id).copied()
    }

    pub fn human_count(&self) -> usize {
        self.entities.iter().filter(|e| e.is_human).count()
    }

    /// All slots in canonical order: attribute slots (entity-major, then
    /// subtype), followed by relation slots (source-major, then target).
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn attr_slot_count(&self) -> usize {
        self.attr_slot_count
    }

    pub fn rel_slot_count(&self) -> usize {
        let k = self.entities.len();
        k * k.saturating_sub(1)
    }

    /// Index of an attribute slot in the parse graph's attribute vector.
    /// Panics if the entity is non-human.
    pub fn attr_index(&self, entity: usize, subtype: usize) -> usize {
        debug_assert!(self.entities[entity].is_human);
        debug_assert!(subtype < self.schemas.attributes.subtype_count());
        self.attr_offsets[entity] + subtype
    }

    /// Index of the ordered pair `(src, dst)` in the relation vector.
    pub fn pair_index(&self, src: usize, dst: usize) -> usize {
        debug_assert_ne!(src, dst);
        let k = self.entities.len();
        src * (k - 1) + dst - usize::from(dst > src)
    }

    /// Ordered pairs of distinct entities, in relation-slot order.
    pub fn ordered_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.entities.len();
        (0..k).flat_map(move |i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// Number of states a slot can take in the sampling chain. Attribute
    /// slots count the unknown state (always the last index).
    pub fn chain_cardinality(&self, slot: Slot) -> usize {
        match slot {
            Slot::Attr { subtype, .. } => self.schemas.attributes.arity(subtype) + 1,
            Slot::Rel { .. } => self.schemas.relations.len(),
        }
    }

    /// Stable textual slot identifier, used in wire formats and traces.
    pub fn slot_id(&self, slot: Slot) -> String {
        match slot {
            Slot::Attr { entity, subtype } => format!(
                "attr:{}:{}",
                self.entities[entity].id,
                self.schemas.attributes.subtype(subtype)
            ),
            Slot::Rel { src, dst } => {
                format!("rel:{}:{}", self.entities[src].id, self.entities[dst].id)
            }
        }
    }

    /// Human-readable name of a slot state, shared by wire formats.
    pub fn state_label(&self, slot: Slot, state: usize) -> &str {
        match slot {
            Slot::Attr { subtype, .. } => {
                let arity = self.schemas.attributes.arity(subtype);
                if state == arity {
                    UNKNOWN_TOKEN
                } else {
                    self.schemas.attributes.value_label(subtype, state)
                }
            }
            Slot::Rel { .. } => self.schemas.relations.label(RelationId(state)),
        }
    }
}

/// One instantiation of a [`SocAoG`]: a value for every slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseGraph {
    attrs: Vec<AttrValue>,
    rels: Vec<RelationId>,
}

impl ParseGraph {
    /// The all-unset graph: every attribute unknown, every relation
    /// unanswerable.
    pub fn new(aog: &SocAoG) -> Self {
        Self {
            attrs: vec![AttrValue::Unknown; aog.attr_slot_count()],
            rels: vec![aog.schemas().relations.unanswerable(); aog.rel_slot_count()],
        }
    }

    pub fn attr(&self, aog: &SocAoG, entity: usize, subtype: usize) -> AttrValue {
        self.attrs[aog.attr_index(entity, subtype)]
    }

    pub fn set_attr(&mut self, aog: &SocAoG, entity: usize, subtype: usize, value: AttrValue) {
        self.attrs[aog.attr_index(entity, subtype)] = value;
    }

    pub fn rel(&self, aog: &SocAoG, src: usize, dst: usize) -> RelationId {
        self.rels[aog.pair_index(src, dst)]
    }

    pub fn set_rel(&mut self, aog: &SocAoG, src: usize, dst: usize, rel: RelationId) {
        self.rels[aog.pair_index(src, dst)] = rel;
    }

    pub fn slot_value(&self, aog: &SocAoG, slot: Slot) -> SlotValue {
        match slot {
            Slot::Attr { entity, subtype } => SlotValue::Attr(self.attr(aog, entity, subtype)),
            Slot::Rel { src, dst } => SlotValue::Rel(self.rel(aog, src, dst)),
        }
    }

    pub fn set_slot_value(&mut self, aog: &SocAoG, slot: Slot, value: SlotValue) {
        match (slot, value) {
            (Slot::Attr { entity, subtype }, SlotValue::Attr(v)) => {
                self.set_attr(aog, entity, subtype, v)
            }
            (Slot::Rel { src, dst }, SlotValue::Rel(r)) => self.set_rel(aog, src, dst, r),
            _ => panic!("slot kind and value kind disagree"),
        }
    }

    /// Chain-state index of a slot; attribute slots map unknown to the
    /// last index.
    pub fn state_index(&self, aog: &SocAoG, slot: Slot) -> usize {
        match slot {
            Slot::Attr { entity, subtype } => match self.attr(aog, entity, subtype) {
                AttrValue::Known(v) => v,
                AttrValue::Unknown => aog.schemas().attributes.arity(subtype),
            },
            Slot::Rel { src, dst } => self.rel(aog, src, dst).0,
        }
    }

    pub fn set_state_index(&mut self, aog: &SocAoG, slot: Slot, state: usize) {
        match slot {
            Slot::Attr { entity, subtype } => {
                let arity = aog.schemas().attributes.arity(subtype);
                let value = if state == arity { AttrValue::Unknown } else { AttrValue::Known(state) };
                self.set_attr(aog, entity, subtype, value);
            }
            Slot::Rel { src, dst } => self.set_rel(aog, src, dst, RelationId(state)),
        }
    }

    pub fn has_unknown_attrs(&self) -> bool {
        self.attrs.iter().any(|v| *v == AttrValue::Unknown)
    }

    fn shape_matches(&self, other: &Self) -> bool {
        self.attrs.len() == other.attrs.len() && self.rels.len() == other.rels.len()
    }
}

/// Minimal slot-wise difference between two parse graphs of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseGraphDiff {
    pub entries: Vec<DiffEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffEntry {
    pub slot: Slot,
    pub old: SlotValue,
    pub new: SlotValue,
}

impl ParseGraphDiff {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Slot-wise difference of `b` relative to `a`. Empty iff the graphs are
/// equal.
pub fn diff(aog: &SocAoG, a: &ParseGraph, b: &ParseGraph) -> Result<ParseGraphDiff, GraphError> {
    if !a.shape_matches(b) {
        return Err(GraphError::ShapeMismatch);
    }
    let mut entries = Vec::new();
    for &slot in aog.slots() {
        let old = a.slot_value(aog, slot);
        let new = b.slot_value(aog, slot);
        if old != new {
            entries.push(DiffEntry { slot, old, new });
        }
    }
    Ok(ParseGraphDiff { entries })
}

/// Applies a diff to a graph; `apply(diff(a, b), a) == b`.
pub fn apply(aog: &SocAoG, diff: &ParseGraphDiff, pg: &ParseGraph) -> ParseGraph {
    let mut out = pg.clone();
    for entry in &diff.entries {
        debug_assert_eq!(pg.slot_value(aog, entry.slot), entry.old);
        out.set_slot_value(aog, entry.slot, entry.new);
    }
    out
}

/// Flattened token form of a parse graph behind a dialogue prefix:
/// `[CLS] D [SEP] <relation triples> <entity attribute blocks> [SEP]`.
/// Every ordered pair appears as a `src label dst` triple in slot order,
/// then every entity is followed by its attribute values in subtype
/// order. Unset slots (unknown attributes and unanswerable relations)
/// render as `[CLS]`.
pub fn flatten(aog: &SocAoG, pg: &ParseGraph, dialogue_prefix: &[String]) -> Vec<String> {
    let schemas = aog.schemas();
    let unanswerable = schemas.relations.unanswerable();
    let mut out = Vec::with_capacity(
        3 + dialogue_prefix.len() + 3 * aog.rel_slot_count() + aog.entity_count()
            + aog.attr_slot_count(),
    );
    out.push(CLS_TOKEN.to_string());
    out.extend(dialogue_prefix.iter().cloned());
    out.push(SEP_TOKEN.to_string());
    for (i, j) in aog.ordered_pairs() {
        out.push(aog.entity(i).display_name.clone());
        let rel = pg.rel(aog, i, j);
        if rel == unanswerable {
            out.push(CLS_TOKEN.to_string());
        } else {
            out.push(schemas.relations.label(rel).to_string());
        }
        out.push(aog.entity(j).display_name.clone());
    }
    for (i, entity) in aog.entities().iter().enumerate() {
        out.push(entity.display_name.clone());
        if entity.is_human {
            for m in 0..schemas.attributes.subtype_count() {
                match pg.attr(aog, i, m) {
                    AttrValue::Known(v) => {
                        out.push(schemas.attributes.value_label(m, v).to_string())
                    }
                    AttrValue::Unknown => out.push(CLS_TOKEN.to_string()),
                }
            }
        }
    }
    out.push(SEP_TOKEN.to_string());
    out
}

/// JSON document form: `attributes` maps entity to subtype to value,
/// `relations` lists `[src, dst, label]` triples for every ordered pair.
pub fn to_json(aog: &SocAoG, pg: &ParseGraph) -> serde_json::Value {
    let schemas = aog.schemas();
    let mut attributes = serde_json::Map::new();
    for (i, entity) in aog.entities().iter().enumerate() {
        if !entity.is_human {
            continue;
        }
        let mut per_entity = serde_json::Map::new();
        for m in 0..schemas.attributes.subtype_count() {
            let value = match pg.attr(aog, i, m) {
                AttrValue::Known(v) => schemas.attributes.value_label(m, v).to_string(),
                AttrValue::Unknown => UNKNOWN_TOKEN.to_string(),
            };
            per_entity.insert(schemas.attributes.subtype(m).to_string(), value.into());
        }
        attributes.insert(entity.id.clone(), per_entity.into());
    }
    let relations: Vec<serde_json::Value> = aog
        .ordered_pairs()
        .map(|(i, j)| {
            serde_json::json!([
                aog.entity(i).id,
                aog.entity(j).id,
                schemas.relations.label(pg.rel(aog, i, j)),
            ])
        })
        .collect();
    serde_json::json!({ "attributes": attributes, "relations": relations })
}

pub fn from_json(aog: &SocAoG, doc: &serde_json::Value) -> Result<ParseGraph, GraphError> {
    let schemas = aog.schemas();
    let mut pg = ParseGraph::new(aog);
    let attributes = doc
        .get("attributes")
        .and_then(|v| v.as_object())
        .ok_or_else(|| GraphError::MalformedDocument("missing `attributes` object".into()))?;
    for (entity_id, per_entity) in attributes {
        let entity = aog
            .entity_id(entity_id)
            .ok_or_else(|| GraphError::UnknownEntity(entity_id.clone()))?;
        let per_entity = per_entity
            .as_object()
            .ok_or_else(|| GraphError::MalformedDocument("attribute map must be an object".into()))?;
        for (subtype, value) in per_entity {
            let m = schemas
                .attributes
                .subtype_id(subtype)
                .ok_or_else(|| GraphError::UnknownSubtype(subtype.clone()))?;
            let value = value
                .as_str()
                .ok_or_else(|| GraphError::MalformedDocument("attribute value must be a string".into()))?;
            let attr = if value == UNKNOWN_TOKEN {
                AttrValue::Unknown
            } else {
                AttrValue::Known(schemas.attributes.value_id(m, value).ok_or_else(|| {
                    GraphError::ValueOutsideDomain {
                        subtype: subtype.clone(),
                        value: value.to_string(),
                    }
                })?)
            };
            pg.set_attr(aog, entity, m, attr);
        }
    }
    let relations = doc
        .get("relations")
        .and_then(|v| v.as_array())
        .ok_or_else(|| GraphError::MalformedDocument("missing `relations` array".into()))?;
    for triple in relations {
        let triple = triple
            .as_array()
            .filter(|t| t.len() == 3)
            .ok_or_else(|| GraphError::MalformedDocument("relation entry must be [src, dst, label]".into()))?;
        let get = |v: &serde_json::Value| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| GraphError::MalformedDocument("relation fields must be strings".into()))
        };
        let (src, dst, label) = (get(&triple[0])?, get(&triple[1])?, get(&triple[2])?);
        let src = aog.entity_id(&src).ok_or(GraphError::UnknownEntity(src))?;
        let dst = aog.entity_id(&dst).ok_or(GraphError::UnknownEntity(dst))?;
        let rel = schemas.relations.id(&label).ok_or(GraphError::UnknownRelationLabel(label))?;
        pg.set_rel(aog, src, dst, rel);
    }
    Ok(pg)
}

/// DOT export: one node per entity with its attribute table in the label,
/// one labeled directed edge per pair whose relation is not unanswerable.
pub fn to_dot(aog: &SocAoG, pg: &ParseGraph) -> String {
    let schemas = aog.schemas();
    let unanswerable = schemas.relations.unanswerable();
    let mut out = String::from("digraph pg {\n  rankdir=LR;\n  node [shape=box];\n");
    for (i, entity) in aog.entities().iter().enumerate() {
        let mut label = entity.display_name.clone();
        if entity.is_human {
            for m in 0..schemas.attributes.subtype_count() {
                let value = match pg.attr(aog, i, m) {
                    AttrValue::Known(v) => schemas.attributes.value_label(m, v),
                    AttrValue::Unknown => UNKNOWN_TOKEN,
                };
                label.push_str(&format!("\\n{}={}", schemas.attributes.subtype(m), value));
            }
        }
        out.push_str(&format!("  \"{}\" [label=\"{}\"];\n", escape_dot(&entity.id), label));
    }
    for (i, j) in aog.ordered_pairs() {
        let rel = pg.rel(aog, i, j);
        if rel != unanswerable {
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
                escape_dot(&aog.entity(i).id),
                escape_dot(&aog.entity(j).id),
                escape_dot(schemas.relations.label(rel)),
            ));
        }
    }
    out.push_str("}\n");
    out
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;


    pub(crate) fn toy_schemas() -> Arc<Schemas> {
        Arc::new(
            Schemas::parse(
                "[relations]\nper:children\nper:parents\nper:friends\n!unanswerable\n\
                 [inverses]\nper:children = per:parents\nper:friends = per:friends\n\
                 [attributes]\ngender = male, female\nage = adult, kid\n",
            )
            .unwrap(),
        )
    }

    fn two_entity_aog_four_subtypes() -> SocAoG {
        let schemas = Arc::new(
            Schemas::parse(
                "[relations]\n!unanswerable\nfriend\n\
                 [attributes]\na = x, y\nb = x, y\nc = x, y\nd = x, y\n",
            )
            .unwrap(),
        );
        SocAoG::new("S", vec![Entity::human("A"), Entity::human("B")], schemas).unwrap()
    }

    #[test]
    fn new_graph_has_all_slots_unset() {
        let schemas = toy_schemas();
        let aog = SocAoG::new("S", vec![Entity::human("A"), Entity::human("B")], schemas).unwrap();
        let pg = ParseGraph::new(&aog);
        assert_eq!(aog.attr_slot_count(), 4);
        assert_eq!(aog.rel_slot_count(), 2);
        for &slot in aog.slots() {
            match pg.slot_value(&aog, slot) {
                SlotValue::Attr(v) => assert_eq!(v, AttrValue::Unknown),
                SlotValue::Rel(r) => assert_eq!(r, aog.schemas().relations.unanswerable()),
            }
        }
    }

    #[test]
    fn single_entity_has_no_relation_slots() {
        let aog = SocAoG::new("S", vec![Entity::human("A")], toy_schemas()).unwrap();
        assert_eq!(aog.rel_slot_count(), 0);
        assert_eq!(ParseGraph::new(&aog).rels.len(), 0);
    }

    #[test]
    fn three_entities_have_six_ordered_pairs() {
        let aog = SocAoG::new(
            "S",
            vec![Entity::human("A"), Entity::human("B"), Entity::human("C")],
            toy_schemas(),
        )
        .unwrap();
        assert_eq!(aog.rel_slot_count(), 6);
        let pairs: Vec<_> = aog.ordered_pairs().collect();
        assert_eq!(pairs.len(), 6);
        for (idx, (i, j)) in pairs.iter().enumerate() {
            assert_eq!(aog.pair_index(*i, *j), idx);
        }
    }

    #[test]
    fn non_human_entities_have_no_attribute_slots() {
        let aog = SocAoG::new(
            "S",
            vec![Entity::human("A"), Entity::non_human("Cafe"), Entity::human("B")],
            toy_schemas(),
        )
        .unwrap();
        assert_eq!(aog.attr_slot_count(), 4);
        assert_eq!(aog.human_count(), 2);
        assert_eq!(aog.attr_index(2, 0), 2);
    }

    #[test]
    fn duplicate_entity_rejected() {
        let r = SocAoG::new("S", vec![Entity::human("A"), Entity::human("A")], toy_schemas());
        assert!(matches!(r, Err(GraphError::DuplicateEntity(_))));
    }

    #[test]
    fn flatten_matches_expected_layout() {
        let aog = two_entity_aog_four_subtypes();
        let pg = ParseGraph::new(&aog);
        let tokens = flatten(&aog, &pg, &[]);
        let expected: Vec<&str> = "[CLS] [SEP] A [CLS] B B [CLS] A A [CLS] [CLS] [CLS] [CLS] B [CLS] [CLS] [CLS] [CLS] [SEP]"
            .split_whitespace()
            .collect();
        assert_eq!(tokens, expected);
    }

    #[test]
    fn flatten_is_deterministic() {
        let aog = two_entity_aog_four_subtypes();
        let mut pg = ParseGraph::new(&aog);
        pg.set_attr(&aog, 0, 1, AttrValue::Known(1));
        pg.set_rel(&aog, 1, 0, RelationId(1));
        let d = vec!["hi".to_string(), "there".to_string()];
        assert_eq!(flatten(&aog, &pg, &d), flatten(&aog, &pg, &d));
    }

    #[test]
    fn single_slot_flips_change_exactly_one_token() {
        // Exhaustive over all single-slot flips on a 2-entity schema.
        let aog = two_entity_aog_four_subtypes();
        let base = ParseGraph::new(&aog);
        let base_tokens = flatten(&aog, &base, &[]);
        for &slot in aog.slots() {
            for state in 0..aog.chain_cardinality(slot) {
                let mut flipped = base.clone();
                flipped.set_state_index(&aog, slot, state);
                if flipped == base {
                    continue;
                }
                let tokens = flatten(&aog, &flipped, &[]);
                let differing =
                    base_tokens.iter().zip(&tokens).filter(|(a, b)| a != b).count();
                assert_eq!(differing, 1, "slot {slot:?} state {state}");
            }
        }
    }

    #[test]
    fn flatten_is_injective_on_a_small_schema() {
        // Enumerate every parse graph of a 2-entity, 1-subtype instance.
        let schemas = Arc::new(
            Schemas::parse("[relations]\n!unanswerable\nf\n[attributes]\ng = x, y\n").unwrap(),
        );
        let aog =
            SocAoG::new("S", vec![Entity::human("A"), Entity::human("B")], schemas).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut count = 0usize;
        for a0 in 0..3 {
            for a1 in 0..3 {
                for r0 in 0..2 {
                    for r1 in 0..2 {
                        let mut pg = ParseGraph::new(&aog);
                        pg.set_state_index(&aog, Slot::Attr { entity: 0, subtype: 0 }, a0);
                        pg.set_state_index(&aog, Slot::Attr { entity: 1, subtype: 0 }, a1);
                        pg.set_state_index(&aog, Slot::Rel { src: 0, dst: 1 }, r0);
                        pg.set_state_index(&aog, Slot::Rel { src: 1, dst: 0 }, r1);
                        assert!(seen.insert(flatten(&aog, &pg, &[])));
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 36);
    }

    #[test]
    fn diff_of_identical_graphs_is_empty() {
        let aog = two_entity_aog_four_subtypes();
        let pg = ParseGraph::new(&aog);
        assert!(diff(&aog, &pg, &pg).unwrap().is_empty());
    }

    #[test]
    fn single_flip_yields_single_entry_diff() {
        let aog = two_entity_aog_four_subtypes();
        let a = ParseGraph::new(&aog);
        let mut b = a.clone();
        b.set_rel(&aog, 0, 1, RelationId(1));
        let d = diff(&aog, &a, &b).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.entries[0].slot, Slot::Rel { src: 0, dst: 1 });
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let aog = two_entity_aog_four_subtypes();
        let other = SocAoG::new("S", vec![Entity::human("A")], toy_schemas()).unwrap();
        let a = ParseGraph::new(&aog);
        let b = ParseGraph::new(&other);
        assert!(matches!(diff(&aog, &a, &b), Err(GraphError::ShapeMismatch)));
    }

    #[test]
    fn json_round_trip() {
        let aog = SocAoG::new(
            "S",
            vec![Entity::human("A"), Entity::non_human("Cafe"), Entity::human("B")],
            toy_schemas(),
        )
        .unwrap();
        let mut pg = ParseGraph::new(&aog);
        pg.set_attr(&aog, 0, 0, AttrValue::Known(1));
        pg.set_rel(&aog, 0, 2, RelationId(0));
        pg.set_rel(&aog, 2, 0, RelationId(1));
        let doc = to_json(&aog, &pg);
        assert_eq!(from_json(&aog, &doc).unwrap(), pg);
    }

    #[test]
    fn dot_export_labels_assigned_edges_only() {
        let aog = SocAoG::new("S", vec![Entity::human("A"), Entity::human("B")], toy_schemas())
            .unwrap();
        let mut pg = ParseGraph::new(&aog);
        pg.set_rel(&aog, 0, 1, RelationId(2));
        let dot = to_dot(&aog, &pg);
        assert!(dot.contains("\"A\" -> \"B\" [label=\"per:friends\"]"));
        assert!(!dot.contains("\"B\" -> \"A\""));
        assert!(dot.contains("gender=unknown"));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn apply_diff_reconstructs_target(raw in proptest::collection::vec(0usize..64, 16)) {
                let aog = SocAoG::new(
                    "S",
                    vec![Entity::human("A"), Entity::human("B"), Entity::human("C")],
                    toy_schemas(),
                ).unwrap();
                let mut idx = 0;
                let mut next = || { let v = raw[idx % raw.len()]; idx += 1; v };
                let mut a = ParseGraph::new(&aog);
                let mut b = ParseGraph::new(&aog);
                for &slot in aog.slots() {
                    let card = aog.chain_cardinality(slot);
                    a.set_state_index(&aog, slot, next() % card);
                    b.set_state_index(&aog, slot, next() % card);
                }
                let d = diff(&aog, &a, &b).unwrap();
                prop_assert_eq!(apply(&aog, &d, &a), b);
            }

            #[test]
            fn distinct_graphs_flatten_distinctly(seed_a in 0u64..500, seed_b in 0u64..500) {
                let aog = SocAoG::new(
                    "S",
                    vec![Entity::human("A"), Entity::human("B")],
                    toy_schemas(),
                ).unwrap();
                let gen = |seed: u64| {
                    let mut pg = ParseGraph::new(&aog);
                    let mut x = seed;
                    for &slot in aog.slots() {
                        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        let card = aog.chain_cardinality(slot) as u64;
                        pg.set_state_index(&aog, slot, ((x >> 33) % card) as usize);
                    }
                    pg
                };
                let (a, b) = (gen(seed_a), gen(seed_b));
                prop_assert_eq!(a == b, flatten(&aog, &a, &[]) == flatten(&aog, &b, &[]));
            }
        }
    }
}
