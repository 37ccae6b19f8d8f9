//! The Gibbs posterior energy over parse graphs.
//!
//! The posterior factors into a dialogue term and a social-norm term.
//! The dialogue term (alpha process) is delegated to an [`AlphaScorer`].
//! The norm term combines a relation-given-attributes table (beta
//! process) and attribute-given-relation tables (gamma process), or, in
//! the reduced variant, a relation-triangle table. All spaces are finite,
//! so conditioning keys are small integer tuples:
//!
//! - an attribute subtype of arity `a` conditions with `a + 2` states:
//!   the domain values, `a` for unknown, `a + 1` for a non-human
//!   endpoint (the entity-kind pseudo-attribute);
//! - gamma rows range over `a + 1` states (domain plus unknown);
//! - relation rows range over the full label set, unanswerable included.
//!
//! With up to two subtypes the beta table conditions on the full
//! attribute tuple of both endpoints. With more, it keeps one table per
//! subtype and combines them by log-space averaging, renormalized over
//! labels; the full joint table would be hopelessly sparse at ontology
//! scale.

mod alpha;
mod cpt;
mod external;

pub use alpha::{AlphaScorer, DialogueView, FeaturizedScorer};
pub use cpt::{log_sum_exp, Cpt};
pub use external::ExternalScorer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{RelationId, Schemas};
use crate::socgraph::{AttrValue, ParseGraph, Slot, SocAoG};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("conditional table has no row for this key (support {support}) and smoothing is off")]
    MissingEntry { support: usize },
    #[error("alpha process is enabled but no scorer was provided")]
    ScorerRequired,
    #[error("external scorer transport failure: {0}")]
    Transport(String),
    #[error("scorer returned an invalid result: {0}")]
    InvalidScore(String),
    #[error("model was built for a different schema (fingerprint mismatch)")]
    FingerprintMismatch,
}

/// Which side of a directed edge an attribute term conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn code(self) -> u8 {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

/// Weight factors balancing the norm potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormWeights {
    pub beta: f64,
    pub gamma_left: f64,
    pub gamma_right: f64,
}

impl Default for NormWeights {
    fn default() -> Self {
        Self { beta: 1.0, gamma_left: 1.0, gamma_right: 1.0 }
    }
}

/// Ablation switches over the three processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessSwitches {
    pub alpha: bool,
    pub beta: bool,
    pub gamma: bool,
}

impl Default for ProcessSwitches {
    fn default() -> Self {
        Self { alpha: true, beta: true, gamma: true }
    }
}

impl ProcessSwitches {
    pub fn none() -> Self {
        Self { alpha: false, beta: false, gamma: false }
    }
}

pub(crate) type BetaJointKey = (Vec<u16>, Vec<u16>);
/// (subtype, left state, right state)
pub(crate) type BetaFactorKey = (u16, u16, u16);
/// (relation, side code, subtype)
pub(crate) type GammaKey = (u16, u8, u16);
/// Conditioning edges (e_ik, e_jk) of a triangle term.
pub(crate) type TriangleKey = (u16, u16);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BetaTable {
    Joint(Cpt<BetaJointKey>),
    Factorized(Cpt<BetaFactorKey>),
}

/// The social-norm side of the posterior: conditional tables, weights,
/// process switches and the smoothing pseudo-count. Immutable during
/// sampling; safely shareable across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub fingerprint: u64,
    relation_count: usize,
    arities: Vec<usize>,
    kappa: f64,
    beta: BetaTable,
    gamma: Cpt<GammaKey>,
    triangle: Cpt<TriangleKey>,
    pub weights: NormWeights,
    pub switches: ProcessSwitches,
    pub reduced: bool,
}

impl EnergyModel {
    /// An untrained model over the given schemas: every conditional row
    /// falls back to uniform (assuming `kappa > 0`).
    pub fn fresh(schemas: &Schemas, kappa: f64) -> Self {
        let arities: Vec<usize> =
            (0..schemas.attributes.subtype_count()).map(|m| schemas.attributes.arity(m)).collect();
        let beta = if arities.len() <= 2 {
            BetaTable::Joint(Cpt::new(kappa))
        } else {
            BetaTable::Factorized(Cpt::new(kappa))
        };
        Self {
            fingerprint: schemas.fingerprint(),
            relation_count: schemas.relations.len(),
            arities,
            kappa,
            beta,
            gamma: Cpt::new(kappa),
            triangle: Cpt::new(kappa),
            weights: NormWeights::default(),
            switches: ProcessSwitches::default(),
            reduced: false,
        }
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn subtype_count(&self) -> usize {
        self.arities.len()
    }

    pub fn arity(&self, m: usize) -> usize {
        self.arities[m]
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn uses_joint_beta(&self) -> bool {
        matches!(self.beta, BetaTable::Joint(_))
    }

    pub(crate) fn beta_table(&self) -> &BetaTable {
        &self.beta
    }

    pub(crate) fn beta_table_mut(&mut self) -> &mut BetaTable {
        &mut self.beta
    }

    pub(crate) fn gamma_table(&self) -> &Cpt<GammaKey> {
        &self.gamma
    }

    pub(crate) fn gamma_table_mut(&mut self) -> &mut Cpt<GammaKey> {
        &mut self.gamma
    }

    pub(crate) fn triangle_table(&self) -> &Cpt<TriangleKey> {
        &self.triangle
    }

    pub(crate) fn triangle_table_mut(&mut self) -> &mut Cpt<TriangleKey> {
        &mut self.triangle
    }

    /// Normalized log row of `p(e | left, right)` over all labels.
    pub fn beta_log_row(&self, left: &[u16], right: &[u16]) -> Result<Vec<f64>, EnergyError> {
        let r = self.relation_count;
        match &self.beta {
            BetaTable::Joint(cpt) => cpt.log_row(&(left.to_vec(), right.to_vec()), r),
            BetaTable::Factorized(cpt) => {
                let m_count = self.arities.len();
                let mut acc = vec![0.0; r];
                for m in 0..m_count {
                    let row = cpt.log_row(&(m as u16, left[m], right[m]), r)?;
                    for (a, l) in acc.iter_mut().zip(row) {
                        *a += l / m_count as f64;
                    }
                }
                let lse = log_sum_exp(&acc);
                for a in &mut acc {
                    *a -= lse;
                }
                Ok(acc)
            }
        }
    }

    /// Smoothed distribution over relation labels given two endpoint
    /// attribute tuples; the proposal distribution of dynamics q1.
    pub fn beta_conditional(&self, left: &[u16], right: &[u16]) -> Result<Vec<f64>, EnergyError> {
        Ok(self.beta_log_row(left, right)?.iter().map(|l| l.exp()).collect())
    }

    pub fn beta_log_prob(
        &self,
        left: &[u16],
        right: &[u16],
        rel: RelationId,
    ) -> Result<f64, EnergyError> {
        Ok(self.beta_log_row(left, right)?[rel.0])
    }

    /// Smoothed distribution over a subtype's values (unknown last) given
    /// an incident relation; the building block of dynamics q2.
    pub fn gamma_conditional(
        &self,
        rel: RelationId,
        side: Side,
        subtype: usize,
    ) -> Result<Vec<f64>, EnergyError> {
        self.gamma
            .prob_row(&(rel.0 as u16, side.code(), subtype as u16), self.arities[subtype] + 1)
    }

    pub fn gamma_log_row(
        &self,
        rel: RelationId,
        side: Side,
        subtype: usize,
    ) -> Result<Vec<f64>, EnergyError> {
        self.gamma
            .log_row(&(rel.0 as u16, side.code(), subtype as u16), self.arities[subtype] + 1)
    }

    pub fn gamma_log_prob(
        &self,
        rel: RelationId,
        side: Side,
        subtype: usize,
        state: usize,
    ) -> Result<f64, EnergyError> {
        self.gamma
            .log_prob(&(rel.0 as u16, side.code(), subtype as u16), state, self.arities[subtype] + 1)
    }

    pub fn triangle_log_prob(
        &self,
        cond: (RelationId, RelationId),
        rel: RelationId,
    ) -> Result<f64, EnergyError> {
        self.triangle.log_prob(&(cond.0 .0 as u16, cond.1 .0 as u16), rel.0, self.relation_count)
    }

    pub fn triangle_conditional(
        &self,
        cond: (RelationId, RelationId),
    ) -> Result<Vec<f64>, EnergyError> {
        self.triangle.prob_row(&(cond.0 .0 as u16, cond.1 .0 as u16), self.relation_count)
    }

    // -- table construction ------------------------------------------------

    pub fn fit_beta_joint_row(&mut self, left: Vec<u16>, right: Vec<u16>, counts: &[f64]) {
        match &mut self.beta {
            BetaTable::Joint(cpt) => cpt.fit_row((left, right), counts),
            BetaTable::Factorized(_) => panic!("model uses a factorized beta table"),
        }
    }

    pub fn fit_beta_factor_row(&mut self, subtype: usize, left: u16, right: u16, counts: &[f64]) {
        match &mut self.beta {
            BetaTable::Factorized(cpt) => cpt.fit_row((subtype as u16, left, right), counts),
            BetaTable::Joint(_) => panic!("model uses a joint beta table"),
        }
    }

    pub fn set_beta_joint_row(&mut self, left: Vec<u16>, right: Vec<u16>, probs: &[f64]) {
        match &mut self.beta {
            BetaTable::Joint(cpt) => cpt.set_row_probs((left, right), probs),
            BetaTable::Factorized(_) => panic!("model uses a factorized beta table"),
        }
    }

    pub fn fit_gamma_row(&mut self, rel: RelationId, side: Side, subtype: usize, counts: &[f64]) {
        self.gamma.fit_row((rel.0 as u16, side.code(), subtype as u16), counts);
    }

    pub fn set_gamma_row(&mut self, rel: RelationId, side: Side, subtype: usize, probs: &[f64]) {
        self.gamma.set_row_probs((rel.0 as u16, side.code(), subtype as u16), probs);
    }

    pub fn fit_triangle_row(&mut self, cond: (RelationId, RelationId), counts: &[f64]) {
        self.triangle.fit_row((cond.0 .0 as u16, cond.1 .0 as u16), counts);
    }

    pub fn set_triangle_row(&mut self, cond: (RelationId, RelationId), probs: &[f64]) {
        self.triangle.set_row_probs((cond.0 .0 as u16, cond.1 .0 as u16), probs);
    }

    /// Every stored conditional row sums to 1 within `tol`.
    pub fn check_normalized(&self, tol: f64) -> bool {
        let beta_ok = match &self.beta {
            BetaTable::Joint(cpt) => cpt.check_normalized(tol),
            BetaTable::Factorized(cpt) => cpt.check_normalized(tol),
        };
        beta_ok && self.gamma.check_normalized(tol) && self.triangle.check_normalized(tol)
    }
}

/// Conditioning states of an entity's attributes: the value index per
/// subtype, `arity` for unknown, `arity + 1` for every subtype of a
/// non-human entity.
pub fn endpoint_states(aog: &SocAoG, pg: &ParseGraph, entity: usize) -> Vec<u16> {
    let attrs = &aog.schemas().attributes;
    (0..attrs.subtype_count())
        .map(|m| {
            if !aog.entity(entity).is_human {
                (attrs.arity(m) + 1) as u16
            } else {
                match pg.attr(aog, entity, m) {
                    AttrValue::Known(v) => v as u16,
                    AttrValue::Unknown => attrs.arity(m) as u16,
                }
            }
        })
        .collect()
}

/// Unweighted sums of the three norm potentials.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormTerms {
    pub beta: f64,
    pub gamma_left: f64,
    pub gamma_right: f64,
}

fn pair_beta_term(
    model: &EnergyModel,
    aog: &SocAoG,
    pg: &ParseGraph,
    i: usize,
    j: usize,
) -> Result<f64, EnergyError> {
    let left = endpoint_states(aog, pg, i);
    let right = endpoint_states(aog, pg, j);
    Ok(-model.beta_log_prob(&left, &right, pg.rel(aog, i, j))?)
}

/// Gamma contribution of one side of the edge `(i, j)`: the negative log
/// probability of that endpoint's attribute states given the edge label.
/// Zero for non-human endpoints, which carry no attribute slots.
fn pair_gamma_term(
    model: &EnergyModel,
    aog: &SocAoG,
    pg: &ParseGraph,
    i: usize,
    j: usize,
    side: Side,
) -> Result<f64, EnergyError> {
    let entity = match side {
        Side::Left => i,
        Side::Right => j,
    };
    if !aog.entity(entity).is_human {
        return Ok(0.0);
    }
    let rel = pg.rel(aog, i, j);
    let attrs = &aog.schemas().attributes;
    let mut sum = 0.0;
    for m in 0..attrs.subtype_count() {
        let state = match pg.attr(aog, entity, m) {
            AttrValue::Known(v) => v,
            AttrValue::Unknown => attrs.arity(m),
        };
        sum -= model.gamma_log_prob(rel, side, m, state)?;
    }
    Ok(sum)
}

/// Unweighted potential sums over all ordered pairs.
pub fn norm_terms(
    model: &EnergyModel,
    aog: &SocAoG,
    pg: &ParseGraph,
) -> Result<NormTerms, EnergyError> {
    let mut terms = NormTerms::default();
    for (i, j) in aog.ordered_pairs() {
        terms.beta += pair_beta_term(model, aog, pg, i, j)?;
        terms.gamma_left += pair_gamma_term(model, aog, pg, i, j, Side::Left)?;
        terms.gamma_right += pair_gamma_term(model, aog, pg, i, j, Side::Right)?;
    }
    Ok(terms)
}

/// Full-model social-norm energy, weights applied, switches ignored.
pub fn norm_energy(model: &EnergyModel, aog: &SocAoG, pg: &ParseGraph) -> Result<f64, EnergyError> {
    let t = norm_terms(model, aog, pg)?;
    Ok(model.weights.beta * t.beta
        + model.weights.gamma_left * t.gamma_left
        + model.weights.gamma_right * t.gamma_right)
}

/// Triangle terms: for every ordered triple of distinct entities
/// `(i, j, k)`, the edge `(i, j)` conditioned on the edges `(i, k)` and
/// `(j, k)` into the third vertex.
pub(crate) fn triangle_triples(k: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if j == i {
                continue;
            }
            for t in 0..k {
                if t != i && t != j {
                    out.push((i, j, t));
                }
            }
        }
    }
    out
}

pub(crate) fn triangle_term(
    model: &EnergyModel,
    aog: &SocAoG,
    pg: &ParseGraph,
    triple: (usize, usize, usize),
) -> Result<f64, EnergyError> {
    let (i, j, k) = triple;
    let cond = (pg.rel(aog, i, k), pg.rel(aog, j, k));
    Ok(-model.triangle_log_prob(cond, pg.rel(aog, i, j))?)
}

/// Reduced-model norm energy over relation triangles. Zero when there
/// are fewer than three entities.
pub fn norm_energy_reduced(
    model: &EnergyModel,
    aog: &SocAoG,
    pg: &ParseGraph,
) -> Result<f64, EnergyError> {
    let mut sum = 0.0;
    for triple in triangle_triples(aog.entity_count()) {
        sum += triangle_term(model, aog, pg, triple)?;
    }
    Ok(model.weights.beta * sum)
}

/// Dialogue energy, delegated to the scorer.
pub fn alpha_energy(
    scorer: &dyn AlphaScorer,
    aog: &SocAoG,
    dialogue_prefix: &[String],
    pg: &ParseGraph,
) -> Result<f64, EnergyError> {
    scorer.score(aog, dialogue_prefix, pg)
}

/// Total posterior energy with every term gated by the model's process
/// switches. The partition function never appears; it cancels in
/// acceptance ratios.
pub fn posterior_energy(
    scorer: &dyn AlphaScorer,
    model: &EnergyModel,
    aog: &SocAoG,
    dialogue_prefix: &[String],
    pg: &ParseGraph,
) -> Result<f64, EnergyError> {
    PosteriorEvaluator::new(Some(scorer), model, aog, dialogue_prefix)?.total(pg)
}

/// Shared evaluation context for one (model, graph structure, dialogue
/// prefix) triple. For factorized scorers the per-slot alpha terms are
/// tabulated once, which makes repeated evaluation over many parse
/// graphs cheap; this is what both the sampler and the enumeration
/// oracle run on.
pub struct PosteriorEvaluator<'a> {
    pub model: &'a EnergyModel,
    pub aog: &'a SocAoG,
    scorer: Option<&'a dyn AlphaScorer>,
    dialogue: &'a [String],
    alpha_table: Option<Vec<Vec<f64>>>,
}

impl<'a> PosteriorEvaluator<'a> {
    pub fn new(
        scorer: Option<&'a dyn AlphaScorer>,
        model: &'a EnergyModel,
        aog: &'a SocAoG,
        dialogue: &'a [String],
    ) -> Result<Self, EnergyError> {
        if model.switches.alpha && scorer.is_none() {
            return Err(EnergyError::ScorerRequired);
        }
        let alpha_table = match scorer {
            Some(s) if model.switches.alpha && s.factorizes() => {
                let rows = s.classify(aog, dialogue)?;
                Some(rows.into_iter().map(|row| row.into_iter().map(|p| -p.ln()).collect()).collect())
            }
            _ => None,
        };
        Ok(Self { model, aog, scorer, dialogue, alpha_table })
    }

    pub fn has_alpha_table(&self) -> bool {
        self.alpha_table.is_some()
    }

    /// Per-slot alpha term; only available on the tabulated path.
    pub(crate) fn alpha_slot_term(&self, slot_index: usize, pg: &ParseGraph) -> Option<f64> {
        self.alpha_table.as_ref().map(|table| {
            let slot = self.aog.slots()[slot_index];
            table[slot_index][pg.state_index(self.aog, slot)]
        })
    }

    pub fn alpha(&self, pg: &ParseGraph) -> Result<f64, EnergyError> {
        if let Some(table) = &self.alpha_table {
            let mut sum = 0.0;
            for (idx, &slot) in self.aog.slots().iter().enumerate() {
                sum += table[idx][pg.state_index(self.aog, slot)];
            }
            return Ok(sum);
        }
        match self.scorer {
            Some(s) => s.score(self.aog, self.dialogue, pg),
            None => Err(EnergyError::ScorerRequired),
        }
    }

    /// Switch-gated, weighted norm contribution of the ordered pair
    /// `(i, j)` under the full model.
    pub(crate) fn pair_term(&self, pg: &ParseGraph, i: usize, j: usize) -> Result<f64, EnergyError> {
        let mut e = 0.0;
        if self.model.switches.beta {
            e += self.model.weights.beta * pair_beta_term(self.model, self.aog, pg, i, j)?;
        }
        if self.model.switches.gamma {
            e += self.model.weights.gamma_left
                * pair_gamma_term(self.model, self.aog, pg, i, j, Side::Left)?;
            e += self.model.weights.gamma_right
                * pair_gamma_term(self.model, self.aog, pg, i, j, Side::Right)?;
        }
        Ok(e)
    }

    pub(crate) fn triangle_term_weighted(
        &self,
        pg: &ParseGraph,
        triple: (usize, usize, usize),
    ) -> Result<f64, EnergyError> {
        if !self.model.switches.beta {
            return Ok(0.0);
        }
        Ok(self.model.weights.beta * triangle_term(self.model, self.aog, pg, triple)?)
    }

    pub fn norm(&self, pg: &ParseGraph) -> Result<f64, EnergyError> {
        if self.model.reduced {
            let mut sum = 0.0;
            for triple in triangle_triples(self.aog.entity_count()) {
                sum += self.triangle_term_weighted(pg, triple)?;
            }
            Ok(sum)
        } else {
            let mut sum = 0.0;
            for (i, j) in self.aog.ordered_pairs() {
                sum += self.pair_term(pg, i, j)?;
            }
            Ok(sum)
        }
    }

    pub fn total(&self, pg: &ParseGraph) -> Result<f64, EnergyError> {
        let alpha = if self.model.switches.alpha { self.alpha(pg)? } else { 0.0 };
        Ok(alpha + self.norm(pg)?)
    }
}

/// Chain-state of a slot under a parse graph, shared by proposal code.
pub(crate) fn attr_state(aog: &SocAoG, pg: &ParseGraph, entity: usize, subtype: usize) -> usize {
    match pg.attr(aog, entity, subtype) {
        AttrValue::Known(v) => v,
        AttrValue::Unknown => aog.schemas().attributes.arity(subtype),
    }
}
