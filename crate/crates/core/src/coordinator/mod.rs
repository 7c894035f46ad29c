//! Reasoning layer: tiered arbitration over agent proposals.
//!
//! Arbitration is veto-then-score. Every medical-tier rule ([`P0Rule`]) is
//! evaluated against every proposal; anything a rule fires on is out. The
//! survivors are ranked by `w_pref * preference_fit + w_nudge * nudge_value`
//! and ties go to the lowest `(producer, proposal_id)`. If nothing survives
//! the decision carries no chosen action and callers re-plan with the vetoing
//! rules applied as an action mask.

mod explain;
mod rules;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use explain::{
    explain, parse_tail, validate_explanation, validate_on_board, ExplanationError,
    ExplanationRecord, NO_CONFLICT, WEIGHTED_SCORE,
};
pub use rules::P0Rule;

use crate::bus::{AgentId, Blackboard, EntryBody, EntryId, EntryKind, NewEntry, Tier};
use crate::domain::{MealCatalogEntry, MealId, Nutrients, PhysiologicalSample, Tick};
use crate::reminder::ReminderAction;

/// Score ties closer than this are broken by proposal order.
const SCORE_TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealCandidate {
    pub meal_id: MealId,
    pub name: String,
    pub glycemic_index: f64,
    pub nutrition: Nutrients,
    pub allergens: BTreeSet<String>,
}

impl From<&MealCatalogEntry> for MealCandidate {
    fn from(m: &MealCatalogEntry) -> Self {
        Self {
            meal_id: m.meal_id,
            name: m.name.clone(),
            glycemic_index: m.glycemic_index,
            nutrition: m.nutrition,
            allergens: m.allergens.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposedAction {
    Meal(MealCandidate),
    Reminder { action: ReminderAction },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub proposal_id: u64,
    pub producer: AgentId,
    pub action: ProposedAction,
    /// P1 signal in [0, 1].
    pub preference_fit: f64,
    /// P2 signal in [0, 1].
    pub nudge_value: f64,
}

impl Proposal {
    pub fn reference(&self) -> ProposalRef {
        ProposalRef {
            producer: self.producer,
            proposal_id: self.proposal_id,
        }
    }

    pub fn meal_id(&self) -> Option<MealId> {
        match &self.action {
            ProposedAction::Meal(m) => Some(m.meal_id),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProposalRef {
    pub producer: AgentId,
    pub proposal_id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorityRuleSet {
    pub p0_rules: Vec<P0Rule>,
    pub w_pref: f64,
    pub w_nudge: f64,
    /// Glycemic-index cutoff while a hyperglycemia-risk entry is active.
    pub gi_max: f64,
}

impl Default for PriorityRuleSet {
    fn default() -> Self {
        Self {
            p0_rules: P0Rule::ALL.to_vec(),
            w_pref: 0.7,
            w_nudge: 0.3,
            gi_max: 55.0,
        }
    }
}

impl PriorityRuleSet {
    pub fn validate(&self) -> Result<(), ArbitrationError> {
        let ok = self.w_pref >= 0.0
            && self.w_nudge >= 0.0
            && self.w_pref + self.w_nudge > 0.0
            && self.w_pref.is_finite()
            && self.w_nudge.is_finite()
            && (0.0..=110.0).contains(&self.gi_max);
        if ok {
            Ok(())
        } else {
            Err(ArbitrationError::InvalidRules)
        }
    }

    pub fn score(&self, p: &Proposal) -> f64 {
        self.w_pref * p.preference_fit + self.w_nudge * p.nudge_value
    }

    /// Rules that veto `p` at `at`, with the entries they cite.
    pub fn vetoes_for(&self, p: &Proposal, board: &Blackboard, at: Tick) -> Vec<(P0Rule, Vec<EntryId>)> {
        self.p0_rules
            .iter()
            .filter_map(|r| r.vetoes(p, board, at, self.gi_max).map(|e| (*r, e)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Veto {
    pub proposal: ProposalRef,
    pub rule: String,
    pub entries: Vec<EntryId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredProposal {
    pub proposal: ProposalRef,
    pub score: f64,
}

/// A decision before its explanation is rendered.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionDraft {
    pub decision_id: u64,
    pub tick: Tick,
    pub proposals: Vec<Proposal>,
    pub chosen: Option<ProposalRef>,
    pub vetoed: Vec<Veto>,
    pub scores: Vec<ScoredProposal>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub decision_id: u64,
    pub tick: Tick,
    pub proposals: Vec<Proposal>,
    /// `None` records a re-proposal request.
    pub chosen: Option<ProposalRef>,
    pub vetoed: Vec<Veto>,
    pub scores: Vec<ScoredProposal>,
    pub explanation: ExplanationRecord,
}

impl Decision {
    pub fn chosen_proposal(&self) -> Option<&Proposal> {
        let c = self.chosen?;
        self.proposals.iter().find(|p| p.reference() == c)
    }

    pub fn is_reproposal(&self) -> bool {
        self.chosen.is_none()
    }

    /// Names of every rule that vetoed something in this decision.
    pub fn veto_rules(&self) -> BTreeSet<P0Rule> {
        self.vetoed
            .iter()
            .filter_map(|v| P0Rule::from_name(&v.rule))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArbitrationError {
    #[error("no proposals to arbitrate")]
    NoProposals,
    #[error("proposal {0:?} has a fit or nudge outside [0, 1]")]
    InvalidProposal(ProposalRef),
    #[error("rule weights must be non-negative with a positive sum, gi_max in [0, 110]")]
    InvalidRules,
}

/// Veto-then-score arbitration. A pure function of its arguments.
pub fn arbitrate(
    decision_id: u64,
    tick: Tick,
    proposals: &[Proposal],
    board: &Blackboard,
    rules: &PriorityRuleSet,
) -> Result<Decision, ArbitrationError> {
    if proposals.is_empty() {
        return Err(ArbitrationError::NoProposals);
    }
    rules.validate()?;
    for p in proposals {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(p.preference_fit) || !unit(p.nudge_value) {
            return Err(ArbitrationError::InvalidProposal(p.reference()));
        }
    }

    let mut vetoed = Vec::new();
    let mut survivors = Vec::new();
    for p in proposals {
        let hits = rules.vetoes_for(p, board, tick);
        if hits.is_empty() {
            survivors.push(p);
        }
        vetoed.extend(hits.into_iter().map(|(rule, entries)| Veto {
            proposal: p.reference(),
            rule: rule.name().to_string(),
            entries,
        }));
    }

    let scores: Vec<ScoredProposal> = survivors
        .iter()
        .map(|p| ScoredProposal {
            proposal: p.reference(),
            score: rules.score(p),
        })
        .collect();

    // Compare on weights normalized to sum 1 so that rescaling both weights
    // cannot move a choice across the tie tolerance.
    let norm = rules.w_pref + rules.w_nudge;
    let normalized = |p: &Proposal| {
        (rules.w_pref / norm) * p.preference_fit + (rules.w_nudge / norm) * p.nudge_value
    };
    let best = survivors
        .iter()
        .map(|p| normalized(p))
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = survivors
        .iter()
        .filter(|p| normalized(p) >= best - SCORE_TIE_EPS)
        .map(|p| p.reference())
        .min();

    let draft = DecisionDraft {
        decision_id,
        tick,
        proposals: proposals.to_vec(),
        chosen,
        vetoed,
        scores,
    };
    let explanation = explain(&draft, board);
    Ok(Decision {
        decision_id: draft.decision_id,
        tick: draft.tick,
        proposals: draft.proposals,
        chosen: draft.chosen,
        vetoed: draft.vetoed,
        scores: draft.scores,
        explanation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    /// Glucose level (mg/dL) above which the guard fires.
    pub level: f64,
    /// How long the veto stays active, in minutes.
    pub validity_minutes: u32,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            level: 180.0,
            validity_minutes: 120,
        }
    }
}

/// Posts a P0 hyperglycemia-risk veto when the newest sample is above the
/// guard level. Does nothing while such an entry is already active.
pub fn raise_hyperglycemia_guard(
    board: &mut Blackboard,
    samples: &[PhysiologicalSample],
    guard: &GuardConfig,
) -> Option<EntryId> {
    let latest = samples.last()?;
    if latest.glucose <= guard.level {
        return None;
    }
    let at = latest.tick();
    let active = board
        .latest_active(at, |e| {
            e.tier == Tier::P0Medical && matches!(e.body, EntryBody::GlucoseRisk { .. })
        })
        .is_some();
    if active {
        return None;
    }
    let entry = NewEntry::new(
        Tier::P0Medical,
        EntryKind::Veto,
        EntryBody::GlucoseRisk {
            glucose: latest.glucose,
            guard_level: guard.level,
            sample_t: latest.t,
        },
        at,
        at.plus_minutes(guard.validity_minutes),
        AgentId::Coordinator,
    )
    .expect("window is forward");
    Some(board.post_entry(entry))
}

/// Per-run coordinator state: the rule set plus id counters.
#[derive(Clone, Debug)]
pub struct Coordinator {
    pub rules: PriorityRuleSet,
    pub guard: GuardConfig,
    next_decision: u64,
    next_proposal: u64,
}

impl Coordinator {
    pub fn new(rules: PriorityRuleSet, guard: GuardConfig) -> Self {
        Self {
            rules,
            guard,
            next_decision: 0,
            next_proposal: 0,
        }
    }

    pub fn next_proposal_id(&mut self) -> u64 {
        let id = self.next_proposal;
        self.next_proposal += 1;
        id
    }

    pub fn decide(
        &mut self,
        proposals: &[Proposal],
        board: &Blackboard,
        tick: Tick,
    ) -> Result<Decision, ArbitrationError> {
        let d = arbitrate(self.next_decision, tick, proposals, board, &self.rules)?;
        self.next_decision += 1;
        Ok(d)
    }
}

#[cfg(test)]
mod tests;
