//! Plain-language explanation records.
//!
//! Every rendered text ends in a fixed machine-readable tail,
//! `[rules: a, b; entries: #3, #7]`, so a record can be re-parsed and checked
//! against its own structured fields. `schemas/explanation.schema.json`
//! describes the same shape for external consumers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bus::{AgentId, Blackboard, EntryId};
use crate::reminder::ReminderAction;

use super::{DecisionDraft, Proposal, ProposedAction};

pub const WEIGHTED_SCORE: &str = "weighted_score";
pub const NO_CONFLICT: &str = "no higher-priority constraint applied";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub decision_id: u64,
    pub agent: AgentId,
    pub triggering_entries: Vec<EntryId>,
    pub rules_applied: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplanationError {
    #[error("explanation text is empty")]
    EmptyText,
    #[error("explanation is for decision {found}, expected {expected}")]
    WrongDecision { expected: u64, found: u64 },
    #[error("no rules listed")]
    NoRules,
    #[error("text has no [rules: ...; entries: ...] tail")]
    MissingTail,
    #[error("malformed entry reference {0:?}")]
    BadEntryRef(String),
    #[error("text lists rules {text:?} but record has {record:?}")]
    RulesMismatch { text: Vec<String>, record: Vec<String> },
    #[error("text lists entries {text:?} but record has {record:?}")]
    EntriesMismatch {
        text: Vec<EntryId>,
        record: Vec<EntryId>,
    },
    #[error("rule {0} is not named in the prose")]
    RuleNotNarrated(String),
    #[error("entry {0} does not exist on the blackboard")]
    UnknownEntry(EntryId),
}

pub(crate) fn describe(p: &Proposal) -> String {
    match &p.action {
        ProposedAction::Meal(m) => {
            format!("meal {} ({}, GI {})", m.meal_id, m.name, m.glycemic_index)
        }
        ProposedAction::Reminder {
            action: ReminderAction::Send(m),
        } => format!("{} reminder", m.name()),
        ProposedAction::Reminder {
            action: ReminderAction::Delay15,
        } => "15-minute reminder delay".to_string(),
    }
}

fn join_entries(ids: &[EntryId]) -> String {
    if ids.is_empty() {
        "none".to_string()
    } else {
        ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
    }
}

/// Renders the explanation for a draft. The text is a pure function of the
/// draft; entry ids it cites come from the draft's vetoes.
pub fn explain(draft: &DecisionDraft, _board: &Blackboard) -> ExplanationRecord {
    let find = |r: &super::ProposalRef| draft.proposals.iter().find(|p| p.reference() == *r);

    let mut rules: Vec<String> = Vec::new();
    let mut entries: Vec<EntryId> = Vec::new();
    for v in &draft.vetoed {
        if !rules.contains(&v.rule) {
            rules.push(v.rule.clone());
        }
        entries.extend(v.entries.iter().copied());
    }
    entries.sort();
    entries.dedup();

    let mut text = String::new();
    let agent;
    match draft.chosen.as_ref().and_then(|c| find(c).map(|p| (c, p))) {
        Some((chosen, p)) => {
            agent = p.producer;
            let score = draft
                .scores
                .iter()
                .find(|s| s.proposal == *chosen)
                .map_or(0.0, |s| s.score);
            let _ = write!(
                text,
                "Decision {}: chose {} from {} with score {:.3}",
                draft.decision_id,
                describe(p),
                p.producer,
                score
            );
            if draft.vetoed.is_empty() {
                let _ = write!(text, "; {NO_CONFLICT}.");
            } else {
                text.push('.');
            }
            rules.push(WEIGHTED_SCORE.to_string());
        }
        None => {
            agent = AgentId::Coordinator;
            let _ = write!(
                text,
                "Decision {}: every proposal was vetoed; re-proposal requested with the vetoing rules as an action mask.",
                draft.decision_id
            );
        }
    }
    for v in &draft.vetoed {
        let what = find(&v.proposal).map_or_else(|| "unknown proposal".to_string(), describe);
        let _ = write!(
            text,
            " Vetoed {} from {} under rule {} (entries {}).",
            what,
            v.proposal.producer,
            v.rule,
            join_entries(&v.entries)
        );
    }
    if draft.chosen.is_none() {
        let veto_rules: Vec<&str> = rules.iter().map(String::as_str).collect();
        let _ = write!(text, " Vetoing rules: {}.", veto_rules.join(", "));
    }
    let _ = write!(
        text,
        " [rules: {}; entries: {}]",
        rules.join(", "),
        join_entries(&entries)
    );

    ExplanationRecord {
        decision_id: draft.decision_id,
        agent,
        triggering_entries: entries,
        rules_applied: rules,
        text,
    }
}

/// Rule names and entry ids recovered from the text's tail.
pub fn parse_tail(text: &str) -> Result<(Vec<String>, Vec<EntryId>), ExplanationError> {
    let start = text.rfind(" [rules: ").ok_or(ExplanationError::MissingTail)?;
    let tail = text[start + " [rules: ".len()..]
        .strip_suffix(']')
        .ok_or(ExplanationError::MissingTail)?;
    let (rules, entries) = tail.split_once("; entries: ").ok_or(ExplanationError::MissingTail)?;
    let rules: Vec<String> = rules
        .split(", ")
        .filter(|r| !r.is_empty())
        .map(str::to_string)
        .collect();
    let entries = if entries == "none" {
        Vec::new()
    } else {
        entries
            .split(", ")
            .map(|e| {
                e.strip_prefix('#')
                    .and_then(|n| n.parse().ok())
                    .map(EntryId)
                    .ok_or_else(|| ExplanationError::BadEntryRef(e.to_string()))
            })
            .collect::<Result<_, _>>()?
    };
    Ok((rules, entries))
}

/// Checks a record against the explanation schema and against the board:
/// non-empty text, a tail that agrees with the structured fields, every veto
/// rule narrated in the prose, and every cited entry present.
pub fn validate_explanation(
    record: &ExplanationRecord,
    expected_decision: u64,
    entry_exists: impl Fn(EntryId) -> bool,
) -> Result<(), ExplanationError> {
    if record.text.trim().is_empty() {
        return Err(ExplanationError::EmptyText);
    }
    if record.decision_id != expected_decision {
        return Err(ExplanationError::WrongDecision {
            expected: expected_decision,
            found: record.decision_id,
        });
    }
    if record.rules_applied.is_empty() {
        return Err(ExplanationError::NoRules);
    }
    let (rules, entries) = parse_tail(&record.text)?;
    if rules != record.rules_applied {
        return Err(ExplanationError::RulesMismatch {
            text: rules,
            record: record.rules_applied.clone(),
        });
    }
    if entries != record.triggering_entries {
        return Err(ExplanationError::EntriesMismatch {
            text: entries,
            record: record.triggering_entries.clone(),
        });
    }
    let prose = &record.text[..record.text.rfind(" [rules: ").unwrap_or(0)];
    for rule in rules.iter().filter(|r| *r != WEIGHTED_SCORE) {
        if !prose.contains(&format!("rule {rule}")) {
            return Err(ExplanationError::RuleNotNarrated(rule.clone()));
        }
    }
    if rules.iter().all(|r| r == WEIGHTED_SCORE) && !prose.contains(NO_CONFLICT) {
        return Err(ExplanationError::RuleNotNarrated(NO_CONFLICT.to_string()));
    }
    if let Some(missing) = entries.iter().copied().find(|e| !entry_exists(*e)) {
        return Err(ExplanationError::UnknownEntry(missing));
    }
    Ok(())
}

/// Validation against a live board.
pub fn validate_on_board(record: &ExplanationRecord, decision_id: u64, board: &Blackboard) -> Result<(), ExplanationError> {
    validate_explanation(record, decision_id, |id| board.entry(id).is_some())
}
