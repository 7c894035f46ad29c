use serde::{Deserialize, Serialize};

use crate::bus::{Blackboard, EntryBody, EntryId, EntryKind, Tier};
use crate::domain::{allergen_hits, cap_breaches, CapScope, Nutrients, Severity, Tick, Violation};
use crate::reminder::ReminderAction;

use super::{Proposal, ProposedAction};

/// Medical-tier veto predicates. A rule looks at one proposal and the
/// entries active on the board and either lets it through or names the
/// entries that justify the veto.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P0Rule {
    HardNutrientCap,
    AllergenExclusion,
    HyperglycemiaGiGuard,
    MaskedModality,
}

impl P0Rule {
    pub const ALL: [P0Rule; 4] = [
        P0Rule::HardNutrientCap,
        P0Rule::AllergenExclusion,
        P0Rule::HyperglycemiaGiGuard,
        P0Rule::MaskedModality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            P0Rule::HardNutrientCap => "hard_nutrient_cap",
            P0Rule::AllergenExclusion => "allergen_exclusion",
            P0Rule::HyperglycemiaGiGuard => "hyperglycemia_gi_guard",
            P0Rule::MaskedModality => "masked_modality",
        }
    }

    pub fn from_name(name: &str) -> Option<P0Rule> {
        P0Rule::ALL.into_iter().find(|r| r.name() == name)
    }

    /// `Some(entries)` when the rule vetoes `proposal` at tick `at`.
    pub fn vetoes(
        self,
        proposal: &Proposal,
        board: &Blackboard,
        at: Tick,
        gi_max: f64,
    ) -> Option<Vec<EntryId>> {
        let active_p0 = || {
            board
                .entries()
                .iter()
                .filter(move |e| e.tier == Tier::P0Medical && e.active_at(at))
        };
        match (self, &proposal.action) {
            (P0Rule::HardNutrientCap, ProposedAction::Meal(meal)) => {
                let intake = board.latest_active(at, |e| {
                    matches!(&e.body, EntryBody::DailyIntake { day, .. } if *day == at.day())
                });
                let intake_so_far = match intake.map(|e| &e.body) {
                    Some(EntryBody::DailyIntake { intake, .. }) => *intake,
                    _ => Nutrients::zero(),
                };
                let mut hits = Vec::new();
                for e in active_p0() {
                    if let EntryBody::MedicalConstraints { caps, .. } = &e.body {
                        let hard = caps.iter().filter(|c| c.severity == Severity::Hard);
                        let breaches = cap_breaches(hard, &meal.nutrition, &intake_so_far);
                        if !breaches.is_empty() {
                            hits.push(e.entry_id);
                            let per_day = breaches.iter().any(|v| {
                                matches!(v, Violation::Cap { scope: CapScope::PerDay, .. })
                            });
                            if let (true, Some(i)) = (per_day, intake) {
                                hits.push(i.entry_id);
                            }
                        }
                    }
                }
                non_empty(hits)
            }
            (P0Rule::AllergenExclusion, ProposedAction::Meal(meal)) => non_empty(
                active_p0()
                    .filter(|e| match &e.body {
                        EntryBody::MedicalConstraints { allergens, .. } => {
                            !allergen_hits(allergens, &meal.allergens).is_empty()
                        }
                        _ => false,
                    })
                    .map(|e| e.entry_id)
                    .collect(),
            ),
            (P0Rule::HyperglycemiaGiGuard, ProposedAction::Meal(meal)) => {
                if meal.glycemic_index <= gi_max {
                    return None;
                }
                non_empty(
                    active_p0()
                        .filter(|e| {
                            e.kind == EntryKind::Veto
                                && matches!(e.body, EntryBody::GlucoseRisk { .. })
                        })
                        .map(|e| e.entry_id)
                        .collect(),
                )
            }
            (
                P0Rule::MaskedModality,
                ProposedAction::Reminder {
                    action: ReminderAction::Send(m),
                },
            ) => non_empty(
                active_p0()
                    .filter(|e| match &e.body {
                        EntryBody::ModalityMask { modalities, .. } => modalities.contains(m),
                        _ => false,
                    })
                    .map(|e| e.entry_id)
                    .collect(),
            ),
            _ => None,
        }
    }
}

fn non_empty(ids: Vec<EntryId>) -> Option<Vec<EntryId>> {
    if ids.is_empty() {
        None
    } else {
        Some(ids)
    }
}
