use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bus::{EntryBody, EntryKind, NewEntry, Tier};
use crate::domain::{Modality, Nutrient, NutrientCap, Nutrients, PhysiologicalSample};
use crate::reminder::ReminderAction;

const FOREVER: Tick = Tick(u64::MAX);

fn meal(id: u32, gi: f64, sugar: f64, allergens: &[&str]) -> MealCandidate {
    MealCandidate {
        meal_id: MealId(id),
        name: format!("meal {id}"),
        glycemic_index: gi,
        nutrition: Nutrients::from_pairs(&[(Nutrient::SugarG, sugar), (Nutrient::SodiumMg, 300.0)]),
        allergens: allergens.iter().map(|s| s.to_string()).collect(),
    }
}

fn prop(id: u64, producer: AgentId, action: ProposedAction, fit: f64, nudge: f64) -> Proposal {
    Proposal {
        proposal_id: id,
        producer,
        action,
        preference_fit: fit,
        nudge_value: nudge,
    }
}

fn meal_prop(id: u64, m: MealCandidate, fit: f64, nudge: f64) -> Proposal {
    prop(id, AgentId::MealPlanner, ProposedAction::Meal(m), fit, nudge)
}

fn send(id: u64, m: Modality, fit: f64) -> Proposal {
    prop(
        id,
        AgentId::Reminder,
        ProposedAction::Reminder {
            action: ReminderAction::Send(m),
        },
        fit,
        0.5,
    )
}

fn constraints(board: &mut Blackboard, caps: Vec<NutrientCap>, allergens: &[&str]) -> EntryId {
    board.post_entry(
        NewEntry::new(
            Tier::P0Medical,
            EntryKind::Observation,
            EntryBody::MedicalConstraints {
                caps,
                allergens: allergens.iter().map(|s| s.to_string()).collect(),
            },
            Tick(0),
            FOREVER,
            AgentId::Environment,
        )
        .unwrap(),
    )
}

fn mask(board: &mut Blackboard, blocked: &[Modality]) -> EntryId {
    board.post_entry(
        NewEntry::new(
            Tier::P0Medical,
            EntryKind::Observation,
            EntryBody::ModalityMask {
                modalities: blocked.iter().copied().collect(),
                reason: "test".into(),
            },
            Tick(0),
            FOREVER,
            AgentId::Reminder,
        )
        .unwrap(),
    )
}

fn sample(t: u64, glucose: f64) -> PhysiologicalSample {
    PhysiologicalSample {
        t,
        glucose,
        heart_rate: 70.0,
        hydration: 80.0,
        steps: 300.0,
    }
}

fn decide(proposals: &[Proposal], board: &Blackboard) -> Decision {
    arbitrate(0, Tick::at(0, 720), proposals, board, &PriorityRuleSet::default()).unwrap()
}

#[test]
fn higher_score_wins_without_conflict() {
    let board = Blackboard::new();
    let d = decide(
        &[meal_prop(0, meal(1, 40.0, 5.0, &[]), 0.2, 0.2), meal_prop(1, meal(2, 40.0, 5.0, &[]), 0.9, 0.2)],
        &board,
    );
    assert_eq!(d.chosen_proposal().and_then(Proposal::meal_id), Some(MealId(2)));
    assert!(d.vetoed.is_empty());
    assert_eq!(d.explanation.rules_applied, vec![WEIGHTED_SCORE.to_string()]);
    assert!(d.explanation.text.contains(NO_CONFLICT));
    validate_on_board(&d.explanation, 0, &board).unwrap();
}

#[test]
fn score_is_the_weighted_sum() {
    let r = PriorityRuleSet::default();
    let p = meal_prop(0, meal(1, 40.0, 5.0, &[]), 0.5, 0.25);
    assert!((r.score(&p) - (0.7 * 0.5 + 0.3 * 0.25)).abs() < 1e-15);
}

#[test]
fn allergen_veto_cites_the_constraint_entry() {
    let mut board = Blackboard::new();
    let c = constraints(&mut board, vec![], &["nuts"]);
    let d = decide(
        &[meal_prop(0, meal(1, 40.0, 5.0, &["nuts"]), 1.0, 1.0), meal_prop(1, meal(2, 40.0, 5.0, &[]), 0.1, 0.1)],
        &board,
    );
    assert_eq!(d.chosen_proposal().and_then(Proposal::meal_id), Some(MealId(2)));
    assert_eq!(d.vetoed.len(), 1);
    assert_eq!(d.vetoed[0].rule, "allergen_exclusion");
    assert_eq!(d.vetoed[0].entries, vec![c]);
    assert!(d.explanation.text.contains("rule allergen_exclusion"));
    assert_eq!(d.explanation.triggering_entries, vec![c]);
    validate_on_board(&d.explanation, 0, &board).unwrap();
}

#[test]
fn per_item_cap_vetoes() {
    let mut board = Blackboard::new();
    constraints(&mut board, vec![NutrientCap::hard_item(Nutrient::SugarG, 15.0)], &[]);
    let d = decide(&[meal_prop(0, meal(1, 40.0, 15.5, &[]), 1.0, 1.0)], &board);
    assert!(d.is_reproposal());
    assert_eq!(d.veto_rules(), [P0Rule::HardNutrientCap].into());
    let d = decide(&[meal_prop(0, meal(1, 40.0, 15.0, &[]), 1.0, 1.0)], &board);
    assert!(!d.is_reproposal(), "a meal exactly at the cap is admissible");
}

#[test]
fn per_day_cap_cites_the_intake_entry() {
    let mut board = Blackboard::new();
    let c = constraints(&mut board, vec![NutrientCap::hard_day(Nutrient::SugarG, 30.0)], &[]);
    let at = Tick::at(0, 720);
    let d = decide(&[meal_prop(0, meal(1, 40.0, 20.0, &[]), 1.0, 1.0)], &board);
    assert!(!d.is_reproposal());
    let intake = board.post_entry(
        NewEntry::new(
            Tier::P0Medical,
            EntryKind::Observation,
            EntryBody::DailyIntake {
                day: 0,
                intake: Nutrients::from_pairs(&[(Nutrient::SugarG, 15.0)]),
            },
            Tick::at(0, 480),
            Tick::at(0, 1425),
            AgentId::MealPlanner,
        )
        .unwrap(),
    );
    let d = arbitrate(3, at, &[meal_prop(0, meal(1, 40.0, 20.0, &[]), 1.0, 1.0)], &board, &PriorityRuleSet::default()).unwrap();
    assert!(d.is_reproposal());
    assert_eq!(d.vetoed[0].entries, vec![c, intake]);
    validate_on_board(&d.explanation, 3, &board).unwrap();
    // Yesterday's intake does not count today.
    let tomorrow = Tick::at(1, 720);
    let d = arbitrate(4, tomorrow, &[meal_prop(0, meal(1, 40.0, 20.0, &[]), 1.0, 1.0)], &board, &PriorityRuleSet::default()).unwrap();
    assert!(!d.is_reproposal());
}

#[test]
fn guard_fires_above_level_once_and_expires() {
    let mut board = Blackboard::new();
    let g = GuardConfig::default();
    assert_eq!(raise_hyperglycemia_guard(&mut board, &[sample(600, 180.0)], &g), None);
    let id = raise_hyperglycemia_guard(&mut board, &[sample(660, 181.0)], &g).expect("above level");
    assert_eq!(raise_hyperglycemia_guard(&mut board, &[sample(720, 250.0)], &g), None, "already active");
    let e = board.entry(id).unwrap();
    assert_eq!(e.valid_to, Tick(660 / 15).plus_minutes(120));
    assert!(raise_hyperglycemia_guard(&mut board, &[sample(660 + 135, 250.0)], &g).is_some());
}

#[test]
fn gi_guard_vetoes_only_high_gi_while_active() {
    let mut board = Blackboard::new();
    let high = || meal_prop(0, meal(1, 70.0, 5.0, &[]), 1.0, 0.0);
    let low = || meal_prop(1, meal(2, 55.0, 5.0, &[]), 0.0, 0.0);
    let d = decide(&[high(), low()], &board);
    assert_eq!(d.chosen_proposal().and_then(Proposal::meal_id), Some(MealId(1)));

    let guard = raise_hyperglycemia_guard(&mut board, &[sample(700, 220.0)], &GuardConfig::default()).unwrap();
    let d = decide(&[high(), low()], &board);
    assert_eq!(d.chosen_proposal().and_then(Proposal::meal_id), Some(MealId(2)), "GI equal to gi_max passes");
    assert_eq!(d.vetoed[0].rule, "hyperglycemia_gi_guard");
    assert_eq!(d.vetoed[0].entries, vec![guard]);
    validate_on_board(&d.explanation, 0, &board).unwrap();
}

#[test]
fn masked_modality_vetoes_sends_but_not_delays() {
    let mut board = Blackboard::new();
    let m = mask(&mut board, &[Modality::Audio]);
    let d = decide(&[send(0, Modality::Audio, 1.0), send(1, Modality::Visual, 0.2)], &board);
    assert_eq!(
        d.chosen_proposal().map(|p| &p.action),
        Some(&ProposedAction::Reminder {
            action: ReminderAction::Send(Modality::Visual)
        })
    );
    assert_eq!(d.vetoed[0].rule, "masked_modality");
    assert_eq!(d.vetoed[0].entries, vec![m]);
    let delay = prop(
        2,
        AgentId::Reminder,
        ProposedAction::Reminder {
            action: ReminderAction::Delay15,
        },
        0.5,
        0.5,
    );
    assert!(!decide(&[delay], &board).is_reproposal());
}

#[test]
fn all_vetoed_requests_reproposal_with_every_rule_listed() {
    let mut board = Blackboard::new();
    constraints(&mut board, vec![NutrientCap::hard_item(Nutrient::SugarG, 10.0)], &["egg"]);
    let d = decide(
        &[meal_prop(0, meal(1, 40.0, 50.0, &[]), 1.0, 1.0), meal_prop(1, meal(2, 40.0, 1.0, &["egg"]), 1.0, 1.0)],
        &board,
    );
    assert!(d.is_reproposal());
    assert!(d.scores.is_empty());
    assert_eq!(d.explanation.agent, AgentId::Coordinator);
    assert_eq!(d.explanation.rules_applied, vec!["hard_nutrient_cap".to_string(), "allergen_exclusion".to_string()]);
    assert!(d.explanation.text.contains("re-proposal"));
    validate_on_board(&d.explanation, 0, &board).unwrap();
}

#[test]
fn ties_go_to_lowest_producer_then_id() {
    let board = Blackboard::new();
    let a = prop(5, AgentId::Guidance, ProposedAction::Meal(meal(1, 40.0, 0.0, &[])), 0.5, 0.5);
    let b = prop(9, AgentId::MealPlanner, ProposedAction::Meal(meal(2, 40.0, 0.0, &[])), 0.5, 0.5);
    let c = prop(7, AgentId::MealPlanner, ProposedAction::Meal(meal(3, 40.0, 0.0, &[])), 0.5, 0.5);
    let d = decide(&[a, b, c], &board);
    assert_eq!(d.chosen, Some(ProposalRef { producer: AgentId::MealPlanner, proposal_id: 7 }));
}

#[test]
fn input_errors() {
    let board = Blackboard::new();
    let rules = PriorityRuleSet::default();
    assert_eq!(arbitrate(0, Tick(0), &[], &board, &rules), Err(ArbitrationError::NoProposals));
    let bad = meal_prop(0, meal(1, 40.0, 0.0, &[]), 1.5, 0.0);
    assert!(matches!(arbitrate(0, Tick(0), &[bad], &board, &rules), Err(ArbitrationError::InvalidProposal(_))));
    let zero = PriorityRuleSet {
        w_pref: 0.0,
        w_nudge: 0.0,
        ..rules.clone()
    };
    let ok = meal_prop(0, meal(1, 40.0, 0.0, &[]), 0.5, 0.0);
    assert_eq!(arbitrate(0, Tick(0), std::slice::from_ref(&ok), &board, &zero), Err(ArbitrationError::InvalidRules));
    let neg = PriorityRuleSet { w_pref: -1.0, ..rules };
    assert_eq!(arbitrate(0, Tick(0), &[ok], &board, &neg), Err(ArbitrationError::InvalidRules));
}

#[test]
fn disabled_rule_does_not_veto() {
    let mut board = Blackboard::new();
    constraints(&mut board, vec![], &["nuts"]);
    let rules = PriorityRuleSet {
        p0_rules: vec![P0Rule::HardNutrientCap],
        ..PriorityRuleSet::default()
    };
    let d = arbitrate(0, Tick(0), &[meal_prop(0, meal(1, 40.0, 0.0, &["nuts"]), 1.0, 1.0)], &board, &rules).unwrap();
    assert!(!d.is_reproposal());
}

#[test]
fn coordinator_numbers_decisions() {
    let board = Blackboard::new();
    let mut c = Coordinator::new(PriorityRuleSet::default(), GuardConfig::default());
    let p = meal_prop(c.next_proposal_id(), meal(1, 40.0, 0.0, &[]), 0.5, 0.5);
    let ids: Vec<u64> = (0..3).map(|_| c.decide(std::slice::from_ref(&p), &board, Tick(0)).unwrap().decision_id).collect();
    assert_eq!(ids, vec![0, 1, 2]);
    assert_eq!(c.next_proposal_id(), 1);
}

#[test]
fn tampered_explanations_fail_validation() {
    let mut board = Blackboard::new();
    constraints(&mut board, vec![], &["nuts"]);
    let d = decide(&[meal_prop(0, meal(1, 40.0, 0.0, &["nuts"]), 1.0, 1.0), meal_prop(1, meal(2, 40.0, 0.0, &[]), 0.0, 0.0)], &board);
    let ok = d.explanation.clone();
    assert_eq!(validate_on_board(&ok, 1, &board), Err(ExplanationError::WrongDecision { expected: 1, found: 0 }));

    let mut r = ok.clone();
    r.text = "  ".into();
    assert_eq!(validate_on_board(&r, 0, &board), Err(ExplanationError::EmptyText));

    let mut r = ok.clone();
    r.text = r.text.replace("rule allergen_exclusion", "a rule");
    assert_eq!(validate_on_board(&r, 0, &board), Err(ExplanationError::RuleNotNarrated("allergen_exclusion".into())));

    let mut r = ok.clone();
    r.text = r.text.replace(" [rules:", " [rulez:");
    assert_eq!(validate_on_board(&r, 0, &board), Err(ExplanationError::MissingTail));

    let mut r = ok.clone();
    r.rules_applied.pop();
    assert!(matches!(validate_on_board(&r, 0, &board), Err(ExplanationError::RulesMismatch { .. })));

    let mut r = ok.clone();
    r.triggering_entries = vec![EntryId(99)];
    r.text = r.text.replace("entries: #0]", "entries: #99]");
    assert_eq!(validate_on_board(&r, 0, &board), Err(ExplanationError::UnknownEntry(EntryId(99))));

    assert_eq!(parse_tail("x [rules: a; entries: 7]"), Err(ExplanationError::BadEntryRef("7".into())));
}

/// A random situation: what the board says plus the proposals on the table.
struct World {
    sugar_item: Option<f64>,
    sodium_day: Option<f64>,
    allergens: Vec<&'static str>,
    intake_sodium: f64,
    guard: bool,
    blocked: Vec<Modality>,
    proposals: Vec<Proposal>,
}

const TAGS: [&str; 3] = ["nuts", "dairy", "fish"];

fn random_world(rng: &mut ChaCha8Rng) -> World {
    let mut proposals = Vec::new();
    let n = rng.random_range(1..=5);
    for i in 0..n {
        let fit = rng.random::<f64>();
        let nudge = rng.random::<f64>();
        let producer = [AgentId::MealPlanner, AgentId::Guidance, AgentId::Reminder][rng.random_range(0..3)];
        let action = if rng.random_bool(0.7) {
            let allergens: Vec<&str> = TAGS.iter().copied().filter(|_| rng.random_bool(0.2)).collect();
            let mut m = meal(i, rng.random_range(20.0..100.0), rng.random_range(0.0..40.0), &allergens);
            m.nutrition.set(Nutrient::SodiumMg, rng.random_range(0.0..1500.0));
            ProposedAction::Meal(m)
        } else {
            ProposedAction::Reminder {
                action: if rng.random_bool(0.85) {
                    ReminderAction::Send(Modality::ALL[rng.random_range(0..3)])
                } else {
                    ReminderAction::Delay15
                },
            }
        };
        // Coarse grids make exact score ties common.
        let q = |x: f64| (x * 4.0).round() / 4.0;
        proposals.push(prop(i as u64, producer, action, q(fit), q(nudge)));
    }
    World {
        sugar_item: rng.random_bool(0.5).then(|| rng.random_range(5.0..30.0)),
        sodium_day: rng.random_bool(0.5).then(|| rng.random_range(500.0..3000.0)),
        allergens: TAGS.iter().copied().filter(|_| rng.random_bool(0.3)).collect(),
        intake_sodium: rng.random_range(0.0..2000.0),
        guard: rng.random_bool(0.4),
        blocked: Modality::ALL.iter().copied().filter(|_| rng.random_bool(0.3)).collect(),
        proposals,
    }
}

fn board_of(w: &World, at: Tick) -> Blackboard {
    let mut board = Blackboard::new();
    let mut caps = Vec::new();
    caps.extend(w.sugar_item.map(|m| NutrientCap::hard_item(Nutrient::SugarG, m)));
    caps.extend(w.sodium_day.map(|m| NutrientCap::hard_day(Nutrient::SodiumMg, m)));
    // Soft caps must never veto.
    caps.push(NutrientCap::soft(Nutrient::SugarG, Some(1.0), Some(1.0)));
    constraints(&mut board, caps, &w.allergens);
    board.post_entry(
        NewEntry::new(
            Tier::P0Medical,
            EntryKind::Observation,
            EntryBody::DailyIntake {
                day: at.day(),
                intake: Nutrients::from_pairs(&[(Nutrient::SodiumMg, w.intake_sodium)]),
            },
            Tick::at(at.day(), 0),
            at,
            AgentId::MealPlanner,
        )
        .unwrap(),
    );
    if w.guard {
        raise_hyperglycemia_guard(&mut board, &[sample(at.0 * 15, 300.0)], &GuardConfig::default()).unwrap();
    }
    if !w.blocked.is_empty() {
        mask(&mut board, &w.blocked);
    }
    board
}

/// Independent statement of the medical tier.
fn violates(w: &World, p: &Proposal, gi_max: f64) -> bool {
    match &p.action {
        ProposedAction::Meal(m) => {
            let sugar = m.nutrition.get(Nutrient::SugarG);
            let sodium = m.nutrition.get(Nutrient::SodiumMg);
            w.sugar_item.is_some_and(|cap| sugar > cap)
                || w.sodium_day.is_some_and(|cap| w.intake_sodium + sodium > cap)
                || m.allergens.iter().any(|a| w.allergens.contains(&a.as_str()))
                || (w.guard && m.glycemic_index > gi_max)
        }
        ProposedAction::Reminder {
            action: ReminderAction::Send(m),
        } => w.blocked.contains(m),
        ProposedAction::Reminder { .. } => false,
    }
}

#[test]
fn fuzz_never_violates_p0_and_ignores_weight_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let base = PriorityRuleSet::default();
    let mut chosen_count = 0;
    for case in 0..100_000u64 {
        let w = random_world(&mut rng);
        let at = Tick::at((case % 7) as u32, 720);
        let board = board_of(&w, at);
        let rules = PriorityRuleSet {
            w_pref: rng.random_range(0.0..1.0),
            w_nudge: rng.random_range(0.01..1.0),
            ..base.clone()
        };
        let d = arbitrate(case, at, &w.proposals, &board, &rules).unwrap();
        let admissible: Vec<&Proposal> = w.proposals.iter().filter(|p| !violates(&w, p, rules.gi_max)).collect();
        match d.chosen_proposal() {
            Some(c) => {
                chosen_count += 1;
                assert!(!violates(&w, c, rules.gi_max), "case {case}: P0 violation");
                let best = admissible.iter().map(|p| rules.score(p)).fold(f64::MIN, f64::max);
                assert!(rules.score(c) >= best - 1e-9, "case {case}: not the best survivor");
            }
            None => assert!(admissible.is_empty(), "case {case}: admissible proposal dropped"),
        }
        let vetoed: BTreeSet<ProposalRef> = d.vetoed.iter().map(|v| v.proposal).collect();
        let expected: BTreeSet<ProposalRef> =
            w.proposals.iter().filter(|p| violates(&w, p, rules.gi_max)).map(Proposal::reference).collect();
        assert_eq!(vetoed, expected, "case {case}");
        validate_on_board(&d.explanation, case, &board).unwrap();

        let k = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = PriorityRuleSet {
            w_pref: rules.w_pref * k,
            w_nudge: rules.w_nudge * k,
            ..rules.clone()
        };
        let d2 = arbitrate(case, at, &w.proposals, &board, &scaled).unwrap();
        assert_eq!(d.chosen, d2.chosen, "case {case}: scale {k} changed the choice");
        assert_eq!(d.vetoed, d2.vetoed);
    }
    assert!(chosen_count > 10_000, "fuzz should exercise both outcomes");
}

proptest! {
    #[test]
    fn arbitration_is_deterministic_and_order_free(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_world(&mut rng);
        let at = Tick::at(2, 720);
        let board = board_of(&w, at);
        let rules = PriorityRuleSet::default();
        let a = arbitrate(1, at, &w.proposals, &board, &rules).unwrap();
        let b = arbitrate(1, at, &w.proposals, &board, &rules).unwrap();
        prop_assert_eq!(&a, &b);
        let mut rev = w.proposals.clone();
        rev.reverse();
        let c = arbitrate(1, at, &rev, &board, &rules).unwrap();
        prop_assert_eq!(a.chosen, c.chosen);
    }
}
