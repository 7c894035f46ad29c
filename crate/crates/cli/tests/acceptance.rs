//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its own line whether it passes or not; exits non-zero if any fail.
//!
//! The cohort-scale criteria share four runs of 100 users over 56 days at the
//! default seed: adaptive, static reminders, random planner, naive monitor.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agentcare::bus::{AgentId, Blackboard, EntryBody, EntryKind, LogRecord, NewEntry, Payload, Tier};
use agentcare::coordinator::{arbitrate, MealCandidate, PriorityRuleSet, Proposal, ProposalRef, ProposedAction};
use agentcare::domain::{
    GuidelineTarget, MealCatalog, MealId, Modality, Nutrient, NutrientCap, Nutrients, Phenotype, Tick,
};
use agentcare::meal_planner::{select_meal, update, AdherenceBucket, MealSlot, PlannerState, QTable};
use agentcare::metrics::{explainability_frac, satisfaction_score, SatisfactionWeights};
use agentcare::monitor::{loss_and_grad, mse, GruParams, Window};
use agentcare::reminder::{
    choose_action, ActionValueTable, Engagement, LastResponse, ModalityMask, ReminderAction, ReminderContext,
    ReminderOutcome, TimeBucket,
};
use agentcare::scenario::{run, ScenarioConfig, SimOutput};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Timed {
    out: SimOutput,
    took: Duration,
}

fn cohort_run(tweak: impl FnOnce(&mut ScenarioConfig)) -> Timed {
    let mut c = ScenarioConfig::default();
    c.cohort.n_users = 100;
    c.cohort.days = 56;
    tweak(&mut c);
    let start = Instant::now();
    let out = run(&c, &MealCatalog::builtin(), &GuidelineTarget::builtin(), 1).expect("cohort run");
    Timed {
        out,
        took: start.elapsed(),
    }
}

struct Runs {
    adaptive: Timed,
    static_reminders: Timed,
    random_planner: Timed,
    naive_monitor: Timed,
}

fn adherence_beats_static(r: &Runs) -> Outcome {
    let (a, s) = (r.adaptive.out.report.adherence_rate, r.static_reminders.out.report.adherence_rate);
    let secs = r.adaptive.took.as_secs_f64();
    outcome(
        a >= 0.70 && a - s >= 0.10 && secs < 60.0,
        format!(
            "adherence adaptive {a:.4} vs static {s:.4} (+{:.1} pts), 100x56 run {secs:.1}s",
            100.0 * (a - s)
        ),
    )
}

fn planner_beats_random(r: &Runs) -> Outcome {
    let (q, rnd) = (r.adaptive.out.report.nutritional_adequacy, r.random_planner.out.report.nutritional_adequacy);
    let gain = (q - rnd) / rnd;
    let secs = r.adaptive.took.as_secs_f64() + r.random_planner.took.as_secs_f64();
    outcome(
        gain >= 0.15 && secs < 120.0,
        format!("adequacy q-learning {q:.4} vs random {rnd:.4} ({:+.1}%), both runs {secs:.1}s", 100.0 * gain),
    )
}

fn every_decision_is_explained(r: &Runs) -> Outcome {
    let frac = r.adaptive.out.report.explainability_frac;

    let mut c = ScenarioConfig::default();
    c.cohort.n_users = 3;
    c.cohort.days = 2;
    let mut trace = run(&c, &MealCatalog::builtin(), &GuidelineTarget::builtin(), 1).unwrap().trace;
    let n = trace
        .iter()
        .filter(|t| matches!(&t.record, LogRecord::Event(e) if matches!(e.payload, Payload::Decision(_))))
        .count();
    let clean = explainability_frac(&trace).unwrap();
    let victim = trace
        .iter_mut()
        .find_map(|t| match &mut t.record {
            LogRecord::Event(e) => match &mut e.payload {
                Payload::Decision(d) => Some(d),
                _ => None,
            },
            _ => None,
        })
        .unwrap();
    victim.explanation.text = format!("Decision {}: tampered", victim.decision_id);
    let corrupted = explainability_frac(&trace).unwrap();
    let expected = (n - 1) as f64 / n as f64;
    outcome(
        frac == 1.0 && clean == 1.0 && (corrupted - expected).abs() < 1e-12,
        format!("explainability {frac:.4} on the cohort; fixture of {n} decisions gives {clean:.4}, one corrupted {corrupted:.6} (expected {expected:.6})"),
    )
}

fn monitor_spares_caregivers(r: &Runs) -> Outcome {
    let (naive, gru) = (r.naive_monitor.out.report.caregiver_alerts, r.adaptive.out.report.caregiver_alerts);
    let reduction = if naive > 0 { 100.0 * (naive as f64 - gru as f64) / naive as f64 } else { f64::NAN };
    outcome(
        gru < naive,
        format!("caregiver alerts learned {gru} vs naive {naive}, reduction {reduction:.1}%"),
    )
}

fn satisfaction_in_range(r: &Runs) -> Outcome {
    let s = r.adaptive.out.report.satisfaction;
    let w = SatisfactionWeights::default();
    let best = satisfaction_score(0.0, 0.0, 1.0, &w);
    let worst = satisfaction_score(1.0, 1.0, 0.0, &w);
    outcome(
        (3.5..=5.0).contains(&s) && best == 5.0 && worst == 1.5,
        format!("cohort satisfaction {s:.1}; bound cases {best:.1} and {worst:.1}"),
    )
}

/// Value iteration on a deterministic MDP; `None` ends the episode.
fn value_iteration(next: &[[Option<usize>; 2]; 3], rew: &[[f64; 2]; 3], gamma: f64) -> [[f64; 2]; 3] {
    let mut q = [[0.0f64; 2]; 3];
    loop {
        let v: Vec<f64> = q.iter().map(|r| r[0].max(r[1])).collect();
        let mut change: f64 = 0.0;
        for s in 0..3 {
            for a in 0..2 {
                let new = rew[s][a] + next[s][a].map_or(0.0, |n| gamma * v[n]);
                change = change.max((new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        if change < 1e-13 {
            return q;
        }
    }
}

fn q_learning_matches_value_iteration() -> Outcome {
    let state = |slot| PlannerState {
        phenotype: Phenotype::Diabetes,
        slot,
        adherence: AdherenceBucket::Mid,
    };
    let states = [state(MealSlot::Breakfast), state(MealSlot::Lunch), state(MealSlot::Dinner)];
    let actions = [MealId(0), MealId(1)];
    let next = [[Some(1), Some(0)], [Some(2), Some(0)], [Some(0), None]];
    let rew = [[0.0, 0.2], [0.0, 0.1], [1.0, 0.5]];
    let gamma = 0.9;
    let oracle = value_iteration(&next, &rew, gamma);

    let mut q = QTable::new(0.1, gamma, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut s = 0;
    for _ in 0..100_000 {
        let pick = select_meal(&states[s], &q, &actions, &mut rng).unwrap();
        let a = actions.iter().position(|m| *m == pick).unwrap();
        let n = next[s][a];
        update(&mut q, &states[s], pick, rew[s][a], n.map(|i| &states[i]), &actions);
        s = n.unwrap_or_else(|| rng.random_range(0..3));
    }
    let mut worst: f64 = 0.0;
    for s in 0..3 {
        for a in 0..2 {
            worst = worst.max((q.get(&states[s], actions[a]) - oracle[s][a]).abs());
        }
    }
    outcome(worst < 1e-2, format!("max |Q - Q*| {worst:.2e} after 1e5 steps"))
}

fn bandit_finds_the_better_arm() -> Outcome {
    let ctx = ReminderContext {
        time_bucket: TimeBucket::ALL[1],
        engagement: Engagement::ALL[1],
        last_response: LastResponse::None,
    };
    let mask = ModalityMask {
        blocked: [Modality::Haptic].into(),
        down_ranked: BTreeSet::new(),
    };
    let p_comply = |a: ReminderAction| match a {
        ReminderAction::Send(Modality::Audio) => 0.3,
        ReminderAction::Send(Modality::Visual) => 0.9,
        _ => unreachable!("only the two sends are scored"),
    };
    let mut wins = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = ActionValueTable::new();
        for _ in 0..1000 {
            let a = choose_action(&ctx, &table, &mask, 0.1, &mut rng);
            // A delay is a round without a pull.
            if a == ReminderAction::Delay15 {
                continue;
            }
            let o = if rng.random_bool(p_comply(a)) { ReminderOutcome::Complied } else { ReminderOutcome::Ignored };
            table.observe(&ctx, a, o);
        }
        wins += (choose_action(&ctx, &table, &mask, 0.0, &mut rng) == ReminderAction::Send(Modality::Visual)) as u32;
    }
    outcome(wins >= 95, format!("better arm (0.9 vs 0.3) chosen in {wins}/100 seeds after 1000 rounds"))
}

fn gru_gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let p = GruParams::random(5, 8, &mut rng);
        let data: Vec<Window> = (0..3)
            .map(|_| Window {
                inputs: (0..6).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                target: rng.random_range(0.0..1.0),
            })
            .collect();
        let (_, grad) = loss_and_grad(&data, &p).unwrap();
        let h = 1e-5;
        for (k, a) in grad.values().enumerate() {
            let mut plus = p.clone();
            *plus.values_mut().nth(k).unwrap() += h;
            let mut minus = p.clone();
            *minus.values_mut().nth(k).unwrap() -= h;
            let numeric = (mse(&data, &plus).unwrap() - mse(&data, &minus).unwrap()) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    outcome(worst < 1e-4, format!("max relative gradient error {worst:.2e} over 20 seeds"))
}

const TAGS: [&str; 3] = ["peanut", "shellfish", "soy"];

/// A random arbitration problem and the P0 facts it was built from.
struct World {
    sugar_item: Option<f64>,
    sodium_day: Option<f64>,
    intake_sodium: f64,
    allergens: Vec<&'static str>,
    glucose_risk: bool,
    masked: Vec<Modality>,
    proposals: Vec<Proposal>,
}

fn world(rng: &mut ChaCha8Rng) -> World {
    let n = rng.random_range(1..=6);
    let grid = |x: f64| (x * 5.0).round() / 5.0;
    let proposals = (0..n)
        .map(|i| {
            let action = if rng.random_bool(0.6) {
                let mut nutrition = Nutrients::zero();
                nutrition.set(Nutrient::SugarG, rng.random_range(0.0..40.0));
                nutrition.set(Nutrient::SodiumMg, rng.random_range(0.0..1500.0));
                ProposedAction::Meal(MealCandidate {
                    meal_id: MealId(i),
                    name: format!("dish {i}"),
                    glycemic_index: rng.random_range(20.0..100.0),
                    nutrition,
                    allergens: TAGS.iter().filter(|_| rng.random_bool(0.25)).map(|t| t.to_string()).collect(),
                })
            } else {
                let action = match rng.random_range(0..4) {
                    3 => ReminderAction::Delay15,
                    m => ReminderAction::Send(Modality::ALL[m]),
                };
                ProposedAction::Reminder { action }
            };
            Proposal {
                proposal_id: i as u64,
                producer: [AgentId::MealPlanner, AgentId::Guidance, AgentId::Reminder][rng.random_range(0..3)],
                action,
                preference_fit: grid(rng.random()),
                nudge_value: grid(rng.random()),
            }
        })
        .collect();
    World {
        sugar_item: rng.random_bool(0.5).then(|| rng.random_range(5.0..30.0)),
        sodium_day: rng.random_bool(0.5).then(|| rng.random_range(500.0..3000.0)),
        intake_sodium: rng.random_range(0.0..2000.0),
        allergens: TAGS.iter().copied().filter(|_| rng.random_bool(0.3)).collect(),
        glucose_risk: rng.random_bool(0.4),
        masked: Modality::ALL.into_iter().filter(|_| rng.random_bool(0.3)).collect(),
        proposals,
    }
}

fn board(w: &World, at: Tick) -> Blackboard {
    let mut b = Blackboard::new();
    let forever = Tick(u64::MAX);
    let mut post = |tier, kind, body, from, to, by| {
        b.post_entry(NewEntry::new(tier, kind, body, from, to, by).unwrap());
    };
    let mut caps = Vec::new();
    caps.extend(w.sugar_item.map(|m| NutrientCap::hard_item(Nutrient::SugarG, m)));
    caps.extend(w.sodium_day.map(|m| NutrientCap::hard_day(Nutrient::SodiumMg, m)));
    post(
        Tier::P0Medical,
        EntryKind::Observation,
        EntryBody::MedicalConstraints {
            caps,
            allergens: w.allergens.iter().map(|s| s.to_string()).collect(),
        },
        Tick(0),
        forever,
        AgentId::Environment,
    );
    post(
        Tier::P0Medical,
        EntryKind::Observation,
        EntryBody::DailyIntake {
            day: at.day(),
            intake: Nutrients::from_pairs(&[(Nutrient::SodiumMg, w.intake_sodium)]),
        },
        Tick::at(at.day(), 0),
        at,
        AgentId::MealPlanner,
    );
    if w.glucose_risk {
        post(
            Tier::P0Medical,
            EntryKind::Veto,
            EntryBody::GlucoseRisk {
                glucose: 290.0,
                guard_level: 250.0,
                sample_t: at.0,
            },
            at,
            at.plus_minutes(120),
            AgentId::Coordinator,
        );
    }
    if !w.masked.is_empty() {
        post(
            Tier::P0Medical,
            EntryKind::Observation,
            EntryBody::ModalityMask {
                modalities: w.masked.iter().copied().collect(),
                reason: "fuzz".into(),
            },
            Tick(0),
            forever,
            AgentId::Reminder,
        );
    }
    b
}

/// The medical tier restated from the world's facts.
fn breaks_p0(w: &World, p: &Proposal, gi_max: f64) -> bool {
    match &p.action {
        ProposedAction::Meal(m) => {
            w.sugar_item.is_some_and(|cap| m.nutrition.get(Nutrient::SugarG) > cap)
                || w.sodium_day.is_some_and(|cap| w.intake_sodium + m.nutrition.get(Nutrient::SodiumMg) > cap)
                || m.allergens.iter().any(|a| w.allergens.contains(&a.as_str()))
                || (w.glucose_risk && m.glycemic_index > gi_max)
        }
        ProposedAction::Reminder {
            action: ReminderAction::Send(m),
        } => w.masked.contains(m),
        ProposedAction::Reminder { .. } => false,
    }
}

fn coordinator_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut violations, mut dropped, mut scale_changes, mut chosen) = (0, 0, 0, 0);
    for case in 0..100_000u64 {
        let w = world(&mut rng);
        let at = Tick::at((case % 5) as u32, 600 + (case % 7) as u32 * 60);
        let b = board(&w, at);
        let rules = PriorityRuleSet {
            w_pref: rng.random_range(0.0..1.0),
            w_nudge: rng.random_range(0.01..1.0),
            ..PriorityRuleSet::default()
        };
        let d = arbitrate(case, at, &w.proposals, &b, &rules).unwrap();
        match d.chosen_proposal() {
            Some(p) => {
                chosen += 1;
                violations += breaks_p0(&w, p, rules.gi_max) as u32;
            }
            None => dropped += w.proposals.iter().any(|p| !breaks_p0(&w, p, rules.gi_max)) as u32,
        }
        let k = 10f64.powf(rng.random_range(-4.0..4.0));
        let scaled = PriorityRuleSet {
            w_pref: rules.w_pref * k,
            w_nudge: rules.w_nudge * k,
            ..rules.clone()
        };
        let d2 = arbitrate(case, at, &w.proposals, &b, &scaled).unwrap();
        let same: Option<ProposalRef> = d2.chosen;
        scale_changes += (same != d.chosen) as u32;
    }
    outcome(
        violations == 0 && dropped == 0 && scale_changes == 0 && chosen > 10_000,
        format!("1e5 cases: {violations} P0 violations, {dropped} admissible sets dropped, {scale_changes} choices changed by weight scaling ({chosen} chosen)"),
    )
}

fn simulate_is_byte_identical() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_agentcare");
    for out in ["a", "b"] {
        let status = Command::new(bin)
            .args(["simulate", "--users", "20", "--days", "30", "--out", out])
            .current_dir(dir.path())
            .env_remove("AGENTCARE_OUT_DIR")
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    }
    let files = ["trace.jsonl", "features.csv", "report.json"];
    let differing: Vec<&str> = files
        .into_iter()
        .filter(|f| fs::read(dir.path().join("a").join(f)).unwrap() != fs::read(dir.path().join("b").join(f)).unwrap())
        .collect();
    let bytes: u64 = files.iter().map(|f| fs::metadata(dir.path().join("a").join(f)).unwrap().len()).sum();
    outcome(
        differing.is_empty(),
        format!("two simulate runs, {bytes} bytes of trace, CSV and report; differing files: {differing:?}"),
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let start = Instant::now();
    let runs = Runs {
        adaptive: cohort_run(|_| {}),
        static_reminders: cohort_run(|c| c.baselines.static_reminders = true),
        random_planner: cohort_run(|c| c.baselines.random_planner = true),
        naive_monitor: cohort_run(|c| c.baselines.naive_monitor = true),
    };
    let criteria: [(&str, Check<'_>); 10] = [
        ("adaptive reminders beat static", Box::new(|| adherence_beats_static(&runs))),
        ("q-learning planner beats random", Box::new(|| planner_beats_random(&runs))),
        ("every decision explained", Box::new(|| every_decision_is_explained(&runs))),
        ("learned monitor spares caregivers", Box::new(|| monitor_spares_caregivers(&runs))),
        ("satisfaction in range", Box::new(|| satisfaction_in_range(&runs))),
        ("q-learning matches value iteration", Box::new(q_learning_matches_value_iteration)),
        ("bandit finds the better arm", Box::new(bandit_finds_the_better_arm)),
        ("gru gradient check", Box::new(gru_gradient_check)),
        ("coordinator fuzz", Box::new(coordinator_fuzz)),
        ("simulate is byte-identical", Box::new(simulate_is_byte_identical)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !o.pass as u32;
        println!("criterion {:>2} {}: {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        10 - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
