//! Meal planner: tabular Q-learning over meal slots.
//!
//! The state is `(phenotype, slot, adherence bucket)`; actions are catalog
//! meal ids. Preferences and constraints do not enter the state; they shape
//! the admissible mask and the reward instead. One day is one episode, the
//! snack slot is terminal.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::bus::{AgentId, Blackboard, EntryId};
use crate::coordinator::{ArbitrationError, Coordinator, Decision, MealCandidate, P0Rule, Proposal, ProposedAction};
use crate::domain::{
    adequacy_score, cap_breaches, check_hard_constraints, GuidelineTarget, MealCatalog,
    MealCatalogEntry, MealId, Nutrients, Phenotype, Tick, UserId, UserProfile,
};
use crate::guidance::{self, FoodItem, GiGuard, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MealSlot {
    Breakfast,
    Lunch,
    Dinner,
    Snack,
}

impl MealSlot {
    pub const ALL: [MealSlot; 4] = [MealSlot::Breakfast, MealSlot::Lunch, MealSlot::Dinner, MealSlot::Snack];

    /// Minute of day the slot is served.
    pub fn minute(self) -> u32 {
        match self {
            MealSlot::Breakfast => 480,
            MealSlot::Lunch => 750,
            MealSlot::Dinner => 1110,
            MealSlot::Snack => 1260,
        }
    }

    pub fn next(self) -> Option<MealSlot> {
        match self {
            MealSlot::Breakfast => Some(MealSlot::Lunch),
            MealSlot::Lunch => Some(MealSlot::Dinner),
            MealSlot::Dinner => Some(MealSlot::Snack),
            MealSlot::Snack => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MealSlot::Breakfast => "breakfast",
            MealSlot::Lunch => "lunch",
            MealSlot::Dinner => "dinner",
            MealSlot::Snack => "snack",
        }
    }

    pub fn at_minute(minute: u32) -> Option<MealSlot> {
        MealSlot::ALL.into_iter().find(|s| s.minute() == minute)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdherenceBucket {
    Low,
    Mid,
    High,
}

impl AdherenceBucket {
    pub fn of_rate(rate: f64) -> AdherenceBucket {
        if rate < 1.0 / 3.0 {
            AdherenceBucket::Low
        } else if rate < 2.0 / 3.0 {
            AdherenceBucket::Mid
        } else {
            AdherenceBucket::High
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlannerState {
    pub phenotype: Phenotype,
    pub slot: MealSlot,
    pub adherence: AdherenceBucket,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QScope {
    /// One table for the whole cohort; the phenotype in the state separates users.
    Shared,
    PerUser,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerPolicy {
    QLearning,
    /// Uniform draw from the admissible mask; the baseline.
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Multiplicative epsilon decay per simulated day.
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    /// Fraction of the daily targets per slot, breakfast to snack.
    pub slot_shares: [f64; 4],
    pub sensory_penalty: f64,
    pub soft_cap_penalty: f64,
    pub scope: QScope,
    pub policy: PlannerPolicy,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.1,
            epsilon_decay: 0.995,
            epsilon_floor: 0.01,
            slot_shares: [0.25, 0.35, 0.30, 0.10],
            sensory_penalty: 0.2,
            soft_cap_penalty: 0.5,
            scope: QScope::Shared,
            policy: PlannerPolicy::QLearning,
        }
    }
}

impl PlannerConfig {
    pub fn share(&self, slot: MealSlot) -> f64 {
        self.slot_shares[slot as usize]
    }

    pub fn epsilon_for_day(&self, day: u32) -> f64 {
        (self.epsilon * self.epsilon_decay.powi(day as i32)).max(self.epsilon_floor)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let ok = self.alpha > 0.0
            && self.alpha <= 1.0
            && (0.0..1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.epsilon)
            && (0.0..=1.0).contains(&self.epsilon_decay)
            && (0.0..=1.0).contains(&self.epsilon_floor)
            && self.slot_shares.iter().all(|s| *s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(PlanError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("no admissible meal to select from")]
    EmptyMask,
    #[error("meal catalog is empty")]
    EmptyCatalog,
    #[error("planner hyperparameters out of range")]
    InvalidConfig,
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
}

/// Q(s, a) with missing keys read as 0.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    values: BTreeMap<(PlannerState, MealId), f64>,
}

impl QTable {
    pub fn new(alpha: f64, gamma: f64, epsilon: f64) -> Self {
        Self {
            alpha,
            gamma,
            epsilon,
            values: BTreeMap::new(),
        }
    }

    pub fn from_config(c: &PlannerConfig) -> Self {
        Self::new(c.alpha, c.gamma, c.epsilon)
    }

    pub fn get(&self, s: &PlannerState, a: MealId) -> f64 {
        self.values.get(&(*s, a)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, s: PlannerState, a: MealId, v: f64) {
        self.values.insert((s, a), v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PlannerState, MealId, f64)> + '_ {
        self.values.iter().map(|((s, a), v)| (s, *a, *v))
    }

    /// Best value over `actions`, 0 when there are none.
    pub fn max_over(&self, s: &PlannerState, actions: &[MealId]) -> f64 {
        actions
            .iter()
            .map(|a| self.get(s, *a))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    }

    pub fn greedy(&self, s: &PlannerState, mask: &[MealId]) -> Option<MealId> {
        let mut best: Option<(MealId, f64)> = None;
        for &a in mask {
            let v = self.get(s, a);
            match best {
                Some((b, bv)) if v < bv || (v == bv && a > b) => {}
                _ => best = Some((a, v)),
            }
        }
        best.map(|(a, _)| a)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QEntry {
    state: PlannerState,
    meal_id: MealId,
    value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QSnapshot {
    alpha: f64,
    gamma: f64,
    epsilon: f64,
    values: Vec<QEntry>,
}

impl Serialize for QTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        QSnapshot {
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon: self.epsilon,
            values: self
                .values
                .iter()
                .map(|((state, meal_id), value)| QEntry {
                    state: *state,
                    meal_id: *meal_id,
                    value: *value,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let snap = QSnapshot::deserialize(deserializer)?;
        let mut q = QTable::new(snap.alpha, snap.gamma, snap.epsilon);
        for e in snap.values {
            q.set(e.state, e.meal_id, e.value);
        }
        Ok(q)
    }
}

/// Epsilon-greedy pick from `mask` (sorted ascending by the caller or not;
/// ties go to the lowest id either way).
pub fn select_meal(s: &PlannerState, q: &QTable, mask: &[MealId], rng: &mut dyn RngCore) -> Result<MealId, PlanError> {
    if mask.is_empty() {
        return Err(PlanError::EmptyMask);
    }
    if q.epsilon > 0.0 && rng.random::<f64>() < q.epsilon {
        return Ok(mask[rng.random_range(0..mask.len())]);
    }
    Ok(q.greedy(s, mask).expect("mask is non-empty"))
}

/// Slot-scaled adequacy of the meal's own nutrients, minus sensory and
/// soft-cap penalties, clamped to [-1, 1].
pub fn reward(
    meal: &MealCatalogEntry,
    profile: &UserProfile,
    guideline: &GuidelineTarget,
    intake_so_far: &Nutrients,
    slot_share: f64,
    config: &PlannerConfig,
) -> f64 {
    let adequacy = adequacy_score(&meal.nutrition, guideline, slot_share);
    let mismatch = profile.sensory_mismatch(meal) as f64;
    let soft = cap_breaches(profile.soft_caps(), &meal.nutrition, intake_so_far).len() as f64;
    (adequacy - config.sensory_penalty * mismatch - config.soft_cap_penalty * soft).clamp(-1.0, 1.0)
}

/// One Q-learning step. `next` is `None` for the terminal slot; otherwise the
/// bootstrap max runs over `admissible_next` only.
pub fn update(
    q: &mut QTable,
    s: &PlannerState,
    a: MealId,
    r: f64,
    next: Option<&PlannerState>,
    admissible_next: &[MealId],
) {
    let future = next.map_or(0.0, |sn| q.max_over(sn, admissible_next));
    let old = q.get(s, a);
    let new = old + q.alpha * (r + q.gamma * future - old);
    q.set(*s, a, new);
}

/// A recorded step, applied to the table later when updates are batched.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: PlannerState,
    pub meal: MealId,
    pub reward: f64,
    pub next: Option<PlannerState>,
    pub admissible_next: Vec<MealId>,
}

impl Transition {
    pub fn apply(&self, q: &mut QTable) {
        update(q, &self.state, self.meal, self.reward, self.next.as_ref(), &self.admissible_next);
    }
}

/// Logged on `meal.served` once a slot has been filled or skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealServed {
    pub user: UserId,
    pub day: u32,
    pub slot: MealSlot,
    /// `None` when the slot was skipped by veto.
    pub meal_id: Option<MealId>,
    pub decision_ids: Vec<u64>,
    pub eaten: bool,
    pub preference_fit: f64,
    pub nutrition: Nutrients,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SlotPlan {
    Served { meal_id: MealId, decision_id: u64 },
    SkippedByVeto { decision_ids: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealPlan {
    pub day: u32,
    pub slots: BTreeMap<MealSlot, SlotPlan>,
}

/// Meals a user had vetoed today and the entries behind each veto.
#[derive(Clone, Debug, Default)]
pub struct VetoMemory {
    day: u32,
    vetoed: Vec<(MealId, Vec<EntryId>)>,
}

impl VetoMemory {
    fn roll(&mut self, day: u32) {
        if day != self.day {
            self.day = day;
            self.vetoed.clear();
        }
    }

    /// True while any entry behind an earlier veto of `meal` is still active.
    fn blocks(&self, meal: MealId, board: &Blackboard, at: Tick) -> bool {
        self.vetoed.iter().any(|(m, entries)| {
            *m == meal
                && entries
                    .iter()
                    .any(|e| board.entry(*e).is_some_and(|x| x.active_at(at)))
        })
    }
}

/// Everything a slot plan reads.
pub struct SlotInputs<'a> {
    pub profile: &'a UserProfile,
    pub catalog: &'a MealCatalog,
    pub guideline: &'a GuidelineTarget,
    pub config: &'a PlannerConfig,
    pub intake_so_far: Nutrients,
    pub adherence: AdherenceBucket,
    pub tick: Tick,
}

impl SlotInputs<'_> {
    fn state(&self, slot: MealSlot) -> PlannerState {
        PlannerState {
            phenotype: self.profile.phenotype,
            slot,
            adherence: self.adherence,
        }
    }

    /// Meals that pass every hard constraint given `intake`.
    pub fn hard_mask(&self, intake: &Nutrients) -> Vec<MealId> {
        self.catalog
            .meals()
            .iter()
            .filter(|m| check_hard_constraints(self.profile, m, intake).is_empty())
            .map(|m| m.meal_id)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotResult {
    pub slot: MealSlot,
    pub decisions: Vec<Decision>,
    pub served: Option<ServedMeal>,
    pub transition: Option<Transition>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServedMeal {
    pub meal_id: MealId,
    pub decision_id: u64,
    pub preference_fit: f64,
}

impl SlotResult {
    pub fn plan(&self) -> SlotPlan {
        match &self.served {
            Some(s) => SlotPlan::Served {
                meal_id: s.meal_id,
                decision_id: s.decision_id,
            },
            None => SlotPlan::SkippedByVeto {
                decision_ids: self.decisions.iter().map(|d| d.decision_id).collect(),
            },
        }
    }
}

fn meal_proposal(coord: &mut Coordinator, producer: AgentId, meal: &MealCatalogEntry, profile: &UserProfile) -> Proposal {
    Proposal {
        proposal_id: coord.next_proposal_id(),
        producer,
        action: ProposedAction::Meal(MealCandidate::from(meal)),
        preference_fit: profile.preference_fit(&meal.cuisine),
        nudge_value: 1.0 - meal.glycemic_index / 110.0,
    }
}

/// Plans one slot: mask, select, let guidance add a substitute when it does
/// not approve the pick, arbitrate, and on a re-proposal retry once with
/// every meal the vetoing rules would reject removed from the mask.
#[allow(clippy::too_many_arguments)]
pub fn plan_slot(
    inputs: &SlotInputs<'_>,
    slot: MealSlot,
    q: &QTable,
    coordinator: &mut Coordinator,
    board: &Blackboard,
    memory: &mut VetoMemory,
    rng: &mut dyn RngCore,
) -> Result<SlotResult, PlanError> {
    if inputs.catalog.is_empty() {
        return Err(PlanError::EmptyCatalog);
    }
    let at = inputs.tick;
    memory.roll(at.day());
    let state = inputs.state(slot);
    let mut mask: Vec<MealId> = inputs
        .hard_mask(&inputs.intake_so_far)
        .into_iter()
        .filter(|m| !memory.blocks(*m, board, at))
        .collect();
    let guard = GiGuard::from_board(board, at, coordinator.rules.gi_max);

    let mut decisions = Vec::new();
    for attempt in 0..2 {
        if mask.is_empty() {
            break;
        }
        let pick_id = match inputs.config.policy {
            PlannerPolicy::QLearning => select_meal(&state, q, &mask, rng)?,
            PlannerPolicy::UniformRandom => mask[rng.random_range(0..mask.len())],
        };
        let pick = inputs.catalog.get(pick_id).expect("mask ids come from the catalog");
        let mut proposals = vec![meal_proposal(coordinator, AgentId::MealPlanner, pick, inputs.profile)];

        let assessment = guidance::assess_food(
            &FoodItem::from(pick),
            inputs.profile,
            &inputs.intake_so_far,
            inputs.guideline,
            guard,
        );
        if assessment.verdict != Verdict::Approve {
            let sub = guidance::lowest_gi_substitute(pick, inputs.catalog, |m| mask.contains(&m.meal_id));
            if let Some(sub) = sub {
                proposals.push(meal_proposal(coordinator, AgentId::Guidance, sub, inputs.profile));
            }
        }

        let decision = coordinator.decide(&proposals, board, at)?;
        for v in &decision.vetoed {
            if let Some(m) = proposals.iter().find(|p| p.reference() == v.proposal).and_then(|p| p.meal_id()) {
                memory.vetoed.push((m, v.entries.clone()));
            }
        }
        let chosen = decision.chosen_proposal().and_then(|p| Some((p.meal_id()?, p.preference_fit)));
        let decision_id = decision.decision_id;
        let rules: BTreeSet<P0Rule> = decision.veto_rules();
        decisions.push(decision);

        if let Some((meal_id, preference_fit)) = chosen {
            let meal = inputs.catalog.get(meal_id).expect("chosen from catalog");
            let r = reward(meal, inputs.profile, inputs.guideline, &inputs.intake_so_far, inputs.config.share(slot), inputs.config);
            let next = slot.next().map(|s| inputs.state(s));
            let admissible_next = if next.is_some() {
                inputs.hard_mask(&(inputs.intake_so_far + meal.nutrition))
            } else {
                Vec::new()
            };
            return Ok(SlotResult {
                slot,
                decisions,
                served: Some(ServedMeal {
                    meal_id,
                    decision_id,
                    preference_fit,
                }),
                transition: Some(Transition {
                    state,
                    meal: meal_id,
                    reward: r,
                    next,
                    admissible_next,
                }),
            });
        }

        if attempt == 0 {
            let gi_max = coordinator.rules.gi_max;
            mask.retain(|&m| {
                let meal = inputs.catalog.get(m).expect("mask ids come from the catalog");
                let probe = Proposal {
                    proposal_id: 0,
                    producer: AgentId::MealPlanner,
                    action: ProposedAction::Meal(MealCandidate::from(meal)),
                    preference_fit: 0.0,
                    nudge_value: 0.0,
                };
                rules
                    .iter()
                    .all(|r| r.vetoes(&probe, board, at, gi_max).is_none())
            });
        }
    }
    Ok(SlotResult {
        slot,
        decisions,
        served: None,
        transition: None,
    })
}

/// Plans a whole day offline, assuming every served meal is eaten, and
/// applies each update as soon as its slot is planned.
pub fn plan_day(
    day: u32,
    inputs: &SlotInputs<'_>,
    q: &mut QTable,
    coordinator: &mut Coordinator,
    board: &Blackboard,
    rng: &mut dyn RngCore,
) -> Result<MealPlan, PlanError> {
    if inputs.catalog.is_empty() {
        return Err(PlanError::EmptyCatalog);
    }
    let mut memory = VetoMemory::default();
    let mut intake = inputs.intake_so_far;
    let mut slots = BTreeMap::new();
    for slot in MealSlot::ALL {
        let slot_inputs = SlotInputs {
            intake_so_far: intake,
            tick: Tick::at(day, slot.minute()),
            ..*inputs
        };
        let res = plan_slot(&slot_inputs, slot, q, coordinator, board, &mut memory, rng)?;
        if let Some(t) = &res.transition {
            if inputs.config.policy == PlannerPolicy::QLearning {
                t.apply(q);
            }
        }
        if let Some(s) = &res.served {
            intake += inputs.catalog.get(s.meal_id).expect("served from catalog").nutrition;
        }
        slots.insert(slot, res.plan());
    }
    Ok(MealPlan { day, slots })
}
