//! Reminder agent: a per-context epsilon-greedy bandit over delivery
//! modality and a one-slot delay, plus the daily reminder schedule.
//!
//! Context is `(time bucket, engagement tercile, last response)`, 48 in all.
//! Rewards are +1 complied, -1 ignored, 0 postponed. A slot can be pushed
//! back 15 minutes at most twice, by the bandit or by the user; the slot
//! is then abandoned and counted as ignored.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::domain::{Disability, Modality, Tick, UserId, UserProfile, TICK_MINUTES};
use crate::meal_planner::MealSlot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReminderOutcome {
    Complied,
    Ignored,
    Postponed,
}

pub fn reward_of(outcome: ReminderOutcome) -> i32 {
    match outcome {
        ReminderOutcome::Complied => 1,
        ReminderOutcome::Ignored => -1,
        ReminderOutcome::Postponed => 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBucket {
    Morning,
    Midday,
    Evening,
    Night,
}

impl TimeBucket {
    pub const ALL: [TimeBucket; 4] = [
        TimeBucket::Morning,
        TimeBucket::Midday,
        TimeBucket::Evening,
        TimeBucket::Night,
    ];

    /// Morning [05:00, 11:00), midday [11:00, 17:00), evening [17:00, 22:00),
    /// night otherwise.
    pub fn of_minute(minute: u32) -> TimeBucket {
        match minute % 1440 {
            300..660 => TimeBucket::Morning,
            660..1020 => TimeBucket::Midday,
            1020..1320 => TimeBucket::Evening,
            _ => TimeBucket::Night,
        }
    }

    /// Outside the midday and evening peak.
    pub fn is_off_peak(self) -> bool {
        matches!(self, TimeBucket::Morning | TimeBucket::Night)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engagement {
    Low,
    Mid,
    High,
}

impl Engagement {
    pub const ALL: [Engagement; 3] = [Engagement::Low, Engagement::Mid, Engagement::High];

    /// Terciles of a response rate in [0, 1].
    pub fn of_rate(rate: f64) -> Engagement {
        if rate < 1.0 / 3.0 {
            Engagement::Low
        } else if rate < 2.0 / 3.0 {
            Engagement::Mid
        } else {
            Engagement::High
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastResponse {
    Complied,
    Ignored,
    Postponed,
    None,
}

impl LastResponse {
    pub const ALL: [LastResponse; 4] = [
        LastResponse::Complied,
        LastResponse::Ignored,
        LastResponse::Postponed,
        LastResponse::None,
    ];
}

impl From<ReminderOutcome> for LastResponse {
    fn from(o: ReminderOutcome) -> Self {
        match o {
            ReminderOutcome::Complied => LastResponse::Complied,
            ReminderOutcome::Ignored => LastResponse::Ignored,
            ReminderOutcome::Postponed => LastResponse::Postponed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReminderContext {
    pub time_bucket: TimeBucket,
    pub engagement: Engagement,
    pub last_response: LastResponse,
}

impl ReminderContext {
    pub const COUNT: usize = 48;

    pub fn index(&self) -> usize {
        (self.time_bucket as usize * 3 + self.engagement as usize) * 4 + self.last_response as usize
    }

    pub fn all() -> impl Iterator<Item = ReminderContext> {
        TimeBucket::ALL.into_iter().flat_map(|time_bucket| {
            Engagement::ALL.into_iter().flat_map(move |engagement| {
                LastResponse::ALL.into_iter().map(move |last_response| ReminderContext {
                    time_bucket,
                    engagement,
                    last_response,
                })
            })
        })
    }
}

/// What the bandit can do with a due slot. Changing modality is not a
/// separate action: the next send simply picks a different one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReminderAction {
    Send(Modality),
    #[serde(rename = "delay_15min")]
    Delay15,
}

impl ReminderAction {
    /// Fixed order, also the tie-break order.
    pub const ALL: [ReminderAction; 4] = [
        ReminderAction::Send(Modality::Audio),
        ReminderAction::Send(Modality::Visual),
        ReminderAction::Send(Modality::Haptic),
        ReminderAction::Delay15,
    ];

    pub fn index(self) -> usize {
        match self {
            ReminderAction::Send(Modality::Audio) => 0,
            ReminderAction::Send(Modality::Visual) => 1,
            ReminderAction::Send(Modality::Haptic) => 2,
            ReminderAction::Delay15 => 3,
        }
    }

    pub fn modality(self) -> Option<Modality> {
        match self {
            ReminderAction::Send(m) => Some(m),
            ReminderAction::Delay15 => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub mean: f64,
    pub count: u64,
}

/// Incremental-mean estimates per (context, action).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionValueTable {
    arms: Vec<[ArmStats; 4]>,
}

impl Default for ActionValueTable {
    fn default() -> Self {
        Self {
            arms: vec![[ArmStats::default(); 4]; ReminderContext::COUNT],
        }
    }
}

impl ActionValueTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, ctx: &ReminderContext, action: ReminderAction) -> ArmStats {
        self.arms[ctx.index()][action.index()]
    }

    pub fn observe(&mut self, ctx: &ReminderContext, action: ReminderAction, outcome: ReminderOutcome) {
        let arm = &mut self.arms[ctx.index()][action.index()];
        arm.count += 1;
        arm.mean += (reward_of(outcome) as f64 - arm.mean) / arm.count as f64;
    }
}

/// Which modalities a user may receive. `blocked` is medical-tier and never
/// emitted; `down_ranked` is preference-tier: skipped by the greedy choice
/// but still reachable through exploration.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub blocked: BTreeSet<Modality>,
    pub down_ranked: BTreeSet<Modality>,
}

impl ModalityMask {
    /// Tolerance below which a modality is down-ranked.
    pub const LOW_TOLERANCE: f64 = 0.3;

    pub fn from_profile(profile: &UserProfile) -> Self {
        let mut blocked = BTreeSet::new();
        if profile.has(Disability::SensoryAuditory) {
            blocked.insert(Modality::Audio);
        }
        if profile.has(Disability::SensoryVisual) {
            blocked.insert(Modality::Visual);
        }
        let down_ranked = Modality::ALL
            .into_iter()
            .filter(|m| !blocked.contains(m) && profile.tolerance(*m) < Self::LOW_TOLERANCE)
            .collect();
        Self { blocked, down_ranked }
    }

    pub fn admits(&self, action: ReminderAction) -> bool {
        action.modality().is_none_or(|m| !self.blocked.contains(&m))
    }

    pub fn admissible(&self) -> impl Iterator<Item = ReminderAction> + '_ {
        ReminderAction::ALL.into_iter().filter(|a| self.admits(*a))
    }
}

/// Epsilon-greedy choice. Exploration draws uniformly from every admissible
/// action; exploitation takes the best estimate among admissible actions
/// that are not down-ranked, ties going to the fixed action order.
pub fn choose_action(
    ctx: &ReminderContext,
    table: &ActionValueTable,
    mask: &ModalityMask,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> ReminderAction {
    let admissible: Vec<ReminderAction> = mask.admissible().collect();
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return admissible[rng.random_range(0..admissible.len())];
    }
    let mut best = ReminderAction::Delay15;
    let mut best_mean = f64::NEG_INFINITY;
    for a in admissible {
        if a.modality().is_some_and(|m| mask.down_ranked.contains(&m)) {
            continue;
        }
        let mean = table.get(ctx, a).mean;
        if mean > best_mean {
            best = a;
            best_mean = mean;
        }
    }
    best
}

/// A reminder policy. The bandit learns from outcomes; baselines do not.
pub trait ReminderPolicy: Send + Sync + std::fmt::Debug {
    fn choose(
        &self,
        ctx: &ReminderContext,
        table: &ActionValueTable,
        mask: &ModalityMask,
        rng: &mut dyn RngCore,
    ) -> ReminderAction;

    fn learns(&self) -> bool;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonGreedy {
    pub epsilon: f64,
}

impl Default for EpsilonGreedy {
    fn default() -> Self {
        Self { epsilon: 0.1 }
    }
}

impl ReminderPolicy for EpsilonGreedy {
    fn choose(
        &self,
        ctx: &ReminderContext,
        table: &ActionValueTable,
        mask: &ModalityMask,
        rng: &mut dyn RngCore,
    ) -> ReminderAction {
        choose_action(ctx, table, mask, self.epsilon, rng)
    }

    fn learns(&self) -> bool {
        true
    }
}

/// Fixed-time baseline: always sends at the due time through the first
/// modality in `audio, visual, haptic` order the user can use comfortably.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StaticReminders;

impl ReminderPolicy for StaticReminders {
    fn choose(
        &self,
        _ctx: &ReminderContext,
        _table: &ActionValueTable,
        mask: &ModalityMask,
        _rng: &mut dyn RngCore,
    ) -> ReminderAction {
        let usable = |m: &Modality| !mask.blocked.contains(m);
        Modality::ALL
            .into_iter()
            .find(|m| usable(m) && !mask.down_ranked.contains(m))
            .or_else(|| Modality::ALL.into_iter().find(usable))
            .map_or(ReminderAction::Delay15, ReminderAction::Send)
    }

    fn learns(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "meal", rename_all = "snake_case")]
pub enum SlotKind {
    Meal(MealSlot),
    Medication,
    Hydration,
    Activity,
}

impl SlotKind {
    pub fn name(self) -> &'static str {
        match self {
            SlotKind::Meal(_) => "meal",
            SlotKind::Medication => "medication",
            SlotKind::Hydration => "hydration",
            SlotKind::Activity => "activity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReminderConfig {
    pub epsilon: f64,
    pub delay_minutes: u32,
    pub max_delays: u32,
    pub hydration_start: u32,
    pub hydration_every: u32,
    pub hydration_end: u32,
    pub activity_minute: u32,
    /// Days of history behind the engagement tercile.
    pub engagement_days: usize,
}

impl Default for ReminderConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            delay_minutes: 15,
            max_delays: 2,
            hydration_start: 420,
            hydration_every: 180,
            hydration_end: 1320,
            activity_minute: 1020,
            engagement_days: 7,
        }
    }
}

impl ReminderConfig {
    /// Every slot due on one day, sorted by minute then kind.
    pub fn daily_slots(&self, profile: &UserProfile) -> Vec<(u32, SlotKind)> {
        let mut out: Vec<(u32, SlotKind)> = MealSlot::ALL
            .into_iter()
            .map(|s| (s.minute(), SlotKind::Meal(s)))
            .collect();
        out.extend(profile.medication_slots.iter().map(|&m| (m, SlotKind::Medication)));
        if self.hydration_every > 0 {
            let mut m = self.hydration_start;
            while m <= self.hydration_end {
                out.push((m, SlotKind::Hydration));
                m += self.hydration_every;
            }
        }
        out.push((self.activity_minute, SlotKind::Activity));
        out.sort();
        out
    }
}

/// One bandit pull, logged on `reminder.attempt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReminderAttempt {
    pub user: UserId,
    pub day: u32,
    pub slot: u32,
    pub kind: SlotKind,
    pub due_minute: u32,
    pub context: ReminderContext,
    pub action: ReminderAction,
    pub outcome: ReminderOutcome,
    pub reward: i32,
    /// Delays used on this slot before the attempt.
    pub delays_before: u32,
}

/// Final state of one scheduled slot, logged on `reminder.slot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub user: UserId,
    pub day: u32,
    pub slot: u32,
    pub kind: SlotKind,
    pub due_minute: u32,
    pub outcome: ReminderOutcome,
    pub attempts: u32,
    pub delays: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendingSlot {
    pub slot: u32,
    pub kind: SlotKind,
    pub due_minute: u32,
    pub next_minute: u32,
    pub delays: u32,
    pub attempts: u32,
    done: bool,
}

/// Reminder agent state for one user: the value table, the day's queue,
/// and the trailing history that feeds the context.
#[derive(Debug)]
pub struct ReminderAgent {
    pub user: UserId,
    pub config: ReminderConfig,
    pub table: ActionValueTable,
    pub mask: ModalityMask,
    policy: Box<dyn ReminderPolicy>,
    day: u32,
    queue: Vec<PendingSlot>,
    history: VecDeque<(u32, u32)>,
    last_response: LastResponse,
    sent_today: u32,
}

/// What happened to a slot after one attempt.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolution {
    pub attempt: ReminderAttempt,
    /// Present once the slot is closed.
    pub closed: Option<SlotRecord>,
}

impl ReminderAgent {
    pub fn new(profile: &UserProfile, config: ReminderConfig, policy: Box<dyn ReminderPolicy>) -> Self {
        Self {
            user: profile.user_id,
            config,
            table: ActionValueTable::new(),
            mask: ModalityMask::from_profile(profile),
            policy,
            day: 0,
            queue: Vec::new(),
            history: VecDeque::new(),
            last_response: LastResponse::None,
            sent_today: 0,
        }
    }

    pub fn start_day(&mut self, day: u32, profile: &UserProfile) {
        self.day = day;
        self.sent_today = 0;
        self.queue = self
            .config
            .daily_slots(profile)
            .into_iter()
            .enumerate()
            .map(|(i, (minute, kind))| PendingSlot {
                slot: i as u32,
                kind,
                due_minute: minute,
                next_minute: minute,
                delays: 0,
                attempts: 0,
                done: false,
            })
            .collect();
    }

    /// Reminders delivered so far today (drives responder fatigue).
    pub fn sent_today(&self) -> u32 {
        self.sent_today
    }

    /// Trailing complied fraction over the engagement window; 0.5 with no
    /// history yet.
    pub fn engagement_rate(&self) -> f64 {
        let (c, t) = self
            .history
            .iter()
            .fold((0u32, 0u32), |(c, t), &(dc, dt)| (c + dc, t + dt));
        if t == 0 {
            0.5
        } else {
            c as f64 / t as f64
        }
    }

    pub fn context(&self, minute: u32) -> ReminderContext {
        ReminderContext {
            time_bucket: TimeBucket::of_minute(minute),
            engagement: Engagement::of_rate(self.engagement_rate()),
            last_response: self.last_response,
        }
    }

    /// Open slots whose next attempt falls in the tick's 15-minute window.
    pub fn due(&self, tick: Tick) -> Vec<usize> {
        let start = tick.minute_of_day();
        self.queue
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.done && s.next_minute >= start && s.next_minute < start + TICK_MINUTES)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn pending(&self, idx: usize) -> &PendingSlot {
        &self.queue[idx]
    }

    /// Policy choice for a due slot.
    pub fn schedule(&self, idx: usize, rng: &mut dyn RngCore) -> (ReminderContext, ReminderAction) {
        let ctx = self.context(self.queue[idx].next_minute);
        (ctx, self.policy.choose(&ctx, &self.table, &self.mask, rng))
    }

    /// Applies an attempt. `user_outcome` is the user's reaction to a sent
    /// reminder and is ignored for a delay action.
    pub fn resolve(
        &mut self,
        idx: usize,
        ctx: ReminderContext,
        action: ReminderAction,
        user_outcome: ReminderOutcome,
    ) -> Resolution {
        let max_delays = self.config.max_delays;
        let delay_minutes = self.config.delay_minutes;
        let slot = &mut self.queue[idx];
        let delays_before = slot.delays;
        slot.attempts += 1;

        let (observed, final_outcome) = match action {
            ReminderAction::Send(_) => {
                self.sent_today += 1;
                match user_outcome {
                    ReminderOutcome::Postponed => {
                        slot.delays += 1;
                        if slot.delays >= max_delays {
                            (ReminderOutcome::Postponed, Some(ReminderOutcome::Ignored))
                        } else {
                            (ReminderOutcome::Postponed, None)
                        }
                    }
                    other => (other, Some(other)),
                }
            }
            ReminderAction::Delay15 => {
                slot.delays += 1;
                if slot.delays >= max_delays {
                    (ReminderOutcome::Ignored, Some(ReminderOutcome::Ignored))
                } else {
                    (ReminderOutcome::Postponed, None)
                }
            }
        };
        if final_outcome.is_none() {
            slot.next_minute += delay_minutes;
        }

        let attempt = ReminderAttempt {
            user: self.user,
            day: self.day,
            slot: slot.slot,
            kind: slot.kind,
            due_minute: slot.due_minute,
            context: ctx,
            action,
            outcome: observed,
            reward: reward_of(observed),
            delays_before,
        };
        let closed = final_outcome.map(|outcome| {
            slot.done = true;
            SlotRecord {
                user: self.user,
                day: self.day,
                slot: slot.slot,
                kind: slot.kind,
                due_minute: slot.due_minute,
                outcome,
                attempts: slot.attempts,
                delays: slot.delays,
            }
        });
        if self.policy.learns() {
            self.table.observe(&ctx, action, observed);
        }
        self.last_response = observed.into();
        Resolution { attempt, closed }
    }

    /// Closes any slot still open at midnight as ignored and rolls the
    /// engagement history.
    pub fn end_day(&mut self) -> Vec<SlotRecord> {
        let mut closed = Vec::new();
        for s in self.queue.iter_mut().filter(|s| !s.done) {
            s.done = true;
            closed.push(SlotRecord {
                user: self.user,
                day: self.day,
                slot: s.slot,
                kind: s.kind,
                due_minute: s.due_minute,
                outcome: ReminderOutcome::Ignored,
                attempts: s.attempts,
                delays: s.delays,
            });
        }
        closed
    }

    /// Adds a finished day's tally to the engagement window.
    pub fn record_day(&mut self, complied: u32, total: u32) {
        self.history.push_back((complied, total));
        while self.history.len() > self.config.engagement_days {
            self.history.pop_front();
        }
    }
}
