//! Closed-loop simulation of a generated cohort.
//!
//! Every tick of every day runs, per user: due reminders (arbitrated, then
//! answered by the simulated user), meal planning with its guidance checks,
//! sensor sampling and the hyperglycemia guard. At midnight the day's totals
//! go to the monitor. Users share nothing but the meal planner's Q table,
//! which is read as a snapshot during a day and updated at day end in user
//! order, so a run is identical whatever the thread count.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bus::{AgentId, Blackboard, BusError, EntryBody, EntryKind, Event, NewEntry, Payload, Tier};
use crate::coordinator::{
    raise_hyperglycemia_guard, ArbitrationError, Coordinator, Decision, GuardConfig, PriorityRuleSet, Proposal,
    ProposedAction,
};
use crate::domain::{
    Disability, GuidelineTarget, MealCatalog, Neuro, Nutrients, Tick, UserId, UserProfile, MINUTES_PER_DAY,
    TICK_MINUTES,
};
use crate::meal_planner::{
    plan_slot, AdherenceBucket, MealServed, MealSlot, PlanError, PlannerConfig, PlannerPolicy, QScope, QTable,
    SlotInputs, Transition, VetoMemory,
};
use crate::metrics::{compute_report, MetricsError, Provenance, RunReport, SatisfactionWeights};
use crate::monitor::{AlertSeverity, DailyTotals, MonitorAgent, MonitorConfig, MonitorError, MonitorMode};
use crate::reminder::{
    EpsilonGreedy, ReminderAction, ReminderAgent, ReminderConfig, ReminderOutcome, ReminderPolicy, SlotKind,
    StaticReminders,
};
use crate::rng::{stream, Subsystem};
use crate::synthgen::{
    generate_cohort, respond_to_reminder, sample_at, Cohort, CohortMember, CohortSpec, DayState, EatenMeal,
    ResponderConfig, SensorConfig, TraceRecord,
};

pub const TOPIC_DECISION: &str = "coordinator.decision";
pub const TOPIC_ATTEMPT: &str = "reminder.attempt";
pub const TOPIC_SLOT: &str = "reminder.slot";
pub const TOPIC_MEAL: &str = "meal.served";
pub const TOPIC_VITALS: &str = "sensor.vitals";
pub const TOPIC_ALERT: &str = "monitor.alert";
pub const TOPIC_FEATURES: &str = "monitor.features";

/// Which components are swapped for their non-adaptive baselines.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baselines {
    pub static_reminders: bool,
    pub random_planner: bool,
    pub naive_monitor: bool,
}

/// Cohort mixes tuned to one accessibility scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    None,
    /// Hearing and visual impairments; exercises modality masking.
    SensoryAccess,
    /// Physical and cognitive disabilities; stepwise, slower prompts.
    MotorCognitive,
    /// Autistic and ADHD users; timing and calm channels matter.
    Neurodivergent,
    /// Several disabilities per user and more anomalies; caregiver alerts.
    MultiDisability,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::None,
        Preset::SensoryAccess,
        Preset::MotorCognitive,
        Preset::Neurodivergent,
        Preset::MultiDisability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::None => "none",
            Preset::SensoryAccess => "sensory_access",
            Preset::MotorCognitive => "motor_cognitive",
            Preset::Neurodivergent => "neurodivergent",
            Preset::MultiDisability => "multi_disability",
        }
    }

    /// Overwrites the mixes this preset is about; counts and seed stay.
    pub fn apply(self, spec: &mut CohortSpec) {
        let dis = |p: f64, v: f64, a: f64, c: f64| {
            [
                (Disability::Physical, p),
                (Disability::SensoryVisual, v),
                (Disability::SensoryAuditory, a),
                (Disability::Cognitive, c),
            ]
            .into()
        };
        match self {
            Preset::None => {}
            Preset::SensoryAccess => spec.disability_mix = dis(0.05, 0.5, 0.5, 0.05),
            Preset::MotorCognitive => spec.disability_mix = dis(0.6, 0.05, 0.05, 0.6),
            Preset::Neurodivergent => spec.neuro_mix = [(Neuro::None, 0.0), (Neuro::Asd, 0.5), (Neuro::Adhd, 0.5)].into(),
            Preset::MultiDisability => {
                spec.disability_mix = dis(0.5, 0.5, 0.5, 0.5);
                spec.neuro_mix = [(Neuro::None, 0.4), (Neuro::Asd, 0.3), (Neuro::Adhd, 0.3)].into();
                spec.anomaly_frac = spec.anomaly_frac.max(0.5);
            }
        }
    }
}

/// Everything a run reads besides the catalog and guideline. The run seed is
/// `cohort.seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cohort: CohortSpec,
    pub planner: PlannerConfig,
    pub reminder: ReminderConfig,
    pub monitor: MonitorConfig,
    pub rules: PriorityRuleSet,
    pub guard: GuardConfig,
    pub responder: ResponderConfig,
    pub sensors: SensorConfig,
    pub satisfaction: SatisfactionWeights,
    pub baselines: Baselines,
    pub preset: Preset,
    /// Where the CLI writes its files; the library never reads it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<std::path::PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("user {user}, day {day}: {source}")]
    AtDay {
        user: UserId,
        day: u32,
        source: Box<ScenarioError>,
    },
}

impl ScenarioConfig {
    /// The cohort spec with the preset applied.
    pub fn effective_cohort(&self) -> CohortSpec {
        let mut spec = self.cohort.clone();
        self.preset.apply(&mut spec);
        spec
    }

    /// The planner config with the random-planner baseline applied.
    pub fn effective_planner(&self) -> PlannerConfig {
        let mut p = self.planner.clone();
        if self.baselines.random_planner {
            p.policy = PlannerPolicy::UniformRandom;
        }
        p
    }

    pub fn effective_monitor(&self) -> MonitorConfig {
        let mut m = self.monitor.clone();
        if self.baselines.naive_monitor {
            m.mode = MonitorMode::NaiveThreshold;
        }
        m
    }

    /// `adaptive`, or the enabled baselines joined with `+`.
    pub fn variant(&self) -> String {
        let b = &self.baselines;
        let parts: Vec<&str> = [
            (b.static_reminders, "static_reminders"),
            (b.random_planner, "random_planner"),
            (b.naive_monitor, "naive_monitor"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        if parts.is_empty() {
            "adaptive".to_string()
        } else {
            parts.join("+")
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let cfg = |m: String| ScenarioError::Config(m);
        self.effective_cohort().validate().map_err(|e| {
            let prefixed: Vec<String> = e.0.iter().map(|v| format!("cohort.{v}")).collect();
            cfg(prefixed.join("; "))
        })?;
        self.planner.validate().map_err(|e| cfg(format!("planner: {e}")))?;
        self.monitor.validate().map_err(|e| cfg(format!("monitor: {e}")))?;
        self.rules.validate().map_err(|e| cfg(format!("rules: {e}")))?;
        let r = &self.reminder;
        if !(0.0..=1.0).contains(&r.epsilon) || r.delay_minutes == 0 || r.engagement_days == 0 {
            return Err(cfg("reminder: epsilon outside [0, 1] or zero delay/engagement window".into()));
        }
        let rc = &self.responder;
        if !(0.0..=1.0).contains(&rc.postpone_share) {
            return Err(cfg("responder.postpone_share outside [0, 1]".into()));
        }
        if self.sensors.every_minutes == 0 || self.sensors.noise_scale < 0.0 {
            return Err(cfg("sensors: every_minutes must be positive and noise_scale non-negative".into()));
        }
        if self.guard.level.is_nan() || self.guard.level <= 0.0 {
            return Err(cfg("guard.level must be positive".into()));
        }
        Ok(())
    }
}

/// A finished run.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub cohort: Cohort,
    /// Every user's log, merged by tick then user.
    pub trace: Vec<TraceRecord>,
    /// One row per user-day, user-major.
    pub features: Vec<DailyTotals>,
    pub report: RunReport,
    /// The shared planner table at the end of the run.
    pub q_table: QTable,
}

struct Env<'a> {
    config: &'a ScenarioConfig,
    planner: PlannerConfig,
    anomaly_days: u32,
    catalog: &'a MealCatalog,
    guideline: &'a GuidelineTarget,
}

struct Streams {
    responder: ChaCha8Rng,
    sensors: ChaCha8Rng,
    planner: ChaCha8Rng,
    bandit: ChaCha8Rng,
    accept: ChaCha8Rng,
    monitor: ChaCha8Rng,
    disruption: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64, user: u64) -> Self {
        Self {
            responder: stream(seed, user, Subsystem::Responder),
            sensors: stream(seed, user, Subsystem::Sensors),
            planner: stream(seed, user, Subsystem::Planner),
            bandit: stream(seed, user, Subsystem::Bandit),
            accept: stream(seed, user, Subsystem::MealAcceptance),
            monitor: stream(seed, user, Subsystem::MonitorInit),
            disruption: stream(seed, user, Subsystem::Disruption),
        }
    }
}

/// One user's agents, board and random streams.
struct UserSim<'a> {
    member: &'a CohortMember,
    board: Blackboard,
    coordinator: Coordinator,
    reminder: ReminderAgent,
    monitor: MonitorAgent,
    memory: VetoMemory,
    /// Own table under per-user scope.
    own_q: Option<QTable>,
    rng: Streams,
    features: Vec<DailyTotals>,
}

fn end_of_day(day: u32) -> Tick {
    Tick::at(day, MINUTES_PER_DAY - TICK_MINUTES)
}

impl<'a> UserSim<'a> {
    fn new(member: &'a CohortMember, env: &Env<'_>) -> Result<Self, ScenarioError> {
        let c = env.config;
        let profile = &member.profile;
        let policy: Box<dyn ReminderPolicy> = if c.baselines.static_reminders {
            Box::new(StaticReminders)
        } else {
            Box::new(EpsilonGreedy {
                epsilon: c.reminder.epsilon,
            })
        };
        let reminder = ReminderAgent::new(profile, c.reminder.clone(), policy);
        let mut board = Blackboard::new();
        let forever = Tick(u64::MAX);
        let hard: Vec<_> = profile.hard_caps().cloned().collect();
        board.post_entry(NewEntry::new(
            Tier::P0Medical,
            EntryKind::Observation,
            EntryBody::MedicalConstraints {
                caps: hard,
                allergens: profile.allergens.clone(),
            },
            Tick(0),
            forever,
            AgentId::Environment,
        )?);
        if !reminder.mask.blocked.is_empty() {
            board.post_entry(NewEntry::new(
                Tier::P0Medical,
                EntryKind::Observation,
                EntryBody::ModalityMask {
                    modalities: reminder.mask.blocked.clone(),
                    reason: "sensory tolerance below the usable floor".into(),
                },
                Tick(0),
                forever,
                AgentId::Reminder,
            )?);
        }
        let own_q = (env.planner.scope == QScope::PerUser).then(|| QTable::from_config(&env.planner));
        Ok(Self {
            member,
            board,
            coordinator: Coordinator::new(c.rules.clone(), c.guard.clone()),
            reminder,
            monitor: MonitorAgent::new(profile.user_id, c.effective_monitor()),
            memory: VetoMemory::default(),
            own_q,
            rng: Streams::new(c.cohort.seed, profile.user_id.0 as u64),
            features: Vec::new(),
        })
    }

    fn publish(&mut self, tick: Tick, topic: &str, producer: AgentId, payload: Payload) -> Result<(), ScenarioError> {
        self.board.publish(Event::new(tick, topic, producer, payload))?;
        Ok(())
    }

    fn publish_decision(&mut self, d: Decision) -> Result<(), ScenarioError> {
        self.publish(d.tick, TOPIC_DECISION, AgentId::Coordinator, Payload::Decision(Box::new(d)))
    }

    /// Arbitrates a reminder send. Returns the action to carry out: the send
    /// itself, or a delay when a P0 rule vetoed it.
    fn arbitrate_send(&mut self, action: ReminderAction, ctx_mean: f64, tick: Tick) -> Result<ReminderAction, ScenarioError> {
        let Some(m) = action.modality() else {
            return Ok(action);
        };
        let proposal = Proposal {
            proposal_id: self.coordinator.next_proposal_id(),
            producer: AgentId::Reminder,
            action: ProposedAction::Reminder { action },
            preference_fit: self.member.profile.tolerance(m).clamp(0.0, 1.0),
            nudge_value: ((ctx_mean + 1.0) / 2.0).clamp(0.0, 1.0),
        };
        let d = self.coordinator.decide(std::slice::from_ref(&proposal), &self.board, tick)?;
        let out = if d.chosen.is_some() { action } else { ReminderAction::Delay15 };
        self.publish_decision(d)?;
        Ok(out)
    }

    /// Runs one day. Returns the planner transitions for the shared table
    /// (empty under per-user scope, where they are applied here).
    fn simulate_day(&mut self, day: u32, shared_q: &QTable, env: &Env<'_>) -> Result<Vec<Transition>, ScenarioError> {
        let c = env.config;
        let member = self.member;
        let profile = &member.profile;
        let user = profile.user_id;
        let disrupted = self.rng.disruption.random::<f64>() < member.behavior.disruption_rate;
        let anomaly = member.in_anomaly(day, env.anomaly_days);
        if let Some(q) = &mut self.own_q {
            q.epsilon = env.planner.epsilon_for_day(day);
        }
        self.reminder.start_day(day, profile);

        let mut intake = Nutrients::zero();
        let mut eaten_meals: Vec<EatenMeal> = Vec::new();
        let mut hydration_events: Vec<u32> = Vec::new();
        let mut glucose = Vec::new();
        let mut heart = Vec::new();
        let (mut steps, mut hydration) = (0.0, 0.0);
        let (mut slots, mut complied) = (0u32, 0u32);
        let mut transitions = Vec::new();

        for minute in (0..MINUTES_PER_DAY).step_by(TICK_MINUTES as usize) {
            let tick = Tick::at(day, minute);

            for idx in self.reminder.due(tick) {
                let (ctx, proposed) = self.reminder.schedule(idx, &mut self.rng.bandit);
                let arm_mean = self.reminder.table.get(&ctx, proposed).mean;
                let action = self.arbitrate_send(proposed, arm_mean, tick)?;
                let kind = self.reminder.pending(idx).kind;
                let outcome = match action.modality() {
                    Some(m) => {
                        let state = DayState {
                            minute,
                            reminders_so_far: self.reminder.sent_today(),
                            disrupted,
                        };
                        let o = respond_to_reminder(profile, &member.behavior, m, &state, &c.responder, &mut self.rng.responder);
                        if anomaly && matches!(kind, SlotKind::Meal(_)) {
                            ReminderOutcome::Ignored
                        } else {
                            o
                        }
                    }
                    None => ReminderOutcome::Ignored,
                };
                let res = self.reminder.resolve(idx, ctx, action, outcome);
                self.publish(tick, TOPIC_ATTEMPT, AgentId::Reminder, Payload::Reminder(res.attempt))?;
                if let Some(rec) = res.closed {
                    slots += 1;
                    if rec.outcome == ReminderOutcome::Complied {
                        complied += 1;
                        if rec.kind == SlotKind::Hydration {
                            hydration_events.push(minute);
                        }
                    }
                    self.publish(tick, TOPIC_SLOT, AgentId::Reminder, Payload::Outcome(rec))?;
                }
            }

            if let Some(slot) = MealSlot::at_minute(minute) {
                let inputs = SlotInputs {
                    profile,
                    catalog: env.catalog,
                    guideline: env.guideline,
                    config: &env.planner,
                    intake_so_far: intake,
                    adherence: AdherenceBucket::of_rate(self.reminder.engagement_rate()),
                    tick,
                };
                let q = self.own_q.as_ref().unwrap_or(shared_q);
                let res = plan_slot(&inputs, slot, q, &mut self.coordinator, &self.board, &mut self.memory, &mut self.rng.planner)?;
                let decision_ids: Vec<u64> = res.decisions.iter().map(|d| d.decision_id).collect();
                for d in res.decisions {
                    self.publish_decision(d)?;
                }
                // One acceptance draw per slot, served or not, keeps the stream aligned.
                let u: f64 = self.rng.accept.random();
                let served_meal = res.served.as_ref().map(|s| (s, env.catalog.get(s.meal_id).expect("served from catalog")));
                let eaten = served_meal.is_some_and(|(_, meal)| !anomaly && u < member.behavior.p_accept(&meal.cuisine));
                if let (true, Some((_, meal))) = (eaten, served_meal) {
                    intake += meal.nutrition;
                    eaten_meals.push(EatenMeal {
                        minute,
                        glycemic_index: meal.glycemic_index,
                        carbs_g: meal.nutrition.get(crate::domain::Nutrient::CarbsG),
                    });
                    self.board.post_entry(NewEntry::new(
                        Tier::P0Medical,
                        EntryKind::Observation,
                        EntryBody::DailyIntake { day, intake },
                        tick,
                        end_of_day(day),
                        AgentId::MealPlanner,
                    )?);
                }
                let served = MealServed {
                    user,
                    day,
                    slot,
                    meal_id: served_meal.map(|(s, _)| s.meal_id),
                    decision_ids,
                    eaten,
                    preference_fit: served_meal.map_or(0.0, |(s, _)| s.preference_fit),
                    nutrition: served_meal.map_or(Nutrients::zero(), |(_, m)| m.nutrition),
                };
                self.publish(tick, TOPIC_MEAL, AgentId::MealPlanner, Payload::Meal(served))?;
                if env.planner.policy == PlannerPolicy::QLearning {
                    transitions.extend(res.transition);
                }
            }

            if c.sensors.samples_at(minute) {
                let s = sample_at(profile, day, minute, disrupted, &eaten_meals, &hydration_events, &c.sensors, &mut self.rng.sensors);
                glucose.push(s.glucose);
                heart.push(s.heart_rate);
                steps += s.steps;
                hydration += s.hydration;
                raise_hyperglycemia_guard(&mut self.board, std::slice::from_ref(&s), &self.coordinator.guard);
                self.publish(tick, TOPIC_VITALS, AgentId::Environment, Payload::Sample(s))?;
            }
        }

        let eod = end_of_day(day);
        for rec in self.reminder.end_day() {
            slots += 1;
            self.publish(eod, TOPIC_SLOT, AgentId::Reminder, Payload::Outcome(rec))?;
        }
        self.reminder.record_day(complied, slots);

        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let totals = DailyTotals {
            user,
            day,
            slots,
            complied,
            adherence: if slots == 0 { 0.0 } else { complied as f64 / slots as f64 },
            glucose_mean: mean(&glucose),
            heart_rate_mean: mean(&heart),
            steps,
            hydration_ml: hydration,
            meals_eaten: eaten_meals.len() as u32,
            consumed: intake,
            disrupted,
            anomaly,
        };
        let alert = self.monitor.end_of_day(totals.clone(), &mut self.rng.monitor)?;
        self.features.push(totals.clone());
        self.publish(eod, TOPIC_FEATURES, AgentId::Monitor, Payload::Features(totals))?;
        if let Some(a) = alert {
            let tier = match a.severity {
                AlertSeverity::NotifyCaregiver => Tier::P0Medical,
                AlertSeverity::NotifyUser => Tier::P2Nudge,
            };
            self.board.post_entry(NewEntry::new(
                tier,
                EntryKind::Alert,
                EntryBody::Alert(a.clone()),
                eod,
                end_of_day(day + 1),
                AgentId::Monitor,
            )?);
            self.publish(eod, TOPIC_ALERT, AgentId::Monitor, Payload::Alert(a))?;
        }

        if let Some(q) = &mut self.own_q {
            for t in transitions.drain(..) {
                t.apply(q);
            }
        }
        Ok(transitions)
    }
}

/// Generates the cohort from the config and runs it.
pub fn run(
    config: &ScenarioConfig,
    catalog: &MealCatalog,
    guideline: &GuidelineTarget,
    parallel_users: usize,
) -> Result<SimOutput, ScenarioError> {
    config.validate()?;
    let cohort = generate_cohort(&config.effective_cohort()).map_err(|e| ScenarioError::Config(e.to_string()))?;
    run_cohort(config, cohort, catalog, guideline, parallel_users)
}

/// Runs an already generated cohort. `config.cohort` supplies the seed and
/// anomaly length; the cohort's own spec supplies the day count.
pub fn run_cohort(
    config: &ScenarioConfig,
    cohort: Cohort,
    catalog: &MealCatalog,
    guideline: &GuidelineTarget,
    parallel_users: usize,
) -> Result<SimOutput, ScenarioError> {
    config.validate()?;
    if catalog.is_empty() {
        return Err(ScenarioError::Config("meal catalog is empty".into()));
    }
    let env = Env {
        config,
        planner: config.effective_planner(),
        anomaly_days: cohort.spec.anomaly_days,
        catalog,
        guideline,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel_users.max(1))
        .build()
        .map_err(|e| ScenarioError::Pool(e.to_string()))?;

    let mut sims = cohort
        .members
        .iter()
        .map(|m| UserSim::new(m, &env))
        .collect::<Result<Vec<_>, _>>()?;
    let mut shared = QTable::from_config(&env.planner);
    for day in 0..cohort.spec.days {
        shared.epsilon = env.planner.epsilon_for_day(day);
        let snapshot = &shared;
        let env_ref = &env;
        let batches: Vec<Result<Vec<Transition>, ScenarioError>> =
            pool.install(|| {
                sims.par_iter_mut()
                    .map(|s| {
                        s.simulate_day(day, snapshot, env_ref).map_err(|e| ScenarioError::AtDay {
                            user: s.member.profile.user_id,
                            day,
                            source: Box::new(e),
                        })
                    })
                    .collect()
            });
        let mut all = Vec::new();
        for b in batches {
            all.extend(b?);
        }
        for t in &all {
            t.apply(&mut shared);
        }
    }

    let mut trace = Vec::new();
    let mut features = Vec::new();
    for sim in sims {
        let user = sim.member.profile.user_id;
        features.extend(sim.features);
        trace.extend(
            sim.board
                .into_records()
                .into_iter()
                .enumerate()
                .map(|(seq, record)| TraceRecord {
                    user,
                    seq: seq as u64,
                    record,
                }),
        );
    }
    trace.sort_by_key(|r| (r.record.tick(), r.user));

    let profiles: Vec<UserProfile> = cohort.members.iter().map(|m| m.profile.clone()).collect();
    let provenance = Provenance {
        seed: config.cohort.seed,
        n_users: cohort.members.len() as u32,
        days: cohort.spec.days,
        variant: config.variant(),
    };
    let report = compute_report(&trace, &profiles, guideline, &config.satisfaction, provenance)?;
    Ok(SimOutput {
        cohort,
        trace,
        features,
        report,
        q_table: shared,
    })
}

/// Users whose trace shows a send on a modality their mask blocks.
pub fn masked_sends(out: &SimOutput) -> BTreeSet<UserId> {
    let blocked: BTreeSet<(UserId, crate::domain::Modality)> = out
        .trace
        .iter()
        .filter_map(|r| match &r.record {
            crate::bus::LogRecord::Entry(e) => match &e.body {
                EntryBody::ModalityMask { modalities, .. } => Some(modalities.iter().map(move |m| (r.user, *m))),
                _ => None,
            },
            _ => None,
        })
        .flatten()
        .collect();
    out.trace
        .iter()
        .filter_map(|r| match &r.record {
            crate::bus::LogRecord::Event(Event {
                payload: Payload::Reminder(a),
                ..
            }) => a.action.modality().filter(|m| blocked.contains(&(r.user, *m))).map(|_| r.user),
            _ => None,
        })
        .collect()
}
