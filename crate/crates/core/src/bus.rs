//! In-process event bus and blackboard.
//!
//! One store, two views: agents publish [`Event`]s on dotted topics and post
//! [`BlackboardEntry`]s with a priority tier and a validity window. Both land
//! in a single insertion-ordered log, which is what gets exported as the
//! JSONL trace. Entries are never deleted; they stop matching queries once
//! their window has passed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coordinator::{Decision, Proposal};
use crate::domain::{Modality, NutrientCap, Nutrients, PhysiologicalSample, Tick};
use crate::meal_planner::MealServed;
use crate::monitor::{Alert, DailyTotals};
use crate::reminder::{ReminderAttempt, SlotRecord};

/// Agents and data sources that publish on the bus. The declaration order is
/// the arbitration tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Environment,
    MealPlanner,
    Reminder,
    Guidance,
    Monitor,
    Coordinator,
}

impl AgentId {
    pub fn name(self) -> &'static str {
        match self {
            AgentId::Environment => "environment",
            AgentId::MealPlanner => "meal_planner",
            AgentId::Reminder => "reminder",
            AgentId::Guidance => "guidance",
            AgentId::Monitor => "monitor",
            AgentId::Coordinator => "coordinator",
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Sample(PhysiologicalSample),
    Proposal(Proposal),
    Reminder(ReminderAttempt),
    Outcome(SlotRecord),
    Meal(MealServed),
    Alert(Alert),
    Decision(Box<Decision>),
    Features(DailyTotals),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: Tick,
    pub topic: String,
    pub producer: AgentId,
    pub payload: Payload,
}

impl Event {
    pub fn new(tick: Tick, topic: impl Into<String>, producer: AgentId, payload: Payload) -> Self {
        Self {
            tick,
            topic: topic.into(),
            producer,
            payload,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    #[serde(rename = "P0_medical")]
    P0Medical,
    #[serde(rename = "P1_preference")]
    P1Preference,
    #[serde(rename = "P2_nudge")]
    P2Nudge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Observation,
    Proposal,
    Veto,
    Alert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EntryBody {
    /// The user's dietary caps and allergens, as loaded from the profile.
    MedicalConstraints {
        caps: Vec<NutrientCap>,
        allergens: BTreeSet<String>,
    },
    /// Running consumption for one day.
    DailyIntake { day: u32, intake: Nutrients },
    /// Raised by the hyperglycemia guard.
    GlucoseRisk {
        glucose: f64,
        guard_level: f64,
        sample_t: u64,
    },
    /// Notification channels that must not be used.
    ModalityMask {
        modalities: BTreeSet<Modality>,
        reason: String,
    },
    Proposal(Proposal),
    Alert(Alert),
}

/// An entry before the board has assigned its id.
#[derive(Clone, Debug, PartialEq)]
pub struct NewEntry {
    tier: Tier,
    kind: EntryKind,
    body: EntryBody,
    valid_from: Tick,
    valid_to: Tick,
    producer: AgentId,
}

impl NewEntry {
    pub fn new(
        tier: Tier,
        kind: EntryKind,
        body: EntryBody,
        valid_from: Tick,
        valid_to: Tick,
        producer: AgentId,
    ) -> Result<Self, BusError> {
        if valid_to < valid_from {
            return Err(BusError::InvertedWindow {
                valid_from,
                valid_to,
            });
        }
        Ok(Self {
            tier,
            kind,
            body,
            valid_from,
            valid_to,
            producer,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackboardEntry {
    pub entry_id: EntryId,
    pub tier: Tier,
    pub kind: EntryKind,
    pub valid_from: Tick,
    pub valid_to: Tick,
    pub producer: AgentId,
    pub body: EntryBody,
}

impl BlackboardEntry {
    pub fn active_at(&self, tick: Tick) -> bool {
        self.valid_from <= tick && tick <= self.valid_to
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriptionId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subscription {
    pub pattern: String,
    pub subscriber: AgentId,
}

impl Subscription {
    /// Dotted-prefix match: `sensor` matches `sensor` and `sensor.glucose`
    /// but not `sensors`.
    pub fn matches(&self, topic: &str) -> bool {
        topic == self.pattern
            || (topic.starts_with(&self.pattern)
                && topic.as_bytes().get(self.pattern.len()) == Some(&b'.'))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BusError {
    #[error("event topic must not be empty")]
    EmptyTopic,
    #[error("subscription pattern must not be empty")]
    EmptyPattern,
    #[error("out-of-order publish on {topic}: {tick} after {last}")]
    OutOfOrder { topic: String, tick: Tick, last: Tick },
    #[error("entry window inverted: valid_from {valid_from} > valid_to {valid_to}")]
    InvertedWindow { valid_from: Tick, valid_to: Tick },
    #[error("unknown subscription {0}")]
    UnknownSubscription(usize),
}

/// One line of the exported log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Event(Event),
    Entry(BlackboardEntry),
}

impl LogRecord {
    pub fn tick(&self) -> Tick {
        match self {
            LogRecord::Event(e) => e.tick,
            LogRecord::Entry(e) => e.valid_from,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Event(usize),
    Entry(usize),
}

#[derive(Default, Clone, Debug)]
struct TopicLog {
    last: Tick,
    events: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Inbox {
    sub: Subscription,
    pending: VecDeque<usize>,
}

/// The shared store. Owned by one simulation run; `Send` so independent runs
/// can live on different threads.
#[derive(Clone, Debug, Default)]
pub struct Blackboard {
    events: Vec<Event>,
    entries: Vec<BlackboardEntry>,
    order: Vec<Slot>,
    topics: BTreeMap<String, TopicLog>,
    inboxes: Vec<Inbox>,
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(
        &mut self,
        pattern: impl Into<String>,
        subscriber: AgentId,
    ) -> Result<SubscriptionId, BusError> {
        let pattern = pattern.into();
        if pattern.is_empty() {
            return Err(BusError::EmptyPattern);
        }
        self.inboxes.push(Inbox {
            sub: Subscription {
                pattern,
                subscriber,
            },
            pending: VecDeque::new(),
        });
        Ok(SubscriptionId(self.inboxes.len() - 1))
    }

    /// Appends to the topic log and delivers to every matching subscription,
    /// in registration order. Returns the delivery count.
    pub fn publish(&mut self, event: Event) -> Result<usize, BusError> {
        if event.topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        let idx = self.events.len();
        let log = self.topics.entry(event.topic.clone()).or_default();
        if !log.events.is_empty() && event.tick < log.last {
            return Err(BusError::OutOfOrder {
                topic: event.topic,
                tick: event.tick,
                last: log.last,
            });
        }
        log.last = event.tick;
        log.events.push(idx);
        let mut delivered = 0;
        for inbox in &mut self.inboxes {
            if inbox.sub.matches(&event.topic) {
                inbox.pending.push_back(idx);
                delivered += 1;
            }
        }
        self.events.push(event);
        self.order.push(Slot::Event(idx));
        Ok(delivered)
    }

    /// Takes every event delivered to `sub` since the last drain.
    pub fn drain(&mut self, sub: SubscriptionId) -> Result<Vec<Event>, BusError> {
        let inbox = self
            .inboxes
            .get_mut(sub.0)
            .ok_or(BusError::UnknownSubscription(sub.0))?;
        let pending = std::mem::take(&mut inbox.pending);
        Ok(pending.into_iter().map(|i| self.events[i].clone()).collect())
    }

    pub fn topic_log(&self, topic: &str) -> impl Iterator<Item = &Event> + '_ {
        self.topics
            .get(topic)
            .into_iter()
            .flat_map(|log| log.events.iter().map(|&i| &self.events[i]))
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn post_entry(&mut self, entry: NewEntry) -> EntryId {
        let entry_id = EntryId(self.entries.len() as u64);
        let idx = self.entries.len();
        self.entries.push(BlackboardEntry {
            entry_id,
            tier: entry.tier,
            kind: entry.kind,
            valid_from: entry.valid_from,
            valid_to: entry.valid_to,
            producer: entry.producer,
            body: entry.body,
        });
        self.order.push(Slot::Entry(idx));
        entry_id
    }

    pub fn entry(&self, id: EntryId) -> Option<&BlackboardEntry> {
        self.entries.get(id.0 as usize)
    }

    pub fn entries(&self) -> &[BlackboardEntry] {
        &self.entries
    }

    /// Entries matching the filters whose window contains `at`, by entry id.
    pub fn query_entries(
        &self,
        tier: Option<Tier>,
        kind: Option<EntryKind>,
        at: Tick,
    ) -> Vec<&BlackboardEntry> {
        self.entries
            .iter()
            .filter(|e| tier.is_none_or(|t| e.tier == t))
            .filter(|e| kind.is_none_or(|k| e.kind == k))
            .filter(|e| e.active_at(at))
            .collect()
    }

    /// Like [`query_entries`](Self::query_entries) but scanning from the
    /// newest entry, stopping at the first match of `pred`.
    pub fn latest_active(
        &self,
        at: Tick,
        pred: impl Fn(&BlackboardEntry) -> bool,
    ) -> Option<&BlackboardEntry> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.active_at(at) && pred(e))
    }

    /// Events and entries in insertion order.
    pub fn records(&self) -> impl Iterator<Item = LogRecord> + '_ {
        self.order.iter().map(|slot| match *slot {
            Slot::Event(i) => LogRecord::Event(self.events[i].clone()),
            Slot::Entry(i) => LogRecord::Entry(self.entries[i].clone()),
        })
    }

    /// Drops the stored log, returning it in insertion order.
    pub fn into_records(self) -> Vec<LogRecord> {
        let mut events: Vec<Option<Event>> = self.events.into_iter().map(Some).collect();
        let mut entries: Vec<Option<BlackboardEntry>> = self.entries.into_iter().map(Some).collect();
        self.order
            .into_iter()
            .map(|slot| match slot {
                Slot::Event(i) => LogRecord::Event(events[i].take().expect("event logged once")),
                Slot::Entry(i) => LogRecord::Entry(entries[i].take().expect("entry logged once")),
            })
            .collect()
    }

    /// One JSON object per line, insertion order, fixed field order.
    pub fn export_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
