//! The simulated user's reaction to one reminder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BehaviorModel;
use crate::domain::{Modality, Neuro, UserProfile};
use crate::reminder::{ReminderOutcome, TimeBucket};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponderConfig {
    pub tolerance_gain: f64,
    pub disruption_penalty: f64,
    /// Logit offset for ADHD profiles outside peak hours.
    pub adhd_off_peak: f64,
    /// Share of non-compliant responses that postpone rather than ignore.
    pub postpone_share: f64,
}

impl Default for ResponderConfig {
    fn default() -> Self {
        Self {
            tolerance_gain: 1.5,
            disruption_penalty: 2.0,
            adhd_off_peak: -0.4,
            postpone_share: 0.3,
        }
    }
}

/// What the responder knows about the user's day so far.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayState {
    pub minute: u32,
    pub reminders_so_far: u32,
    pub disrupted: bool,
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn p_comply(
    profile: &UserProfile,
    model: &BehaviorModel,
    modality: Modality,
    day: &DayState,
    config: &ResponderConfig,
) -> f64 {
    let mut logit = model.base_compliance + model.affinity(modality)
        + config.tolerance_gain * (profile.tolerance(modality) - 0.5)
        - model.fatigue_rate * day.reminders_so_far as f64;
    if day.disrupted {
        logit -= config.disruption_penalty;
    }
    if profile.neuro == Neuro::Adhd && TimeBucket::of_minute(day.minute).is_off_peak() {
        logit += config.adhd_off_peak;
    }
    logistic(logit)
}

/// Complied with `p_comply`, otherwise postponed with `postpone_share`,
/// otherwise ignored. Exactly two uniform draws per call.
pub fn respond_to_reminder(
    profile: &UserProfile,
    model: &BehaviorModel,
    modality: Modality,
    day: &DayState,
    config: &ResponderConfig,
    rng: &mut impl Rng,
) -> ReminderOutcome {
    let p = p_comply(profile, model, modality, day, config);
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    if u < p {
        ReminderOutcome::Complied
    } else if v < config.postpone_share {
        ReminderOutcome::Postponed
    } else {
        ReminderOutcome::Ignored
    }
}
