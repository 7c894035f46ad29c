//! Evaluation suite over a merged run trace.
//!
//! Every metric is a pure function of the trace (plus profiles for strata
//! and the guideline for adequacy), so recomputing a report from an exported
//! trace gives the same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bus::{EntryId, LogRecord, Payload};
use crate::coordinator::{validate_explanation, Decision, P0Rule, ProposedAction};
use crate::domain::{adequacy_score, GuidelineTarget, UserId, UserProfile};
use crate::meal_planner::MealServed;
use crate::monitor::{AlertSeverity, DailyTotals};
use crate::reminder::{ReminderOutcome, SlotRecord};
use crate::synthgen::{disability_label, TraceRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("trace has no reminder slots")]
    NoSlots,
    #[error("trace has no completed days")]
    NoDays,
    #[error("trace has no decisions")]
    NoDecisions,
    #[error("runs differ in {field}: {a} vs {b}")]
    ProvenanceMismatch { field: &'static str, a: String, b: String },
}

/// What a report was computed from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub n_users: u32,
    pub days: u32,
    /// Free-form label of the configuration, e.g. `adaptive` or `static`.
    pub variant: String,
}

/// Coefficients of the synthetic Likert formula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatisfactionWeights {
    pub reproposal: f64,
    pub near_miss: f64,
    pub preference: f64,
}

impl Default for SatisfactionWeights {
    fn default() -> Self {
        Self {
            reproposal: 1.5,
            near_miss: 1.0,
            preference: 1.0,
        }
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// `5 - a*reproposal - b*near_miss - c*(1 - preference_match)`, clamped to
/// [1, 5] and rounded to one decimal.
pub fn satisfaction_score(reproposal_rate: f64, near_miss_rate: f64, preference_match: f64, w: &SatisfactionWeights) -> f64 {
    let raw = 5.0 - w.reproposal * reproposal_rate - w.near_miss * near_miss_rate - w.preference * (1.0 - preference_match);
    round1(raw.clamp(1.0, 5.0))
}

/// Typed views over the payloads the metrics read.
struct View<'a> {
    slots: Vec<&'a SlotRecord>,
    features: Vec<&'a DailyTotals>,
    meals: Vec<&'a MealServed>,
    decisions: Vec<(UserId, &'a Decision)>,
    caregiver: Vec<UserId>,
    user_alerts: Vec<UserId>,
    entries: BTreeMap<UserId, BTreeSet<EntryId>>,
}

impl<'a> View<'a> {
    fn new(trace: &'a [TraceRecord]) -> Self {
        let mut v = View {
            slots: Vec::new(),
            features: Vec::new(),
            meals: Vec::new(),
            decisions: Vec::new(),
            caregiver: Vec::new(),
            user_alerts: Vec::new(),
            entries: BTreeMap::new(),
        };
        for r in trace {
            match &r.record {
                LogRecord::Entry(e) => {
                    v.entries.entry(r.user).or_default().insert(e.entry_id);
                }
                LogRecord::Event(e) => match &e.payload {
                    Payload::Outcome(s) => v.slots.push(s),
                    Payload::Features(f) => v.features.push(f),
                    Payload::Meal(m) => v.meals.push(m),
                    Payload::Decision(d) => v.decisions.push((r.user, d)),
                    Payload::Alert(a) => match a.severity {
                        AlertSeverity::NotifyCaregiver => v.caregiver.push(a.user),
                        AlertSeverity::NotifyUser => v.user_alerts.push(a.user),
                    },
                    _ => {}
                },
            }
        }
        v
    }
}

/// Complied slots over scheduled slots.
pub fn adherence_rate(trace: &[TraceRecord]) -> Result<f64, MetricsError> {
    let v = View::new(trace);
    if v.slots.is_empty() {
        return Err(MetricsError::NoSlots);
    }
    let complied = v.slots.iter().filter(|s| s.outcome == ReminderOutcome::Complied).count();
    Ok(complied as f64 / v.slots.len() as f64)
}

/// Mean over user-days of the adequacy of what was actually eaten.
pub fn nutritional_adequacy(trace: &[TraceRecord], guideline: &GuidelineTarget) -> Result<f64, MetricsError> {
    let v = View::new(trace);
    if v.features.is_empty() {
        return Err(MetricsError::NoDays);
    }
    let total: f64 = v.features.iter().map(|d| adequacy_score(&d.consumed, guideline, 1.0)).sum();
    Ok(total / v.features.len() as f64)
}

fn decision_valid(d: &Decision, entries: Option<&BTreeSet<EntryId>>) -> bool {
    validate_explanation(&d.explanation, d.decision_id, |id| entries.is_some_and(|s| s.contains(&id))).is_ok()
}

/// Share of decisions whose explanation validates against the user's log.
pub fn explainability_frac(trace: &[TraceRecord]) -> Result<f64, MetricsError> {
    let v = View::new(trace);
    if v.decisions.is_empty() {
        return Err(MetricsError::NoDecisions);
    }
    let ok = v
        .decisions
        .iter()
        .filter(|(u, d)| decision_valid(d, v.entries.get(u)))
        .count();
    Ok(ok as f64 / v.decisions.len() as f64)
}

pub fn caregiver_burden(trace: &[TraceRecord]) -> u64 {
    View::new(trace).caregiver.len() as u64
}

fn is_meal_decision(d: &Decision) -> bool {
    d.proposals
        .first()
        .is_some_and(|p| matches!(p.action, ProposedAction::Meal(_)))
}

/// Frictions feeding one user's satisfaction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frictions {
    pub meal_decisions: u64,
    pub reproposals: u64,
    pub reminder_decisions: u64,
    pub near_misses: u64,
    pub meals_served: u64,
    pub preference_sum: f64,
}

impl Frictions {
    fn rate(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    /// Meal served with no preference data counts as a perfect match.
    pub fn score(&self, w: &SatisfactionWeights) -> f64 {
        let pref = if self.meals_served == 0 {
            1.0
        } else {
            self.preference_sum / self.meals_served as f64
        };
        satisfaction_score(
            Self::rate(self.reproposals, self.meal_decisions),
            Self::rate(self.near_misses, self.reminder_decisions),
            pref,
            w,
        )
    }
}

fn frictions(v: &View<'_>) -> BTreeMap<UserId, Frictions> {
    let mut out: BTreeMap<UserId, Frictions> = BTreeMap::new();
    for (u, d) in &v.decisions {
        let f = out.entry(*u).or_default();
        if is_meal_decision(d) {
            f.meal_decisions += 1;
            f.reproposals += d.is_reproposal() as u64;
        } else {
            f.reminder_decisions += 1;
            f.near_misses += d.veto_rules().contains(&P0Rule::MaskedModality) as u64;
        }
    }
    for m in &v.meals {
        let f = out.entry(m.user).or_default();
        if m.meal_id.is_some() {
            f.meals_served += 1;
            f.preference_sum += m.preference_fit;
        }
    }
    out
}

/// Mean over users of each user's rounded Likert score.
pub fn satisfaction(trace: &[TraceRecord], profiles: &[UserProfile], w: &SatisfactionWeights) -> f64 {
    let f = frictions(&View::new(trace));
    if profiles.is_empty() {
        return 5.0;
    }
    let sum: f64 = profiles
        .iter()
        .map(|p| f.get(&p.user_id).copied().unwrap_or_default().score(w))
        .sum();
    round1(sum / profiles.len() as f64)
}

/// Raw counts for one stratum; fractions are derived.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub users: u32,
    pub slots: u64,
    pub complied: u64,
    pub days: u64,
    pub adequacy_sum: f64,
    pub decisions: u64,
    pub explained: u64,
    pub caregiver_alerts: u64,
    pub satisfaction_sum: f64,
}

impl StratumReport {
    pub fn adherence_rate(&self) -> Option<f64> {
        (self.slots > 0).then(|| self.complied as f64 / self.slots as f64)
    }

    pub fn nutritional_adequacy(&self) -> Option<f64> {
        (self.days > 0).then(|| self.adequacy_sum / self.days as f64)
    }

    pub fn satisfaction(&self) -> Option<f64> {
        (self.users > 0).then(|| round1(self.satisfaction_sum / self.users as f64))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub nutritional_adequacy: f64,
    pub adherence_rate: f64,
    pub satisfaction: f64,
    pub explainability_frac: f64,
    pub caregiver_alerts: u64,
    pub user_alerts: u64,
    pub decisions: u64,
    pub slots: u64,
    /// Keyed `phenotype:<p>`, `disability:<d1+d2|none>`, `neuro:<n>`.
    pub strata: BTreeMap<String, StratumReport>,
}

pub fn stratum_keys(p: &UserProfile) -> [String; 3] {
    [
        format!("phenotype:{}", p.phenotype.name()),
        format!("disability:{}", disability_label(&p.disabilities)),
        format!("neuro:{}", p.neuro.name()),
    ]
}

/// Builds the full report. Fails like the individual metrics when the trace
/// has no slots, days or decisions.
pub fn compute_report(
    trace: &[TraceRecord],
    profiles: &[UserProfile],
    guideline: &GuidelineTarget,
    weights: &SatisfactionWeights,
    provenance: Provenance,
) -> Result<RunReport, MetricsError> {
    let v = View::new(trace);
    if v.slots.is_empty() {
        return Err(MetricsError::NoSlots);
    }
    if v.features.is_empty() {
        return Err(MetricsError::NoDays);
    }
    if v.decisions.is_empty() {
        return Err(MetricsError::NoDecisions);
    }

    let mut per_user: BTreeMap<UserId, StratumReport> = BTreeMap::new();
    for s in &v.slots {
        let r = per_user.entry(s.user).or_default();
        r.slots += 1;
        r.complied += (s.outcome == ReminderOutcome::Complied) as u64;
    }
    for d in &v.features {
        let r = per_user.entry(d.user).or_default();
        r.days += 1;
        r.adequacy_sum += adequacy_score(&d.consumed, guideline, 1.0);
    }
    for (u, d) in &v.decisions {
        let r = per_user.entry(*u).or_default();
        r.decisions += 1;
        r.explained += decision_valid(d, v.entries.get(u)) as u64;
    }
    for u in &v.caregiver {
        per_user.entry(*u).or_default().caregiver_alerts += 1;
    }
    let fr = frictions(&v);
    for p in profiles {
        let r = per_user.entry(p.user_id).or_default();
        r.users = 1;
        r.satisfaction_sum = fr.get(&p.user_id).copied().unwrap_or_default().score(weights);
    }

    let mut strata: BTreeMap<String, StratumReport> = BTreeMap::new();
    for p in profiles {
        let u = &per_user[&p.user_id];
        for key in stratum_keys(p) {
            let s = strata.entry(key).or_default();
            s.users += u.users;
            s.slots += u.slots;
            s.complied += u.complied;
            s.days += u.days;
            s.adequacy_sum += u.adequacy_sum;
            s.decisions += u.decisions;
            s.explained += u.explained;
            s.caregiver_alerts += u.caregiver_alerts;
            s.satisfaction_sum += u.satisfaction_sum;
        }
    }
    // Users in the trace without a profile still count in the totals.
    let total = |f: fn(&StratumReport) -> u64| per_user.values().map(f).sum::<u64>();
    let slots = total(|r| r.slots);
    let days = total(|r| r.days);
    let decisions = total(|r| r.decisions);
    let adequacy_sum: f64 = per_user.values().map(|r| r.adequacy_sum).sum();
    let satisfaction = if profiles.is_empty() {
        5.0
    } else {
        round1(profiles.iter().map(|p| per_user[&p.user_id].satisfaction_sum).sum::<f64>() / profiles.len() as f64)
    };

    Ok(RunReport {
        provenance,
        nutritional_adequacy: adequacy_sum / days as f64,
        adherence_rate: total(|r| r.complied) as f64 / slots as f64,
        satisfaction,
        explainability_frac: total(|r| r.explained) as f64 / decisions as f64,
        caregiver_alerts: v.caregiver.len() as u64,
        user_alerts: v.user_alerts.len() as u64,
        decisions,
        slots,
        strata,
    })
}

impl RunReport {
    /// Fixed-width text table: headline metrics, then one line per stratum.
    pub fn table(&self) -> String {
        let p = &self.provenance;
        let mut s = String::new();
        let _ = writeln!(s, "run {} (seed {}, {} users x {} days)", p.variant, p.seed, p.n_users, p.days);
        let _ = writeln!(s, "{:<28}{:>12}", "metric", "value");
        for (k, v) in [
            ("nutritional_adequacy", format!("{:.4}", self.nutritional_adequacy)),
            ("adherence_rate", format!("{:.4}", self.adherence_rate)),
            ("satisfaction", format!("{:.1}", self.satisfaction)),
            ("explainability_frac", format!("{:.4}", self.explainability_frac)),
            ("caregiver_alerts", self.caregiver_alerts.to_string()),
            ("user_alerts", self.user_alerts.to_string()),
            ("decisions", self.decisions.to_string()),
            ("slots", self.slots.to_string()),
        ] {
            let _ = writeln!(s, "{k:<28}{v:>12}");
        }
        let _ = writeln!(s);
        let w = self.strata.keys().map(|k| k.len() + 2).max().unwrap_or(0).max(12);
        let _ = writeln!(
            s,
            "{:<w$}{:>7}{:>11}{:>11}{:>8}{:>11}",
            "stratum", "users", "adherence", "adequacy", "satisf", "caregiver"
        );
        let opt = |x: Option<f64>, prec: usize| x.map_or("-".to_string(), |v| format!("{v:.prec$}"));
        for (k, r) in &self.strata {
            let _ = writeln!(
                s,
                "{:<w$}{:>7}{:>11}{:>11}{:>8}{:>11}",
                k,
                r.users,
                opt(r.adherence_rate(), 4),
                opt(r.nutritional_adequacy(), 4),
                opt(r.satisfaction(), 1),
                r.caregiver_alerts
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub baseline: f64,
    pub variant: f64,
    pub abs_delta: f64,
    /// `None` when the baseline is 0.
    pub rel_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub baseline: Provenance,
    pub variant: Provenance,
    pub deltas: Vec<MetricDelta>,
}

/// Per-metric deltas of `variant` against `baseline`. Both runs must share
/// seed, cohort size and length.
pub fn compare(baseline: &RunReport, variant: &RunReport) -> Result<DeltaReport, MetricsError> {
    let (a, b) = (&baseline.provenance, &variant.provenance);
    for (field, x, y) in [
        ("seed", a.seed.to_string(), b.seed.to_string()),
        ("n_users", a.n_users.to_string(), b.n_users.to_string()),
        ("days", a.days.to_string(), b.days.to_string()),
    ] {
        if x != y {
            return Err(MetricsError::ProvenanceMismatch { field, a: x, b: y });
        }
    }
    let rows = [
        ("nutritional_adequacy", baseline.nutritional_adequacy, variant.nutritional_adequacy),
        ("adherence_rate", baseline.adherence_rate, variant.adherence_rate),
        ("satisfaction", baseline.satisfaction, variant.satisfaction),
        ("explainability_frac", baseline.explainability_frac, variant.explainability_frac),
        ("caregiver_alerts", baseline.caregiver_alerts as f64, variant.caregiver_alerts as f64),
    ];
    let deltas = rows
        .into_iter()
        .map(|(metric, base, var)| MetricDelta {
            metric: metric.to_string(),
            baseline: base,
            variant: var,
            abs_delta: var - base,
            rel_delta: (base != 0.0).then(|| (var - base) / base),
        })
        .collect();
    Ok(DeltaReport {
        baseline: a.clone(),
        variant: b.clone(),
        deltas,
    })
}

impl DeltaReport {
    pub fn delta(&self, metric: &str) -> Option<&MetricDelta> {
        self.deltas.iter().find(|d| d.metric == metric)
    }

    /// `metric,baseline,variant,abs_delta,rel_delta`; an undefined relative
    /// delta is written as `undefined`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "baseline", "variant", "abs_delta", "rel_delta"])
            .expect("in-memory write");
        for d in &self.deltas {
            w.write_record([
                d.metric.clone(),
                d.baseline.to_string(),
                d.variant.to_string(),
                d.abs_delta.to_string(),
                d.rel_delta.map_or("undefined".to_string(), |r| r.to_string()),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} vs {} (seed {})", self.variant.variant, self.baseline.variant, self.baseline.seed);
        let _ = writeln!(s, "{:<24}{:>12}{:>12}{:>12}{:>12}", "metric", "baseline", "variant", "abs", "rel");
        for d in &self.deltas {
            let rel = d.rel_delta.map_or("undefined".to_string(), |r| format!("{:+.1}%", 100.0 * r));
            let _ = writeln!(
                s,
                "{:<24}{:>12.4}{:>12.4}{:>+12.4}{:>12}",
                d.metric, d.baseline, d.variant, d.abs_delta, rel
            );
        }
        s
    }
}
