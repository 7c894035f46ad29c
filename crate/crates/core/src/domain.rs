//! Core vocabulary shared by the agents, the cohort generator and the metrics.
//!
//! Everything here is plain immutable data. Profiles are deserialized through
//! [`RawUserProfile`] so that every invariant violation is reported at once,
//! with the path of the offending field.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::LoadError;

pub const MINUTES_PER_DAY: u32 = 1440;
/// Width of one simulation tick in minutes.
pub const TICK_MINUTES: u32 = 15;
pub const TICKS_PER_DAY: u64 = (MINUTES_PER_DAY / TICK_MINUTES) as u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{:04}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MealId(pub u32);

impl fmt::Display for MealId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Global simulation tick. One tick spans [`TICK_MINUTES`] minutes.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    pub const MAX: Tick = Tick(u64::MAX);

    pub fn at(day: u32, minute: u32) -> Tick {
        Tick(day as u64 * TICKS_PER_DAY + (minute / TICK_MINUTES) as u64)
    }

    pub fn day(self) -> u32 {
        (self.0 / TICKS_PER_DAY) as u32
    }

    pub fn minute_of_day(self) -> u32 {
        (self.0 % TICKS_PER_DAY) as u32 * TICK_MINUTES
    }

    pub fn plus_minutes(self, minutes: u32) -> Tick {
        Tick(self.0.saturating_add((minutes / TICK_MINUTES) as u64))
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Simulation clock: day index, minute of day, and the derived global tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub day: u32,
    pub minute: u32,
    pub tick: Tick,
}

impl SimClock {
    pub fn start() -> SimClock {
        SimClock {
            day: 0,
            minute: 0,
            tick: Tick(0),
        }
    }

    /// Moves the clock to `(day, minute)`. Moving backwards is an error;
    /// staying put is a no-op.
    pub fn advance_to(&mut self, day: u32, minute: u32) -> Result<Tick, ClockError> {
        if minute >= MINUTES_PER_DAY {
            return Err(ClockError::MinuteOutOfRange(minute));
        }
        let tick = Tick::at(day, minute);
        if (day, minute) < (self.day, self.minute) {
            return Err(ClockError::Backwards {
                from: self.tick,
                to: tick,
            });
        }
        self.day = day;
        self.minute = minute;
        self.tick = tick;
        Ok(tick)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClockError {
    #[error("minute {0} outside [0, 1440)")]
    MinuteOutOfRange(u32),
    #[error("clock cannot move from {from} to {to}")]
    Backwards { from: Tick, to: Tick },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nutrient {
    Kcal,
    CarbsG,
    SugarG,
    ProteinG,
    FatG,
    SodiumMg,
    FiberG,
}

impl Nutrient {
    pub const ALL: [Nutrient; 7] = [
        Nutrient::Kcal,
        Nutrient::CarbsG,
        Nutrient::SugarG,
        Nutrient::ProteinG,
        Nutrient::FatG,
        Nutrient::SodiumMg,
        Nutrient::FiberG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Nutrient::Kcal => "kcal",
            Nutrient::CarbsG => "carbs_g",
            Nutrient::SugarG => "sugar_g",
            Nutrient::ProteinG => "protein_g",
            Nutrient::FatG => "fat_g",
            Nutrient::SodiumMg => "sodium_mg",
            Nutrient::FiberG => "fiber_g",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Nutrient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Quantities for the full nutrient vocabulary. Serialized as a map; keys
/// missing on input read as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Nutrients([f64; 7]);

impl Nutrients {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[(Nutrient, f64)]) -> Self {
        let mut out = Self::zero();
        for &(n, q) in pairs {
            out.set(n, q);
        }
        out
    }

    pub fn get(&self, n: Nutrient) -> f64 {
        self.0[n.index()]
    }

    pub fn set(&mut self, n: Nutrient, q: f64) {
        self.0[n.index()] = q;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        out.0.iter_mut().for_each(|q| *q *= factor);
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (Nutrient, f64)> + '_ {
        Nutrient::ALL.iter().map(move |&n| (n, self.get(n)))
    }

    pub fn all_non_negative(&self) -> bool {
        self.0.iter().all(|q| *q >= 0.0)
    }
}

impl std::ops::Add for Nutrients {
    type Output = Nutrients;
    fn add(mut self, rhs: Nutrients) -> Nutrients {
        self += rhs;
        self
    }
}

impl std::ops::AddAssign for Nutrients {
    fn add_assign(&mut self, rhs: Nutrients) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Serialize for Nutrients {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(7))?;
        for (n, q) in self.iter() {
            map.serialize_entry(&n, &q)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Nutrients {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct NutrientsVisitor;
        impl<'de> Visitor<'de> for NutrientsVisitor {
            type Value = Nutrients;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from nutrient name to quantity")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Nutrients, A::Error> {
                let mut out = Nutrients::zero();
                while let Some((n, q)) = access.next_entry::<Nutrient, f64>()? {
                    out.set(n, q);
                }
                Ok(out)
            }
        }
        deserializer.deserialize_map(NutrientsVisitor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    Unspecified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phenotype {
    Diabetes,
    Hypertension,
    MixedCardiometabolic,
    None,
}

impl Phenotype {
    pub const ALL: [Phenotype; 4] = [
        Phenotype::Diabetes,
        Phenotype::Hypertension,
        Phenotype::MixedCardiometabolic,
        Phenotype::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phenotype::Diabetes => "diabetes",
            Phenotype::Hypertension => "hypertension",
            Phenotype::MixedCardiometabolic => "mixed_cardiometabolic",
            Phenotype::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disability {
    Physical,
    SensoryVisual,
    SensoryAuditory,
    Cognitive,
}

impl Disability {
    pub const ALL: [Disability; 4] = [
        Disability::Physical,
        Disability::SensoryVisual,
        Disability::SensoryAuditory,
        Disability::Cognitive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Disability::Physical => "physical",
            Disability::SensoryVisual => "sensory_visual",
            Disability::SensoryAuditory => "sensory_auditory",
            Disability::Cognitive => "cognitive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neuro {
    Asd,
    Adhd,
    None,
}

impl Neuro {
    pub fn name(self) -> &'static str {
        match self {
            Neuro::Asd => "asd",
            Neuro::Adhd => "adhd",
            Neuro::None => "none",
        }
    }
}

/// Notification channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Visual,
    Haptic,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Visual, Modality::Haptic];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
            Modality::Haptic => "haptic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Soft,
    Crunchy,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Temperature {
    Hot,
    Cold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Hard,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NutrientCap {
    pub nutrient: Nutrient,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_item_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_day_max: Option<f64>,
    pub severity: Severity,
}

impl NutrientCap {
    pub fn hard_item(nutrient: Nutrient, max: f64) -> Self {
        Self {
            nutrient,
            per_item_max: Some(max),
            per_day_max: None,
            severity: Severity::Hard,
        }
    }

    pub fn hard_day(nutrient: Nutrient, max: f64) -> Self {
        Self {
            nutrient,
            per_item_max: None,
            per_day_max: Some(max),
            severity: Severity::Hard,
        }
    }

    pub fn soft(nutrient: Nutrient, per_item_max: Option<f64>, per_day_max: Option<f64>) -> Self {
        Self {
            nutrient,
            per_item_max,
            per_day_max,
            severity: Severity::Soft,
        }
    }
}

/// A validated user profile. Construct through [`validate_profile`] or by
/// deserializing, which runs the same validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawUserProfile")]
pub struct UserProfile {
    pub user_id: UserId,
    pub age: u32,
    pub gender: Gender,
    pub cultural_diet: BTreeSet<String>,
    pub phenotype: Phenotype,
    pub disabilities: BTreeSet<Disability>,
    pub neuro: Neuro,
    pub sensory_tolerance: BTreeMap<Modality, f64>,
    pub preferences: BTreeMap<String, f64>,
    pub hard_constraints: Vec<NutrientCap>,
    pub allergens: BTreeSet<String>,
    pub medication_slots: Vec<u32>,
    #[serde(default)]
    pub texture_aversions: BTreeSet<Texture>,
    #[serde(default)]
    pub temperature_aversions: BTreeSet<Temperature>,
}

impl UserProfile {
    /// Tolerance for a modality; modalities absent from the map are fully tolerated.
    pub fn tolerance(&self, m: Modality) -> f64 {
        self.sensory_tolerance.get(&m).copied().unwrap_or(1.0)
    }

    pub fn has(&self, d: Disability) -> bool {
        self.disabilities.contains(&d)
    }

    /// Best preference weight over the given cuisine tags, 0 when none match.
    pub fn preference_fit<'a>(&self, tags: impl IntoIterator<Item = &'a String>) -> f64 {
        tags.into_iter()
            .filter_map(|t| self.preferences.get(t))
            .fold(0.0, |acc, &w| f64::max(acc, w))
    }

    pub fn hard_caps(&self) -> impl Iterator<Item = &NutrientCap> {
        self.hard_constraints
            .iter()
            .filter(|c| c.severity == Severity::Hard)
    }

    pub fn soft_caps(&self) -> impl Iterator<Item = &NutrientCap> {
        self.hard_constraints
            .iter()
            .filter(|c| c.severity == Severity::Soft)
    }

    /// Number of sensory attributes of the meal the user is averse to.
    pub fn sensory_mismatch(&self, meal: &MealCatalogEntry) -> u32 {
        self.texture_aversions.contains(&meal.texture) as u32
            + self.temperature_aversions.contains(&meal.temperature) as u32
    }
}

/// Unchecked profile as it appears on disk.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawUserProfile {
    pub user_id: UserId,
    pub age: i64,
    pub gender: Gender,
    #[serde(default)]
    pub cultural_diet: BTreeSet<String>,
    pub phenotype: Phenotype,
    #[serde(default)]
    pub disabilities: BTreeSet<Disability>,
    pub neuro: Neuro,
    #[serde(default)]
    pub sensory_tolerance: BTreeMap<Modality, f64>,
    #[serde(default)]
    pub preferences: BTreeMap<String, f64>,
    #[serde(default)]
    pub hard_constraints: Vec<NutrientCap>,
    #[serde(default)]
    pub allergens: BTreeSet<String>,
    #[serde(default)]
    pub medication_slots: Vec<i64>,
    #[serde(default)]
    pub texture_aversions: BTreeSet<Texture>,
    #[serde(default)]
    pub temperature_aversions: BTreeSet<Temperature>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Every invariant failure found in one value.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl ValidationErrors {
    pub fn paths(&self) -> Vec<&str> {
        self.0.iter().map(|e| e.path.as_str()).collect()
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Collector(Vec<ValidationError>);

impl Collector {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ValidationError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn unit(&mut self, path: impl Into<String>, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.push(path, format!("{v} outside [0, 1]"));
        }
    }

    fn finish<T>(self, value: T) -> Result<T, ValidationErrors> {
        if self.0.is_empty() {
            Ok(value)
        } else {
            Err(ValidationErrors(self.0))
        }
    }
}

fn check_caps_shape(caps: &[NutrientCap], prefix: &str, errs: &mut Collector) {
    for (i, cap) in caps.iter().enumerate() {
        let path = format!("{prefix}[{i}]");
        if cap.per_item_max.is_none() && cap.per_day_max.is_none() {
            errs.push(&path, "needs per_item_max or per_day_max");
        }
        for (field, q) in [("per_item_max", cap.per_item_max), ("per_day_max", cap.per_day_max)] {
            if let Some(q) = q {
                if !(q >= 0.0 && q.is_finite()) {
                    errs.push(format!("{path}.{field}"), format!("{q} must be a finite quantity >= 0"));
                }
            }
        }
    }
}

/// Checks every profile invariant, reporting all failures with field paths.
pub fn validate_profile(raw: RawUserProfile) -> Result<UserProfile, ValidationErrors> {
    let mut errs = Collector::default();
    if raw.age < 0 || raw.age > u32::MAX as i64 {
        errs.push("age", format!("{} is not a valid age", raw.age));
    }
    for (m, v) in &raw.sensory_tolerance {
        errs.unit(format!("sensory_tolerance.{}", m.name()), *v);
    }
    for (tag, w) in &raw.preferences {
        errs.unit(format!("preferences.{tag}"), *w);
    }
    check_caps_shape(&raw.hard_constraints, "hard_constraints", &mut errs);
    for (i, slot) in raw.medication_slots.iter().enumerate() {
        if !(0..MINUTES_PER_DAY as i64).contains(slot) {
            errs.push(format!("medication_slots[{i}]"), format!("{slot} outside [0, 1440)"));
        }
        if i > 0 && raw.medication_slots[i - 1] >= *slot {
            errs.push(format!("medication_slots[{i}]"), "slots must be strictly increasing");
        }
    }
    let profile = UserProfile {
        user_id: raw.user_id,
        age: raw.age.clamp(0, u32::MAX as i64) as u32,
        gender: raw.gender,
        cultural_diet: raw.cultural_diet,
        phenotype: raw.phenotype,
        disabilities: raw.disabilities,
        neuro: raw.neuro,
        sensory_tolerance: raw.sensory_tolerance,
        preferences: raw.preferences,
        hard_constraints: raw.hard_constraints,
        allergens: raw.allergens,
        medication_slots: raw
            .medication_slots
            .iter()
            .map(|&s| s.clamp(0, MINUTES_PER_DAY as i64 - 1) as u32)
            .collect(),
        texture_aversions: raw.texture_aversions,
        temperature_aversions: raw.temperature_aversions,
    };
    errs.finish(profile)
}

impl TryFrom<RawUserProfile> for UserProfile {
    type Error = ValidationErrors;
    fn try_from(raw: RawUserProfile) -> Result<Self, Self::Error> {
        validate_profile(raw)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MealCatalogEntry {
    pub meal_id: MealId,
    pub name: String,
    pub nutrition: Nutrients,
    pub glycemic_index: f64,
    pub cuisine: BTreeSet<String>,
    pub texture: Texture,
    pub temperature: Temperature,
    pub prep_steps: Vec<String>,
    #[serde(default)]
    pub allergens: BTreeSet<String>,
}

impl MealCatalogEntry {
    fn validate_into(&self, path: &str, errs: &mut Collector) {
        if !self.nutrition.all_non_negative() {
            errs.push(format!("{path}.nutrition"), "quantities must be >= 0");
        }
        if !(0.0..=110.0).contains(&self.glycemic_index) {
            errs.push(
                format!("{path}.glycemic_index"),
                format!("{} outside [0, 110]", self.glycemic_index),
            );
        }
        if self.prep_steps.is_empty() {
            errs.push(format!("{path}.prep_steps"), "must not be empty");
        }
    }
}

/// The meal catalog, ordered by meal id.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MealCatalog {
    meals: Vec<MealCatalogEntry>,
}

impl MealCatalog {
    pub fn new(mut meals: Vec<MealCatalogEntry>) -> Result<Self, ValidationErrors> {
        meals.sort_by_key(|m| m.meal_id);
        let mut errs = Collector::default();
        for (i, m) in meals.iter().enumerate() {
            m.validate_into(&format!("meals[{}]", m.meal_id), &mut errs);
            if i > 0 && meals[i - 1].meal_id == m.meal_id {
                errs.push(format!("meals[{}]", m.meal_id), "duplicate meal_id");
            }
        }
        errs.finish(Self { meals })
    }

    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        let meals: Vec<MealCatalogEntry> =
            serde_json::from_str(include_str!("../data/catalog.json")).expect("builtin catalog parses");
        Self::new(meals).expect("builtin catalog is valid")
    }

    pub fn meals(&self) -> &[MealCatalogEntry] {
        &self.meals
    }

    pub fn get(&self, id: MealId) -> Option<&MealCatalogEntry> {
        self.meals
            .binary_search_by_key(&id, |m| m.meal_id)
            .ok()
            .map(|i| &self.meals[i])
    }

    pub fn by_name(&self, name: &str) -> Option<&MealCatalogEntry> {
        self.meals.iter().find(|m| m.name.eq_ignore_ascii_case(name))
    }

    pub fn ids(&self) -> impl Iterator<Item = MealId> + '_ {
        self.meals.iter().map(|m| m.meal_id)
    }

    pub fn len(&self) -> usize {
        self.meals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meals.is_empty()
    }
}

impl<'de> Deserialize<'de> for MealCatalog {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let meals = Vec::<MealCatalogEntry>::deserialize(deserializer)?;
        MealCatalog::new(meals).map_err(de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidelineTarget {
    pub targets: BTreeMap<Nutrient, f64>,
    pub tolerance_frac: f64,
}

impl GuidelineTarget {
    pub fn new(targets: BTreeMap<Nutrient, f64>, tolerance_frac: f64) -> Result<Self, ValidationErrors> {
        let mut errs = Collector::default();
        for (n, t) in &targets {
            if !(*t > 0.0 && t.is_finite()) {
                errs.push(format!("targets.{n}"), format!("{t} must be > 0"));
            }
        }
        if targets.is_empty() {
            errs.push("targets", "at least one nutrient target required");
        }
        if !(tolerance_frac > 0.0 && tolerance_frac <= 1.0) {
            errs.push("tolerance_frac", format!("{tolerance_frac} outside (0, 1]"));
        }
        errs.finish(Self {
            targets,
            tolerance_frac,
        })
    }

    pub fn builtin() -> Self {
        let g: GuidelineTarget =
            serde_json::from_str(include_str!("../data/guideline.json")).expect("builtin guideline parses");
        Self::new(g.targets, g.tolerance_frac).expect("builtin guideline is valid")
    }
}

/// Capped-deviation adequacy of `amounts` against `scale`-fraction of the
/// guideline targets: the mean over target nutrients of
/// `max(0, 1 - |amount - scale*target| / (scale*target))`.
///
/// Used both as the planner reward's nutrition term and as the daily
/// adequacy metric.
pub fn adequacy_score(amounts: &Nutrients, guideline: &GuidelineTarget, scale: f64) -> f64 {
    let k = guideline.targets.len() as f64;
    guideline
        .targets
        .iter()
        .map(|(&n, &t)| {
            let goal = scale * t;
            (1.0 - (amounts.get(n) - goal).abs() / goal).max(0.0)
        })
        .sum::<f64>()
        / k
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysiologicalSample {
    /// Global simulation minute (`day * 1440 + minute`).
    pub t: u64,
    pub glucose: f64,
    pub heart_rate: f64,
    pub hydration: f64,
    pub steps: f64,
}

impl PhysiologicalSample {
    pub fn is_valid(&self) -> bool {
        self.glucose > 0.0
            && self.glucose < 600.0
            && self.heart_rate > 20.0
            && self.heart_rate < 250.0
            && self.hydration >= 0.0
            && self.steps >= 0.0
    }

    pub fn tick(&self) -> Tick {
        let day = (self.t / MINUTES_PER_DAY as u64) as u32;
        Tick::at(day, (self.t % MINUTES_PER_DAY as u64) as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapScope {
    PerItem,
    PerDay,
}

/// A breached hard constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Cap {
        nutrient: Nutrient,
        scope: CapScope,
        limit: f64,
        amount: f64,
    },
    Allergen {
        tag: String,
    },
}

impl Violation {
    /// Stable reason name, e.g. `hard_cap.sugar_g.per_item` or `allergen.peanut`.
    pub fn rule_name(&self) -> String {
        match self {
            Violation::Cap { nutrient, scope, .. } => {
                let scope = match scope {
                    CapScope::PerItem => "per_item",
                    CapScope::PerDay => "per_day",
                };
                format!("hard_cap.{nutrient}.{scope}")
            }
            Violation::Allergen { tag } => format!("allergen.{tag}"),
        }
    }

    pub fn is_cap(&self, nutrient: Nutrient, scope: CapScope) -> bool {
        matches!(self, Violation::Cap { nutrient: n, scope: s, .. } if *n == nutrient && *s == scope)
    }
}

/// Evaluates caps of the given severity for one meal. Shared by the hard
/// constraint check and the guidance agent's soft-cap check.
pub fn cap_breaches<'a>(
    caps: impl IntoIterator<Item = &'a NutrientCap>,
    meal: &Nutrients,
    intake_so_far: &Nutrients,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for cap in caps {
        let amount = meal.get(cap.nutrient);
        if let Some(limit) = cap.per_item_max {
            if amount > limit {
                out.push(Violation::Cap {
                    nutrient: cap.nutrient,
                    scope: CapScope::PerItem,
                    limit,
                    amount,
                });
            }
        }
        if let Some(limit) = cap.per_day_max {
            let projected = intake_so_far.get(cap.nutrient) + amount;
            if projected > limit {
                out.push(Violation::Cap {
                    nutrient: cap.nutrient,
                    scope: CapScope::PerDay,
                    limit,
                    amount: projected,
                });
            }
        }
    }
    out
}

pub fn allergen_hits(allergens: &BTreeSet<String>, meal_allergens: &BTreeSet<String>) -> Vec<Violation> {
    allergens
        .intersection(meal_allergens)
        .map(|tag| Violation::Allergen { tag: tag.clone() })
        .collect()
}

/// Hard-severity cap breaches and allergen hits for serving `meal` after
/// `intake_so_far` has been consumed today. Empty means admissible.
pub fn check_hard_constraints(
    profile: &UserProfile,
    meal: &MealCatalogEntry,
    intake_so_far: &Nutrients,
) -> Vec<Violation> {
    let mut out = cap_breaches(profile.hard_caps(), &meal.nutrition, intake_so_far);
    out.extend(allergen_hits(&profile.allergens, &meal.allergens));
    out
}

fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, LoadError> {
    serde_json::from_str(text).map_err(|source| LoadError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_profiles(path: &Path) -> Result<Vec<UserProfile>, LoadError> {
    parse(path, &read(path)?)
}

pub fn load_catalog(path: &Path) -> Result<MealCatalog, LoadError> {
    parse(path, &read(path)?)
}

pub fn load_guideline(path: &Path) -> Result<GuidelineTarget, LoadError> {
    let g: GuidelineTarget = parse(path, &read(path)?)?;
    GuidelineTarget::new(g.targets, g.tolerance_frac).map_err(|e| LoadError::Invalid {
        path: path.to_path_buf(),
        errors: e,
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn per_item_sugar_cap() {
        let mut p = profile();
        p.hard_constraints.push(NutrientCap::hard_item(Nutrient::SugarG, 15.0));
        let m = meal(0, &[(Nutrient::SugarG, 40.0)]);
        let v = check_hard_constraints(&p, &m, &Nutrients::zero());
        assert_eq!(v.len(), 1);
        assert!(v[0].is_cap(Nutrient::SugarG, CapScope::PerItem));
    }

    #[test]
    fn no_caps_admits_everything() {
        let p = profile();
        let m = meal(0, &[(Nutrient::SugarG, 400.0), (Nutrient::SodiumMg, 9000.0)]);
        assert!(check_hard_constraints(&p, &m, &Nutrients::zero()).is_empty());
    }

    #[test]
    fn per_day_carb_cap() {
        let mut p = profile();
        p.hard_constraints.push(NutrientCap::hard_day(Nutrient::CarbsG, 200.0));
        let m = meal(0, &[(Nutrient::CarbsG, 30.0)]);
        let intake = Nutrients::from_pairs(&[(Nutrient::CarbsG, 180.0)]);
        let v = check_hard_constraints(&p, &m, &intake);
        assert_eq!(v.len(), 1);
        assert!(v[0].is_cap(Nutrient::CarbsG, CapScope::PerDay));
    }

    #[test]
    fn allergen_is_a_violation() {
        let mut p = profile();
        p.allergens.insert("peanut".into());
        let mut m = meal(0, &[]);
        m.allergens.insert("peanut".into());
        let v = check_hard_constraints(&p, &m, &Nutrients::zero());
        assert_eq!(v, vec![Violation::Allergen { tag: "peanut".into() }]);
        assert_eq!(v[0].rule_name(), "allergen.peanut");
    }

    #[test]
    fn soft_caps_are_ignored() {
        let mut p = profile();
        p.hard_constraints
            .push(NutrientCap::soft(Nutrient::SodiumMg, Some(100.0), Some(100.0)));
        let m = meal(0, &[(Nutrient::SodiumMg, 5000.0)]);
        assert!(check_hard_constraints(&p, &m, &Nutrients::zero()).is_empty());
    }

    fn raw_json() -> serde_json::Value {
        serde_json::to_value(profile()).unwrap()
    }

    fn raw_from(v: serde_json::Value) -> RawUserProfile {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn tolerance_out_of_range_names_field() {
        let mut v = raw_json();
        v["sensory_tolerance"]["audio"] = 1.2.into();
        let err = validate_profile(raw_from(v)).unwrap_err();
        assert_eq!(err.paths(), vec!["sensory_tolerance.audio"]);
    }

    #[test]
    fn medication_slots_must_increase() {
        let mut v = raw_json();
        v["medication_slots"] = serde_json::json!([480, 480]);
        let err = validate_profile(raw_from(v)).unwrap_err();
        assert_eq!(err.paths(), vec!["medication_slots[1]"]);
    }

    #[test]
    fn all_failures_reported() {
        let mut v = raw_json();
        v["medication_slots"] = serde_json::json!([1500]);
        v["preferences"]["italian"] = (-0.1).into();
        v["age"] = (-3).into();
        let err = validate_profile(raw_from(v)).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }

    #[test]
    fn cap_without_limits_rejected() {
        let mut v = raw_json();
        v["hard_constraints"] = serde_json::json!([{"nutrient": "sugar_g", "severity": "hard"}]);
        let err = validate_profile(raw_from(v)).unwrap_err();
        assert_eq!(err.paths(), vec!["hard_constraints[0]"]);
    }

    #[test]
    fn well_formed_profile_validates() {
        assert_eq!(validate_profile(raw_from(raw_json())).unwrap(), profile());
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = raw_json();
        v["shoe_size"] = 44.into();
        assert!(serde_json::from_value::<UserProfile>(v).is_err());
    }

    #[test]
    fn builtin_data_loads() {
        let c = MealCatalog::builtin();
        assert!(c.len() >= 20);
        let g = GuidelineTarget::builtin();
        assert!(!g.targets.is_empty());
    }

    #[test]
    fn catalog_rejects_bad_gi_and_duplicates() {
        let mut a = meal(1, &[]);
        a.glycemic_index = 120.0;
        let b = meal(1, &[]);
        let err = MealCatalog::new(vec![a, b]).unwrap_err();
        assert_eq!(err.0.len(), 2);
    }

    #[test]
    fn adequacy_bounds() {
        let g = GuidelineTarget::new([(Nutrient::Kcal, 2000.0), (Nutrient::ProteinG, 80.0)].into(), 0.1).unwrap();
        let exact = Nutrients::from_pairs(&[(Nutrient::Kcal, 2000.0), (Nutrient::ProteinG, 80.0)]);
        assert_eq!(adequacy_score(&exact, &g, 1.0), 1.0);
        assert_eq!(adequacy_score(&exact.scaled(2.0), &g, 1.0), 0.0);
        assert_eq!(adequacy_score(&exact.scaled(0.25), &g, 0.25), 1.0);
    }

    #[test]
    fn clock_is_monotone() {
        let mut c = SimClock::start();
        assert_eq!(c.advance_to(0, 480).unwrap(), Tick(32));
        assert!(c.advance_to(0, 470).is_err());
        assert!(c.advance_to(0, 2000).is_err());
        assert_eq!(c.advance_to(1, 0).unwrap(), Tick(96));
        assert_eq!(Tick(96).day(), 1);
        assert_eq!(Tick::at(2, 495).minute_of_day(), 495);
    }

    fn arb_nutrients() -> impl Strategy<Value = Nutrients> {
        proptest::array::uniform7(0.0f64..500.0).prop_map(Nutrients)
    }

    proptest! {
        #[test]
        fn per_day_violations_monotone_in_intake(
            meal_n in arb_nutrients(),
            intake in arb_nutrients(),
            extra in arb_nutrients(),
            limit in 0.0f64..800.0,
        ) {
            let mut p = profile();
            for n in Nutrient::ALL {
                p.hard_constraints.push(NutrientCap::hard_day(n, limit));
            }
            let mut m = meal(0, &[]);
            m.nutrition = meal_n;
            let before = check_hard_constraints(&p, &m, &intake);
            let after = check_hard_constraints(&p, &m, &(intake + extra));
            for v in &before {
                prop_assert!(after.iter().any(|w| w.rule_name() == v.rule_name()));
            }
        }

        #[test]
        fn profile_serde_round_trip(
            tol in proptest::collection::vec(0.0f64..=1.0, 3),
            w in 0.0f64..=1.0,
            age in 0u32..110,
            slots in proptest::collection::btree_set(0u32..1440, 0..4),
        ) {
            let mut p = profile();
            p.age = age;
            p.sensory_tolerance = Modality::ALL.iter().copied().zip(tol).collect();
            p.preferences.insert("thai".into(), w);
            p.medication_slots = slots.into_iter().collect();
            let text = serde_json::to_string(&p).unwrap();
            let back: UserProfile = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
