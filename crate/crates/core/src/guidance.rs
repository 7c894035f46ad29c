//! Food guidance: recognize a food, assess it against the user's
//! constraints, and answer simple questions about it.
//!
//! Recognition and intent parsing are table-driven stubs behind the
//! [`Recognizer`] trait and [`IntentRules`]. Tables ship in `data/`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bus::{Blackboard, EntryBody, EntryId, Tier};
use crate::domain::{
    cap_breaches, check_hard_constraints, Disability, GuidelineTarget, MealCatalog, MealCatalogEntry,
    MealId, Nutrient, Nutrients, Tick, UserProfile,
};
use crate::error::LoadError;

/// What a recognizer can return: a catalog meal or a loose food tag.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoodLabel {
    Meal(MealId),
    Food(String),
}

impl std::fmt::Display for FoodLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FoodLabel::Meal(m) => write!(f, "{m}"),
            FoodLabel::Food(t) => f.write_str(t),
        }
    }
}

/// A food with everything guidance needs to reason about it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoodItem {
    pub label: FoodLabel,
    pub name: String,
    pub nutrition: Nutrients,
    pub glycemic_index: f64,
    pub cuisine: BTreeSet<String>,
    pub allergens: BTreeSet<String>,
    pub prep_steps: Vec<String>,
}

impl From<&MealCatalogEntry> for FoodItem {
    fn from(m: &MealCatalogEntry) -> Self {
        Self {
            label: FoodLabel::Meal(m.meal_id),
            name: m.name.clone(),
            nutrition: m.nutrition,
            glycemic_index: m.glycemic_index,
            cuisine: m.cuisine.clone(),
            allergens: m.allergens.clone(),
            prep_steps: m.prep_steps.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtraFood {
    tag: String,
    name: String,
    nutrition: Nutrients,
    glycemic_index: f64,
    #[serde(default)]
    cuisine: BTreeSet<String>,
    #[serde(default)]
    allergens: BTreeSet<String>,
    #[serde(default)]
    prep_steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GuidanceError {
    #[error("could not recognize descriptor {0:?}")]
    RecognitionFailed(String),
    #[error("no nutrition data for {0}")]
    UnknownLabel(FoodLabel),
    #[error("sorry, I did not understand the question; try asking whether you can eat it, how to cook it, what to eat instead, or what is in it")]
    UnknownIntent,
    #[error("{0} has no preparation steps")]
    NoPrepSteps(String),
    #[error("no substitute shares a cuisine with {0}")]
    NoSubstitute(String),
}

/// Catalog meals plus loose foods.
#[derive(Clone, Debug)]
pub struct NutritionDb {
    catalog: MealCatalog,
    foods: BTreeMap<String, FoodItem>,
}

impl NutritionDb {
    pub fn new(catalog: MealCatalog, extra: Vec<FoodItem>) -> Self {
        let foods = extra
            .into_iter()
            .filter_map(|f| match &f.label {
                FoodLabel::Food(t) => Some((t.clone(), f)),
                FoodLabel::Meal(_) => None,
            })
            .collect();
        Self { catalog, foods }
    }

    pub fn builtin() -> Self {
        Self::with_catalog(MealCatalog::builtin())
    }

    /// `catalog` plus the shipped loose-food table.
    pub fn with_catalog(catalog: MealCatalog) -> Self {
        let extra: Vec<ExtraFood> =
            serde_json::from_str(include_str!("../data/foods.json")).expect("builtin food table parses");
        Self::new(catalog, extra.into_iter().map(ExtraFood::into_item).collect())
    }

    pub fn catalog(&self) -> &MealCatalog {
        &self.catalog
    }

    pub fn resolve(&self, label: &FoodLabel) -> Result<FoodItem, GuidanceError> {
        match label {
            FoodLabel::Meal(id) => self.catalog.get(*id).map(FoodItem::from),
            FoodLabel::Food(tag) => self.foods.get(tag).cloned(),
        }
        .ok_or_else(|| GuidanceError::UnknownLabel(label.clone()))
    }
}

impl ExtraFood {
    fn into_item(self) -> FoodItem {
        FoodItem {
            label: FoodLabel::Food(self.tag),
            name: self.name,
            nutrition: self.nutrition,
            glycemic_index: self.glycemic_index,
            cuisine: self.cuisine,
            allergens: self.allergens,
            prep_steps: self.prep_steps,
        }
    }
}

/// Stands in for a food photo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoodDescriptor {
    pub descriptor_id: String,
    /// Known to the generator only; recognizers must not read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<FoodLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    pub label: FoodLabel,
    pub confidence: f64,
}

pub trait Recognizer {
    fn recognize(&self, d: &FoodDescriptor) -> Result<Recognition, GuidanceError>;
}

/// Exact table lookup with full confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct StubRecognizer {
    table: BTreeMap<String, FoodLabel>,
}

impl StubRecognizer {
    pub fn new(table: BTreeMap<String, FoodLabel>) -> Self {
        Self { table }
    }

    pub fn builtin() -> Self {
        Self::new(serde_json::from_str(include_str!("../data/recognizer.json")).expect("builtin recognizer table parses"))
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map(Self::new).map_err(|source| LoadError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl Recognizer for StubRecognizer {
    fn recognize(&self, d: &FoodDescriptor) -> Result<Recognition, GuidanceError> {
        self.table
            .get(&d.descriptor_id)
            .map(|label| Recognition {
                label: label.clone(),
                confidence: 1.0,
            })
            .ok_or_else(|| GuidanceError::RecognitionFailed(d.descriptor_id.clone()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Limit,
    Deny,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    /// Set only when the verdict is `limit`.
    pub suggested_portion_frac: Option<f64>,
}

/// Whether the hyperglycemia guard is up, as seen from guidance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GiGuard {
    pub entry: Option<EntryId>,
    pub gi_max: f64,
}

impl GiGuard {
    pub fn inactive(gi_max: f64) -> Self {
        Self { entry: None, gi_max }
    }

    pub fn from_board(board: &Blackboard, at: Tick, gi_max: f64) -> Self {
        let entry = board
            .latest_active(at, |e| {
                e.tier == Tier::P0Medical && matches!(e.body, EntryBody::GlucoseRisk { .. })
            })
            .map(|e| e.entry_id);
        Self { entry, gi_max }
    }

    pub fn blocks(&self, glycemic_index: f64) -> bool {
        self.entry.is_some() && glycemic_index > self.gi_max
    }
}

pub const PORTIONS: [f64; 3] = [0.75, 0.5, 0.25];
pub const LOW_CONFIDENCE: &str = "low_confidence";
pub const GI_GUARD: &str = "hyperglycemia_gi_guard";
/// Added when even a quarter portion breaches a soft limit.
pub const PORTION_FLOOR: &str = "portion_floor";

/// Soft reasons for eating `nutrition` on top of `intake_so_far`.
fn soft_reasons(
    nutrition: &Nutrients,
    profile: &UserProfile,
    intake_so_far: &Nutrients,
    guideline: &GuidelineTarget,
) -> Vec<String> {
    let mut out: Vec<String> = cap_breaches(profile.soft_caps(), nutrition, intake_so_far)
        .iter()
        .map(|v| v.rule_name().replacen("hard_cap", "soft_cap", 1))
        .collect();
    for (&n, &target) in &guideline.targets {
        if intake_so_far.get(n) + nutrition.get(n) > (1.0 + guideline.tolerance_frac) * target {
            out.push(format!("over_target.{n}"));
        }
    }
    out
}

/// Deny on any hard violation or an active glucose guard the food's GI
/// trips; limit on soft-cap or daily-target overshoot; approve otherwise.
pub fn assess_food(
    item: &FoodItem,
    profile: &UserProfile,
    intake_so_far: &Nutrients,
    guideline: &GuidelineTarget,
    guard: GiGuard,
) -> Assessment {
    let meal = MealCatalogEntry {
        meal_id: MealId(u32::MAX),
        name: item.name.clone(),
        nutrition: item.nutrition,
        glycemic_index: item.glycemic_index,
        cuisine: item.cuisine.clone(),
        texture: crate::domain::Texture::Mixed,
        temperature: crate::domain::Temperature::Hot,
        prep_steps: Vec::new(),
        allergens: item.allergens.clone(),
    };
    let mut hard: Vec<String> = check_hard_constraints(profile, &meal, intake_so_far)
        .iter()
        .map(|v| v.rule_name())
        .collect();
    if guard.blocks(item.glycemic_index) {
        hard.push(GI_GUARD.to_string());
    }
    if !hard.is_empty() {
        return Assessment {
            verdict: Verdict::Deny,
            reasons: hard,
            suggested_portion_frac: None,
        };
    }
    let mut reasons = soft_reasons(&item.nutrition, profile, intake_so_far, guideline);
    if reasons.is_empty() {
        return Assessment {
            verdict: Verdict::Approve,
            reasons,
            suggested_portion_frac: None,
        };
    }
    let portion = PORTIONS
        .into_iter()
        .find(|f| soft_reasons(&item.nutrition.scaled(*f), profile, intake_so_far, guideline).is_empty());
    if portion.is_none() {
        reasons.push(PORTION_FLOOR.to_string());
    }
    Assessment {
        verdict: Verdict::Limit,
        reasons,
        suggested_portion_frac: Some(portion.unwrap_or(PORTIONS[2])),
    }
}

/// Applies the confidence cutoff on top of [`assess_food`]: an uncertain
/// recognition can still be denied, but never approved outright.
pub fn assess_recognition(
    recognition: &Recognition,
    db: &NutritionDb,
    profile: &UserProfile,
    intake_so_far: &Nutrients,
    guideline: &GuidelineTarget,
    guard: GiGuard,
    confidence_cutoff: f64,
) -> Result<Assessment, GuidanceError> {
    let item = db.resolve(&recognition.label)?;
    let mut a = assess_food(&item, profile, intake_so_far, guideline, guard);
    if recognition.confidence < confidence_cutoff && a.verdict != Verdict::Deny {
        a.reasons.insert(0, LOW_CONFIDENCE.to_string());
        if a.verdict == Verdict::Approve {
            a.verdict = Verdict::Limit;
            a.suggested_portion_frac = Some(PORTIONS[0]);
        }
    }
    Ok(a)
}

/// Lowest-GI catalog meal other than `of` sharing a cuisine tag with
/// `cuisine` and accepted by `keep`. Ties go to the lower meal id.
pub fn lowest_gi_sharing<'a>(
    cuisine: &BTreeSet<String>,
    of: Option<MealId>,
    catalog: &'a MealCatalog,
    keep: impl Fn(&MealCatalogEntry) -> bool,
) -> Option<&'a MealCatalogEntry> {
    catalog
        .meals()
        .iter()
        .filter(|m| Some(m.meal_id) != of && !m.cuisine.is_disjoint(cuisine) && keep(m))
        .min_by(|a, b| a.glycemic_index.total_cmp(&b.glycemic_index).then(a.meal_id.cmp(&b.meal_id)))
}

pub fn lowest_gi_substitute<'a>(
    meal: &MealCatalogEntry,
    catalog: &'a MealCatalog,
    keep: impl Fn(&MealCatalogEntry) -> bool,
) -> Option<&'a MealCatalogEntry> {
    lowest_gi_sharing(&meal.cuisine, Some(meal.meal_id), catalog, keep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    CanIEat,
    HowToCook,
    Substitute,
    NutritionInfo,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentRule {
    pub intent: Intent,
    pub keywords: Vec<String>,
}

/// Ordered keyword table; the first rule with a matching keyword wins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntentRules(pub Vec<IntentRule>);

impl IntentRules {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../data/intent_rules.json")).expect("builtin intent rules parse")
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| LoadError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn normalize(text: &str) -> String {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    format!(" {} ", words.join(" "))
}

/// Keyword match on whole words, case-insensitive. Total.
pub fn parse_intent(query: &str, rules: &IntentRules) -> Intent {
    let q = normalize(query);
    rules
        .0
        .iter()
        .find(|r| r.keywords.iter().any(|k| q.contains(&normalize(k))))
        .map_or(Intent::Unknown, |r| r.intent)
}

/// Verbs that open an instruction clause.
const STEP_VERBS: &[&str] = &[
    "add", "arrange", "assemble", "bake", "blend", "boil", "brew", "bring", "build", "chop",
    "combine", "cook", "cool", "cover", "crack", "cut", "drain", "dress", "fold", "fry", "grill",
    "heat", "layer", "let", "measure", "melt", "mix", "peel", "plate", "pour", "rinse", "salt",
    "saute", "scoop", "season", "serve", "simmer", "slice", "soak", "spoon", "stack", "stir",
    "stir-fry", "take", "top", "toss", "warm", "wash", "whisk",
];

fn starts_with_verb(s: &str) -> bool {
    s.split_whitespace()
        .next()
        .is_some_and(|w| STEP_VERBS.contains(&w.to_lowercase().as_str()))
}

fn finish_step(s: &str) -> String {
    let s = s.trim().trim_end_matches('.');
    let mut c = s.chars();
    match c.next() {
        Some(f) => format!("{}{}.", f.to_uppercase(), c.as_str()),
        None => String::new(),
    }
}

/// Splits an instruction into one clause per step. Breaks on `, then`,
/// `; ` and on `and` when the word after it is an instruction verb and the
/// clause before it has an object (`Drain and rinse the chickpeas` stays whole).
pub fn split_clauses(step: &str) -> Vec<String> {
    let mut parts: Vec<String> = Vec::new();
    for chunk in step.split("; ") {
        for piece in chunk.split(", then ") {
            let mut current: Vec<&str> = Vec::new();
            let words: Vec<&str> = piece.split(' ').collect();
            let mut i = 0;
            while i < words.len() {
                let w = words[i];
                let splits = w == "and"
                    && current.len() >= 2
                    && words.get(i + 1).is_some_and(|n| starts_with_verb(n));
                if splits {
                    parts.push(current.join(" "));
                    current.clear();
                } else {
                    current.push(w);
                }
                i += 1;
            }
            if !current.is_empty() {
                parts.push(current.join(" "));
            }
        }
    }
    parts.iter().map(|p| finish_step(p.trim_end_matches(','))).filter(|p| !p.is_empty()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceResponse {
    pub intent: Intent,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<Assessment>,
}

/// The guidance agent: nutrition data plus the tables it answers from.
#[derive(Clone, Debug)]
pub struct GuidanceAgent {
    pub db: NutritionDb,
    pub intents: IntentRules,
    pub guideline: GuidelineTarget,
    pub confidence_cutoff: f64,
}

impl GuidanceAgent {
    pub fn new(db: NutritionDb, intents: IntentRules, guideline: GuidelineTarget) -> Self {
        Self {
            db,
            intents,
            guideline,
            confidence_cutoff: 0.5,
        }
    }

    pub fn builtin() -> Self {
        Self::new(NutritionDb::builtin(), IntentRules::builtin(), GuidelineTarget::builtin())
    }

    pub fn parse_intent(&self, query: &str) -> Intent {
        parse_intent(query, &self.intents)
    }

    /// Answers one intent about one food.
    pub fn respond(
        &self,
        intent: Intent,
        label: &FoodLabel,
        profile: &UserProfile,
        intake_so_far: &Nutrients,
        guard: GiGuard,
    ) -> Result<GuidanceResponse, GuidanceError> {
        let item = self.db.resolve(label)?;
        match intent {
            Intent::Unknown => Err(GuidanceError::UnknownIntent),
            Intent::HowToCook => {
                if item.prep_steps.is_empty() {
                    return Err(GuidanceError::NoPrepSteps(item.name));
                }
                let steps: Vec<String> = if profile.has(Disability::Cognitive) {
                    item.prep_steps.iter().flat_map(|s| split_clauses(s)).collect()
                } else {
                    item.prep_steps.iter().map(|s| finish_step(s)).collect()
                };
                Ok(GuidanceResponse {
                    intent,
                    text: format!("Here is how to make {} in {} steps.", item.name, steps.len()),
                    steps,
                    assessment: None,
                })
            }
            Intent::Substitute => {
                let sub = lowest_gi_sharing(&item.cuisine, item_meal_id(&item), self.db.catalog(), |m| {
                    check_hard_constraints(profile, m, intake_so_far).is_empty()
                })
                .ok_or_else(|| GuidanceError::NoSubstitute(item.name.clone()))?;
                Ok(GuidanceResponse {
                    intent,
                    text: format!(
                        "Instead of {}, try {} (glycemic index {}).",
                        item.name, sub.name, sub.glycemic_index
                    ),
                    steps: Vec::new(),
                    assessment: None,
                })
            }
            Intent::CanIEat => {
                let a = assess_food(&item, profile, intake_so_far, &self.guideline, guard);
                let text = match a.verdict {
                    Verdict::Approve => format!("Yes, {} fits your plan today.", item.name),
                    Verdict::Limit => format!(
                        "You can have about {:.0}% of a serving of {} ({}).",
                        a.suggested_portion_frac.unwrap_or(1.0) * 100.0,
                        item.name,
                        a.reasons.join(", ")
                    ),
                    Verdict::Deny => format!("Please avoid {} ({}).", item.name, a.reasons.join(", ")),
                };
                Ok(GuidanceResponse {
                    intent,
                    text,
                    steps: Vec::new(),
                    assessment: Some(a),
                })
            }
            Intent::NutritionInfo => {
                let facts: Vec<String> = Nutrient::ALL
                    .iter()
                    .map(|n| format!("{n} {}", item.nutrition.get(*n)))
                    .collect();
                Ok(GuidanceResponse {
                    intent,
                    text: format!(
                        "One serving of {} has {}; glycemic index {}.",
                        item.name,
                        facts.join(", "),
                        item.glycemic_index
                    ),
                    steps: Vec::new(),
                    assessment: None,
                })
            }
        }
    }
}

fn item_meal_id(item: &FoodItem) -> Option<MealId> {
    match item.label {
        FoodLabel::Meal(m) => Some(m),
        FoodLabel::Food(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{fixtures, NutrientCap, Severity};
    use proptest::prelude::*;

    fn diabetic() -> UserProfile {
        let mut p = fixtures::profile();
        p.hard_constraints.push(NutrientCap::hard_item(Nutrient::SugarG, 15.0));
        p
    }

    fn candy() -> FoodItem {
        NutritionDb::builtin().resolve(&FoodLabel::Food("candy_bar".into())).unwrap()
    }

    #[test]
    fn stub_recognizes_known_descriptors() {
        let r = StubRecognizer::builtin();
        let d = FoodDescriptor {
            descriptor_id: "img-oatmeal-001".into(),
            truth: None,
        };
        assert_eq!(
            r.recognize(&d),
            Ok(Recognition {
                label: FoodLabel::Food("oatmeal".into()),
                confidence: 1.0
            })
        );
        let unknown = FoodDescriptor {
            descriptor_id: "img-nope".into(),
            truth: None,
        };
        assert!(matches!(r.recognize(&unknown), Err(GuidanceError::RecognitionFailed(_))));
    }

    #[test]
    fn sugar_cap_denies_candy() {
        let a = assess_food(&candy(), &diabetic(), &Nutrients::zero(), &GuidelineTarget::builtin(), GiGuard::inactive(55.0));
        assert_eq!(a.verdict, Verdict::Deny);
        assert_eq!(a.reasons, vec!["hard_cap.sugar_g.per_item".to_string()]);
    }

    #[test]
    fn modest_food_is_approved_for_unconstrained_profile() {
        let apple = NutritionDb::builtin().resolve(&FoodLabel::Food("apple".into())).unwrap();
        let a = assess_food(&apple, &fixtures::profile(), &Nutrients::zero(), &GuidelineTarget::builtin(), GiGuard::inactive(55.0));
        assert_eq!(a.verdict, Verdict::Approve);
        assert!(a.reasons.is_empty());
    }

    #[test]
    fn soft_sodium_cap_picks_largest_clearing_portion() {
        let mut p = fixtures::profile();
        p.hard_constraints.push(NutrientCap::soft(Nutrient::SodiumMg, Some(700.0), None));
        let crisps = NutritionDb::builtin().resolve(&FoodLabel::Food("salted_crisps".into())).unwrap();
        let a = assess_food(&crisps, &p, &Nutrients::zero(), &GuidelineTarget::builtin(), GiGuard::inactive(55.0));
        // Brute force: 1100 mg at fractions 0.75, 0.5, 0.25 is 825, 550, 275.
        let expected = PORTIONS.into_iter().find(|f| 1100.0 * f <= 700.0).unwrap();
        assert_eq!(expected, 0.5);
        assert_eq!(a.verdict, Verdict::Limit);
        assert_eq!(a.suggested_portion_frac, Some(expected));
    }

    #[test]
    fn low_confidence_forces_limit() {
        let db = NutritionDb::builtin();
        let rec = Recognition {
            label: FoodLabel::Food("apple".into()),
            confidence: 0.4,
        };
        let a = assess_recognition(&rec, &db, &fixtures::profile(), &Nutrients::zero(), &GuidelineTarget::builtin(), GiGuard::inactive(55.0), 0.5).unwrap();
        assert_eq!(a.verdict, Verdict::Limit);
        assert_eq!(a.reasons[0], LOW_CONFIDENCE);
    }

    #[test]
    fn active_guard_denies_high_gi() {
        let mut board = Blackboard::new();
        let id = board.post_entry(
            crate::bus::NewEntry::new(
                Tier::P0Medical,
                crate::bus::EntryKind::Veto,
                EntryBody::GlucoseRisk {
                    glucose: 200.0,
                    guard_level: 180.0,
                    sample_t: 0,
                },
                Tick(0),
                Tick(8),
                crate::bus::AgentId::Coordinator,
            )
            .unwrap(),
        );
        let guard = GiGuard::from_board(&board, Tick(4), 55.0);
        assert_eq!(guard.entry, Some(id));
        let a = assess_food(&candy(), &fixtures::profile(), &Nutrients::zero(), &GuidelineTarget::builtin(), guard);
        assert_eq!(a.verdict, Verdict::Deny);
        assert!(a.reasons.contains(&GI_GUARD.to_string()));
        assert_eq!(GiGuard::from_board(&board, Tick(9), 55.0).entry, None);
    }

    #[test]
    fn intents_follow_the_rule_table() {
        let r = IntentRules::builtin();
        assert_eq!(parse_intent("can I eat this?", &r), Intent::CanIEat);
        assert_eq!(parse_intent("how do I prepare lentils", &r), Intent::HowToCook);
        assert_eq!(parse_intent("what can I have instead", &r), Intent::CanIEat);
        assert_eq!(parse_intent("swap this for something", &r), Intent::Substitute);
        assert_eq!(parse_intent("how much sugar is in it", &r), Intent::NutritionInfo);
        assert_eq!(parse_intent("blargh", &r), Intent::Unknown);
        assert_eq!(parse_intent("cookie", &r), Intent::Unknown);
    }

    #[test]
    fn cognitive_users_get_one_clause_per_step() {
        let agent = GuidanceAgent::builtin();
        let mut p = fixtures::profile();
        p.disabilities.insert(Disability::Cognitive);
        for meal in agent.db.catalog().meals() {
            let r = agent
                .respond(Intent::HowToCook, &FoodLabel::Meal(meal.meal_id), &p, &Nutrients::zero(), GiGuard::inactive(55.0))
                .unwrap();
            assert!(r.steps.len() >= meal.prep_steps.len());
            for step in &r.steps {
                let lower = step.to_lowercase();
                assert!(starts_with_verb(&lower), "{step}");
                assert!(!lower.contains(", then ") && !lower.contains("; "), "{step}");
                let words: Vec<&str> = lower.trim_end_matches('.').split(' ').collect();
                let extra_clause = words
                    .windows(2)
                    .enumerate()
                    .any(|(i, w)| i >= 2 && w[0] == "and" && starts_with_verb(w[1]));
                assert!(!extra_clause, "{step}");
            }
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(
            split_clauses("Boil salted water and cook the pasta for ten minutes"),
            vec!["Boil salted water.", "Cook the pasta for ten minutes."]
        );
        assert_eq!(split_clauses("Drain and rinse the chickpeas"), vec!["Drain and rinse the chickpeas."]);
        assert_eq!(
            split_clauses("Drain the pasta, then toss it with the sauce"),
            vec!["Drain the pasta.", "Toss it with the sauce."]
        );
    }

    #[test]
    fn substitute_for_pasta_is_the_min_gi_italian_meal() {
        let agent = GuidanceAgent::builtin();
        let catalog = agent.db.catalog();
        let pasta = catalog.by_name("Pasta al pomodoro").unwrap();
        assert_eq!(pasta.glycemic_index, 70.0);
        let oracle = catalog
            .meals()
            .iter()
            .filter(|m| m.meal_id != pasta.meal_id && m.cuisine.contains("italian"))
            .min_by(|a, b| a.glycemic_index.partial_cmp(&b.glycemic_index).unwrap())
            .unwrap();
        let r = agent
            .respond(Intent::Substitute, &FoodLabel::Meal(pasta.meal_id), &fixtures::profile(), &Nutrients::zero(), GiGuard::inactive(55.0))
            .unwrap();
        assert!(r.text.contains(&oracle.name), "{}", r.text);
    }

    #[test]
    fn unknown_intent_and_missing_steps_are_errors() {
        let agent = GuidanceAgent::builtin();
        let p = fixtures::profile();
        let g = GiGuard::inactive(55.0);
        assert_eq!(
            agent.respond(Intent::Unknown, &FoodLabel::Food("apple".into()), &p, &Nutrients::zero(), g),
            Err(GuidanceError::UnknownIntent)
        );
        assert!(matches!(
            agent.respond(Intent::HowToCook, &FoodLabel::Food("apple".into()), &p, &Nutrients::zero(), g),
            Err(GuidanceError::NoPrepSteps(_))
        ));
    }

    fn arb_profile() -> impl Strategy<Value = UserProfile> {
        (
            prop::option::of(5.0f64..60.0),
            prop::option::of(200.0f64..2000.0),
            prop::option::of(300.0f64..3000.0),
            any::<bool>(),
        )
            .prop_map(|(sugar, sodium_item, sodium_soft, nut_allergy)| {
                let mut p = fixtures::profile();
                if let Some(s) = sugar {
                    p.hard_constraints.push(NutrientCap::hard_item(Nutrient::SugarG, s));
                }
                if let Some(s) = sodium_item {
                    p.hard_constraints.push(NutrientCap::hard_item(Nutrient::SodiumMg, s));
                }
                if let Some(s) = sodium_soft {
                    p.hard_constraints.push(NutrientCap::soft(Nutrient::SodiumMg, Some(s), Some(s * 2.0)));
                }
                if nut_allergy {
                    p.allergens.insert("nuts".into());
                }
                p
            })
    }

    #[test]
    fn verdict_consistency_over_catalog_grid() {
        let db = NutritionDb::builtin();
        let g = GuidelineTarget::builtin();
        let profiles: Vec<UserProfile> = [None, Some(15.0)]
            .into_iter()
            .flat_map(|sugar| {
                [None, Some(900.0)].into_iter().map(move |sodium| {
                    let mut p = fixtures::profile();
                    if let Some(s) = sugar {
                        p.hard_constraints.push(NutrientCap::hard_item(Nutrient::SugarG, s));
                    }
                    if let Some(s) = sodium {
                        p.hard_constraints.push(NutrientCap::hard_item(Nutrient::SodiumMg, s));
                        p.hard_constraints.push(NutrientCap::soft(Nutrient::SodiumMg, None, Some(2000.0)));
                    }
                    p
                })
            })
            .collect();
        for p in &profiles {
            for m in db.catalog().meals() {
                let a = assess_food(&FoodItem::from(m), p, &Nutrients::zero(), &g, GiGuard::inactive(55.0));
                let hard = check_hard_constraints(p, m, &Nutrients::zero());
                assert_eq!(a.verdict == Verdict::Deny, !hard.is_empty());
            }
        }
    }

    proptest! {
        #[test]
        fn assessment_invariants(
            p in arb_profile(),
            idx in 0usize..23,
            prior in prop::collection::vec(0.0f64..1500.0, 7),
        ) {
            let db = NutritionDb::builtin();
            let g = GuidelineTarget::builtin();
            let meal = &db.catalog().meals()[idx];
            let mut intake = Nutrients::zero();
            for (n, q) in Nutrient::ALL.iter().zip(prior) {
                intake.set(*n, q);
            }
            let item = FoodItem::from(meal);
            let a = assess_food(&item, &p, &intake, &g, GiGuard::inactive(55.0));
            let hard = check_hard_constraints(&p, meal, &intake);
            prop_assert_eq!(a.verdict == Verdict::Deny, !hard.is_empty());
            if a.verdict == Verdict::Limit {
                prop_assert!(!a.reasons.is_empty());
                prop_assert!(a.reasons.iter().all(|r| !r.starts_with("hard_cap") && !r.starts_with("allergen")));
                let f = a.suggested_portion_frac.unwrap();
                prop_assert!(PORTIONS.contains(&f));
                let cleared = cap_breaches(
                    p.hard_constraints.iter().filter(|c| c.severity == Severity::Soft),
                    &item.nutrition.scaled(f),
                    &intake,
                )
                .is_empty();
                prop_assert!(cleared || a.reasons.contains(&PORTION_FLOOR.to_string()));
            } else {
                prop_assert!(a.suggested_portion_frac.is_none());
            }
        }

        #[test]
        fn parse_intent_is_total(q in ".{0,60}") {
            let r = IntentRules::builtin();
            let a = parse_intent(&q, &r);
            prop_assert_eq!(a, parse_intent(&q, &r));
        }
    }
}
