//! Seeded synthetic cohorts and the behavior models the agents learn against.
//!
//! Each user draws from their own streams (see [`crate::rng`]), so a user's
//! profile, behavior and daily randomness do not depend on how many other
//! users exist or in which order they are simulated.

mod export;
mod responder;
mod sensors;

use std::collections::{BTreeMap, BTreeSet};

use rand::{seq::IndexedRandom, Rng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use export::{read_cohort, read_features_csv, read_trace, write_cohort, write_features_csv, write_trace, FeatureRow, TraceRecord, FEATURE_COLUMNS};
pub use responder::{logistic, p_comply, respond_to_reminder, DayState, ResponderConfig};
pub use sensors::{sample_at, sample_sensors, EatenMeal, SensorConfig};

use crate::domain::{
    Disability, Gender, Modality, Neuro, Nutrient, NutrientCap, Phenotype, Temperature, Texture, UserId,
    UserProfile, ValidationError, ValidationErrors,
};
use crate::rng::{stream, Subsystem};

/// Cuisine tags used for cultural diets and preferences.
pub const CUISINES: [&str; 8] = [
    "american",
    "east_asian",
    "italian",
    "latin",
    "mediterranean",
    "middle_eastern",
    "south_asian",
    "african",
];

/// Allergens a generated user may carry.
pub const ALLERGENS: [&str; 5] = ["dairy", "egg", "fish", "gluten", "nuts"];

const MIX_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_users: u32,
    pub days: u32,
    /// Probabilities over phenotypes; must sum to 1.
    pub phenotype_mix: BTreeMap<Phenotype, f64>,
    /// Independent per-disability probabilities; a user may draw several.
    pub disability_mix: BTreeMap<Disability, f64>,
    /// Probabilities over neurotypes; must sum to 1.
    pub neuro_mix: BTreeMap<Neuro, f64>,
    /// Share of users that get one injected 3-day meal-skip anomaly.
    pub anomaly_frac: f64,
    pub anomaly_days: u32,
    /// Per-day probability of a contextual disruption (away from home).
    pub disruption_rate: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_users: 500,
            days: 56,
            phenotype_mix: [
                (Phenotype::Diabetes, 0.4),
                (Phenotype::Hypertension, 0.35),
                (Phenotype::MixedCardiometabolic, 0.25),
            ]
            .into(),
            disability_mix: [
                (Disability::Physical, 0.2),
                (Disability::SensoryVisual, 0.15),
                (Disability::SensoryAuditory, 0.15),
                (Disability::Cognitive, 0.15),
            ]
            .into(),
            neuro_mix: [(Neuro::None, 0.5), (Neuro::Asd, 0.25), (Neuro::Adhd, 0.25)].into(),
            anomaly_frac: 0.2,
            anomaly_days: 3,
            disruption_rate: 0.05,
            seed: 42,
        }
    }
}

fn check_mix<K>(path: &str, mix: &BTreeMap<K, f64>, errs: &mut Vec<ValidationError>) {
    let mut sum = 0.0;
    for (i, p) in mix.values().enumerate() {
        if !(0.0..=1.0).contains(p) {
            errs.push(ValidationError {
                path: format!("{path}[{i}]"),
                message: format!("{p} outside [0, 1]"),
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > MIX_EPS {
        errs.push(ValidationError {
            path: path.to_string(),
            message: format!("probabilities sum to {sum}, expected 1"),
        });
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        if self.n_users == 0 {
            errs.push(ValidationError {
                path: "n_users".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.days == 0 {
            errs.push(ValidationError {
                path: "days".into(),
                message: "must be at least 1".into(),
            });
        }
        check_mix("phenotype_mix", &self.phenotype_mix, &mut errs);
        check_mix("neuro_mix", &self.neuro_mix, &mut errs);
        for (d, p) in &self.disability_mix {
            if !(0.0..=1.0).contains(p) {
                errs.push(ValidationError {
                    path: format!("disability_mix.{}", d.name()),
                    message: format!("{p} outside [0, 1]"),
                });
            }
        }
        for (path, p) in [("anomaly_frac", self.anomaly_frac), ("disruption_rate", self.disruption_rate)] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(ValidationError {
                    path: path.into(),
                    message: format!("{p} outside [0, 1]"),
                });
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorModel {
    /// Logit offset shared by every reminder.
    pub base_compliance: f64,
    pub modality_affinity: BTreeMap<Modality, f64>,
    /// Logit cost per reminder already sent that day.
    pub fatigue_rate: f64,
    pub disruption_rate: f64,
    /// Logit offsets on meal acceptance, per cuisine tag.
    pub meal_acceptance_bias: BTreeMap<String, f64>,
}

impl BehaviorModel {
    pub fn affinity(&self, m: Modality) -> f64 {
        self.modality_affinity.get(&m).copied().unwrap_or(0.0)
    }

    /// Mean bias over the meal's cuisine tags, 0 with no tags.
    pub fn acceptance_bias<'a>(&self, tags: impl IntoIterator<Item = &'a String>) -> f64 {
        let (sum, n) = tags
            .into_iter()
            .fold((0.0, 0usize), |(s, n), t| (s + self.meal_acceptance_bias.get(t).copied().unwrap_or(0.0), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Probability that a served meal is eaten: `logistic(2 + bias)`.
    pub fn p_accept<'a>(&self, tags: impl IntoIterator<Item = &'a String>) -> f64 {
        logistic(2.0 + self.acceptance_bias(tags))
    }
}

/// One generated user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortMember {
    pub profile: UserProfile,
    pub behavior: BehaviorModel,
    /// First day of the injected meal-skip anomaly, if any.
    pub anomaly_start: Option<u32>,
}

impl CohortMember {
    pub fn in_anomaly(&self, day: u32, anomaly_days: u32) -> bool {
        self.anomaly_start
            .is_some_and(|s| day >= s && day < s + anomaly_days)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub spec: CohortSpec,
    pub members: Vec<CohortMember>,
}

fn draw_weighted<K: Copy>(mix: &BTreeMap<K, f64>, rng: &mut impl Rng) -> K {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (k, p) in mix {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(*k);
        if u < acc {
            return *k;
        }
    }
    last.expect("validated mix has positive mass")
}

fn phenotype_caps(p: Phenotype) -> Vec<NutrientCap> {
    let sugar = NutrientCap::hard_item(Nutrient::SugarG, 15.0);
    let sodium = NutrientCap::hard_item(Nutrient::SodiumMg, 900.0);
    let sodium_day = NutrientCap::soft(Nutrient::SodiumMg, None, Some(2000.0));
    match p {
        Phenotype::Diabetes => vec![sugar],
        Phenotype::Hypertension => vec![sodium, sodium_day],
        Phenotype::MixedCardiometabolic => vec![sugar, sodium, sodium_day],
        Phenotype::None => vec![],
    }
}

fn generate_profile(spec: &CohortSpec, index: u32) -> (UserProfile, Option<u32>) {
    let mut rng = stream(spec.seed, index as u64, Subsystem::Profile);
    let phenotype = draw_weighted(&spec.phenotype_mix, &mut rng);
    let neuro = draw_weighted(&spec.neuro_mix, &mut rng);
    let disabilities: BTreeSet<Disability> = spec
        .disability_mix
        .iter()
        .filter(|(_, p)| rng.random::<f64>() < **p)
        .map(|(d, _)| *d)
        .collect();

    let age = rng.random_range(30..=80);
    let gender = *[Gender::Female, Gender::Male, Gender::Unspecified]
        .choose_weighted(&mut rng, |g| if *g == Gender::Unspecified { 0.05 } else { 0.475 })
        .expect("non-empty");

    let n_diet = rng.random_range(1..=2);
    let cultural_diet: BTreeSet<String> = CUISINES
        .choose_multiple(&mut rng, n_diet)
        .map(|c| c.to_string())
        .collect();
    let preferences: BTreeMap<String, f64> = CUISINES
        .iter()
        .map(|c| {
            let w = if cultural_diet.contains(*c) {
                rng.random_range(0.7..1.0)
            } else {
                rng.random_range(0.1..0.5)
            };
            (c.to_string(), w)
        })
        .collect();

    let mut sensory_tolerance: BTreeMap<Modality, f64> =
        Modality::ALL.iter().map(|&m| (m, rng.random_range(0.5..1.0))).collect();
    if disabilities.contains(&Disability::SensoryAuditory) {
        sensory_tolerance.insert(Modality::Audio, rng.random_range(0.0..0.25));
    }
    if disabilities.contains(&Disability::SensoryVisual) {
        sensory_tolerance.insert(Modality::Visual, rng.random_range(0.0..0.25));
    }
    if neuro == Neuro::Asd {
        // Sound sensitivity: lower, but usable, audio tolerance.
        let t = sensory_tolerance[&Modality::Audio].min(rng.random_range(0.3..0.5));
        sensory_tolerance.insert(Modality::Audio, t);
    }

    let mut texture_aversions = BTreeSet::new();
    if neuro == Neuro::Asd && rng.random::<f64>() < 0.5 {
        texture_aversions.insert(*[Texture::Crunchy, Texture::Mixed].choose(&mut rng).expect("non-empty"));
    }
    if disabilities.contains(&Disability::Physical) && rng.random::<f64>() < 0.5 {
        texture_aversions.insert(Texture::Crunchy);
    }
    let mut temperature_aversions = BTreeSet::new();
    if neuro == Neuro::Asd && rng.random::<f64>() < 0.2 {
        temperature_aversions.insert(Temperature::Hot);
    }

    let allergens: BTreeSet<String> = if rng.random::<f64>() < 0.15 {
        [ALLERGENS.choose(&mut rng).expect("non-empty").to_string()].into()
    } else {
        BTreeSet::new()
    };

    let medication_slots = match phenotype {
        Phenotype::MixedCardiometabolic => vec![480, 780, 1200],
        Phenotype::None => vec![480],
        _ => vec![480, 1200],
    };

    let anomaly_start = if spec.days >= 2 * spec.anomaly_days.max(1) && rng.random::<f64>() < spec.anomaly_frac {
        Some(rng.random_range(spec.days / 2..=spec.days - spec.anomaly_days))
    } else {
        None
    };

    let profile = UserProfile {
        user_id: UserId(index),
        age,
        gender,
        cultural_diet,
        phenotype,
        disabilities,
        neuro,
        sensory_tolerance,
        preferences,
        hard_constraints: phenotype_caps(phenotype),
        allergens,
        medication_slots,
        texture_aversions,
        temperature_aversions,
    };
    (profile, anomaly_start)
}

fn generate_behavior(spec: &CohortSpec, profile: &UserProfile) -> BehaviorModel {
    let mut rng = stream(spec.seed, profile.user_id.0 as u64, Subsystem::Behavior);
    let base = Normal::new(0.4, 0.4).expect("valid").sample(&mut rng);
    let usable: Vec<Modality> = Modality::ALL
        .into_iter()
        .filter(|m| profile.tolerance(*m) >= 0.3)
        .collect();
    let preferred = usable.choose(&mut rng).copied();
    let other = Normal::new(-0.6, 0.3).expect("valid");
    let modality_affinity = Modality::ALL
        .into_iter()
        .map(|m| {
            let v = other.sample(&mut rng);
            (m, if Some(m) == preferred { 1.0 } else { v })
        })
        .collect();
    let fatigue_rate = rng.random_range(0.03..0.06);
    let bias = Normal::new(0.0, 0.5).expect("valid");
    let meal_acceptance_bias = CUISINES
        .iter()
        .map(|c| {
            let pref = profile.preferences.get(*c).copied().unwrap_or(0.0);
            (c.to_string(), bias.sample(&mut rng) + (pref - 0.5))
        })
        .collect();
    BehaviorModel {
        base_compliance: base,
        modality_affinity,
        fatigue_rate,
        disruption_rate: spec.disruption_rate,
        meal_acceptance_bias,
    }
}

/// Deterministic under `spec.seed`; user `i` depends only on the seed and `i`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort, ValidationErrors> {
    spec.validate()?;
    let members = (0..spec.n_users)
        .map(|i| {
            let (profile, anomaly_start) = generate_profile(spec, i);
            let behavior = generate_behavior(spec, &profile);
            CohortMember {
                profile,
                behavior,
                anomaly_start,
            }
        })
        .collect();
    Ok(Cohort {
        spec: spec.clone(),
        members,
    })
}

/// Counts per stratum label.
pub fn stratum_counts(cohort: &Cohort) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for m in &cohort.members {
        let p = &m.profile;
        *out.entry(format!("phenotype:{}", p.phenotype.name())).or_insert(0) += 1;
        *out.entry(format!("neuro:{}", p.neuro.name())).or_insert(0) += 1;
        *out.entry(format!("disability:{}", disability_label(&p.disabilities))).or_insert(0) += 1;
    }
    out
}

/// Disabilities joined with `+`, or `none`.
pub fn disability_label(d: &BTreeSet<Disability>) -> String {
    if d.is_empty() {
        "none".into()
    } else {
        d.iter().map(|x| x.name()).collect::<Vec<_>>().join("+")
    }
}
