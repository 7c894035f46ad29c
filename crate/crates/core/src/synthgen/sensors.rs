//! Physiological sample generator.
//!
//! Glucose is a phenotype baseline plus Gaussian noise plus a triangular
//! post-meal bump: linear rise to its peak 45 minutes after the meal, linear
//! decay to zero at 120 minutes. Bump height is
//! `bump_scale * gain(phenotype) * GI * carbs_g`. These are generator
//! defaults, not clinical claims.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Phenotype, PhysiologicalSample, UserProfile, MINUTES_PER_DAY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub first_minute: u32,
    pub last_minute: u32,
    pub every_minutes: u32,
    /// Multiplies every noise term; 0 gives noiseless series.
    pub noise_scale: f64,
    pub bump_scale: f64,
    pub bump_peak_minutes: u32,
    pub bump_end_minutes: u32,
    pub heart_rate_mean: f64,
    pub heart_rate_sd: f64,
    pub steps_per_hour: f64,
    pub steps_sd: f64,
    pub hydration_per_hour_ml: f64,
    pub hydration_sd: f64,
    /// Added to the sample covering a complied hydration reminder.
    pub hydration_event_ml: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            first_minute: 360,
            last_minute: 1380,
            every_minutes: 60,
            noise_scale: 1.0,
            bump_scale: 0.015,
            bump_peak_minutes: 45,
            bump_end_minutes: 120,
            heart_rate_mean: 72.0,
            heart_rate_sd: 6.0,
            steps_per_hour: 400.0,
            steps_sd: 150.0,
            hydration_per_hour_ml: 80.0,
            hydration_sd: 25.0,
            hydration_event_ml: 250.0,
        }
    }
}

impl SensorConfig {
    /// Mean and standard deviation of fasting glucose, mg/dL.
    pub fn glucose_baseline(p: Phenotype) -> (f64, f64) {
        match p {
            Phenotype::Diabetes => (140.0, 20.0),
            Phenotype::MixedCardiometabolic => (125.0, 15.0),
            Phenotype::Hypertension => (100.0, 10.0),
            Phenotype::None => (95.0, 10.0),
        }
    }

    pub fn bump_gain(p: Phenotype) -> f64 {
        match p {
            Phenotype::Diabetes => 1.0,
            Phenotype::MixedCardiometabolic => 0.8,
            _ => 0.4,
        }
    }

    fn bump(&self, since: i64, height: f64) -> f64 {
        let peak = self.bump_peak_minutes as f64;
        let end = self.bump_end_minutes as f64;
        let t = since as f64;
        if t < 0.0 || t >= end {
            0.0
        } else if t <= peak {
            height * t / peak
        } else {
            height * (end - t) / (end - peak)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EatenMeal {
    pub minute: u32,
    pub glycemic_index: f64,
    pub carbs_g: f64,
}

impl SensorConfig {
    /// Whether a sample is taken at this minute of the day.
    pub fn samples_at(&self, minute: u32) -> bool {
        let step = self.every_minutes.max(1);
        minute >= self.first_minute
            && minute <= self.last_minute.min(MINUTES_PER_DAY - 1)
            && (minute - self.first_minute).is_multiple_of(step)
    }
}

/// One sample at `minute`. Draws exactly four standard normals.
#[allow(clippy::too_many_arguments)]
pub fn sample_at(
    profile: &UserProfile,
    day: u32,
    minute: u32,
    disrupted: bool,
    meals: &[EatenMeal],
    hydration_events: &[u32],
    config: &SensorConfig,
    rng: &mut impl Rng,
) -> PhysiologicalSample {
    let (g_mean, g_sd) = SensorConfig::glucose_baseline(profile.phenotype);
    let gain = SensorConfig::bump_gain(profile.phenotype);
    let step = config.every_minutes.max(1);
    let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = config.noise_scale;
    let bump: f64 = meals
        .iter()
        .map(|m| config.bump(minute as i64 - m.minute as i64, config.bump_scale * gain * m.glycemic_index * m.carbs_g))
        .sum();
    let glucose = (g_mean + n * g_sd * z[0] + bump).clamp(40.0, 590.0);
    let hr_shift = if disrupted { 5.0 } else { 0.0 };
    let heart_rate = (config.heart_rate_mean + hr_shift + n * config.heart_rate_sd * z[1]).clamp(40.0, 200.0);
    let walk = if disrupted { 1.3 } else { 1.0 };
    let steps = (config.steps_per_hour * walk + n * config.steps_sd * z[2]).max(0.0).round();
    let events = hydration_events
        .iter()
        .filter(|&&e| e <= minute && e + step > minute)
        .count() as f64;
    let hydration = (config.hydration_per_hour_ml + n * config.hydration_sd * z[3]).max(0.0) + events * config.hydration_event_ml;
    PhysiologicalSample {
        t: day as u64 * MINUTES_PER_DAY as u64 + minute as u64,
        glucose,
        heart_rate,
        hydration,
        steps,
    }
}

/// Samples for one day, in minute order.
pub fn sample_sensors(
    profile: &UserProfile,
    day: u32,
    disrupted: bool,
    meals: &[EatenMeal],
    hydration_events: &[u32],
    config: &SensorConfig,
    rng: &mut impl Rng,
) -> Vec<PhysiologicalSample> {
    (0..MINUTES_PER_DAY)
        .filter(|&m| config.samples_at(m))
        .map(|m| sample_at(profile, day, m, disrupted, meals, hydration_events, config, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet() -> SensorConfig {
        SensorConfig {
            noise_scale: 0.0,
            every_minutes: 5,
            ..SensorConfig::default()
        }
    }

    #[test]
    fn no_meals_no_noise_is_flat() {
        let p = fixtures::profile();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_sensors(&p, 2, false, &[], &[], &quiet(), &mut rng);
        assert!(s.iter().all(|x| x.glucose == 95.0));
        assert!(s.iter().all(PhysiologicalSample::is_valid));
        assert_eq!(s[0].t, 2 * 1440 + 360);
    }

    #[test]
    fn single_meal_peaks_once_then_decays() {
        let mut p = fixtures::profile();
        p.phenotype = Phenotype::Diabetes;
        let meal = EatenMeal {
            minute: 720,
            glycemic_index: 70.0,
            carbs_g: 105.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_sensors(&p, 0, false, &[meal], &[], &quiet(), &mut rng);
        let max = s.iter().map(|x| x.glucose).fold(f64::MIN, f64::max);
        let at_max: Vec<u64> = s.iter().filter(|x| x.glucose == max).map(|x| x.t).collect();
        assert_eq!(at_max, vec![720 + 45]);
        assert!((max - (140.0 + 0.015 * 70.0 * 105.0)).abs() < 1e-9);
        let after: Vec<f64> = s.iter().filter(|x| x.t >= 765).map(|x| x.glucose).collect();
        assert!(after.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.iter().filter(|x| x.t >= 840).all(|x| x.glucose == 140.0));
    }

    #[test]
    fn hydration_events_land_in_their_hour() {
        let p = fixtures::profile();
        let c = SensorConfig {
            noise_scale: 0.0,
            ..SensorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_sensors(&p, 0, false, &[], &[430], &c, &mut rng);
        let by_minute = |m: u64| s.iter().find(|x| x.t == m).unwrap().hydration;
        assert_eq!(by_minute(420), 80.0);
        assert_eq!(by_minute(480), 80.0 + 250.0);
    }

    #[test]
    fn noisy_series_stay_valid() {
        let mut p = fixtures::profile();
        p.phenotype = Phenotype::Diabetes;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for day in 0..50 {
            let s = sample_sensors(&p, day, day % 3 == 0, &[], &[], &SensorConfig::default(), &mut rng);
            assert_eq!(s.len(), 18);
            assert!(s.iter().all(PhysiologicalSample::is_valid));
        }
    }
}
