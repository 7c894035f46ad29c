//! Intake and physiology monitoring.
//!
//! A per-user recurrent model is fit on the first weeks of daily features and
//! then predicts each next day's adherence. A day whose observed adherence
//! strays more than `tau = tau_mult * sigma_residual` from the prediction
//! raises an alert; past `2 * tau`, or with a glucose z-score above 3, the
//! alert goes to the caregiver.
//!
//! [`baseline_detect`] is a rolling z-score detector used as a cross-check,
//! and [`naive_detect`] is the fixed-threshold monitor the learned one is
//! compared against.

mod gru;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use gru::{gru_forward, gru_train, loss_and_grad, mse, Gate, GruError, GruParams, TrainReport, Window};

use crate::domain::{Nutrients, UserId};

pub const INPUT_DIM: usize = 5;
/// Lower bound on the residual spread used for the threshold.
pub const SIGMA_FLOOR: f64 = 0.01;
/// Lower bound on rolling and standardization spreads.
pub const STD_FLOOR: f64 = 1e-3;

/// Raw per-user daily totals, logged on `monitor.features` and exported as
/// one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyTotals {
    pub user: UserId,
    pub day: u32,
    pub slots: u32,
    pub complied: u32,
    pub adherence: f64,
    pub glucose_mean: f64,
    pub heart_rate_mean: f64,
    pub steps: f64,
    pub hydration_ml: f64,
    pub meals_eaten: u32,
    pub consumed: Nutrients,
    pub disrupted: bool,
    /// Inside an injected meal-skip anomaly.
    pub anomaly: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayFeature {
    pub adherence: f64,
    pub glucose_z: f64,
    pub hr_z: f64,
    pub steps_z: f64,
    pub hydration_frac: f64,
}

impl DayFeature {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.adherence, self.glucose_z, self.hr_z, self.steps_z, self.hydration_frac]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn fit(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        }
    }

    pub fn z(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Per-user z-score constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub glucose: MeanStd,
    pub heart_rate: MeanStd,
    pub steps: MeanStd,
    pub hydration_target_ml: f64,
}

impl Standardizer {
    pub fn fit(days: &[DailyTotals], hydration_target_ml: f64) -> Self {
        Self {
            glucose: MeanStd::fit(days.iter().map(|d| d.glucose_mean)),
            heart_rate: MeanStd::fit(days.iter().map(|d| d.heart_rate_mean)),
            steps: MeanStd::fit(days.iter().map(|d| d.steps)),
            hydration_target_ml,
        }
    }

    pub fn feature(&self, d: &DailyTotals) -> DayFeature {
        DayFeature {
            adherence: d.adherence.clamp(0.0, 1.0),
            glucose_z: self.glucose.z(d.glucose_mean),
            hr_z: self.heart_rate.z(d.heart_rate_mean),
            steps_z: self.steps.z(d.steps),
            hydration_frac: (d.hydration_ml / self.hydration_target_ml).clamp(0.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorMode {
    /// Learned recurrent predictor.
    Gru,
    /// Caregiver alert whenever adherence falls below a fixed threshold.
    NaiveThreshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub hidden: usize,
    pub window: usize,
    pub lr: f64,
    pub epochs: usize,
    pub tau_mult: f64,
    /// Trailing training windows kept out of the fit and used only to
    /// measure the residual spread. 0 uses the training residual.
    pub holdout_windows: usize,
    /// The model is fit once this many days have been observed; detection
    /// (learned or naive) starts on the following day.
    pub train_days: usize,
    /// Days used for the z-score constants.
    pub standardize_days: usize,
    pub hydration_target_ml: f64,
    pub glucose_z_caregiver: f64,
    pub naive_threshold: f64,
    pub mode: MonitorMode,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            window: 14,
            lr: 0.05,
            epochs: 500,
            tau_mult: 2.0,
            holdout_windows: 4,
            train_days: 28,
            standardize_days: 14,
            hydration_target_ml: 2000.0,
            glucose_z_caregiver: 3.0,
            naive_threshold: 0.5,
            mode: MonitorMode::Gru,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        let ok = self.hidden >= 1
            && self.window >= 2
            && self.lr > 0.0
            && self.tau_mult > 0.0
            && self.train_days > self.window + self.holdout_windows
            && self.standardize_days >= 1
            && self.standardize_days <= self.train_days
            && self.hydration_target_ml > 0.0
            && (0.0..=1.0).contains(&self.naive_threshold);
        if ok {
            Ok(())
        } else {
            Err(MonitorError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonitorError {
    #[error("monitor has no trained parameters")]
    Untrained,
    #[error("need {needed} days of history, have {have}")]
    InsufficientHistory { needed: usize, have: usize },
    #[error("monitor config out of range")]
    InvalidConfig,
    #[error(transparent)]
    Gru(#[from] GruError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertSeverity {
    NotifyUser,
    NotifyCaregiver,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Gru,
    Baseline,
    Naive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub user: UserId,
    pub day: u32,
    pub detector: Detector,
    pub predicted: f64,
    pub observed: f64,
    pub deviation: f64,
    pub threshold: f64,
    pub severity: AlertSeverity,
}

/// Fitted parameters plus the residual spread that sets the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorModel {
    pub params: GruParams,
    /// `None` until the model has been trained.
    pub sigma_residual: Option<f64>,
}

impl MonitorModel {
    pub fn tau(&self, config: &MonitorConfig) -> Result<f64, MonitorError> {
        self.sigma_residual
            .map(|s| config.tau_mult * s.max(SIGMA_FLOOR))
            .ok_or(MonitorError::Untrained)
    }
}

/// Sliding windows over `features`: each window of `window` days predicts
/// the adherence of the day after it.
pub fn training_windows(features: &[DayFeature], window: usize) -> Vec<Window> {
    if features.len() <= window {
        return Vec::new();
    }
    (0..features.len() - window)
        .map(|i| Window {
            inputs: features[i..i + window].iter().map(DayFeature::to_vec).collect(),
            target: features[i + window].adherence,
        })
        .collect()
}

/// Fits a fresh model. The initial weights come from `rng`.
///
/// With `holdout_windows > 0` the last windows are not trained on, and the
/// residual spread is the larger of the training RMS and the held-out RMS.
/// The training RMS alone is optimistic: fourteen windows are enough for an
/// eight-unit cell to memorize part of the day-to-day noise.
pub fn fit(features: &[DayFeature], config: &MonitorConfig, rng: &mut dyn RngCore) -> Result<MonitorModel, MonitorError> {
    let data = training_windows(features, config.window);
    let split = data.len().saturating_sub(config.holdout_windows).max(1);
    let (train, held) = data.split_at(split.min(data.len()));
    let init = GruParams::random(INPUT_DIM, config.hidden, &mut &mut *rng);
    let report = gru_train(train, config.window, init, config.lr, config.epochs)?;
    let sigma = if held.is_empty() {
        report.sigma_residual
    } else {
        report.sigma_residual.max(mse(held, &report.params)?.sqrt())
    };
    Ok(MonitorModel {
        params: report.params,
        sigma_residual: Some(sigma),
    })
}

fn severity(deviation: f64, tau: f64, glucose_z: f64, config: &MonitorConfig) -> AlertSeverity {
    if deviation > 2.0 * tau || glucose_z > config.glucose_z_caregiver {
        AlertSeverity::NotifyCaregiver
    } else {
        AlertSeverity::NotifyUser
    }
}

/// Learned detector: alert iff `|prediction - observed| > tau`.
pub fn detect(
    user: UserId,
    day: u32,
    seq: &[DayFeature],
    observed_next: &DayFeature,
    model: &MonitorModel,
    config: &MonitorConfig,
) -> Result<Option<Alert>, MonitorError> {
    let tau = model.tau(config)?;
    let inputs: Vec<Vec<f64>> = seq.iter().map(DayFeature::to_vec).collect();
    let (_, predicted) = gru_forward(&inputs, &model.params)?;
    let deviation = (predicted - observed_next.adherence).abs();
    if deviation <= tau {
        return Ok(None);
    }
    Ok(Some(Alert {
        user,
        day,
        detector: Detector::Gru,
        predicted,
        observed: observed_next.adherence,
        deviation,
        threshold: tau,
        severity: severity(deviation, tau, observed_next.glucose_z, config),
    }))
}

/// Rolling z-score over the last `window` adherence values of `seq`.
pub fn baseline_detect(
    user: UserId,
    day: u32,
    seq: &[DayFeature],
    observed_next: &DayFeature,
    window: usize,
    z_threshold: f64,
    config: &MonitorConfig,
) -> Result<Option<Alert>, MonitorError> {
    if window == 0 || seq.len() < window {
        return Err(MonitorError::InsufficientHistory {
            needed: window.max(1),
            have: seq.len(),
        });
    }
    let stats = MeanStd::fit(seq[seq.len() - window..].iter().map(|f| f.adherence));
    let deviation = (observed_next.adherence - stats.mean).abs();
    let threshold = z_threshold * stats.std;
    if deviation <= threshold {
        return Ok(None);
    }
    Ok(Some(Alert {
        user,
        day,
        detector: Detector::Baseline,
        predicted: stats.mean,
        observed: observed_next.adherence,
        deviation,
        threshold,
        severity: severity(deviation, threshold, observed_next.glucose_z, config),
    }))
}

/// The fixed-threshold monitor: every low day goes to the caregiver.
pub fn naive_detect(user: UserId, day: u32, observed: &DayFeature, threshold: f64) -> Option<Alert> {
    (observed.adherence < threshold).then_some(Alert {
        user,
        day,
        detector: Detector::Naive,
        predicted: threshold,
        observed: observed.adherence,
        deviation: threshold - observed.adherence,
        threshold,
        severity: AlertSeverity::NotifyCaregiver,
    })
}

/// Monitoring state for one user across a run.
#[derive(Clone, Debug)]
pub struct MonitorAgent {
    pub user: UserId,
    pub config: MonitorConfig,
    history: Vec<DailyTotals>,
    standardizer: Option<Standardizer>,
    model: Option<MonitorModel>,
}

impl MonitorAgent {
    pub fn new(user: UserId, config: MonitorConfig) -> Self {
        Self {
            user,
            config,
            history: Vec::new(),
            standardizer: None,
            model: None,
        }
    }

    pub fn model(&self) -> Option<&MonitorModel> {
        self.model.as_ref()
    }

    pub fn features(&self) -> Option<Vec<DayFeature>> {
        let s = self.standardizer?;
        Some(self.history.iter().map(|d| s.feature(d)).collect())
    }

    /// Records one finished day and returns any alert for it. Days must
    /// arrive in order starting from day 0. `rng` seeds the model weights
    /// on the day training happens.
    pub fn end_of_day(&mut self, totals: DailyTotals, rng: &mut dyn RngCore) -> Result<Option<Alert>, MonitorError> {
        let c = &self.config;
        let day = totals.day;
        self.history.push(totals);
        let n = self.history.len();
        if n == c.standardize_days {
            self.standardizer = Some(Standardizer::fit(&self.history, c.hydration_target_ml));
        }
        if n <= c.train_days {
            if n == c.train_days && c.mode == MonitorMode::Gru {
                let feats = self.features().ok_or(MonitorError::Untrained)?;
                self.model = Some(fit(&feats, c, rng)?);
            }
            return Ok(None);
        }
        let s = self.standardizer.ok_or(MonitorError::Untrained)?;
        let observed = s.feature(&self.history[n - 1]);
        match c.mode {
            MonitorMode::NaiveThreshold => Ok(naive_detect(self.user, day, &observed, c.naive_threshold)),
            MonitorMode::Gru => {
                let model = self.model.as_ref().ok_or(MonitorError::Untrained)?;
                let seq: Vec<DayFeature> = self.history[n - 1 - c.window..n - 1].iter().map(|d| s.feature(d)).collect();
                detect(self.user, day, &seq, &observed, model, c)
            }
        }
    }
}
