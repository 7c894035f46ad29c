//! File formats for cohorts, traces and per-day features.
//!
//! - cohort: one pretty-printed JSON document ([`Cohort`]);
//! - trace: JSONL, one [`TraceRecord`] per line, merged by tick then user;
//! - features: CSV with the columns in [`FEATURE_COLUMNS`], one row per user-day.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::bus::LogRecord;
use crate::domain::{Nutrient, Nutrients, UserId};
use crate::error::LoadError;
use crate::monitor::DailyTotals;

/// One trace line: a board record tagged with its user and its position in
/// that user's log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub user: UserId,
    pub seq: u64,
    pub record: LogRecord,
}

pub const FEATURE_COLUMNS: [&str; 19] = [
    "user",
    "day",
    "slots",
    "complied",
    "adherence",
    "glucose_mean",
    "heart_rate_mean",
    "steps",
    "hydration_ml",
    "meals_eaten",
    "kcal",
    "carbs_g",
    "sugar_g",
    "protein_g",
    "fat_g",
    "sodium_mg",
    "fiber_g",
    "disrupted",
    "anomaly",
];

/// Flat CSV view of [`DailyTotals`]; field order is the column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub user: u32,
    pub day: u32,
    pub slots: u32,
    pub complied: u32,
    pub adherence: f64,
    pub glucose_mean: f64,
    pub heart_rate_mean: f64,
    pub steps: f64,
    pub hydration_ml: f64,
    pub meals_eaten: u32,
    pub kcal: f64,
    pub carbs_g: f64,
    pub sugar_g: f64,
    pub protein_g: f64,
    pub fat_g: f64,
    pub sodium_mg: f64,
    pub fiber_g: f64,
    pub disrupted: bool,
    pub anomaly: bool,
}

impl From<&DailyTotals> for FeatureRow {
    fn from(d: &DailyTotals) -> Self {
        let c = &d.consumed;
        Self {
            user: d.user.0,
            day: d.day,
            slots: d.slots,
            complied: d.complied,
            adherence: d.adherence,
            glucose_mean: d.glucose_mean,
            heart_rate_mean: d.heart_rate_mean,
            steps: d.steps,
            hydration_ml: d.hydration_ml,
            meals_eaten: d.meals_eaten,
            kcal: c.get(Nutrient::Kcal),
            carbs_g: c.get(Nutrient::CarbsG),
            sugar_g: c.get(Nutrient::SugarG),
            protein_g: c.get(Nutrient::ProteinG),
            fat_g: c.get(Nutrient::FatG),
            sodium_mg: c.get(Nutrient::SodiumMg),
            fiber_g: c.get(Nutrient::FiberG),
            disrupted: d.disrupted,
            anomaly: d.anomaly,
        }
    }
}

impl From<&FeatureRow> for DailyTotals {
    fn from(r: &FeatureRow) -> Self {
        DailyTotals {
            user: UserId(r.user),
            day: r.day,
            slots: r.slots,
            complied: r.complied,
            adherence: r.adherence,
            glucose_mean: r.glucose_mean,
            heart_rate_mean: r.heart_rate_mean,
            steps: r.steps,
            hydration_ml: r.hydration_ml,
            meals_eaten: r.meals_eaten,
            consumed: Nutrients::from_pairs(&[
                (Nutrient::Kcal, r.kcal),
                (Nutrient::CarbsG, r.carbs_g),
                (Nutrient::SugarG, r.sugar_g),
                (Nutrient::ProteinG, r.protein_g),
                (Nutrient::FatG, r.fat_g),
                (Nutrient::SodiumMg, r.sodium_mg),
                (Nutrient::FiberG, r.fiber_g),
            ]),
            disrupted: r.disrupted,
            anomaly: r.anomaly,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> LoadError + '_ {
    move |source| LoadError::Json {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> LoadError + '_ {
    move |source| LoadError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_cohort(cohort: &Cohort, path: &Path) -> Result<(), LoadError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut out, cohort).map_err(json_err(path))?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_cohort(path: &Path) -> Result<Cohort, LoadError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let cohort: Cohort = serde_json::from_str(&text).map_err(json_err(path))?;
    cohort.spec.validate().map_err(|errors| LoadError::Invalid {
        path: path.to_path_buf(),
        errors,
    })?;
    Ok(cohort)
}

pub fn write_trace(records: &[TraceRecord], path: &Path) -> Result<(), LoadError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(json_err(path))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, LoadError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(json_err(path))?);
    }
    Ok(out)
}

pub fn write_features_csv(days: &[DailyTotals], path: &Path) -> Result<(), LoadError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for d in days {
        w.serialize(FeatureRow::from(d)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<DailyTotals>, LoadError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize::<FeatureRow>()
        .map(|row| row.map(|r| DailyTotals::from(&r)).map_err(csv_err(path)))
        .collect()
}
