//! Subcommand bodies. Each returns the text for stdout.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use agentcare::bus::{EntryId, LogRecord, Payload};
use agentcare::coordinator::validate_explanation;
use agentcare::domain::{load_catalog, load_guideline, GuidelineTarget, MealCatalog};
use agentcare::metrics::{compare as compare_reports, explainability_frac, RunReport};
use agentcare::scenario::{run_cohort, ScenarioConfig, SimOutput};
use agentcare::synthgen::{
    generate_cohort, read_cohort, read_trace, stratum_counts, write_cohort, write_features_csv, write_trace,
};
use serde::Serialize;

use crate::config::{out_dir, resolve};
use crate::{BaselineArg, CliError, CompareArgs, ExplainArgs, RunArgs, SimulateArgs};

fn inputs(catalog: Option<&Path>, guideline: Option<&Path>) -> Result<(MealCatalog, GuidelineTarget), CliError> {
    let c = match catalog {
        Some(p) => load_catalog(p).map_err(CliError::input)?,
        None => MealCatalog::builtin(),
    };
    let g = match guideline {
        Some(p) => load_guideline(p).map_err(CliError::input)?,
        None => GuidelineTarget::builtin(),
    };
    Ok((c, g))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn generate(a: &RunArgs) -> Result<String, CliError> {
    let c = resolve(a)?;
    let cohort = generate_cohort(&c.effective_cohort()).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = out_dir(&c);
    ensure_dir(&dir)?;
    let path = dir.join("cohort.json");
    write_cohort(&cohort, &path).map_err(CliError::output)?;

    let mut s = String::new();
    let _ = writeln!(s, "cohort of {} users, seed {}, preset {}", cohort.members.len(), cohort.spec.seed, c.preset.name());
    let counts = stratum_counts(&cohort);
    let w = counts.keys().map(|k| k.len() + 2).max().unwrap_or(0).max(12);
    let _ = writeln!(s, "{:<w$}{:>7}", "stratum", "users");
    for (k, n) in counts {
        let _ = writeln!(s, "{k:<w$}{n:>7}");
    }
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

fn simulate_config(
    c: &ScenarioConfig,
    cohort_file: Option<&Path>,
    explicit_seed: Option<u64>,
    catalog: &MealCatalog,
    guideline: &GuidelineTarget,
    threads: usize,
) -> Result<SimOutput, CliError> {
    let cohort = match cohort_file {
        Some(p) => {
            let cohort = read_cohort(p).map_err(CliError::input)?;
            if let Some(seed) = explicit_seed.filter(|s| *s != cohort.spec.seed) {
                return Err(CliError::Provenance(format!(
                    "--seed {seed} but {} was generated with seed {}",
                    p.display(),
                    cohort.spec.seed
                )));
            }
            cohort
        }
        None => generate_cohort(&c.effective_cohort()).map_err(|e| CliError::Config(e.to_string()))?,
    };
    let mut c = c.clone();
    c.cohort.seed = cohort.spec.seed;
    c.cohort.anomaly_days = cohort.spec.anomaly_days;
    Ok(run_cohort(&c, cohort, catalog, guideline, threads)?)
}

/// Writes the run's files into `dir`.
pub fn write_outputs(out: &SimOutput, dir: &Path) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_trace(&out.trace, &dir.join("trace.jsonl")).map_err(CliError::output)?;
    write_features_csv(&out.features, &dir.join("features.csv")).map_err(CliError::output)?;
    write_text(&dir.join("report.json"), &pretty(&out.report))?;
    write_text(&dir.join("report.txt"), &out.report.table())?;
    write_text(&dir.join("qtable.json"), &pretty(&out.q_table))?;
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<String, CliError> {
    let c = resolve(&a.run)?;
    let (catalog, guideline) = inputs(a.catalog.as_deref(), a.guideline.as_deref())?;
    let out = simulate_config(&c, a.cohort.as_deref(), a.run.seed, &catalog, &guideline, a.parallel_users)?;
    let dir = out_dir(&c);
    write_outputs(&out, &dir)?;
    let mut s = out.report.table();
    let _ = writeln!(s, "wrote trace.jsonl, features.csv, report.json, report.txt, qtable.json to {}", dir.display());
    Ok(s)
}

fn load_report(p: &Path) -> Result<RunReport, CliError> {
    let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

pub fn compare(a: &CompareArgs) -> Result<String, CliError> {
    if let (Some(b), Some(v)) = (&a.baseline_report, &a.variant_report) {
        let delta = compare_reports(&load_report(b)?, &load_report(v)?)?;
        let c = crate::config::apply(crate::config::load(a.run.config.as_deref())?, &a.run);
        let dir = out_dir(&c);
        ensure_dir(&dir)?;
        write_text(&dir.join("compare.csv"), &delta.to_csv())?;
        return Ok(delta.table());
    }

    let adaptive = resolve(&a.run)?;
    let mut baseline = adaptive.clone();
    for b in &a.against {
        match b {
            BaselineArg::StaticReminders => baseline.baselines.static_reminders = true,
            BaselineArg::RandomPlanner => baseline.baselines.random_planner = true,
            BaselineArg::NaiveMonitor => baseline.baselines.naive_monitor = true,
        }
    }
    let (catalog, guideline) = inputs(a.catalog.as_deref(), a.guideline.as_deref())?;
    let base_out = simulate_config(&baseline, None, None, &catalog, &guideline, a.parallel_users)?;
    let adapt_out = simulate_config(&adaptive, None, None, &catalog, &guideline, a.parallel_users)?;
    let delta = compare_reports(&base_out.report, &adapt_out.report)?;

    let dir = out_dir(&adaptive);
    ensure_dir(&dir)?;
    write_text(&dir.join("compare.csv"), &delta.to_csv())?;
    write_text(&dir.join("report_baseline.json"), &pretty(&base_out.report))?;
    write_text(&dir.join("report_adaptive.json"), &pretty(&adapt_out.report))?;

    let mut s = delta.table();
    let (b, v) = (base_out.report.caregiver_alerts, adapt_out.report.caregiver_alerts);
    if b > 0 {
        let _ = writeln!(s, "caregiver alert reduction: {:.1}% ({b} -> {v})", 100.0 * (b as f64 - v as f64) / b as f64);
    } else {
        let _ = writeln!(s, "caregiver alert reduction: undefined (baseline raised none; adaptive raised {v})");
    }
    let _ = writeln!(s, "wrote compare.csv, report_baseline.json, report_adaptive.json to {}", dir.display());
    Ok(s)
}

pub fn explain_trace(a: &ExplainArgs) -> Result<String, CliError> {
    let trace = read_trace(&a.trace).map_err(CliError::input)?;
    let Some(id) = a.decision_id else {
        let decisions = trace
            .iter()
            .filter(|r| matches!(&r.record, LogRecord::Event(e) if matches!(e.payload, Payload::Decision(_))))
            .count();
        let frac = explainability_frac(&trace).map_err(|e| CliError::Runtime(e.to_string()))?;
        return Ok(format!("{decisions} decisions, explainability_frac {frac:.4}\n"));
    };

    let matches: Vec<_> = trace
        .iter()
        .filter(|r| a.user.is_none_or(|u| r.user.0 == u))
        .filter_map(|r| match &r.record {
            LogRecord::Event(e) => match &e.payload {
                Payload::Decision(d) if d.decision_id == id => Some((r.user, d)),
                _ => None,
            },
            _ => None,
        })
        .collect();
    let (user, d) = match matches.as_slice() {
        [] => return Err(CliError::Config(format!("no decision {id} in {}", a.trace.display()))),
        [one] => *one,
        many => {
            let users: Vec<String> = many.iter().map(|(u, _)| u.0.to_string()).collect();
            return Err(CliError::Config(format!(
                "decision {id} exists for users {}; pass --user",
                users.join(", ")
            )));
        }
    };
    let entries: BTreeSet<EntryId> = trace
        .iter()
        .filter(|r| r.user == user)
        .filter_map(|r| match &r.record {
            LogRecord::Entry(e) => Some(e.entry_id),
            _ => None,
        })
        .collect();

    let mut s = String::new();
    let _ = writeln!(s, "decision {id}, user {}, day {}, minute {}", user.0, d.tick.day(), d.tick.minute_of_day());
    let _ = writeln!(s, "{}", d.explanation.text);
    s.push_str(&pretty(&d.explanation));
    match validate_explanation(&d.explanation, d.decision_id, |e| entries.contains(&e)) {
        Ok(()) => s.push_str("valid\n"),
        Err(e) => {
            let _ = writeln!(s, "invalid: {e}");
        }
    }
    Ok(s)
}
