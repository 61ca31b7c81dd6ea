//! Side-by-side comparison of metric streams.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use lens_core::simulator::TrainMetrics;

use crate::error::CliError;
use crate::format::format_num;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRun {
    pub label: String,
    pub records: Vec<TrainMetrics>,
}

impl MetricsRun {
    pub fn final_eval(&self) -> Option<&TrainMetrics> {
        self.records.iter().rev().find(|m| !m.pass_at_k.is_empty())
    }
}

pub fn parse_metrics<R: BufRead>(label: &str, input: R) -> Result<MetricsRun, CliError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: TrainMetrics =
            serde_json::from_str(&line).map_err(|e| CliError::malformed(label, i + 1, "ParseError", e.to_string()))?;
        records.push(m);
    }
    Ok(MetricsRun { label: label.to_string(), records })
}

pub fn load_metrics(path: &Path) -> Result<MetricsRun, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    parse_metrics(&label, std::io::BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Final-evaluation pass@k per run.
    pub table: String,
    /// `step,<label>...` rows of the negative-group fraction.
    pub negative_fraction_csv: String,
    pub warnings: Vec<String>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

pub fn build_report(runs: &[MetricsRun]) -> Report {
    let mut warnings = Vec::new();
    let finals: Vec<Option<&TrainMetrics>> = runs.iter().map(MetricsRun::final_eval).collect();
    for (run, f) in runs.iter().zip(&finals) {
        if f.is_none() {
            warnings.push(format!("{}: no evaluation records", run.label));
        }
    }
    let k_sets: Vec<BTreeSet<u32>> = finals
        .iter()
        .map(|f| f.map(|m| m.pass_at_k.keys().copied().collect()).unwrap_or_default())
        .collect();
    let all_k: BTreeSet<u32> = k_sets.iter().flatten().copied().collect();
    if k_sets.iter().any(|s| !s.is_empty() && *s != all_k) {
        warnings.push("runs report different k values; missing entries left blank".into());
    }

    let width = runs.iter().map(|r| r.label.len()).max().unwrap_or(0).max(10);
    let mut table = String::new();
    let _ = write!(table, "{:<18}", "metric");
    for r in runs {
        let _ = write!(table, " {:>width$}", r.label);
    }
    table.push('\n');
    let mut row = |name: String, values: Vec<Option<f64>>| {
        let _ = write!(table, "{name:<18}");
        for v in values {
            let _ = write!(table, " {:>width$}", cell(v));
        }
        table.push('\n');
    };
    for k in &all_k {
        row(format!("pass@{k}"), finals.iter().map(|f| f.and_then(|m| m.pass_at_k.get(k).copied())).collect());
    }
    if finals.iter().any(|f| f.is_some_and(|m| m.hard_mean_reward.is_some())) {
        row("hard mean reward".into(), finals.iter().map(|f| f.and_then(|m| m.hard_mean_reward)).collect());
    }
    row("final step".into(), finals.iter().map(|f| f.map(|m| m.step as f64)).collect());

    let mut by_step: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for (i, run) in runs.iter().enumerate() {
        for m in &run.records {
            by_step.entry(m.step).or_insert_with(|| vec![None; runs.len()])[i] = Some(m.negative_group_fraction);
        }
    }
    let mut csv = String::from("step");
    for r in runs {
        csv.push(',');
        csv.push_str(&r.label);
    }
    csv.push('\n');
    for (step, values) in by_step {
        let _ = write!(csv, "{step}");
        for v in values {
            csv.push(',');
            if let Some(x) = v {
                csv.push_str(&format_num(x));
            }
        }
        csv.push('\n');
    }

    Report { table, negative_fraction_csv: csv, warnings }
}
