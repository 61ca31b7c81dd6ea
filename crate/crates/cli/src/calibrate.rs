//! Trajectory records in, advantage records out.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use lens_core::{
    calibrate_group, compute_advantages, make_group, AdvantageConfig, CalibratedGroup, CalibrationConfig, GroupKind,
    GroupSample, Question,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::format::format_num;

/// One sampled response, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub group_id: String,
    pub question_id: String,
    pub response_id: String,
    pub seq_logprob: f64,
    pub length: usize,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    fn sample(&self) -> GroupSample {
        let s = GroupSample::new(self.response_id.clone(), self.seq_logprob, self.length, self.reward);
        match &self.token_logprobs {
            Some(t) => s.with_token_logprobs(t.clone()),
            None => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrateOptions {
    pub calibration: CalibrationConfig,
    pub advantage: AdvantageConfig,
    /// Expected size of every group; a group is flushed as soon as it is full.
    pub group_size: Option<usize>,
    /// Flush a group when the next record names a different group.
    pub strict_contiguous: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Summary {
    pub records: usize,
    pub mixed: usize,
    pub negative: usize,
    pub all_correct: usize,
}

impl Summary {
    pub fn groups(&self) -> usize {
        self.mixed + self.negative + self.all_correct
    }

    pub fn negative_fraction(&self) -> f64 {
        if self.groups() == 0 {
            0.0
        } else {
            self.negative as f64 / self.groups() as f64
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} records in {} groups: mixed {}, negative {}, all_correct {}; negative fraction {:.4}",
            self.records,
            self.groups(),
            self.mixed,
            self.negative,
            self.all_correct,
            self.negative_fraction()
        )
    }
}

struct Pending {
    order: usize,
    first_line: usize,
    question_id: String,
    records: Vec<TrajectoryRecord>,
}

/// Writes one advantage record as a JSON object with fixed field order.
fn write_record<W: Write>(out: &mut W, group_id: &str, response_id: &str, cal: &CalibratedGroup, i: usize) -> std::io::Result<()> {
    writeln!(
        out,
        "{{\"group_id\":{},\"response_id\":{},\"normalized_prob\":{},\"difficulty\":{},\"calibrated_reward\":{},\"advantage\":{},\"group_kind\":\"{}\"}}",
        serde_json::to_string(group_id).expect("string serializes"),
        serde_json::to_string(response_id).expect("string serializes"),
        format_num(cal.normalized_probs[i]),
        format_num(cal.difficulty),
        format_num(cal.calibrated_rewards[i]),
        format_num(cal.advantages[i]),
        cal.kind.as_str()
    )
}

struct Calibrator<'a, W: Write> {
    out: W,
    opts: &'a CalibrateOptions,
    summary: Summary,
}

impl<W: Write> Calibrator<'_, W> {
    fn flush(&mut self, group_id: &str, pending: Pending) -> Result<(), CliError> {
        if let Some(n) = self.opts.group_size {
            if pending.records.len() != n {
                return Err(CliError::IncompleteGroup {
                    group_id: group_id.to_string(),
                    reason: format!("{} of {n} records (group starts at line {})", pending.records.len(), pending.first_line),
                });
            }
        }
        let samples = pending.records.iter().map(TrajectoryRecord::sample).collect();
        let group = make_group(Question::opaque(pending.question_id), samples).map_err(|e| CliError::IncompleteGroup {
            group_id: group_id.to_string(),
            reason: format!("{e} (group starts at line {})", pending.first_line),
        })?;
        let cal = calibrate_group(&group, &self.opts.calibration)
            .map_err(|e| CliError::malformed("input", pending.first_line, e.name(), e.to_string()))?;
        let cal = compute_advantages(cal, &self.opts.advantage);
        match cal.kind {
            GroupKind::Mixed => self.summary.mixed += 1,
            GroupKind::Negative => self.summary.negative += 1,
            GroupKind::AllCorrect => self.summary.all_correct += 1,
        }
        for (i, r) in pending.records.iter().enumerate() {
            write_record(&mut self.out, group_id, &r.response_id, &cal, i)?;
        }
        Ok(())
    }
}

/// Streams `input`, groups records by `group_id`, and writes one advantage
/// record per input record. Groups are emitted in completion order; records
/// keep their order within a group.
pub fn run_calibrate<R: BufRead, W: Write>(input: R, output: W, opts: &CalibrateOptions) -> Result<Summary, CliError> {
    opts.calibration.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if opts.group_size.is_some_and(|n| n < 2) {
        return Err(CliError::Config("group size must be at least 2".into()));
    }
    let mut cal = Calibrator { out: output, opts, summary: Summary::default() };
    let mut pending: HashMap<String, Pending> = HashMap::new();
    let mut current: Option<String> = None;
    let mut next_order = 0;

    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::malformed("input", lineno, "ParseError", e.to_string()))?;
        record
            .sample()
            .validate()
            .map_err(|e| CliError::malformed("input", lineno, e.name(), e.to_string()))?;
        cal.summary.records += 1;

        if opts.strict_contiguous {
            if let Some(prev) = current.take() {
                if prev != record.group_id {
                    if let Some(p) = pending.remove(&prev) {
                        cal.flush(&prev, p)?;
                    }
                }
            }
            current = Some(record.group_id.clone());
        }

        let id = record.group_id.clone();
        let entry = pending.entry(id.clone()).or_insert_with(|| {
            next_order += 1;
            Pending {
                order: next_order,
                first_line: lineno,
                question_id: record.question_id.clone(),
                records: Vec::new(),
            }
        });
        if entry.question_id != record.question_id {
            return Err(CliError::malformed(
                "input",
                lineno,
                "InconsistentSample",
                format!(
                    "group `{id}` mixes questions `{}` and `{}`",
                    entry.question_id, record.question_id
                ),
            ));
        }
        entry.records.push(record);
        if opts.group_size == Some(entry.records.len()) {
            let p = pending.remove(&id).expect("entry present");
            cal.flush(&id, p)?;
        }
    }

    let mut rest: Vec<(String, Pending)> = pending.into_iter().collect();
    rest.sort_by_key(|(_, p)| p.order);
    for (id, p) in rest {
        cal.flush(&id, p)?;
    }
    cal.out.flush()?;
    Ok(cal.summary)
}
