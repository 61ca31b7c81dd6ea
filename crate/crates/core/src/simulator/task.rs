//! Synthetic verifiable tasks with a matching fresh policy.

use std::collections::BTreeSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::policy::{enumerate_sequences, LinearAutoregressive, Policy, PolicyModel, TabularSoftmax};
use crate::rng::stream_rng;
use crate::theory::EnumerableTask;
use crate::types::{Answer, GroupKind, Question};

use super::sampling::sample_group;

/// Logit given to the single wrong "attractor" answer of a hard question.
pub const HARD_DISTRACTOR_LOGIT: f64 = 3.0;
/// Logit given to the correct answers of a hard question.
pub const HARD_CORRECT_LOGIT: f64 = -2.0;

const EMBED_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerSpaceSpec {
    /// Answers `0..answers`, one logit each.
    Tabular { answers: usize },
    /// Token sequences over `vocab` tokens (token 0 ends a sequence) of length
    /// at most `max_len`.
    Sequence { vocab: usize, max_len: usize },
}

impl AnswerSpaceSpec {
    pub fn size(&self) -> usize {
        match *self {
            AnswerSpaceSpec::Tabular { answers } => answers,
            AnswerSpaceSpec::Sequence { vocab, max_len } => {
                // sum_{l < max_len} (V-1)^l terminated + (V-1)^(max_len-1) * (V-1) unterminated
                (0..max_len).map(|l| (vocab - 1).pow(l as u32)).sum::<usize>() + (vocab - 1).pow(max_len as u32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectCount {
    Fixed(usize),
    /// Drawn uniformly from `min..=max` per question.
    Range { min: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum DifficultyProfile {
    /// Fresh policy is uniform over every answer space.
    #[default]
    Uniform,
    /// A `fraction` of questions start with little mass on their correct
    /// answers.
    HardTail { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub num_questions: usize,
    pub answers: AnswerSpaceSpec,
    pub correct: CorrectCount,
    pub profile: DifficultyProfile,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(LensError::SpecError(m));
        if self.num_questions == 0 {
            return err("num_questions must be at least 1".into());
        }
        match self.answers {
            AnswerSpaceSpec::Tabular { answers } if answers < 2 => {
                return err(format!("need at least 2 answers per question, got {answers}"));
            }
            AnswerSpaceSpec::Sequence { vocab, max_len } if vocab < 2 || max_len < 1 => {
                return err(format!("sequence space needs vocab >= 2 and max_len >= 1, got {vocab}, {max_len}"));
            }
            AnswerSpaceSpec::Sequence { vocab, max_len } if (vocab as f64).powi(max_len as i32) > 1e5 => {
                return err(format!("sequence space {vocab}^{max_len} is too large to enumerate"));
            }
            _ => {}
        }
        let size = self.answers.size();
        let (lo, hi) = match self.correct {
            CorrectCount::Fixed(c) => (c, c),
            CorrectCount::Range { min, max } => (min, max),
        };
        if lo < 1 || lo > hi || hi >= size {
            return err(format!(
                "correct count {lo}..={hi} must satisfy 1 <= count < answer-space size {size}"
            ));
        }
        if let DifficultyProfile::HardTail { fraction } = self.profile {
            if !(0.0..=1.0).contains(&fraction) {
                return err(format!("hard fraction must lie in [0, 1], got {fraction}"));
            }
            if let AnswerSpaceSpec::Sequence { vocab, max_len } = self.answers {
                let longest = (vocab - 1).pow(max_len as u32 - 1) * vocab;
                if hi > longest {
                    return err(format!("only {longest} maximum-length sequences for {hi} correct answers"));
                }
            }
        }
        Ok(())
    }

    fn hard_count(&self) -> usize {
        match self.profile {
            DifficultyProfile::Uniform => 0,
            DifficultyProfile::HardTail { fraction } => (fraction * self.num_questions as f64).round() as usize,
        }
    }
}

/// A generated task plus the fresh policy it was designed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub task: EnumerableTask,
    pub hard: Vec<bool>,
    pub initial_policy: PolicyModel,
}

impl SyntheticTask {
    pub fn num_questions(&self) -> usize {
        self.task.len()
    }

    pub fn hard_indices(&self) -> Vec<usize> {
        (0..self.hard.len()).filter(|&q| self.hard[q]).collect()
    }
}

/// Builds a task deterministically from `spec.seed`.
pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let n = spec.num_questions;
    let mut hard = vec![false; n];
    let mut pick = stream_rng(spec.seed, &[0]);
    for q in sample_indices(&mut pick, n, spec.hard_count()) {
        hard[q] = true;
    }

    let draw_count = |rng: &mut rand_chacha::ChaCha8Rng| match spec.correct {
        CorrectCount::Fixed(c) => c,
        CorrectCount::Range { min, max } => rng.random_range(min..=max),
    };

    let mut questions = Vec::with_capacity(n);
    let initial_policy = match spec.answers {
        AnswerSpaceSpec::Tabular { answers } => {
            let mut logits = Vec::with_capacity(n);
            for q in 0..n {
                let mut rng = stream_rng(spec.seed, &[1, q as u64]);
                let c = draw_count(&mut rng);
                let chosen = sample_indices(&mut rng, answers, c + 1).into_vec();
                let (correct, distractor) = (&chosen[..c], chosen[c]);
                let mut l = vec![0.0; answers];
                if hard[q] {
                    l[distractor] = HARD_DISTRACTOR_LOGIT;
                    for &k in correct {
                        l[k] = HARD_CORRECT_LOGIT;
                    }
                }
                logits.push(l);
                questions.push(Question::multiple_choice(format!("q{q}"), answers, correct)?);
            }
            PolicyModel::from(TabularSoftmax::from_logits(logits))
        }
        AnswerSpaceSpec::Sequence { vocab, max_len } => {
            let space = enumerate_sequences(vocab, max_len);
            let longest: Vec<usize> = (0..space.len()).filter(|&i| space[i].len() == max_len).collect();
            let mut embeddings = Vec::with_capacity(n);
            for q in 0..n {
                let mut rng = stream_rng(spec.seed, &[1, q as u64]);
                let c = draw_count(&mut rng);
                // hard questions hide their answers among the least likely
                // (longest) sequences of the zero-weight policy
                let correct: BTreeSet<Answer> = if hard[q] {
                    sample_indices(&mut rng, longest.len(), c).iter().map(|i| space[longest[i]].clone()).collect()
                } else {
                    sample_indices(&mut rng, space.len(), c).iter().map(|i| space[i].clone()).collect()
                };
                embeddings.push((0..EMBED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect());
                questions.push(Question::enumerable(format!("q{q}"), space.clone(), correct)?);
            }
            PolicyModel::from(LinearAutoregressive::new(vocab, max_len, embeddings))
        }
    };
    let task = EnumerableTask::uniform(questions)?;
    Ok(SyntheticTask { task, hard, initial_policy })
}

/// Fraction of all-negative groups among `groups` groups of size
/// `group_size` drawn from `policy`, cycling through the questions.
pub fn measure_negative_fraction<P: Policy + Sync>(
    policy: &P,
    task: &EnumerableTask,
    group_size: usize,
    groups: usize,
    seed: u64,
) -> Result<f64> {
    if groups == 0 {
        return Ok(0.0);
    }
    let kinds: Result<Vec<GroupKind>> = (0..groups)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, &[2, i as u64]);
            let s = sample_group(policy, task, i % task.len(), group_size, &mut rng)?;
            Ok(s.group.kind())
        })
        .collect();
    let negative = kinds?.into_iter().filter(|k| *k == GroupKind::Negative).count();
    Ok(negative as f64 / groups as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::true_difficulty;

    fn tabular(num_questions: usize, answers: usize, correct: CorrectCount, profile: DifficultyProfile) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            num_questions,
            answers: AnswerSpaceSpec::Tabular { answers },
            correct,
            profile,
            seed: 42,
        }
    }

    #[test]
    fn single_question_reproduces_toy() {
        let t = generate_task(&tabular(1, 6, CorrectCount::Fixed(2), DifficultyProfile::Uniform)).unwrap();
        let q = &t.task.questions[0];
        assert_eq!(q.answer_space().unwrap().len(), 6);
        assert_eq!(q.correct_set().unwrap().len(), 2);
        assert_eq!(true_difficulty(q).unwrap(), 0.5);
        assert_eq!(t.initial_policy.answer_probs(0), vec![1.0 / 6.0; 6]);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = tabular(20, 10, CorrectCount::Range { min: 1, max: 3 }, DifficultyProfile::HardTail { fraction: 0.3 });
        assert_eq!(generate_task(&spec).unwrap(), generate_task(&spec).unwrap());
        let other = SyntheticTaskSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate_task(&spec).unwrap(), generate_task(&other).unwrap());
    }

    #[test]
    fn impossible_counts_are_rejected() {
        for spec in [
            tabular(1, 6, CorrectCount::Fixed(0), DifficultyProfile::Uniform),
            tabular(1, 6, CorrectCount::Fixed(6), DifficultyProfile::Uniform),
            tabular(1, 6, CorrectCount::Range { min: 3, max: 2 }, DifficultyProfile::Uniform),
            tabular(0, 6, CorrectCount::Fixed(1), DifficultyProfile::Uniform),
            tabular(1, 1, CorrectCount::Fixed(1), DifficultyProfile::Uniform),
            tabular(4, 6, CorrectCount::Fixed(1), DifficultyProfile::HardTail { fraction: 1.5 }),
        ] {
            assert!(matches!(generate_task(&spec), Err(LensError::SpecError(_))), "{spec:?}");
        }
    }

    #[test]
    fn hard_tail_marks_requested_fraction() {
        let spec = tabular(50, 20, CorrectCount::Fixed(2), DifficultyProfile::HardTail { fraction: 0.4 });
        let t = generate_task(&spec).unwrap();
        assert_eq!(t.hard_indices().len(), 20);
        for q in 0..50 {
            let probs = t.initial_policy.answer_probs(q);
            let correct_mass: f64 = t.task.questions[q]
                .answer_space()
                .unwrap()
                .iter()
                .zip(&probs)
                .filter(|(a, _)| t.task.questions[q].reward(a) == 1.0)
                .map(|(_, p)| p)
                .sum();
            if t.hard[q] {
                assert!(correct_mass < 0.02, "{correct_mass}");
            } else {
                assert!((correct_mass - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hard_tail_yields_many_negative_groups() {
        let spec = tabular(100, 20, CorrectCount::Range { min: 1, max: 2 }, DifficultyProfile::HardTail { fraction: 0.4 });
        let t = generate_task(&spec).unwrap();
        let frac = measure_negative_fraction(&t.initial_policy, &t.task, 8, 1000, 9).unwrap();
        assert!(frac >= 0.3, "{frac}");
    }

    #[test]
    fn sequence_tasks() {
        let spec = SyntheticTaskSpec {
            num_questions: 5,
            answers: AnswerSpaceSpec::Sequence { vocab: 3, max_len: 3 },
            correct: CorrectCount::Fixed(2),
            profile: DifficultyProfile::HardTail { fraction: 0.4 },
            seed: 1,
        };
        assert_eq!(spec.answers.size(), enumerate_sequences(3, 3).len());
        let t = generate_task(&spec).unwrap();
        for q in t.hard_indices() {
            assert!(t.task.questions[q].correct_set().unwrap().iter().all(|a| a.len() == 3));
        }
        let total: f64 = t.initial_policy.answer_probs(0).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
