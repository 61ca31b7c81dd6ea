//! Domain types shared by calibration, advantages, theory checks and the simulator.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};

/// Token id reserved for end-of-sequence in sequence answer spaces.
pub const EOS: u32 = 0;

/// An answer as a token sequence. Tabular answers are single-token sequences
/// holding the answer index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Answer(pub Vec<u32>);

impl Answer {
    pub fn index(k: usize) -> Self {
        Answer(vec![k as u32])
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// A question, optionally with an enumerable answer space and its ground-truth
/// correct set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    answer_space: Option<Vec<Answer>>,
    correct_set: Option<BTreeSet<Answer>>,
}

impl Question {
    /// A question known only by id (trajectory ingestion).
    pub fn opaque(id: impl Into<String>) -> Self {
        Question {
            id: id.into(),
            answer_space: None,
            correct_set: None,
        }
    }

    pub fn enumerable(
        id: impl Into<String>,
        answer_space: Vec<Answer>,
        correct_set: BTreeSet<Answer>,
    ) -> Result<Self> {
        let id = id.into();
        if answer_space.is_empty() {
            return Err(LensError::InvalidQuestion {
                id,
                reason: "answer space is empty".into(),
            });
        }
        let space: BTreeSet<&Answer> = answer_space.iter().collect();
        if space.len() != answer_space.len() {
            return Err(LensError::InvalidQuestion {
                id,
                reason: "answer space contains duplicates".into(),
            });
        }
        if let Some(a) = correct_set.iter().find(|a| !space.contains(a)) {
            return Err(LensError::InvalidQuestion {
                id,
                reason: format!("correct answer {a} is outside the answer space"),
            });
        }
        Ok(Question {
            id,
            answer_space: Some(answer_space),
            correct_set: Some(correct_set),
        })
    }

    /// Multiple-choice question with answers `0..num_answers` and the given
    /// correct indices.
    pub fn multiple_choice(
        id: impl Into<String>,
        num_answers: usize,
        correct: &[usize],
    ) -> Result<Self> {
        let space = (0..num_answers).map(Answer::index).collect();
        let correct = correct.iter().map(|&k| Answer::index(k)).collect();
        Question::enumerable(id, space, correct)
    }

    pub fn answer_space(&self) -> Option<&[Answer]> {
        self.answer_space.as_deref()
    }

    pub fn correct_set(&self) -> Option<&BTreeSet<Answer>> {
        self.correct_set.as_ref()
    }

    /// Verifier: exact set membership. `None` for opaque questions.
    pub fn is_correct(&self, answer: &Answer) -> Option<bool> {
        self.correct_set.as_ref().map(|c| c.contains(answer))
    }

    /// Binary verifier reward r*(q, o).
    pub fn reward(&self, answer: &Answer) -> f64 {
        match self.is_correct(answer) {
            Some(true) => 1.0,
            _ => 0.0,
        }
    }
}

/// One sampled response with its behaviour-policy log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub response_id: String,
    /// Natural-log sequence probability under the sampling policy.
    pub seq_logprob: f64,
    /// Token count, at least 1.
    pub length: usize,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl GroupSample {
    pub fn new(response_id: impl Into<String>, seq_logprob: f64, length: usize, reward: f64) -> Self {
        GroupSample {
            response_id: response_id.into(),
            seq_logprob,
            length,
            reward,
            token_logprobs: None,
        }
    }

    pub fn with_token_logprobs(mut self, token_logprobs: Vec<f64>) -> Self {
        self.token_logprobs = Some(token_logprobs);
        self
    }

    pub fn is_correct(&self) -> bool {
        self.reward == 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let inconsistent = |reason: String| LensError::InconsistentSample {
            response_id: self.response_id.clone(),
            reason,
        };
        if self.reward != 0.0 && self.reward != 1.0 {
            return Err(LensError::InvalidReward {
                response_id: self.response_id.clone(),
                value: self.reward,
            });
        }
        if !self.seq_logprob.is_finite() || self.seq_logprob > 0.0 {
            return Err(inconsistent(format!(
                "seq_logprob {} must be finite and <= 0",
                self.seq_logprob
            )));
        }
        if self.length == 0 {
            return Err(inconsistent("length must be at least 1".into()));
        }
        if let Some(tokens) = &self.token_logprobs {
            if tokens.len() != self.length {
                return Err(inconsistent(format!(
                    "{} token log-probs for length {}",
                    tokens.len(),
                    self.length
                )));
            }
            if tokens.iter().any(|t| !t.is_finite() || *t > 0.0) {
                return Err(inconsistent("token log-probs must be finite and <= 0".into()));
            }
            let sum: f64 = tokens.iter().sum();
            if (sum - self.seq_logprob).abs() > 1e-9 {
                return Err(inconsistent(format!(
                    "token log-probs sum to {sum}, seq_logprob is {}",
                    self.seq_logprob
                )));
            }
        }
        Ok(())
    }
}

/// Classification of a group by its reward vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Mixed,
    Negative,
    AllCorrect,
}

impl GroupKind {
    pub fn from_rewards<I: IntoIterator<Item = f64>>(rewards: I) -> Self {
        let (mut correct, mut total) = (0usize, 0usize);
        for r in rewards {
            total += 1;
            if r == 1.0 {
                correct += 1;
            }
        }
        if correct == 0 {
            GroupKind::Negative
        } else if correct == total {
            GroupKind::AllCorrect
        } else {
            GroupKind::Mixed
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupKind::Mixed => "mixed",
            GroupKind::Negative => "negative",
            GroupKind::AllCorrect => "all_correct",
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// G >= 2 responses to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGroup {
    pub question: Question,
    samples: Vec<GroupSample>,
}

impl ResponseGroup {
    pub fn samples(&self) -> &[GroupSample] {
        &self.samples
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.reward)
    }

    pub fn kind(&self) -> GroupKind {
        GroupKind::from_rewards(self.rewards())
    }

    pub fn num_correct(&self) -> usize {
        self.samples.iter().filter(|s| s.is_correct()).count()
    }
}

/// Validates the samples and assembles a group.
pub fn make_group(question: Question, samples: Vec<GroupSample>) -> Result<ResponseGroup> {
    if samples.len() < 2 {
        return Err(LensError::SizeError { got: samples.len() });
    }
    for s in &samples {
        s.validate()?;
    }
    Ok(ResponseGroup { question, samples })
}

/// A group after calibration; `advantages` is filled by the advantage stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedGroup {
    pub group: ResponseGroup,
    pub normalized_probs: Vec<f64>,
    pub difficulty: f64,
    pub calibrated_rewards: Vec<f64>,
    pub kind: GroupKind,
    pub advantages: Vec<f64>,
}

/// Preference over correct answers used to reweight the calibration ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PreferenceSpec {
    /// Uniform preference (rho = 1).
    #[default]
    None,
    /// rho = behaviour distribution.
    DataDistribution,
    /// rho = current policy.
    PolicyItself,
    /// rho = gamma^|o|.
    LengthGeometric { gamma: f64 },
}

impl PreferenceSpec {
    pub fn length_geometric(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(LensError::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        Ok(PreferenceSpec::LengthGeometric { gamma })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PreferenceSpec::LengthGeometric { gamma } => Self::length_geometric(gamma).map(|_| ()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, reward: f64) -> GroupSample {
        GroupSample::new(id, -1.0, 2, reward)
    }

    #[test]
    fn mixed_group_from_one_correct_one_wrong() {
        let g = make_group(Question::opaque("q"), vec![sample("a", 1.0), sample("b", 0.0)]).unwrap();
        assert_eq!(g.kind(), GroupKind::Mixed);
    }

    #[test]
    fn all_zero_rewards_make_a_negative_group() {
        let g = make_group(
            Question::opaque("q"),
            vec![sample("a", 0.0), sample("b", 0.0), sample("c", 0.0)],
        )
        .unwrap();
        assert_eq!(g.kind(), GroupKind::Negative);
        let g = make_group(Question::opaque("q"), vec![sample("a", 1.0), sample("b", 1.0)]).unwrap();
        assert_eq!(g.kind(), GroupKind::AllCorrect);
    }

    #[test]
    fn token_logprob_mismatch_is_rejected() {
        let bad = GroupSample::new("a", -1.0, 2, 0.0).with_token_logprobs(vec![-0.25, -0.25]);
        let err = make_group(Question::opaque("q"), vec![bad, sample("b", 0.0)]).unwrap_err();
        assert!(matches!(err, LensError::InconsistentSample { .. }), "{err}");

        let ok = GroupSample::new("a", -1.0, 2, 0.0).with_token_logprobs(vec![-0.5, -0.5]);
        assert!(make_group(Question::opaque("q"), vec![ok, sample("b", 0.0)]).is_ok());
    }

    #[test]
    fn size_and_reward_errors() {
        let err = make_group(Question::opaque("q"), vec![sample("a", 1.0)]).unwrap_err();
        assert_eq!(err, LensError::SizeError { got: 1 });
        let err = make_group(Question::opaque("q"), vec![sample("a", 0.5), sample("b", 0.0)]).unwrap_err();
        assert!(matches!(err, LensError::InvalidReward { .. }));
        let zero_len = GroupSample::new("a", -1.0, 0, 0.0);
        assert!(make_group(Question::opaque("q"), vec![zero_len, sample("b", 0.0)]).is_err());
        let token_count = GroupSample::new("a", -1.0, 3, 0.0).with_token_logprobs(vec![-0.5, -0.5]);
        assert!(make_group(Question::opaque("q"), vec![token_count, sample("b", 0.0)]).is_err());
    }

    #[test]
    fn question_invariants() {
        assert!(Question::multiple_choice("q", 6, &[0, 1]).is_ok());
        assert!(Question::multiple_choice("q", 6, &[7]).is_err());
        assert!(Question::multiple_choice("q", 0, &[]).is_err());
        let q = Question::multiple_choice("q", 3, &[2]).unwrap();
        assert_eq!(q.reward(&Answer::index(2)), 1.0);
        assert_eq!(q.reward(&Answer::index(0)), 0.0);
        assert_eq!(Question::opaque("x").is_correct(&Answer::index(0)), None);
    }

    #[test]
    fn gamma_only_valid_inside_unit_interval() {
        assert!(PreferenceSpec::length_geometric(0.9).is_ok());
        assert!(PreferenceSpec::length_geometric(1.0).is_err());
        assert!(PreferenceSpec::length_geometric(0.0).is_err());
    }
}
