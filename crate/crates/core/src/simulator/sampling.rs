//! Group sampling with verifier rewards.

use rand::Rng;

use crate::error::Result;
use crate::policy::Policy;
use crate::theory::EnumerableTask;
use crate::types::{make_group, Answer, GroupSample, ResponseGroup};

/// A sampled group together with the raw answers and question index.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGroup {
    pub question: usize,
    pub answers: Vec<Answer>,
    pub group: ResponseGroup,
}

/// Draws `group_size` i.i.d. answers to question `q` and scores them by
/// membership in its correct set.
pub fn sample_group<P: Policy, R: Rng + ?Sized>(
    policy: &P,
    task: &EnumerableTask,
    q: usize,
    group_size: usize,
    rng: &mut R,
) -> Result<SampledGroup> {
    let question = &task.questions[q];
    let mut answers = Vec::with_capacity(group_size);
    let mut samples = Vec::with_capacity(group_size);
    for i in 0..group_size {
        let answer = policy.sample(q, rng);
        let token_logprobs = policy.token_log_probs(q, &answer)?;
        let seq_logprob = token_logprobs.iter().sum();
        let sample = GroupSample::new(format!("{}-{i}", question.id), seq_logprob, answer.len(), question.reward(&answer))
            .with_token_logprobs(token_logprobs);
        samples.push(sample);
        answers.push(answer);
    }
    let group = make_group(question.clone(), samples)?;
    Ok(SampledGroup { question: q, answers, group })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TabularSoftmax;
    use crate::types::{GroupKind, Question};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> EnumerableTask {
        EnumerableTask::multiple_choice_toy()
    }

    #[test]
    fn certain_policies_give_constant_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sure = TabularSoftmax::from_logits(vec![vec![0.0, f64::NEG_INFINITY, -1e3, -1e3, -1e3, -1e3]]);
        let g = sample_group(&sure, &toy(), 0, 8, &mut rng).unwrap();
        assert!(g.group.rewards().all(|r| r == 1.0));
        assert_eq!(g.group.kind(), GroupKind::AllCorrect);

        let never = TabularSoftmax::from_logits(vec![vec![-1e3, -1e3, 0.0, 0.5, 1.0, 0.0]]);
        for _ in 0..50 {
            let g = sample_group(&never, &toy(), 0, 8, &mut rng).unwrap();
            assert_eq!(g.group.kind(), GroupKind::Negative);
        }
    }

    #[test]
    fn records_match_the_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = TabularSoftmax::from_logits(vec![vec![0.3, -0.2, 1.0, 0.0, 0.0, 0.1]]);
        let g = sample_group(&p, &toy(), 0, 16, &mut rng).unwrap();
        assert_eq!(g.group.size(), 16);
        for (s, a) in g.group.samples().iter().zip(&g.answers) {
            assert_eq!(s.seq_logprob, p.log_prob(0, a).unwrap());
            assert_eq!(s.length, 1);
            assert_eq!(s.reward, toy().questions[0].reward(a));
        }
    }

    #[test]
    fn group_of_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = TabularSoftmax::new(vec![6]);
        assert!(sample_group(&p, &toy(), 0, 1, &mut rng).is_err());
    }

    #[test]
    fn negative_group_rate_matches_binomial() {
        let trials = 1_000_000;
        let task = EnumerableTask::uniform(vec![Question::multiple_choice("q", 6, &[0, 1]).unwrap()]).unwrap();
        let p = TabularSoftmax::new(vec![6]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut negative = 0usize;
        for _ in 0..trials {
            // cheaper than building full groups; same sampler
            if (0..16).all(|_| task.questions[0].reward(&p.sample(0, &mut rng)) == 0.0) {
                negative += 1;
            }
        }
        let expected = (4.0f64 / 6.0).powi(16);
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        let rate = negative as f64 / trials as f64;
        assert!((rate - expected).abs() <= 3.0 * sigma, "{rate} vs {expected} +- {sigma}");
        assert!((expected - 0.00152).abs() < 1e-5);
    }
}
