//! Clipped surrogate ascent on group advantages.
//!
//! Objective per minibatch of `B` groups:
//! `(1/B) sum_groups (1/G) sum_i (1/|o_i|) sum_t min(rho_t A_i, clip(rho_t, 1-eps, 1+eps) A_i)`
//! with `rho_t = pi(o_t | prefix) / pi_old(o_t | prefix)` and no KL term.

use crate::error::{LensError, Result};
use crate::policy::Policy;
use crate::types::{Answer, CalibratedGroup, GroupKind};

use super::sampling::SampledGroup;

/// A group ready for the update: answers, behaviour log-probs and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingGroup {
    pub question: usize,
    pub answers: Vec<Answer>,
    pub old_token_logprobs: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
    pub kind: GroupKind,
}

impl TrainingGroup {
    pub fn new(sampled: &SampledGroup, calibrated: &CalibratedGroup) -> Self {
        let old_token_logprobs = sampled
            .group
            .samples()
            .iter()
            .map(|s| s.token_logprobs.clone().unwrap_or_else(|| vec![s.seq_logprob]))
            .collect();
        TrainingGroup {
            question: sampled.question,
            answers: sampled.answers.clone(),
            old_token_logprobs,
            advantages: calibrated.advantages.clone(),
            kind: calibrated.kind,
        }
    }

    pub fn size(&self) -> usize {
        self.answers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGradient {
    pub total: Vec<f64>,
    /// Part of `total` contributed by all-negative groups.
    pub from_negative: Vec<f64>,
    pub tokens: usize,
    pub clipped_tokens: usize,
}

/// Ascent direction of the clipped surrogate at the current parameters.
pub fn surrogate_gradient<P: Policy>(policy: &P, groups: &[TrainingGroup], clip_epsilon: f64) -> Result<SurrogateGradient> {
    let mut total = vec![0.0; policy.num_params()];
    let mut from_negative = vec![0.0; policy.num_params()];
    let (mut tokens, mut clipped_tokens) = (0, 0);
    if groups.is_empty() {
        return Ok(SurrogateGradient { total, from_negative, tokens, clipped_tokens });
    }
    let b = groups.len() as f64;
    for g in groups {
        let negative = g.kind == GroupKind::Negative;
        let size = g.size() as f64;
        for ((answer, old), &adv) in g.answers.iter().zip(&g.old_token_logprobs).zip(&g.advantages) {
            tokens += answer.len();
            if adv == 0.0 {
                continue;
            }
            let new = policy.token_log_probs(g.question, answer)?;
            let weight = adv / (b * size * answer.len() as f64);
            for (t, (lp, lp_old)) in new.iter().zip(old).enumerate() {
                let ratio = (lp - lp_old).exp();
                let clipped = (adv > 0.0 && ratio > 1.0 + clip_epsilon) || (adv < 0.0 && ratio < 1.0 - clip_epsilon);
                if clipped {
                    clipped_tokens += 1;
                    continue;
                }
                policy.add_token_score(g.question, answer, t, weight * ratio, &mut total)?;
                if negative {
                    policy.add_token_score(g.question, answer, t, weight * ratio, &mut from_negative)?;
                }
            }
        }
    }
    Ok(SurrogateGradient { total, from_negative, tokens, clipped_tokens })
}

/// Hyperparameters of one outer update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig {
    pub learning_rate: f64,
    pub inner_updates: usize,
    pub clip_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    /// `sqrt(sum over minibatches of |g|^2)`.
    pub grad_norm: f64,
    pub grad_norm_from_negative_groups: f64,
    pub clip_fraction: f64,
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Minibatch `j` of `inner_updates`: consecutive chunks of
/// `ceil(n / inner_updates)` groups, wrapping around when there are fewer
/// groups than updates.
pub fn minibatch(groups: &[TrainingGroup], inner_updates: usize, j: usize) -> Vec<TrainingGroup> {
    let n = groups.len();
    if n == 0 {
        return Vec::new();
    }
    let size = n.div_ceil(inner_updates);
    (0..size).map(|i| groups[(j * size + i) % n].clone()).collect()
}

/// Runs `inner_updates` ascent steps against the snapshot stored in
/// `groups`. A non-finite gradient or parameter aborts the step, leaving the
/// policy at its last finite state; the error carries `step`.
pub fn surrogate_update<P: Policy>(
    policy: &mut P,
    groups: &[TrainingGroup],
    cfg: &UpdateConfig,
    step: usize,
) -> Result<UpdateStats> {
    let (mut total_sq, mut negative_sq) = (0.0, 0.0);
    let (mut tokens, mut clipped) = (0, 0);
    for j in 0..cfg.inner_updates {
        let batch = minibatch(groups, cfg.inner_updates, j);
        let g = surrogate_gradient(policy, &batch, cfg.clip_epsilon)?;
        let next: Vec<f64> = policy.params().iter().zip(&g.total).map(|(p, d)| p + cfg.learning_rate * d).collect();
        if g.total.iter().chain(&next).any(|x| !x.is_finite()) {
            return Err(LensError::NonFiniteGradient { step });
        }
        total_sq += norm_sq(&g.total);
        negative_sq += norm_sq(&g.from_negative);
        tokens += g.tokens;
        clipped += g.clipped_tokens;
        policy.params_mut().copy_from_slice(&next);
    }
    Ok(UpdateStats {
        grad_norm: total_sq.sqrt(),
        grad_norm_from_negative_groups: negative_sq.sqrt(),
        clip_fraction: if tokens == 0 { 0.0 } else { clipped as f64 / tokens as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{LinearAutoregressive, TabularSoftmax};
    use crate::theory::relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn group<P: Policy>(policy: &P, q: usize, answers: Vec<Answer>, advantages: Vec<f64>, kind: GroupKind) -> TrainingGroup {
        let old = answers.iter().map(|a| policy.token_log_probs(q, a).unwrap()).collect();
        TrainingGroup { question: q, answers, old_token_logprobs: old, advantages, kind }
    }

    fn cfg(lr: f64, inner: usize) -> UpdateConfig {
        UpdateConfig { learning_rate: lr, inner_updates: inner, clip_epsilon: 0.2 }
    }

    #[test]
    fn zero_advantages_leave_parameters_unchanged() {
        let mut p = TabularSoftmax::from_logits(vec![vec![0.1, 0.5, -0.3]]);
        let before = p.clone();
        let g = group(&p, 0, vec![Answer::index(0), Answer::index(2)], vec![0.0, 0.0], GroupKind::Negative);
        let stats = surrogate_update(&mut p, &[g], &cfg(1.0, 4), 1).unwrap();
        assert_eq!(p, before);
        assert_eq!(stats.grad_norm, 0.0);
        assert_eq!(stats.grad_norm_from_negative_groups, 0.0);
    }

    #[test]
    fn first_step_is_reinforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = vec![vec![0.3, -0.2], vec![0.9, 0.1]];
        let mut p = LinearAutoregressive::new(3, 3, emb);
        p.randomize(&mut rng, 0.5);
        let groups: Vec<TrainingGroup> = (0..2)
            .map(|q| {
                let answers: Vec<Answer> = (0..4).map(|_| p.sample(q, &mut rng)).collect();
                let adv = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                group(&p, q, answers, adv, GroupKind::Mixed)
            })
            .collect();
        let g = surrogate_gradient(&p, &groups, 0.2).unwrap();
        let mut expected = vec![0.0; p.num_params()];
        for gr in &groups {
            for (a, adv) in gr.answers.iter().zip(&gr.advantages) {
                p.add_score(gr.question, a, adv / (2.0 * 4.0 * a.len() as f64), &mut expected).unwrap();
            }
        }
        assert!(relative_error(&g.total, &expected) < 1e-14);
        assert_eq!(g.clipped_tokens, 0);
    }

    #[test]
    fn clip_engages_after_large_step() {
        let mut p = TabularSoftmax::new(vec![4]);
        let g = group(&p, 0, vec![Answer::index(0), Answer::index(1)], vec![1.0, 0.0], GroupKind::Mixed);
        let first = surrogate_gradient(&p, std::slice::from_ref(&g), 0.2).unwrap();
        assert!(first.total[0] > 0.0);
        // one large step pushes pi(0) / pi_old(0) past 1 + eps
        surrogate_update(&mut p, std::slice::from_ref(&g), &cfg(10.0, 1), 1).unwrap();
        let ratio = (p.log_prob(0, &Answer::index(0)).unwrap() - g.old_token_logprobs[0][0]).exp();
        assert!(ratio > 1.2);
        let second = surrogate_gradient(&p, &[g], 0.2).unwrap();
        assert_eq!(second.total, vec![0.0; 4]);
        assert_eq!(second.clipped_tokens, 1);
    }

    #[test]
    fn negative_advantage_clips_below() {
        let mut p = TabularSoftmax::new(vec![3]);
        let g = group(&p, 0, vec![Answer::index(0), Answer::index(1)], vec![-1.0, 0.0], GroupKind::Negative);
        surrogate_update(&mut p, std::slice::from_ref(&g), &cfg(20.0, 1), 1).unwrap();
        let second = surrogate_gradient(&p, &[g], 0.2).unwrap();
        assert_eq!(second.clipped_tokens, 1);
        assert_eq!(second.from_negative, vec![0.0; 3]);
    }

    #[test]
    fn gradient_split_by_kind() {
        let p = TabularSoftmax::new(vec![3, 3]);
        let neg = group(&p, 0, vec![Answer::index(0), Answer::index(1)], vec![-0.1, 0.1], GroupKind::Negative);
        let mixed = group(&p, 1, vec![Answer::index(2), Answer::index(1)], vec![1.0, -1.0], GroupKind::Mixed);
        let g = surrogate_gradient(&p, &[neg.clone(), mixed], 0.2).unwrap();
        let only = surrogate_gradient(&p, &[neg], 0.2).unwrap();
        // same minibatch normalization differs by the group count
        for (a, b) in g.from_negative.iter().zip(&only.total) {
            assert!((a - b / 2.0).abs() < 1e-15);
        }
        assert!(g.from_negative[3..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = TabularSoftmax::new(vec![2]);
        let g = group(&p, 0, vec![Answer::index(0), Answer::index(1)], vec![f64::NAN, 1.0], GroupKind::Mixed);
        let before = p.clone();
        let err = surrogate_update(&mut p, &[g], &cfg(1.0, 2), 7).unwrap_err();
        assert_eq!(err, LensError::NonFiniteGradient { step: 7 });
        assert_eq!(p, before);
    }

    #[test]
    fn overflowing_step_aborts() {
        let big = 0.9 * f64::MAX;
        let mut p = TabularSoftmax::from_logits(vec![vec![big, big]]);
        let g = group(&p, 0, vec![Answer::index(0), Answer::index(1)], vec![1.0, -1.0], GroupKind::Mixed);
        let before = p.clone();
        let err = surrogate_update(&mut p, &[g], &cfg(f64::MAX, 1), 3).unwrap_err();
        assert_eq!(err, LensError::NonFiniteGradient { step: 3 });
        assert_eq!(p, before);
    }

    #[test]
    fn minibatches_cover_groups() {
        let p = TabularSoftmax::new(vec![2]);
        let groups: Vec<_> = (0..6)
            .map(|i| group(&p, 0, vec![Answer::index(0), Answer::index(1)], vec![i as f64, 0.0], GroupKind::Mixed))
            .collect();
        let firsts: Vec<f64> = (0..4).flat_map(|j| minibatch(&groups, 4, j)).map(|g| g.advantages[0]).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 0.0, 1.0]);
        assert_eq!(minibatch(&groups[..1], 4, 3).len(), 1);
    }
}
