//! Likelihood view of the calibrated reward, with executable checks.
//!
//! The reward model `p(q, o) = pi(o | q) / D(q)` is fit by maximum likelihood.
//! Its loss gradient is a policy gradient whose per-sample coefficient is
//! `r - (1 - r) * pi / (D - pi)`. On-policy, that gradient equals the gradient
//! of the value function `J+ - J-`, where `J-` charges incorrect answers
//! `w(pi / D)` with `w(z) = log(1 / (1 - z)) / z - 1`.
//!
//! The checks below compare analytic gradients against central finite
//! differences of independently coded objectives.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::confidence_odds;
use crate::error::{LensError, Result};
use crate::policy::{LinearAutoregressive, Policy, TabularSoftmax};
use crate::rng::stream_rng;
use crate::types::{Answer, PreferenceSpec, Question};

/// Questions with full answer spaces and a sampling distribution over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerableTask {
    pub questions: Vec<Question>,
    pub weights: Vec<f64>,
}

impl EnumerableTask {
    pub fn new(questions: Vec<Question>, weights: Vec<f64>) -> Result<Self> {
        if questions.is_empty() || questions.len() != weights.len() {
            return Err(LensError::SpecError(format!(
                "{} questions with {} weights",
                questions.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(LensError::SpecError("question weights must form a probability vector".into()));
        }
        for q in &questions {
            if q.answer_space().is_none() {
                return Err(LensError::SpecError(format!("question `{}` is not enumerable", q.id)));
            }
            if q.correct_set().is_none_or(|c| c.is_empty()) {
                return Err(LensError::EmptyCorrectSet(q.id.clone()));
            }
        }
        Ok(EnumerableTask { questions, weights })
    }

    pub fn uniform(questions: Vec<Question>) -> Result<Self> {
        let n = questions.len();
        Self::new(questions, vec![1.0 / n.max(1) as f64; n])
    }

    /// One question, six answers, the first two correct.
    pub fn multiple_choice_toy() -> Self {
        let q = Question::multiple_choice("toy", 6, &[0, 1]).expect("static toy question");
        Self::uniform(vec![q]).expect("static toy task")
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn difficulties(&self) -> Result<Vec<f64>> {
        self.questions.iter().map(true_difficulty).collect()
    }
}

/// One observation `(q, o, r)` for the likelihood objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datapoint {
    pub question: usize,
    pub answer: Answer,
    pub reward: f64,
    /// Log-probability of `answer` under the data-collection distribution.
    #[serde(default)]
    pub behavior_logprob: Option<f64>,
}

impl Datapoint {
    pub fn new(question: usize, answer: Answer, reward: f64) -> Self {
        Datapoint { question, answer, reward, behavior_logprob: None }
    }
}

/// `1 / |correct set|` for a binary ground truth.
pub fn true_difficulty(q: &Question) -> Result<f64> {
    match q.correct_set() {
        Some(c) if !c.is_empty() => Ok(1.0 / c.len() as f64),
        _ => Err(LensError::EmptyCorrectSet(q.id.clone())),
    }
}

fn check_binary(reward: f64) -> Result<()> {
    if reward == 0.0 || reward == 1.0 {
        Ok(())
    } else {
        Err(LensError::DomainError(format!("reward {reward} is not binary")))
    }
}

/// `-(1/n) sum [ r log pi + (1 - r) log(1 - pi / D) ]`.
pub fn mle_loss<P: Policy>(policy: &P, data: &[Datapoint], difficulty: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for dp in data {
        check_binary(dp.reward)?;
        let logp = policy.log_prob(dp.question, &dp.answer)?;
        let d = difficulty[dp.question];
        if dp.reward == 1.0 {
            total += logp;
        } else {
            let p = logp.exp();
            if p >= d {
                return Err(LensError::DomainError(format!(
                    "pi = {p} >= D = {d} on a negative datapoint"
                )));
            }
            total += (-p / d).ln_1p();
        }
    }
    Ok(-total / data.len() as f64)
}

fn negative_coefficient(prob: f64, d: f64) -> Result<f64> {
    if !(prob < d) {
        return Err(LensError::DomainError(format!(
            "pi = {prob} >= D = {d} on a negative datapoint"
        )));
    }
    Ok(-confidence_odds(prob, d))
}

fn grad_with_preference<P: Policy>(
    policy: &P,
    data: &[Datapoint],
    difficulty: &[f64],
    spec: &PreferenceSpec,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.num_params()];
    if data.is_empty() {
        return Ok(grad);
    }
    let n = data.len() as f64;
    for dp in data {
        check_binary(dp.reward)?;
        let coef = if dp.reward == 1.0 {
            1.0
        } else {
            let logp = policy.log_prob(dp.question, &dp.answer)?;
            let rho = match *spec {
                PreferenceSpec::None => 1.0,
                PreferenceSpec::PolicyItself => logp.exp(),
                PreferenceSpec::DataDistribution => dp
                    .behavior_logprob
                    .ok_or_else(|| {
                        LensError::DomainError("data-distribution preference needs behavior_logprob".into())
                    })?
                    .exp(),
                PreferenceSpec::LengthGeometric { gamma } => gamma.powi(dp.answer.len() as i32),
            };
            negative_coefficient(logp.exp(), difficulty[dp.question] * rho)?
        };
        policy.add_score(dp.question, &dp.answer, -coef / n, &mut grad)?;
    }
    Ok(grad)
}

/// Analytic gradient of [`mle_loss`]:
/// `-(1/n) sum [ r - (1 - r) pi / (D - pi) ] grad log pi`.
pub fn mle_grad_analytic<P: Policy>(policy: &P, data: &[Datapoint], difficulty: &[f64]) -> Result<Vec<f64>> {
    grad_with_preference(policy, data, difficulty, &PreferenceSpec::None)
}

/// Loss gradient with the difficulty scaled by a preference `rho(q, o)`:
/// `-(1/n) sum [ r - (1 - r) pi / (D rho - pi) ] grad log pi`.
///
/// `rho` is evaluated at the current parameters and held fixed.
pub fn preference_gradient<P: Policy>(
    policy: &P,
    data: &[Datapoint],
    difficulty: &[f64],
    spec: &PreferenceSpec,
) -> Result<Vec<f64>> {
    grad_with_preference(policy, data, difficulty, spec)
}

/// `w(z) = log(1/(1-z)) / z - 1` on `[0, 1)`, with `w(0) = 0`.
pub fn weight_function(z: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&z) {
        return Err(LensError::DomainError(format!("w(z) needs 0 <= z < 1, got {z}")));
    }
    if z < 1e-4 {
        // w(z) = sum_{k>=1} z^k / (k + 1)
        let mut term = z;
        let mut sum = 0.0;
        for k in 1..12 {
            sum += term / (k + 1) as f64;
            term *= z;
        }
        return Ok(sum);
    }
    Ok(-(-z).ln_1p() / z - 1.0)
}

/// `J+ - J-` evaluated exactly over the enumerated answer spaces.
pub fn jmle_value<P: Policy>(policy: &P, task: &EnumerableTask) -> Result<f64> {
    let mut j = 0.0;
    for (qi, (q, &xi)) in task.questions.iter().zip(&task.weights).enumerate() {
        let d = true_difficulty(q)?;
        let space = q.answer_space().expect("validated enumerable");
        let mut inner = 0.0;
        for o in space {
            let p = policy.log_prob(qi, o)?.exp();
            if q.reward(o) == 1.0 {
                inner += p;
            } else {
                let z = p / d;
                if z >= 1.0 {
                    return Err(LensError::DomainError(format!(
                        "pi / D = {z} >= 1 for incorrect answer {o} of `{}`",
                        q.id
                    )));
                }
                inner -= p * weight_function(z)?;
            }
        }
        j += xi * inner;
    }
    Ok(j)
}

/// Distribution the population gradient draws answers from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    OnPolicy,
    Uniform,
}

/// Ascent direction of the population log-likelihood,
/// `sum_q xi(q) sum_o mu(o|q) E_r[ r - (1 - r) pi/(D - pi) ] grad log pi(o|q)`,
/// with `r ~ Bernoulli(r*(q, o))` averaged analytically. Uses the true
/// difficulty of each question.
pub fn population_mle_gradient<P: Policy>(policy: &P, task: &EnumerableTask, sampler: Sampler) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.num_params()];
    for (qi, (q, &xi)) in task.questions.iter().zip(&task.weights).enumerate() {
        let d = true_difficulty(q)?;
        let space = q.answer_space().expect("validated enumerable");
        let uniform = 1.0 / space.len() as f64;
        for o in space {
            let p = policy.log_prob(qi, o)?.exp();
            let mu = match sampler {
                Sampler::OnPolicy => p,
                Sampler::Uniform => uniform,
            };
            if mu == 0.0 {
                continue;
            }
            let p_star = q.reward(o);
            let bracket = if p_star == 1.0 {
                1.0
            } else {
                p_star + (1.0 - p_star) * negative_coefficient(p, d)?
            };
            policy.add_score(qi, o, xi * mu * bracket, &mut grad)?;
        }
    }
    Ok(grad)
}

/// `max |a - b| / max(|a|, |b|)` in the infinity norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Central finite differences of `f` over the policy parameters.
pub fn fd_gradient<P, F>(policy: &P, h: f64, f: F) -> Result<Vec<f64>>
where
    P: Policy + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let mut probe = policy.clone();
    let mut out = Vec::with_capacity(policy.num_params());
    for i in 0..policy.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.params_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.params_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// One Richardson step on central differences: `(4 D(h/2) - D(h)) / 3`.
pub fn fd_gradient_richardson<P, F>(policy: &P, h: f64, f: F) -> Result<Vec<f64>>
where
    P: Policy + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let coarse = fd_gradient(policy, h, &f)?;
    let fine = fd_gradient(policy, h / 2.0, &f)?;
    Ok(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect())
}

pub const FD_STEP: f64 = 1e-5;

/// Compares `analytic` with finite differences of `f`, refining once by
/// Richardson extrapolation when the error is within 10x of `tol`.
fn compare_with_fd<P, F>(policy: &P, analytic: &[f64], tol: f64, f: F) -> Result<f64>
where
    P: Policy + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let fd = fd_gradient(policy, FD_STEP, &f)?;
    let err = relative_error(analytic, &fd);
    if err * 10.0 <= tol {
        return Ok(err);
    }
    let refined = fd_gradient_richardson(policy, FD_STEP, &f)?;
    Ok(err.min(relative_error(analytic, &refined)))
}

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    /// Worst error over all trials.
    pub value: f64,
    pub tolerance: f64,
    pub trials: usize,
    pub passed: bool,
}

impl CheckEntry {
    fn new(name: &str, value: f64, tolerance: f64, trials: usize) -> Self {
        CheckEntry {
            name: name.to_string(),
            value,
            tolerance,
            trials,
            passed: value <= tolerance,
        }
    }
}

/// Analytic loss gradient vs finite differences of the loss.
pub fn loss_gradient_check<P: Policy + Clone>(
    policy: &P,
    data: &[Datapoint],
    difficulty: &[f64],
    tol: f64,
) -> Result<CheckEntry> {
    let analytic = mle_grad_analytic(policy, data, difficulty)?;
    let err = compare_with_fd(policy, &analytic, tol, |p| mle_loss(p, data, difficulty))?;
    Ok(CheckEntry::new("loss_gradient", err, tol, 1))
}

/// Exact on-policy population likelihood gradient vs finite differences of
/// the value function.
pub fn value_gradient_check<P: Policy + Clone>(policy: &P, task: &EnumerableTask, tol: f64) -> Result<CheckEntry> {
    let analytic = population_mle_gradient(policy, task, Sampler::OnPolicy)?;
    let err = compare_with_fd(policy, &analytic, tol, |p| jmle_value(p, task))?;
    Ok(CheckEntry::new("value_gradient", err, tol, 1))
}

/// Off-policy (uniform sampler) gradient vs the value-function gradient.
/// Not expected to vanish; reported as a measurement.
pub fn offpolicy_gap<P: Policy + Clone>(policy: &P, task: &EnumerableTask) -> Result<f64> {
    let off = population_mle_gradient(policy, task, Sampler::Uniform)?;
    let fd = fd_gradient(policy, FD_STEP, |p| jmle_value(p, task))?;
    Ok(relative_error(&off, &fd))
}

/// Grid of `n` interior points `i / (n + 1)`.
pub fn weight_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// Max over the grid of `|w(z) + z w'(z) - z / (1 - z)|`, with `w'` from a
/// five-point stencil whose step shrinks toward both ends of `(0, 1)`.
pub fn weight_identity_residual(grid: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &z in grid {
        let h = 1e-3 * z.min(1.0 - z);
        let dw = (-weight_function(z + 2.0 * h)? + 8.0 * weight_function(z + h)?
            - 8.0 * weight_function(z - h)?
            + weight_function(z - 2.0 * h)?)
            / (12.0 * h);
        let lhs = weight_function(z)? + z * dw;
        worst = worst.max((lhs - z / (1.0 - z)).abs());
    }
    Ok(worst)
}

pub fn weight_identity_check(tol: f64) -> Result<CheckEntry> {
    let grid = weight_grid(999);
    let err = weight_identity_residual(&grid)?;
    Ok(CheckEntry::new("weight_identity", err, tol, grid.len()))
}

/// Tabular logits for `(1 - eps) * pi* + eps * uniform`, where `pi*` spreads
/// mass evenly over the correct answers. `eps = 0` yields `-inf` logits on
/// incorrect answers.
pub fn optimal_logits(task: &EnumerableTask, eps: f64) -> Vec<Vec<f64>> {
    task.questions
        .iter()
        .map(|q| {
            let space = q.answer_space().expect("validated enumerable");
            let correct = q.correct_set().expect("validated enumerable");
            let k = space.len() as f64;
            let c = correct.len() as f64;
            space
                .iter()
                .map(|o| {
                    let base = if correct.contains(o) { 1.0 / c } else { 0.0 };
                    ((1.0 - eps) * base + eps / k).ln()
                })
                .collect()
        })
        .collect()
}

/// Expected likelihood gradient at the smoothed optimum under both samplers.
/// Passes when the worst L2 norm is at most `tol + eps`; the smoothing leaves
/// an O(eps) residual that vanishes at the unsmoothed optimum.
pub fn consistency_check(task: &EnumerableTask, tol: f64, eps: f64) -> Result<ConsistencyOutcome> {
    let norm_at = |eps: f64| -> Result<(f64, f64)> {
        let policy = TabularSoftmax::from_logits(optimal_logits(task, eps));
        let uni = l2(&population_mle_gradient(&policy, task, Sampler::Uniform)?);
        let on = l2(&population_mle_gradient(&policy, task, Sampler::OnPolicy)?);
        Ok((uni, on))
    };
    let (uniform_norm, on_policy_norm) = norm_at(eps)?;
    let (exact_uniform, exact_on_policy) = norm_at(0.0)?;
    let worst = uniform_norm.max(on_policy_norm);
    let exact = exact_uniform.max(exact_on_policy);
    let mut entry = CheckEntry::new("consistency", worst, tol + eps, 2);
    entry.passed = worst <= tol + eps && exact <= tol;
    Ok(ConsistencyOutcome {
        entry,
        uniform_norm,
        on_policy_norm,
        exact_norm: exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyOutcome {
    pub entry: CheckEntry,
    pub uniform_norm: f64,
    pub on_policy_norm: f64,
    /// Worst norm at the unsmoothed optimum.
    pub exact_norm: f64,
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

/// Random tabular instance with at most `max_questions x max_answers` logits,
/// N(0, 1) parameters and uniformly drawn observations.
pub fn random_tabular_instance(
    rng: &mut ChaCha8Rng,
    max_questions: usize,
    max_answers: usize,
    max_data: usize,
) -> (TabularSoftmax, Vec<Datapoint>, Vec<f64>) {
    let nq = rng.random_range(1..=max_questions);
    let mut logits = Vec::with_capacity(nq);
    let mut correct = Vec::with_capacity(nq);
    for _ in 0..nq {
        let k = rng.random_range(2..=max_answers);
        logits.push((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
        let c = rng.random_range(1..k);
        correct.push(random_subset(rng, k, c));
    }
    let policy = TabularSoftmax::from_logits(logits);
    let n = rng.random_range(1..=max_data);
    let data: Vec<Datapoint> = (0..n)
        .map(|_| {
            let q = rng.random_range(0..nq);
            let o = rng.random_range(0..policy.num_answers(q));
            let r = if correct[q].contains(&o) { 1.0 } else { 0.0 };
            Datapoint::new(q, Answer::index(o), r)
        })
        .collect();
    let difficulty = (0..nq)
        .map(|q| {
            let max_p = policy.probs(q).into_iter().fold(0.0, f64::max);
            (1.0 / correct[q].len() as f64).max(1.25 * max_p)
        })
        .collect();
    (policy, data, difficulty)
}

/// Random linear autoregressive instance over a small sequence space.
pub fn random_autoregressive_instance(
    rng: &mut ChaCha8Rng,
    max_data: usize,
) -> (LinearAutoregressive, Vec<Datapoint>, Vec<f64>) {
    let vocab = rng.random_range(2..=4);
    let max_len = rng.random_range(1..=3);
    let nq = rng.random_range(1..=3);
    let dim = 2;
    let emb = (0..nq)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut policy = LinearAutoregressive::new(vocab, max_len, emb);
    policy.randomize(rng, 0.7);
    let space = policy.answer_space(0);
    let correct: Vec<Vec<usize>> = (0..nq)
        .map(|_| {
            let c = rng.random_range(1..space.len().max(2));
            random_subset(rng, space.len(), c.min(space.len()))
        })
        .collect();
    let n = rng.random_range(1..=max_data);
    let data = (0..n)
        .map(|_| {
            let q = rng.random_range(0..nq);
            let idx = rng.random_range(0..space.len());
            let r = if correct[q].contains(&idx) { 1.0 } else { 0.0 };
            Datapoint::new(q, space[idx].clone(), r)
        })
        .collect();
    let difficulty = (0..nq)
        .map(|q| {
            let max_p = policy.answer_probs(q).into_iter().fold(0.0, f64::max);
            (1.0 / correct[q].len() as f64).max(1.25 * max_p)
        })
        .collect();
    (policy, data, difficulty)
}

/// Random enumerable multiple-choice task with a tabular policy for which
/// every incorrect answer satisfies `pi / D <= 0.95`.
pub fn random_enumerable_instance(rng: &mut ChaCha8Rng) -> (EnumerableTask, TabularSoftmax) {
    let nq = rng.random_range(1..=5);
    let mut questions = Vec::with_capacity(nq);
    for i in 0..nq {
        let k = rng.random_range(3..=10);
        let c = rng.random_range(1..k);
        let correct = random_subset(rng, k, c);
        questions.push(Question::multiple_choice(format!("q{i}"), k, &correct).expect("valid subset"));
    }
    let raw: Vec<f64> = (0..nq).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    let task = EnumerableTask::new(questions, weights).expect("valid random task");

    let base: Vec<Vec<f64>> = task
        .questions
        .iter()
        .map(|q| {
            let k = q.answer_space().unwrap().len();
            (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    // shrink toward uniform until the value function is defined with margin;
    // uniform always qualifies because |C| / K < 1
    let mut scale = 1.0;
    loop {
        let logits = base.iter().map(|l| l.iter().map(|x| x * scale).collect()).collect();
        let policy = TabularSoftmax::from_logits(logits);
        let ok = task.questions.iter().enumerate().all(|(qi, q)| {
            let d = 1.0 / q.correct_set().unwrap().len() as f64;
            q.answer_space()
                .unwrap()
                .iter()
                .zip(policy.probs(qi))
                .all(|(o, p)| q.reward(o) == 1.0 || p / d <= 0.95)
        });
        if ok {
            return (task, policy);
        }
        scale *= 0.7;
    }
}

/// Which checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Theorem1,
    Theorem2,
    Weight,
    Consistency,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub tol_theorem1: f64,
    pub tol_theorem2: f64,
    pub tol_weight: f64,
    pub tol_consistency: f64,
    pub smoothing: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trials: 100,
            seed: 0,
            tol_theorem1: 1e-6,
            tol_theorem2: 1e-4,
            tol_weight: 1e-6,
            tol_consistency: 1e-8,
            smoothing: 1e-6,
        }
    }
}

/// Aggregated verification results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub loss_gradient: Option<CheckEntry>,
    pub loss_gradient_autoregressive: Option<CheckEntry>,
    pub value_gradient: Option<CheckEntry>,
    pub weight_identity: Option<CheckEntry>,
    pub consistency: Option<ConsistencyOutcome>,
    /// Measured, never asserted.
    pub offpolicy_gap: Option<f64>,
}

impl TheoryReport {
    pub fn grad_mle_vs_autograd_relerr(&self) -> Option<f64> {
        self.loss_gradient.as_ref().map(|e| e.value)
    }

    pub fn grad_jmle_vs_mle_relerr(&self) -> Option<f64> {
        self.value_gradient.as_ref().map(|e| e.value)
    }

    pub fn weight_identity_maxerr(&self) -> Option<f64> {
        self.weight_identity.as_ref().map(|e| e.value)
    }

    pub fn consistency_gradnorm(&self) -> Option<f64> {
        self.consistency.as_ref().map(|c| c.entry.value)
    }

    pub fn entries(&self) -> Vec<&CheckEntry> {
        [
            self.loss_gradient.as_ref(),
            self.loss_gradient_autoregressive.as_ref(),
            self.value_gradient.as_ref(),
            self.weight_identity.as_ref(),
            self.consistency.as_ref().map(|c| &c.entry),
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn all_passed(&self) -> bool {
        self.entries().iter().all(|e| e.passed)
    }
}

impl fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<26} {:>8} {:>14} {:>12}  status", "check", "trials", "max error", "tolerance")?;
        for e in self.entries() {
            writeln!(
                f,
                "{:<26} {:>8} {:>14.3e} {:>12.1e}  {}",
                e.name,
                e.trials,
                e.value,
                e.tolerance,
                if e.passed { "PASS" } else { "FAIL" }
            )?;
        }
        if let Some(c) = &self.consistency {
            writeln!(
                f,
                "consistency norms: uniform {:.3e}, on-policy {:.3e}, unsmoothed {:.3e}",
                c.uniform_norm, c.on_policy_norm, c.exact_norm
            )?;
        }
        if let Some(gap) = self.offpolicy_gap {
            writeln!(f, "off-policy gap (uniform sampler, measured): {gap:.3e}")?;
        }
        Ok(())
    }
}

fn worst(name: &str, values: Vec<Result<f64>>, tol: f64) -> Result<CheckEntry> {
    let trials = values.len();
    let mut max = 0.0f64;
    for v in values {
        max = max.max(v?);
    }
    Ok(CheckEntry::new(name, max, tol, trials))
}

/// Runs the requested checks with seeded random instances.
pub fn run_suite(suite: Suite, cfg: &VerifyConfig) -> Result<TheoryReport> {
    let mut report = TheoryReport::default();
    let want = |s: Suite| suite == Suite::All || suite == s;

    if want(Suite::Theorem1) {
        let tabular: Vec<Result<f64>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(cfg.seed, &[1, t as u64]);
                let (policy, data, d) = random_tabular_instance(&mut rng, 20, 10, 60);
                loss_gradient_check(&policy, &data, &d, cfg.tol_theorem1).map(|e| e.value)
            })
            .collect();
        report.loss_gradient = Some(worst("loss_gradient", tabular, cfg.tol_theorem1)?);

        let ar_tol = (cfg.tol_theorem1 * 10.0).max(cfg.tol_theorem1);
        let ar: Vec<Result<f64>> = (0..cfg.trials.div_ceil(5))
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(cfg.seed, &[2, t as u64]);
                let (policy, data, d) = random_autoregressive_instance(&mut rng, 30);
                loss_gradient_check(&policy, &data, &d, ar_tol).map(|e| e.value)
            })
            .collect();
        report.loss_gradient_autoregressive = Some(worst("loss_gradient_autoregressive", ar, ar_tol)?);
    }

    if want(Suite::Theorem2) {
        let results: Vec<Result<(f64, f64)>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(cfg.seed, &[3, t as u64]);
                let (task, policy) = random_enumerable_instance(&mut rng);
                let err = value_gradient_check(&policy, &task, cfg.tol_theorem2)?.value;
                let gap = offpolicy_gap(&policy, &task)?;
                Ok((err, gap))
            })
            .collect();
        let mut errs = Vec::with_capacity(results.len());
        let mut gap = 0.0f64;
        for r in results {
            let (e, g) = r?;
            errs.push(Ok(e));
            gap = gap.max(g);
        }
        report.value_gradient = Some(worst("value_gradient", errs, cfg.tol_theorem2)?);
        report.offpolicy_gap = Some(gap);
    }

    if want(Suite::Weight) {
        report.weight_identity = Some(weight_identity_check(cfg.tol_weight)?);
    }

    if want(Suite::Consistency) {
        let task = EnumerableTask::multiple_choice_toy();
        report.consistency = Some(consistency_check(&task, cfg.tol_consistency, cfg.smoothing)?);
    }

    Ok(report)
}
