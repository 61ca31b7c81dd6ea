//! Softmax policies with analytic score functions.
//!
//! Two families are provided: a tabular softmax with one logit per
//! (question, answer) pair, and a linear autoregressive model over a small
//! token vocabulary whose next-token logits are a linear function of a fixed
//! question embedding, the position, and the previous token.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::types::{Answer, EOS};

/// Parameterized policy over answers to indexed questions.
pub trait Policy {
    fn num_params(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn num_questions(&self) -> usize;

    /// Per-token log-probabilities of `answer` given question `q`.
    fn token_log_probs(&self, q: usize, answer: &Answer) -> Result<Vec<f64>>;

    /// `grad += scale * d/dtheta log pi(token t of answer | q, prefix)`.
    fn add_token_score(&self, q: usize, answer: &Answer, t: usize, scale: f64, grad: &mut [f64]) -> Result<()>;

    fn sample<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Answer;

    /// Every answer with non-trivial support, in a fixed order.
    fn answer_space(&self, q: usize) -> Vec<Answer>;

    fn log_prob(&self, q: usize, answer: &Answer) -> Result<f64> {
        Ok(self.token_log_probs(q, answer)?.iter().sum())
    }

    /// `grad += scale * d/dtheta log pi(answer | q)`.
    fn add_score(&self, q: usize, answer: &Answer, scale: f64, grad: &mut [f64]) -> Result<()> {
        for t in 0..answer.len() {
            self.add_token_score(q, answer, t, scale, grad)?;
        }
        Ok(())
    }

    fn score(&self, q: usize, answer: &Answer) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.num_params()];
        self.add_score(q, answer, 1.0, &mut g)?;
        Ok(g)
    }

    /// Probabilities aligned with [`Policy::answer_space`].
    fn answer_probs(&self, q: usize) -> Vec<f64> {
        self.answer_space(q)
            .iter()
            .map(|a| self.log_prob(q, a).map(f64::exp).unwrap_or(0.0))
            .collect()
    }
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

fn log_softmax_at(logits: &[f64], k: usize, temperature: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&l| ((l - max) / temperature).exp()).sum();
    (logits[k] - max) / temperature - z.ln()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// One logit per (question, answer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSoftmax {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    temperature: f64,
}

impl TabularSoftmax {
    /// Uniform policy (all logits zero).
    pub fn new(sizes: Vec<usize>) -> Self {
        let logits = sizes.iter().map(|&k| vec![0.0; k]).collect();
        Self::from_logits(logits)
    }

    pub fn from_logits(logits: Vec<Vec<f64>>) -> Self {
        let sizes: Vec<usize> = logits.iter().map(Vec::len).collect();
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &k in &sizes {
            offsets.push(acc);
            acc += k;
        }
        TabularSoftmax {
            sizes,
            offsets,
            params: logits.into_iter().flatten().collect(),
            temperature: 1.0,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        self.temperature = temperature;
        self
    }

    pub fn num_answers(&self, q: usize) -> usize {
        self.sizes[q]
    }

    pub fn logits(&self, q: usize) -> &[f64] {
        &self.params[self.offsets[q]..self.offsets[q] + self.sizes[q]]
    }

    pub fn probs(&self, q: usize) -> Vec<f64> {
        softmax(self.logits(q), self.temperature)
    }

    fn answer_index(&self, q: usize, answer: &Answer) -> Result<usize> {
        if q >= self.sizes.len() {
            return Err(LensError::InvalidAnswer {
                question: q,
                reason: "question index out of range".into(),
            });
        }
        match answer.tokens() {
            [k] if (*k as usize) < self.sizes[q] => Ok(*k as usize),
            _ => Err(LensError::InvalidAnswer {
                question: q,
                reason: format!("{answer} is not one of {} answers", self.sizes[q]),
            }),
        }
    }
}

impl Policy for TabularSoftmax {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn num_questions(&self) -> usize {
        self.sizes.len()
    }

    fn token_log_probs(&self, q: usize, answer: &Answer) -> Result<Vec<f64>> {
        let k = self.answer_index(q, answer)?;
        Ok(vec![log_softmax_at(self.logits(q), k, self.temperature)])
    }

    fn add_token_score(&self, q: usize, answer: &Answer, t: usize, scale: f64, grad: &mut [f64]) -> Result<()> {
        let k = self.answer_index(q, answer)?;
        debug_assert_eq!(t, 0);
        let probs = self.probs(q);
        let base = self.offsets[q];
        let s = scale / self.temperature;
        for (j, p) in probs.iter().enumerate() {
            let indicator = if j == k { 1.0 } else { 0.0 };
            grad[base + j] += s * (indicator - p);
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Answer {
        Answer::index(sample_index(&self.probs(q), rng))
    }

    fn answer_space(&self, q: usize) -> Vec<Answer> {
        (0..self.sizes[q]).map(Answer::index).collect()
    }

    fn answer_probs(&self, q: usize) -> Vec<f64> {
        self.probs(q)
    }
}

/// Linear next-token model over `vocab` tokens (token 0 is end-of-sequence).
///
/// Feature vector at position `t` with previous token `prev`:
/// `[embedding(q) | onehot(t) | onehot(prev or BOS)]`. Sequences stop at EOS
/// or after `max_len` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAutoregressive {
    vocab: usize,
    max_len: usize,
    embeddings: Vec<Vec<f64>>,
    params: Vec<f64>,
    temperature: f64,
}

impl LinearAutoregressive {
    pub fn new(vocab: usize, max_len: usize, embeddings: Vec<Vec<f64>>) -> Self {
        assert!(vocab >= 2, "vocabulary needs EOS plus at least one token");
        assert!(max_len >= 1);
        let dim = embeddings.first().map_or(0, Vec::len);
        assert!(embeddings.iter().all(|e| e.len() == dim), "ragged embeddings");
        let mut model = LinearAutoregressive {
            vocab,
            max_len,
            embeddings,
            params: Vec::new(),
            temperature: 1.0,
        };
        model.params = vec![0.0; vocab * model.feature_dim()];
        model
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        self.temperature = temperature;
        self
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn feature_dim(&self) -> usize {
        self.embed_dim() + self.max_len + self.vocab + 1
    }

    fn embed_dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    fn features(&self, q: usize, t: usize, prev: Option<u32>) -> Vec<f64> {
        let d = self.embed_dim();
        let mut phi = vec![0.0; self.feature_dim()];
        phi[..d].copy_from_slice(&self.embeddings[q]);
        phi[d + t] = 1.0;
        let prev_slot = prev.map_or(self.vocab, |p| p as usize);
        phi[d + self.max_len + prev_slot] = 1.0;
        phi
    }

    fn logits(&self, phi: &[f64]) -> Vec<f64> {
        let fd = self.feature_dim();
        (0..self.vocab)
            .map(|v| {
                self.params[v * fd..(v + 1) * fd]
                    .iter()
                    .zip(phi)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }

    fn next_token_probs(&self, q: usize, t: usize, prev: Option<u32>) -> (Vec<f64>, Vec<f64>) {
        let phi = self.features(q, t, prev);
        let probs = softmax(&self.logits(&phi), self.temperature);
        (phi, probs)
    }

    fn check(&self, q: usize, answer: &Answer) -> Result<()> {
        let bad = |reason: String| LensError::InvalidAnswer { question: q, reason };
        if q >= self.embeddings.len() {
            return Err(bad("question index out of range".into()));
        }
        let toks = answer.tokens();
        if toks.is_empty() || toks.len() > self.max_len {
            return Err(bad(format!("length {} outside 1..={}", toks.len(), self.max_len)));
        }
        if toks.iter().any(|&t| t as usize >= self.vocab) {
            return Err(bad(format!("{answer} uses a token outside the vocabulary")));
        }
        let last = toks.len() - 1;
        if toks[..last].contains(&EOS) {
            return Err(bad(format!("{answer} continues past EOS")));
        }
        if toks.len() < self.max_len && toks[last] != EOS {
            return Err(bad(format!("{answer} stops before max length without EOS")));
        }
        Ok(())
    }

    /// Randomizes the weights with i.i.d. uniform values in `[-scale, scale]`.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for w in &mut self.params {
            *w = rng.random_range(-scale..=scale);
        }
    }
}

impl Policy for LinearAutoregressive {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn num_questions(&self) -> usize {
        self.embeddings.len()
    }

    fn token_log_probs(&self, q: usize, answer: &Answer) -> Result<Vec<f64>> {
        self.check(q, answer)?;
        let mut prev = None;
        let mut out = Vec::with_capacity(answer.len());
        for (t, &tok) in answer.tokens().iter().enumerate() {
            let phi = self.features(q, t, prev);
            out.push(log_softmax_at(&self.logits(&phi), tok as usize, self.temperature));
            prev = Some(tok);
        }
        Ok(out)
    }

    fn add_token_score(&self, q: usize, answer: &Answer, t: usize, scale: f64, grad: &mut [f64]) -> Result<()> {
        self.check(q, answer)?;
        let toks = answer.tokens();
        let prev = if t == 0 { None } else { Some(toks[t - 1]) };
        let (phi, probs) = self.next_token_probs(q, t, prev);
        let fd = self.feature_dim();
        let s = scale / self.temperature;
        for (v, p) in probs.iter().enumerate() {
            let indicator = if v == toks[t] as usize { 1.0 } else { 0.0 };
            let coef = s * (indicator - p);
            if coef == 0.0 {
                continue;
            }
            for (g, x) in grad[v * fd..(v + 1) * fd].iter_mut().zip(&phi) {
                *g += coef * x;
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Answer {
        let mut toks = Vec::with_capacity(self.max_len);
        let mut prev = None;
        for t in 0..self.max_len {
            let (_, probs) = self.next_token_probs(q, t, prev);
            let tok = sample_index(&probs, rng) as u32;
            toks.push(tok);
            if tok == EOS {
                break;
            }
            prev = Some(tok);
        }
        Answer(toks)
    }

    fn answer_space(&self, _q: usize) -> Vec<Answer> {
        enumerate_sequences(self.vocab, self.max_len)
    }
}

/// All sequences a [`LinearAutoregressive`] model can emit: non-EOS prefixes
/// terminated by EOS, plus unterminated sequences of exactly `max_len` tokens.
pub fn enumerate_sequences(vocab: usize, max_len: usize) -> Vec<Answer> {
    fn rec(prefix: &mut Vec<u32>, vocab: usize, max_len: usize, out: &mut Vec<Answer>) {
        for tok in 0..vocab as u32 {
            prefix.push(tok);
            if tok == EOS || prefix.len() == max_len {
                out.push(Answer(prefix.clone()));
            } else {
                rec(prefix, vocab, max_len, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), vocab, max_len, &mut out);
    out
}

/// The two supported policy parameterizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyModel {
    TabularSoftmax(TabularSoftmax),
    LinearAutoregressive(LinearAutoregressive),
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            PolicyModel::TabularSoftmax($p) => $e,
            PolicyModel::LinearAutoregressive($p) => $e,
        }
    };
}

impl PolicyModel {
    pub fn with_temperature(self, temperature: f64) -> Self {
        match self {
            PolicyModel::TabularSoftmax(p) => p.with_temperature(temperature).into(),
            PolicyModel::LinearAutoregressive(p) => p.with_temperature(temperature).into(),
        }
    }
}

impl Policy for PolicyModel {
    fn num_params(&self) -> usize {
        delegate!(self, p => p.num_params())
    }
    fn params(&self) -> &[f64] {
        delegate!(self, p => p.params())
    }
    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, p => p.params_mut())
    }
    fn num_questions(&self) -> usize {
        delegate!(self, p => p.num_questions())
    }
    fn token_log_probs(&self, q: usize, answer: &Answer) -> Result<Vec<f64>> {
        delegate!(self, p => p.token_log_probs(q, answer))
    }
    fn add_token_score(&self, q: usize, answer: &Answer, t: usize, scale: f64, grad: &mut [f64]) -> Result<()> {
        delegate!(self, p => p.add_token_score(q, answer, t, scale, grad))
    }
    fn sample<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Answer {
        delegate!(self, p => p.sample(q, rng))
    }
    fn answer_space(&self, q: usize) -> Vec<Answer> {
        delegate!(self, p => p.answer_space(q))
    }
    fn answer_probs(&self, q: usize) -> Vec<f64> {
        delegate!(self, p => p.answer_probs(q))
    }
}

impl From<TabularSoftmax> for PolicyModel {
    fn from(p: TabularSoftmax) -> Self {
        PolicyModel::TabularSoftmax(p)
    }
}

impl From<LinearAutoregressive> for PolicyModel {
    fn from(p: LinearAutoregressive) -> Self {
        PolicyModel::LinearAutoregressive(p)
    }
}
