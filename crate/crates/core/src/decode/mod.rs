//! Decoding over a pluggable incremental scorer.
//!
//! A [`Scorer`] hands out immutable states: `extend` returns a new state and
//! leaves the old one usable, which is what lets beam search share prefixes
//! without re-scoring them. Greedy, beam and top-k/top-p sampling all apply
//! the same repeated n-gram blocking and break ties by the lowest
//! vocabulary index.

mod blocking;
mod ngram_lm;
mod search;
pub mod testing;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blocking::{ngram_blocklist, NGramBlocker};
pub use ngram_lm::{ngram_lm_fit, NGramLm, NGramLmConfig, NGramState, BOS_TOKEN, EOS_TOKEN};
pub use search::{
    beam_search, decode, decode_batch, exhaustive_argmax, greedy, sample, sample_with_rng, EXHAUSTIVE_LIMIT,
};

pub type TokenId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("invalid decode parameters: {0}")]
    InvalidParams(String),
    #[error("exhaustive search over {size} sequences exceeds the limit of {limit}")]
    SearchTooLarge { size: f64, limit: f64 },
    #[error("cannot fit a language model on empty training data")]
    EmptyTraining,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
    bos: Option<TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos: TokenId, bos: Option<TokenId>) -> Result<Self> {
        if eos >= tokens.len() || bos.is_some_and(|b| b >= tokens.len() || b == eos) {
            return Err(DecodeError::InvalidVocab("special token index out of range".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(DecodeError::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            eos,
            bos,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn bos(&self) -> Option<TokenId> {
        self.bos
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Every token except BOS can be emitted.
    pub fn generable(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len()).filter(move |&t| Some(t) != self.bos)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

/// Conditional next-token distribution with immutable, incrementally extended states.
pub trait Scorer {
    type State: Clone;

    fn vocab(&self) -> &Vocabulary;

    fn begin(&self, source: &[String]) -> Self::State;

    fn extend(&self, state: &Self::State, token: TokenId) -> Self::State;

    /// Log-probabilities over the whole vocabulary; `exp` sums to one.
    fn log_dist(&self, state: &Self::State) -> Vec<f64>;

    fn log_prob(&self, state: &Self::State, token: TokenId) -> f64 {
        self.log_dist(state)[token]
    }
}

/// Log-probability of `prefix` recomputed from a fresh state.
pub fn score_prefix<S: Scorer>(scorer: &S, source: &[String], prefix: &[TokenId]) -> f64 {
    let mut state = scorer.begin(source);
    let mut lp = 0.0;
    for &t in prefix {
        lp += scorer.log_prob(&state, t);
        state = scorer.extend(&state, t);
    }
    lp
}

/// Running prefix score that only pays for the newest token.
pub struct IncrementalScore<'a, S: Scorer> {
    scorer: &'a S,
    state: S::State,
    log_prob: f64,
}

impl<'a, S: Scorer> IncrementalScore<'a, S> {
    pub fn new(scorer: &'a S, source: &[String]) -> Self {
        Self {
            scorer,
            state: scorer.begin(source),
            log_prob: 0.0,
        }
    }

    pub fn push(&mut self, token: TokenId) -> f64 {
        self.log_prob += self.scorer.log_prob(&self.state, token);
        self.state = self.scorer.extend(&self.state, token);
        self.log_prob
    }

    pub fn log_prob(&self) -> f64 {
        self.log_prob
    }

    pub fn state(&self) -> &S::State {
        &self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    #[default]
    Beam,
    TopK,
    TopP,
}

impl FromStr for Strategy {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam),
            "topk" | "top-k" => Ok(Strategy::TopK),
            "topp" | "top-p" | "nucleus" => Ok(Strategy::TopP),
            _ => Err(DecodeError::InvalidParams(format!(
                "unknown strategy {s:?}; expected greedy, beam, topk or topp"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
            Strategy::TopK => "topk",
            Strategy::TopP => "topp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub strategy: Strategy,
    pub beam_size: usize,
    /// Maximum number of decoding steps, EOS included.
    pub max_len: usize,
    /// 0 disables blocking.
    pub no_repeat_ngram: usize,
    /// Exponent α of the `logprob / len^α` normalization.
    pub length_penalty: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Also forbid n-grams that occur in the source.
    pub block_source: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size: 5,
            max_len: 64,
            no_repeat_ngram: 3,
            length_penalty: 1.0,
            top_k: 50,
            top_p: 0.9,
            temperature: 1.0,
            seed: 2020,
            block_source: false,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DecodeError::InvalidParams(m.to_string()));
        if self.beam_size == 0 {
            return bad("beam_size must be >= 1");
        }
        if self.max_len == 0 {
            return bad("max_len must be >= 1");
        }
        if !(self.length_penalty >= 0.0) {
            return bad("length_penalty must be >= 0");
        }
        if self.top_k == 0 {
            return bad("top_k must be >= 1");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted tokens, EOS excluded.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    /// `log_prob / steps^α`.
    pub score: f64,
    /// Whether decoding stopped on EOS rather than at `max_len`.
    pub eos: bool,
    pub finished: bool,
}

impl Hypothesis {
    pub fn new(tokens: Vec<TokenId>, log_prob: f64, eos: bool, max_len: usize, alpha: f64) -> Self {
        let steps = tokens.len() + usize::from(eos);
        Self {
            score: normalized_score(log_prob, steps, alpha),
            finished: eos || steps >= max_len,
            tokens,
            log_prob,
            eos,
        }
    }

    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.eos)
    }

    pub fn text(&self, vocab: &Vocabulary) -> String {
        vocab.decode(&self.tokens).join(" ")
    }
}

pub fn normalized_score(log_prob: f64, steps: usize, alpha: f64) -> f64 {
    if steps == 0 {
        return log_prob;
    }
    log_prob / (steps as f64).powf(alpha)
}
