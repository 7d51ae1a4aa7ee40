//! Add-k smoothed n-gram language model with a source copy bias.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DecodeError, Result, Scorer, TokenId, Vocabulary};

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramLmConfig {
    pub order: usize,
    pub add_k: f64,
    /// Weight λ of the source unigram distribution in the mixture.
    pub copy_weight: f64,
}

impl Default for NGramLmConfig {
    fn default() -> Self {
        Self {
            order: 2,
            add_k: 0.1,
            copy_weight: 0.3,
        }
    }
}

impl NGramLmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(DecodeError::InvalidParams("lm order must be >= 1".into()));
        }
        if !(self.add_k > 0.0) || !self.add_k.is_finite() {
            return Err(DecodeError::InvalidParams("add_k must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.copy_weight) {
            return Err(DecodeError::InvalidParams("copy_weight must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone)]
pub struct NGramLm {
    vocab: Vocabulary,
    cfg: NGramLmConfig,
    table: HashMap<Vec<TokenId>, ContextCounts>,
    /// Number of tokens the model can emit (everything but BOS).
    outcomes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramState {
    context: Vec<TokenId>,
    copy: Option<Arc<[f64]>>,
}

/// Fits the model on target-side token sequences.
pub fn ngram_lm_fit<S: AsRef<str>>(sequences: &[Vec<S>], cfg: NGramLmConfig) -> Result<NGramLm> {
    cfg.validate()?;
    let words: BTreeSet<&str> = sequences
        .iter()
        .flatten()
        .map(AsRef::as_ref)
        .filter(|w| *w != BOS_TOKEN && *w != EOS_TOKEN)
        .collect();
    if words.is_empty() {
        return Err(DecodeError::EmptyTraining);
    }
    let mut tokens: Vec<String> = words.into_iter().map(str::to_string).collect();
    let eos = tokens.len();
    tokens.push(EOS_TOKEN.to_string());
    tokens.push(BOS_TOKEN.to_string());
    let vocab = Vocabulary::new(tokens, eos, Some(eos + 1))?;
    let bos = eos + 1;

    let history = cfg.order - 1;
    let mut table: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for seq in sequences {
        let mut padded = vec![bos; history];
        padded.extend(seq.iter().map(|w| vocab.id(w.as_ref()).expect("token is in the vocabulary")));
        padded.push(eos);
        for i in history..padded.len() {
            let entry = table.entry(padded[i - history..i].to_vec()).or_default();
            entry.total += 1;
            *entry.next.entry(padded[i]).or_default() += 1;
        }
    }
    Ok(NGramLm {
        outcomes: vocab.len() - 1,
        vocab,
        cfg,
        table,
    })
}

impl NGramLm {
    pub fn config(&self) -> &NGramLmConfig {
        &self.cfg
    }

    fn ngram_prob(&self, ctx: Option<&ContextCounts>, token: TokenId) -> f64 {
        let k = self.cfg.add_k;
        let (count, total) = match ctx {
            Some(c) => (c.next.get(&token).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        (count as f64 + k) / (total as f64 + k * self.outcomes as f64)
    }

    fn mixed(&self, state: &NGramState, token: TokenId, p: f64) -> f64 {
        match &state.copy {
            Some(copy) => self.cfg.copy_weight * copy[token] + (1.0 - self.cfg.copy_weight) * p,
            None => p,
        }
    }

    /// Log-probability of a whole sequence from scratch, without any state reuse.
    pub fn score_sequence(&self, source: &[String], tokens: &[TokenId]) -> f64 {
        let mut lp = 0.0;
        for i in 0..tokens.len() {
            let state = self.state_for(source, &tokens[..i]);
            lp += self.log_prob(&state, tokens[i]);
        }
        lp
    }

    fn state_for(&self, source: &[String], prefix: &[TokenId]) -> NGramState {
        let mut state = self.begin(source);
        for &t in prefix {
            state = self.extend(&state, t);
        }
        state
    }
}

impl Scorer for NGramLm {
    type State = NGramState;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn begin(&self, source: &[String]) -> NGramState {
        let bos = self.vocab.bos().expect("n-gram vocabularies carry BOS");
        let copy = if self.cfg.copy_weight > 0.0 {
            let mut counts = vec![0.0; self.vocab.len()];
            let mut total = 0.0;
            for t in source {
                if let Some(id) = self.vocab.id(t) {
                    if id != bos && id != self.vocab.eos() {
                        counts[id] += 1.0;
                        total += 1.0;
                    }
                }
            }
            (total > 0.0).then(|| counts.into_iter().map(|c| c / total).collect::<Arc<[f64]>>())
        } else {
            None
        };
        NGramState {
            context: vec![bos; self.cfg.order - 1],
            copy,
        }
    }

    fn extend(&self, state: &NGramState, token: TokenId) -> NGramState {
        let mut context = state.context.clone();
        if !context.is_empty() {
            context.remove(0);
            context.push(token);
        }
        NGramState {
            context,
            copy: state.copy.clone(),
        }
    }

    fn log_dist(&self, state: &NGramState) -> Vec<f64> {
        let ctx = self.table.get(&state.context);
        let bos = self.vocab.bos();
        (0..self.vocab.len())
            .map(|t| {
                if Some(t) == bos {
                    f64::NEG_INFINITY
                } else {
                    self.mixed(state, t, self.ngram_prob(ctx, t)).ln()
                }
            })
            .collect()
    }

    fn log_prob(&self, state: &NGramState, token: TokenId) -> f64 {
        if Some(token) == self.vocab.bos() {
            return f64::NEG_INFINITY;
        }
        let ctx = self.table.get(&state.context);
        self.mixed(state, token, self.ngram_prob(ctx, token)).ln()
    }
}
