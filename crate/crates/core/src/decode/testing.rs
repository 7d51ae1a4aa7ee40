//! Synthetic scorers for exercising the decoders against known distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scorer, TokenId, Vocabulary};

fn synthetic_vocab(size: usize) -> Vocabulary {
    assert!(size >= 2, "synthetic vocabularies need a token and EOS");
    let mut tokens: Vec<String> = (0..size - 1).map(|i| format!("t{i}")).collect();
    tokens.push("</s>".to_string());
    Vocabulary::new(tokens, size - 1, None).expect("synthetic vocabulary is valid")
}

/// Scorer defined by a closure from the generated prefix to next-token
/// probabilities. The last vocabulary entry is EOS.
pub struct FnScorer<F> {
    vocab: Vocabulary,
    probs: F,
}

impl<F: Fn(&[TokenId]) -> Vec<f64>> FnScorer<F> {
    pub fn new(vocab_size: usize, probs: F) -> Self {
        Self {
            vocab: synthetic_vocab(vocab_size),
            probs,
        }
    }
}

impl<F: Fn(&[TokenId]) -> Vec<f64>> Scorer for FnScorer<F> {
    type State = Vec<TokenId>;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn begin(&self, _source: &[String]) -> Self::State {
        Vec::new()
    }

    fn extend(&self, state: &Self::State, token: TokenId) -> Self::State {
        let mut next = state.clone();
        next.push(token);
        next
    }

    fn log_dist(&self, state: &Self::State) -> Vec<f64> {
        (self.probs)(state).into_iter().map(f64::ln).collect()
    }
}

fn mix(mut h: u64, x: u64) -> u64 {
    h ^= x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h
}

/// An arbitrary (non-Markov) distribution per prefix, drawn from a flat
/// Dirichlet seeded by `(seed, prefix)`.
#[derive(Debug, Clone)]
pub struct RandomTreeScorer {
    vocab: Vocabulary,
    seed: u64,
}

impl RandomTreeScorer {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self {
            vocab: synthetic_vocab(vocab_size),
            seed,
        }
    }

    pub fn probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        let key = prefix.iter().fold(mix(0, self.seed), |h, &t| mix(h, t as u64 + 1));
        let mut rng = ChaCha8Rng::seed_from_u64(mix(key, prefix.len() as u64));
        let weights: Vec<f64> = (0..self.vocab.len())
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }
}

impl Scorer for RandomTreeScorer {
    type State = Vec<TokenId>;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn begin(&self, _source: &[String]) -> Self::State {
        Vec::new()
    }

    fn extend(&self, state: &Self::State, token: TokenId) -> Self::State {
        let mut next = state.clone();
        next.push(token);
        next
    }

    fn log_dist(&self, state: &Self::State) -> Vec<f64> {
        self.probs(state).into_iter().map(f64::ln).collect()
    }
}
