//! Answer-accuracy metrics and the aggregate score combiners.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MetricError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalizer {
    None,
    /// Lowercase, drop punctuation and English articles, collapse whitespace.
    #[default]
    Squad,
}

impl FromStr for Normalizer {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalizer::None),
            "squad" | "squad-style" => Ok(Normalizer::Squad),
            _ => Err(MetricError::InvalidArgument(format!("unknown normalizer {s:?}"))),
        }
    }
}

impl Normalizer {
    pub fn apply(self, text: &str) -> String {
        match self {
            Normalizer::None => text.to_string(),
            Normalizer::Squad => {
                let lowered = text.to_lowercase();
                let no_punct: String = lowered
                    .chars()
                    .filter(|c| c.is_alphanumeric() || c.is_whitespace())
                    .collect();
                no_punct
                    .split_whitespace()
                    .filter(|w| !matches!(*w, "a" | "an" | "the"))
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        }
    }
}

pub fn exact_match(hyp: &str, refs: &[&str], normalizer: Normalizer) -> f64 {
    let h = normalizer.apply(hyp);
    if refs.iter().any(|r| normalizer.apply(r) == h) {
        1.0
    } else {
        0.0
    }
}

fn bag_f1(hyp: &[&str], reference: &[&str]) -> f64 {
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in reference {
        *counts.entry(w).or_default() += 1;
    }
    let mut common = 0usize;
    for w in hyp {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / hyp.len() as f64;
    let r = common as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Bag-of-tokens F1 on whitespace tokens after normalization, max over references.
pub fn token_f1(hyp: &str, refs: &[&str], normalizer: Normalizer) -> f64 {
    let h = normalizer.apply(hyp);
    let h: Vec<&str> = h.split_whitespace().collect();
    refs.iter()
        .map(|r| {
            let r = normalizer.apply(r);
            let r: Vec<&str> = r.split_whitespace().collect();
            bag_f1(&h, &r)
        })
        .fold(0.0, f64::max)
}

pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(MetricError::InvalidArgument(format!(
            "harmonic mean needs positive inputs, got ({a}, {b})"
        )));
    }
    Ok(2.0 * a * b / (a + b))
}

/// Weights of the dialogue combined score `wi·inform + ws·success + wb·bleu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedWeights {
    pub inform: f64,
    pub success: f64,
    pub bleu: f64,
}

impl Default for CombinedWeights {
    fn default() -> Self {
        Self {
            inform: 0.5,
            success: 0.5,
            bleu: 1.0,
        }
    }
}

impl CombinedWeights {
    pub fn combine(&self, inform: f64, success: f64, bleu: f64) -> f64 {
        self.inform * inform + self.success * success + self.bleu * bleu
    }
}

/// `(inform + success) / 2 + bleu`, all inputs on the ×100 scale.
pub fn combined_score(inform: f64, success: f64, bleu: f64) -> f64 {
    CombinedWeights::default().combine(inform, success, bleu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("The Answer!", &["the answer"], Normalizer::Squad), 1.0);
        assert_eq!(exact_match("same", &["same"], Normalizer::None), 1.0);
        assert_eq!(exact_match("an answer", &["the answers"], Normalizer::Squad), 0.0);
        assert_eq!(exact_match("Same", &["same"], Normalizer::None), 0.0);
    }

    #[test]
    fn token_f1_examples() {
        assert_eq!(token_f1("a b c", &["a b c"], Normalizer::None), 1.0);
        assert!((token_f1("x b c", &["b c d"], Normalizer::None) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("x y", &["b c"], Normalizer::None), 0.0);
        assert_eq!(token_f1("the", &["a"], Normalizer::Squad), 1.0);
        assert_eq!(token_f1("the", &["cat"], Normalizer::Squad), 0.0);
        assert_eq!(token_f1("x", &["q", "x"], Normalizer::None), 1.0);
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(76.50, 92.90).unwrap() - 83.90).abs() < 0.01);
        assert!((harmonic_mean(7.0, 7.0).unwrap() - 7.0).abs() < 1e-12);
        assert!((harmonic_mean(1.0, 3.0).unwrap() - 1.5).abs() < 1e-12);
        assert!(harmonic_mean(0.0, 3.0).is_err());
        assert!(harmonic_mean(-1.0, 3.0).is_err());
    }

    #[test]
    fn combined_score_examples() {
        assert!((combined_score(84.88, 74.91, 17.89) - 97.785).abs() < 1e-9);
        assert!((combined_score(84.88, 74.91, 17.89) - 97.78).abs() <= 0.01);
        assert_eq!(combined_score(0.0, 0.0, 0.0), 0.0);
        assert_eq!(combined_score(100.0, 100.0, 0.0), 100.0);
    }
}
