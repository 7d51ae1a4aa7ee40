//! Corpus diversity: pooled Distinct-n and Self-BLEU.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lexical::{BleuConfig, BleuStats, CorpusScore};
use super::{MetricError, Result};
use crate::corpus::count_windows;

/// Distinct n-grams over total n-grams, pooled across the whole corpus.
pub fn distinct_n<T: Eq + Hash>(hyps: &[&[T]], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(MetricError::InvalidArgument("distinct-n order must be >= 1".into()));
    }
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for h in hyps {
        if h.len() >= n {
            for w in h.windows(n) {
                seen.insert(w);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricError::Undefined(format!(
            "distinct-{n}: corpus has no {n}-grams"
        )));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Distinct-n of a single hypothesis; zero when it has no n-grams.
pub fn distinct_n_sentence<T: Eq + Hash>(hyp: &[T], n: usize) -> f64 {
    let c = count_windows(hyp, n.max(1));
    let total = c.total();
    if total == 0 {
        0.0
    } else {
        c.distinct() as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelfBleuOptions {
    /// Upper bound on hypotheses scored for the corpus mean; `None` scores all.
    pub sample_cap: Option<usize>,
    pub seed: u64,
}

impl Default for SelfBleuOptions {
    fn default() -> Self {
        Self {
            sample_cap: Some(1000),
            seed: 2020,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Top2 {
    best: usize,
    best_idx: usize,
    second: usize,
}

impl Top2 {
    fn push(&mut self, idx: usize, count: usize) {
        if count > self.best {
            self.second = self.best;
            self.best = count;
            self.best_idx = idx;
        } else if count > self.second {
            self.second = count;
        }
    }

    fn excluding(&self, idx: usize) -> usize {
        if self.best_idx == idx {
            self.second
        } else {
            self.best
        }
    }
}

/// Length multiset supporting "closest length among all but one" queries.
struct LengthPool(BTreeMap<usize, usize>);

impl LengthPool {
    fn closest_excluding(&self, len: usize) -> usize {
        let own = self.0.get(&len).copied().unwrap_or(0);
        if own >= 2 {
            return len;
        }
        let below = self.0.range(..len).next_back().map(|(&l, _)| l);
        let above = self.0.range(len + 1..).next().map(|(&l, _)| l);
        match (below, above) {
            (Some(b), Some(a)) => {
                if len - b <= a - len {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => 0,
        }
    }
}

/// Per-sample BLEU of each hypothesis against all the others, plus the
/// corpus mean over a seeded sample of at most `sample_cap` hypotheses.
pub fn self_bleu<T: Eq + Hash>(
    hyps: &[&[T]],
    cfg: &BleuConfig,
    opts: &SelfBleuOptions,
) -> Result<CorpusScore> {
    cfg.validate()?;
    if hyps.len() < 2 {
        return Err(MetricError::InvalidArgument(
            "self-BLEU needs at least two hypotheses".into(),
        ));
    }
    let max_n = cfg.max_n;
    let counts: Vec<Vec<_>> = hyps
        .iter()
        .map(|h| (1..=max_n).map(|n| count_windows(h, n)).collect())
        .collect();
    let mut tops: Vec<HashMap<&[T], Top2>> = vec![HashMap::new(); max_n];
    for (idx, per_order) in counts.iter().enumerate() {
        for (order, c) in per_order.iter().enumerate() {
            for (&gram, &k) in &c.counts {
                tops[order].entry(gram).or_default().push(idx, k);
            }
        }
    }
    let mut lengths = BTreeMap::new();
    for h in hyps {
        *lengths.entry(h.len()).or_insert(0) += 1;
    }
    let lengths = LengthPool(lengths);

    let per_sample: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(idx, per_order)| {
            let len = hyps[idx].len();
            let mut stats = BleuStats::new(max_n);
            stats.hyp_len = len as u64;
            stats.ref_len = lengths.closest_excluding(len) as u64;
            for (order, c) in per_order.iter().enumerate() {
                stats.totals[order] = len.saturating_sub(order) as u64;
                stats.matches[order] = c
                    .counts
                    .iter()
                    .map(|(gram, &k)| k.min(tops[order][gram].excluding(idx)) as u64)
                    .sum();
            }
            stats.score(cfg)
        })
        .collect();

    let sampled = sample_indices(hyps.len(), opts);
    let corpus = sampled.iter().map(|&i| per_sample[i]).sum::<f64>() / sampled.len() as f64;
    Ok(CorpusScore { corpus, per_sample })
}

/// Sorted indices of the hypotheses that enter the Self-BLEU mean.
pub fn sample_indices(n: usize, opts: &SelfBleuOptions) -> Vec<usize> {
    match opts.sample_cap {
        Some(cap) if cap < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = rand::seq::index::sample(&mut rng, n, cap.max(1)).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::lexical::{sentence_bleu, Smoothing};

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn distinct_examples() {
        let a = t("a a b");
        assert!((distinct_n(&[&a[..]], 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let u = t("a b c d");
        assert_eq!(distinct_n(&[&u[..]], 2).unwrap(), 1.0);
        let one = t("x");
        let corpus = vec![&one[..]; 5];
        assert!((distinct_n(&corpus, 1).unwrap() - 0.2).abs() < 1e-12);
        assert!(matches!(distinct_n(&corpus, 2), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn self_bleu_identical_and_disjoint() {
        let a = t("the cat sat down");
        let corpus = vec![&a[..]; 3];
        let s = self_bleu(&corpus, &BleuConfig::default(), &SelfBleuOptions::default()).unwrap();
        assert!((s.corpus - 1.0).abs() < 1e-12);

        let x = t("a b c");
        let y = t("d e f");
        let z = t("g h i");
        let cfg = BleuConfig::default().with_smoothing(Smoothing::None);
        let s = self_bleu(&[&x[..], &y[..], &z[..]], &cfg, &SelfBleuOptions::default()).unwrap();
        assert_eq!(s.corpus, 0.0);
    }

    #[test]
    fn self_bleu_matches_direct_enumeration() {
        let docs = [t("a b c"), t("a b d"), t("a e f")];
        let refs: Vec<&[&str]> = docs.iter().map(|d| &d[..]).collect();
        let cfg = BleuConfig::default();
        let s = self_bleu(&refs, &cfg, &SelfBleuOptions::default()).unwrap();
        let mut direct = Vec::new();
        for i in 0..docs.len() {
            let others: Vec<&[&str]> = (0..docs.len()).filter(|&j| j != i).map(|j| refs[j]).collect();
            direct.push(sentence_bleu(refs[i], &others, &cfg).unwrap());
        }
        for (a, b) in s.per_sample.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
        let mean = direct.iter().sum::<f64>() / 3.0;
        assert!((s.corpus - mean).abs() < 1e-12);
    }

    #[test]
    fn self_bleu_needs_two() {
        let a = t("a");
        assert!(self_bleu(&[&a[..]], &BleuConfig::default(), &SelfBleuOptions::default()).is_err());
    }

    #[test]
    fn sample_cap_is_seeded() {
        let opts = SelfBleuOptions {
            sample_cap: Some(5),
            seed: 7,
        };
        let a = sample_indices(100, &opts);
        assert_eq!(a.len(), 5);
        assert_eq!(a, sample_indices(100, &opts));
        assert_eq!(sample_indices(3, &opts), vec![0, 1, 2]);
    }
}
