//! BLEU and ROUGE over token sequences of any hashable type.

use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::{MetricError, Result};
use crate::corpus::{count_windows, NGramCounts};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Smoothing {
    /// A zero precision makes the whole score zero.
    None,
    /// Zero numerators are replaced by the given epsilon.
    Epsilon(f64),
    /// Adds `k` to numerator and denominator of every order above one.
    AddK(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
    /// One weight per order `1..=max_n`.
    pub weights: Vec<f64>,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self::uniform(4)
    }
}

impl BleuConfig {
    pub fn uniform(max_n: usize) -> Self {
        Self {
            max_n,
            smoothing: Smoothing::Epsilon(0.1),
            weights: vec![1.0 / max_n.max(1) as f64; max_n],
        }
    }

    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_n == 0 {
            return Err(MetricError::InvalidArgument("BLEU max_n must be >= 1".into()));
        }
        if self.weights.len() != self.max_n {
            return Err(MetricError::InvalidArgument(format!(
                "BLEU needs {} weights, got {}",
                self.max_n,
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MetricError::InvalidArgument("BLEU weights must be nonnegative".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricError::InvalidArgument(format!(
                "BLEU weights must sum to 1, got {sum}"
            )));
        }
        match self.smoothing {
            Smoothing::Epsilon(e) if !(e > 0.0) => Err(MetricError::InvalidArgument(
                "epsilon smoothing needs epsilon > 0".into(),
            )),
            Smoothing::AddK(k) if !(k > 0.0) => Err(MetricError::InvalidArgument(
                "add-k smoothing needs k > 0".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Sufficient statistics for corpus BLEU; summing them across records is exact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn accumulate(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Orders whose total is zero (every hypothesis shorter than `n`) are
    /// dropped and the remaining weights renormalized.
    pub fn score(&self, cfg: &BleuConfig) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut weight_sum = 0.0;
        for (idx, &w) in cfg.weights.iter().enumerate() {
            let total = self.totals[idx];
            if w == 0.0 || total == 0 {
                continue;
            }
            let matched = self.matches[idx];
            let p = match cfg.smoothing {
                Smoothing::None if matched == 0 => return 0.0,
                Smoothing::Epsilon(eps) if matched == 0 => eps / total as f64,
                Smoothing::AddK(k) if idx > 0 => (matched as f64 + k) / (total as f64 + k),
                Smoothing::AddK(_) if matched == 0 => return 0.0,
                _ => matched as f64 / total as f64,
            };
            log_sum += w * p.ln();
            weight_sum += w;
        }
        if weight_sum == 0.0 {
            return 0.0;
        }
        let precision = (log_sum / weight_sum).exp();
        let c = self.hyp_len as f64;
        let r = self.ref_len as f64;
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * precision
    }
}

/// Reference length closest to `hyp_len`; ties go to the shorter reference.
pub fn closest_ref_len(hyp_len: usize, ref_lens: impl IntoIterator<Item = usize>) -> usize {
    ref_lens
        .into_iter()
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

/// Clipped match counts for one record from precomputed n-gram tables.
/// `hyp[k]` and `refs[j][k]` hold the order-`k+1` counts.
pub(crate) fn bleu_stats_cached<T: Eq + Hash>(
    hyp: &[NGramCounts<'_, T>],
    hyp_len: usize,
    refs: &[Vec<NGramCounts<'_, T>>],
    ref_lens: &[usize],
    max_n: usize,
) -> BleuStats {
    let mut stats = BleuStats::new(max_n);
    stats.hyp_len = hyp_len as u64;
    stats.ref_len = closest_ref_len(hyp_len, ref_lens.iter().copied()) as u64;
    for order in 0..max_n {
        let counts = &hyp[order];
        stats.totals[order] = hyp_len.saturating_sub(order) as u64;
        let mut matched = 0u64;
        for (gram, &c) in &counts.counts {
            let clip = refs.iter().map(|r| r[order].get(gram)).max().unwrap_or(0);
            matched += c.min(clip) as u64;
        }
        stats.matches[order] = matched;
    }
    stats
}

pub fn bleu_stats<T: Eq + Hash>(hyp: &[T], refs: &[&[T]], max_n: usize) -> BleuStats {
    let hyp_counts: Vec<_> = (1..=max_n).map(|n| count_windows(hyp, n)).collect();
    let ref_counts: Vec<Vec<_>> = refs
        .iter()
        .map(|r| (1..=max_n).map(|n| count_windows(r, n)).collect())
        .collect();
    let ref_lens: Vec<usize> = refs.iter().map(|r| r.len()).collect();
    bleu_stats_cached(&hyp_counts, hyp.len(), &ref_counts, &ref_lens, max_n)
}

pub fn sentence_bleu<T: Eq + Hash>(hyp: &[T], refs: &[&[T]], cfg: &BleuConfig) -> Result<f64> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(MetricError::InvalidArgument("BLEU needs at least one reference".into()));
    }
    Ok(bleu_stats(hyp, refs, cfg.max_n).score(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    pub corpus: f64,
    pub per_sample: Vec<f64>,
}

/// Corpus BLEU over `(hypothesis, references)` pairs plus per-sample sentence BLEU.
pub fn bleu<T: Eq + Hash>(records: &[(&[T], Vec<&[T]>)], cfg: &BleuConfig) -> Result<CorpusScore> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut total = BleuStats::new(cfg.max_n);
    let mut per_sample = Vec::with_capacity(records.len());
    for (hyp, refs) in records {
        if refs.is_empty() {
            return Err(MetricError::InvalidArgument("record without references".into()));
        }
        let stats = bleu_stats(hyp, refs, cfg.max_n);
        per_sample.push(stats.score(cfg));
        total.accumulate(&stats);
    }
    Ok(CorpusScore {
        corpus: total.score(cfg),
        per_sample,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let precision = if hyp_total == 0 {
            0.0
        } else {
            overlap as f64 / hyp_total as f64
        };
        let recall = if ref_total == 0 {
            0.0
        } else {
            overlap as f64 / ref_total as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

/// Keeps the first candidate with the highest F1.
pub(crate) fn best_by_f1(scores: impl IntoIterator<Item = Prf>) -> Prf {
    let mut best: Option<Prf> = None;
    for s in scores {
        if best.is_none_or(|b| s.f1 > b.f1) {
            best = Some(s);
        }
    }
    best.unwrap_or_default()
}

pub(crate) fn overlap<T: Eq + Hash>(hyp: &NGramCounts<'_, T>, reference: &NGramCounts<'_, T>) -> usize {
    hyp.counts
        .iter()
        .map(|(g, &c)| c.min(reference.get(g)))
        .sum()
}

pub(crate) fn rouge_n_cached<T: Eq + Hash>(
    hyp: &NGramCounts<'_, T>,
    refs: &[&NGramCounts<'_, T>],
) -> Prf {
    let hyp_total = hyp.total();
    best_by_f1(
        refs.iter()
            .map(|r| Prf::from_counts(overlap(hyp, r), hyp_total, r.total())),
    )
}

pub fn rouge_n<T: Eq + Hash>(hyp: &[T], refs: &[&[T]], n: usize) -> Result<Prf> {
    if n == 0 {
        return Err(MetricError::InvalidArgument("ROUGE-N order must be >= 1".into()));
    }
    let h = count_windows(hyp, n);
    let rs: Vec<_> = refs.iter().map(|r| count_windows(r, n)).collect();
    let rs: Vec<&_> = rs.iter().collect();
    Ok(rouge_n_cached(&h, &rs))
}

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0u32; short.len() + 1];
    let mut cur = vec![0u32; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()] as usize
}

pub fn rouge_l<T: Eq>(hyp: &[T], refs: &[&[T]]) -> Prf {
    best_by_f1(
        refs.iter()
            .map(|r| Prf::from_counts(lcs_len(hyp, r), hyp.len(), r.len())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_bleu_is_one() {
        let a = t("the cat sat on the mat");
        let b = t("a b");
        let recs = vec![(&a[..], vec![&a[..]]), (&b[..], vec![&b[..]])];
        let s = bleu(&recs, &BleuConfig::default()).unwrap();
        assert!((s.corpus - 1.0).abs() < 1e-12);
        assert!(s.per_sample.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn clipped_unigram_precision() {
        let h = t("the the the the");
        let r = t("the cat");
        let cfg = BleuConfig {
            max_n: 1,
            smoothing: Smoothing::None,
            weights: vec![1.0],
        };
        assert!((sentence_bleu(&h, &[&r[..]], &cfg).unwrap() - 0.25).abs() < 1e-12);
        let padded = BleuConfig {
            max_n: 4,
            smoothing: Smoothing::None,
            weights: vec![1.0, 0.0, 0.0, 0.0],
        };
        assert!((sentence_bleu(&h, &[&r[..]], &padded).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn disjoint_unsmoothed_bleu_is_zero() {
        let h = t("x y z");
        let r = t("a b c");
        let cfg = BleuConfig::default().with_smoothing(Smoothing::None);
        assert_eq!(sentence_bleu(&h, &[&r[..]], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        let h = t("a b c");
        let short = t("a b c");
        let long = t("a b c d e f g");
        let cfg = BleuConfig::uniform(1);
        let s = sentence_bleu(&h, &[&long[..], &short[..]], &cfg).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let s = sentence_bleu(&h, &[&long[..]], &cfg).unwrap();
        assert!((s - (1.0 - 7.0 / 3.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_and_bad_weights() {
        let recs: Vec<(&[&str], Vec<&[&str]>)> = vec![];
        assert!(matches!(bleu(&recs, &BleuConfig::default()), Err(MetricError::EmptyCorpus)));
        let cfg = BleuConfig {
            max_n: 2,
            smoothing: Smoothing::None,
            weights: vec![0.7, 0.7],
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rouge_examples() {
        let a = t("a b c");
        let s = rouge_n(&a, &[&a[..]], 1).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let h = t("a b c");
        let r = t("b c d");
        let s = rouge_n(&h, &[&r[..]], 1).unwrap();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        let d = t("x y");
        assert_eq!(rouge_n(&h, &[&d[..]], 1).unwrap().f1, 0.0);
        let short = t("a");
        assert_eq!(rouge_n(&short, &[&short[..]], 2).unwrap().f1, 0.0);
    }

    #[test]
    fn rouge_l_examples() {
        let h = t("the cat sat");
        let r = t("the cat on the mat");
        let s = rouge_l(&h, &[&r[..]]);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.4).abs() < 1e-12);
        assert!((s.f1 - 0.5).abs() < 1e-12);
        let r = t("a b c");
        assert_eq!(rouge_l(&r, &[&r[..]]).f1, 1.0);
        let rev = t("c b a");
        assert!((rouge_l(&rev, &[&r[..]]).f1 - 1.0 / 3.0).abs() < 1e-12);
        let empty: Vec<&str> = vec![];
        assert_eq!(rouge_l(&empty, &[&empty[..]]).f1, 0.0);
    }

    #[test]
    fn multi_reference_takes_best() {
        let h = t("a b c");
        let bad = t("x y z");
        let s = rouge_l(&h, &[&bad[..], &h[..]]);
        assert_eq!(s.f1, 1.0);
    }
}
