//! METEOR with exact and stem matching.
//!
//! Two unigrams match when their stems agree (exact matches trivially do).
//! The alignment used is the one with the most matches and, among those,
//! the fewest chunks. Synonym and paraphrase stages are not implemented.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

const SUFFIXES: [&str; 7] = ["ingly", "edly", "ing", "ed", "ly", "es", "s"];

/// Strips one common English suffix, keeping a stem of at least three characters.
pub fn stem(word: &str) -> &str {
    for suffix in SUFFIXES {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= 3 {
                return base;
            }
        }
    }
    word
}

/// Search nodes explored per alignment before settling for the best found.
const NODE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

struct Search<'a, T> {
    hyp: &'a [T],
    candidates: Vec<Vec<usize>>,
    used: Vec<bool>,
    skips_left: HashMap<&'a T, usize>,
    best: usize,
    nodes: usize,
}

impl<T: Eq + Hash> Search<'_, T> {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best {
            return;
        }
        if i == self.hyp.len() {
            self.best = chunks;
            return;
        }
        self.nodes += 1;
        if self.nodes > NODE_BUDGET && self.best != usize::MAX {
            return;
        }
        // Continuing the current chunk is tried first.
        let next = prev.map(|p| p + 1);
        let mut order: Vec<usize> = Vec::with_capacity(self.candidates[i].len());
        if let Some(n) = next {
            if self.candidates[i].contains(&n) {
                order.push(n);
            }
        }
        order.extend(self.candidates[i].iter().copied().filter(|&j| Some(j) != next));
        for j in order {
            if self.used[j] {
                continue;
            }
            self.used[j] = true;
            let extra = usize::from(next != Some(j));
            self.run(i + 1, Some(j), chunks + extra);
            self.used[j] = false;
            if self.best <= 1 {
                return;
            }
        }
        let hyp = self.hyp;
        let class = &hyp[i];
        let left = self.skips_left.get(class).copied().unwrap_or(0);
        if left > 0 {
            self.skips_left.insert(class, left - 1);
            self.run(i + 1, None, chunks);
            self.skips_left.insert(class, left);
        }
    }
}

/// Maximum matching with the fewest chunks between two sequences of match classes.
pub fn align<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Alignment {
    let mut hyp_count: HashMap<&T, usize> = HashMap::new();
    let mut ref_count: HashMap<&T, usize> = HashMap::new();
    for h in hyp {
        *hyp_count.entry(h).or_default() += 1;
    }
    for r in reference {
        *ref_count.entry(r).or_default() += 1;
    }
    let matches: usize = hyp_count
        .iter()
        .map(|(k, &c)| c.min(ref_count.get(k).copied().unwrap_or(0)))
        .sum();
    if matches == 0 {
        return Alignment {
            matches: 0,
            chunks: 0,
        };
    }
    let skips_left = hyp_count
        .iter()
        .map(|(&k, &c)| (k, c - c.min(ref_count.get(k).copied().unwrap_or(0))))
        .collect();
    let candidates = hyp
        .iter()
        .map(|h| {
            reference
                .iter()
                .enumerate()
                .filter(|(_, r)| *r == h)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut search = Search {
        hyp,
        candidates,
        used: vec![false; reference.len()],
        skips_left,
        best: usize::MAX,
        nodes: 0,
    };
    search.run(0, None, 0);
    Alignment {
        matches,
        chunks: search.best,
    }
}

/// Score from alignment statistics and sequence lengths.
pub fn score_alignment(a: Alignment, hyp_len: usize, ref_len: usize, p: &MeteorParams) -> f64 {
    if a.matches == 0 || hyp_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let precision = m / hyp_len as f64;
    let recall = m / ref_len as f64;
    let fmean = precision * recall / (p.alpha * precision + (1.0 - p.alpha) * recall);
    let penalty = p.gamma * (a.chunks as f64 / m).powf(p.beta);
    fmean * (1.0 - penalty)
}

/// METEOR over sequences already mapped to match classes (e.g. stem ids).
pub fn meteor_classes<T: Eq + Hash>(hyp: &[T], refs: &[&[T]], p: &MeteorParams) -> f64 {
    refs.iter()
        .map(|r| score_alignment(align(hyp, r), hyp.len(), r.len(), p))
        .fold(0.0, f64::max)
}

pub fn meteor<S: AsRef<str>>(hyp: &[S], refs: &[&[S]], p: &MeteorParams) -> f64 {
    let h: Vec<&str> = hyp.iter().map(|w| stem(w.as_ref())).collect();
    let rs: Vec<Vec<&str>> = refs
        .iter()
        .map(|r| r.iter().map(|w| stem(w.as_ref())).collect())
        .collect();
    let rs: Vec<&[&str]> = rs.iter().map(Vec::as_slice).collect();
    meteor_classes(&h, &rs, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_has_single_chunk() {
        let a = t("a b c");
        let s = meteor(&a, &[&a[..]], &MeteorParams::default());
        let expected = 1.0 - 0.5 * (1.0f64 / 3.0).powi(3);
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.98148).abs() < 1e-5);
    }

    #[test]
    fn swapped_pair_has_two_chunks() {
        let h = t("b a");
        let r = t("a b");
        assert_eq!(align(&h, &r), Alignment { matches: 2, chunks: 2 });
        assert!((meteor(&h, &[&r[..]], &MeteorParams::default()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_and_empty() {
        let h = t("x y");
        let r = t("a b");
        assert_eq!(meteor(&h, &[&r[..]], &MeteorParams::default()), 0.0);
        let e: Vec<&str> = vec![];
        assert_eq!(meteor(&e, &[&e[..]], &MeteorParams::default()), 0.0);
    }

    #[test]
    fn stem_stage_matches_inflections() {
        assert_eq!(stem("walking"), "walk");
        assert_eq!(stem("walked"), "walk");
        assert_eq!(stem("cats"), "cat");
        assert_eq!(stem("is"), "is");
        let h = t("cats walked");
        let r = t("cat walking");
        assert_eq!(align(&h.iter().map(|w| stem(w)).collect::<Vec<_>>(), &r.iter().map(|w| stem(w)).collect::<Vec<_>>()).matches, 2);
    }

    #[test]
    fn prefers_fewest_chunks() {
        // "a" could align to either copy; picking the second keeps one chunk.
        let h = t("a b");
        let r = t("a x a b");
        assert_eq!(align(&h, &r), Alignment { matches: 2, chunks: 1 });
    }
}
