use std::collections::{HashMap, HashSet};
use std::hash::Hash;

/// Tokens `t` such that `prefix[len-(n-1)..] + [t]` already occurs in `prefix`.
pub fn ngram_blocklist<T: Eq + Hash + Clone>(prefix: &[T], n: usize) -> HashSet<T> {
    let mut out = HashSet::new();
    if n == 0 || prefix.len() < n - 1 {
        return out;
    }
    let tail = &prefix[prefix.len() - (n - 1)..];
    if prefix.len() >= n {
        for w in prefix.windows(n) {
            if &w[..n - 1] == tail {
                out.insert(w[n - 1].clone());
            }
        }
    }
    out
}

/// Incremental form of [`ngram_blocklist`]: maps each (n-1)-gram context to
/// the tokens that have followed it.
#[derive(Debug, Clone)]
pub struct NGramBlocker<T: Eq + Hash + Clone> {
    n: usize,
    seen: HashMap<Vec<T>, HashSet<T>>,
}

impl<T: Eq + Hash + Clone> NGramBlocker<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            seen: HashMap::new(),
        }
    }

    /// Records every n-gram of `seq`.
    pub fn observe(&mut self, seq: &[T]) {
        if self.n == 0 || seq.len() < self.n {
            return;
        }
        for w in seq.windows(self.n) {
            self.seen
                .entry(w[..self.n - 1].to_vec())
                .or_default()
                .insert(w[self.n - 1].clone());
        }
    }

    pub fn banned_after(&self, prefix: &[T]) -> Option<&HashSet<T>> {
        if self.n == 0 || prefix.len() < self.n - 1 {
            return None;
        }
        self.seen.get(&prefix[prefix.len() - (self.n - 1)..])
    }
}
