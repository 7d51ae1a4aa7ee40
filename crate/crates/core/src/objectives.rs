//! Pre-training corruption objectives.
//!
//! Each objective turns a token sequence into an `(input, target)` pair plus
//! the exact plan that produced it. Planning draws from a ChaCha generator
//! seeded per call; applying a plan is deterministic, so tests can pin a
//! plan and check the resulting pair by hand. [`reconstruct`] inverts every
//! objective and rejects pairs that disagree with their plan.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, TokenSeq, TokenizerSpec};

pub const MASK: &str = "<mask>";
/// Longest span the samplers will draw.
pub const MAX_SPAN: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ObjectiveError {
    #[error("{objective} needs at least {need} tokens, got {got}")]
    TooShort {
        objective: Objective,
        need: usize,
        got: usize,
    },
    #[error("input contains reserved token {0:?}")]
    ReservedToken(String),
    #[error("invalid corruption spec: {0}")]
    InvalidSpec(String),
    #[error("pair does not match its plan: {0}")]
    Integrity(String),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

pub fn sentinel(i: usize) -> String {
    format!("<s{i}>")
}

/// Index of a `<sN>` sentinel.
pub fn sentinel_index(token: &str) -> Option<usize> {
    let digits = token.strip_prefix("<s")?.strip_suffix('>')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn is_reserved(token: &str) -> bool {
    token == MASK || sentinel_index(token).is_some()
}

/// Rejects sequences that already contain the mask or sentinel literals.
pub fn check_reserved(tokens: &[String]) -> Result<()> {
    match tokens.iter().find(|t| is_reserved(t)) {
        Some(t) => Err(ObjectiveError::ReservedToken(t.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Lm,
    MaskedSeq2seq,
    Denoising,
    SpanPrediction,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Lm,
        Objective::MaskedSeq2seq,
        Objective::Denoising,
        Objective::SpanPrediction,
    ];
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Lm => "lm",
            Objective::MaskedSeq2seq => "masked-seq2seq",
            Objective::Denoising => "denoising",
            Objective::SpanPrediction => "span-prediction",
        })
    }
}

impl FromStr for Objective {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lm" => Ok(Objective::Lm),
            "masked-seq2seq" | "mass" => Ok(Objective::MaskedSeq2seq),
            "denoising" | "denoise" | "text-infilling" => Ok(Objective::Denoising),
            "span-prediction" | "span" => Ok(Objective::SpanPrediction),
            _ => Err(ObjectiveError::InvalidSpec(format!(
                "unknown objective {s:?}; expected lm, masked-seq2seq, denoising or span-prediction"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub objective: Objective,
    pub mask_ratio: f64,
    pub mean_span: f64,
    pub permute_sentences: bool,
    pub seed: u64,
}

impl CorruptionSpec {
    /// Objective-specific defaults: 0.5 for masked seq2seq, 0.3 / mean 3 for
    /// denoising, 0.15 / mean 3 for span prediction.
    pub fn new(objective: Objective) -> Self {
        let mask_ratio = match objective {
            Objective::Lm | Objective::MaskedSeq2seq => 0.5,
            Objective::Denoising => 0.3,
            Objective::SpanPrediction => 0.15,
        };
        Self {
            objective,
            mask_ratio,
            mean_span: 3.0,
            permute_sentences: false,
            seed: 2020,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(ObjectiveError::InvalidSpec(format!(
                "mask_ratio must lie in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        if !(self.mean_span >= 1.0) || !self.mean_span.is_finite() {
            return Err(ObjectiveError::InvalidSpec(format!(
                "mean_span must be >= 1, got {}",
                self.mean_span
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "kebab-case")]
pub enum CorruptionPlan {
    Lm,
    MaskedSeq2seq {
        span: Span,
    },
    Denoising {
        /// Original-sequence sentence spans in their permuted order.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sentence_order: Option<Vec<Span>>,
        /// Masked spans, positioned in the permuted sequence. Zero-length
        /// spans insert a mask without removing anything.
        spans: Vec<Span>,
    },
    SpanPrediction {
        spans: Vec<Span>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionPair {
    pub input: TokenSeq,
    pub target: TokenSeq,
    pub plan: CorruptionPlan,
}

fn masked_count(ratio: f64, len: usize) -> usize {
    ((ratio * len as f64).round() as usize).clamp(1, len)
}

fn rng_for(spec: &CorruptionSpec) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(spec.seed)
}

/// Span length from a Poisson(`mean`) truncated to `[min_len, MAX_SPAN]`.
fn sample_span_len(rng: &mut impl Rng, mean: f64, min_len: usize) -> usize {
    let mut pmf = Vec::with_capacity(MAX_SPAN + 1);
    let mut p = (-mean).exp();
    for k in 0..=MAX_SPAN {
        if k > 0 {
            p *= mean / k as f64;
        }
        pmf.push(if k >= min_len { p } else { 0.0 });
    }
    let total: f64 = pmf.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in pmf.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    MAX_SPAN
}

/// Draws span lengths covering exactly `budget` tokens, shrinking the final span.
fn sample_span_lens(rng: &mut impl Rng, budget: usize, mean: f64, min_len: usize) -> Vec<usize> {
    let mut lens = Vec::new();
    let mut covered = 0;
    while covered < budget {
        let len = sample_span_len(rng, mean, min_len).min(budget - covered);
        covered += len;
        lens.push(len);
    }
    lens
}

/// Places spans of the given lengths into `n` positions with at least one
/// unmasked token between neighbours; gaps are a uniform composition.
fn place_spans(rng: &mut impl Rng, n: usize, mut lens: Vec<usize>) -> Vec<Span> {
    let masked: usize = lens.iter().sum();
    let unmasked = n - masked;
    while lens.len() > 1 && unmasked < lens.len() - 1 {
        let last = lens.pop().expect("len > 1");
        *lens.last_mut().expect("len > 0") += last;
    }
    let k = lens.len();
    if k == 0 {
        return Vec::new();
    }
    let free = unmasked - (k - 1);
    let mut picks = rand::seq::index::sample(rng, free + k, k).into_vec();
    picks.sort_unstable();
    let mut spans = Vec::with_capacity(k);
    let mut pos = 0;
    let mut prev_pick: Option<usize> = None;
    for (i, (&pick, &len)) in picks.iter().zip(&lens).enumerate() {
        let gap = match prev_pick {
            None => pick,
            Some(p) => pick - p - 1,
        };
        pos += gap + usize::from(i > 0);
        spans.push(Span { start: pos, len });
        pos += len;
        prev_pick = Some(pick);
    }
    spans
}

/// Splits after every token ending in `.`, `!` or `?`.
pub fn sentence_spans(tokens: &[String]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.ends_with(['.', '!', '?']) {
            spans.push(Span {
                start,
                len: i + 1 - start,
            });
            start = i + 1;
        }
    }
    if start < tokens.len() {
        spans.push(Span {
            start,
            len: tokens.len() - start,
        });
    }
    spans
}

pub fn corrupt_lm(tokens: &[String]) -> Result<CorruptionPair> {
    check_reserved(tokens)?;
    apply_plan(tokens, &CorruptionPlan::Lm)
}

pub fn plan_masked_seq2seq(len: usize, spec: &CorruptionSpec) -> Result<CorruptionPlan> {
    spec.validate()?;
    if len < 2 {
        return Err(ObjectiveError::TooShort {
            objective: Objective::MaskedSeq2seq,
            need: 2,
            got: len,
        });
    }
    let span_len = masked_count(spec.mask_ratio, len);
    let start = rng_for(spec).gen_range(0..=len - span_len);
    Ok(CorruptionPlan::MaskedSeq2seq {
        span: Span { start, len: span_len },
    })
}

pub fn corrupt_mass(tokens: &[String], spec: &CorruptionSpec) -> Result<CorruptionPair> {
    check_reserved(tokens)?;
    let plan = plan_masked_seq2seq(tokens.len(), spec)?;
    apply_plan(tokens, &plan)
}

pub fn plan_denoising(tokens: &[String], spec: &CorruptionSpec) -> Result<CorruptionPlan> {
    spec.validate()?;
    if tokens.is_empty() {
        return Err(ObjectiveError::TooShort {
            objective: Objective::Denoising,
            need: 1,
            got: 0,
        });
    }
    let mut rng = rng_for(spec);
    let sentence_order = if spec.permute_sentences {
        let mut sentences = sentence_spans(tokens);
        sentences.shuffle(&mut rng);
        Some(sentences)
    } else {
        None
    };
    let budget = masked_count(spec.mask_ratio, tokens.len());
    let lens = sample_span_lens(&mut rng, budget, spec.mean_span, 0);
    let spans = place_spans(&mut rng, tokens.len(), lens);
    Ok(CorruptionPlan::Denoising {
        sentence_order,
        spans,
    })
}

pub fn corrupt_denoise(tokens: &[String], spec: &CorruptionSpec) -> Result<CorruptionPair> {
    check_reserved(tokens)?;
    let plan = plan_denoising(tokens, spec)?;
    apply_plan(tokens, &plan)
}

/// Whitespace-tokenizes `text` and applies the denoising objective.
pub fn corrupt_denoise_text(text: &str, spec: &CorruptionSpec) -> Result<CorruptionPair> {
    let tokens = tokenize(text, &TokenizerSpec::whitespace());
    corrupt_denoise(&tokens, spec)
}

pub fn plan_span_prediction(len: usize, spec: &CorruptionSpec) -> Result<CorruptionPlan> {
    spec.validate()?;
    if len < 2 {
        return Err(ObjectiveError::TooShort {
            objective: Objective::SpanPrediction,
            need: 2,
            got: len,
        });
    }
    let mut rng = rng_for(spec);
    let budget = masked_count(spec.mask_ratio, len);
    let lens = sample_span_lens(&mut rng, budget, spec.mean_span, 1);
    Ok(CorruptionPlan::SpanPrediction {
        spans: place_spans(&mut rng, len, lens),
    })
}

pub fn corrupt_span(tokens: &[String], spec: &CorruptionSpec) -> Result<CorruptionPair> {
    check_reserved(tokens)?;
    let plan = plan_span_prediction(tokens.len(), spec)?;
    apply_plan(tokens, &plan)
}

/// Dispatches on `spec.objective`.
pub fn corrupt(tokens: &[String], spec: &CorruptionSpec) -> Result<CorruptionPair> {
    match spec.objective {
        Objective::Lm => corrupt_lm(tokens),
        Objective::MaskedSeq2seq => corrupt_mass(tokens, spec),
        Objective::Denoising => corrupt_denoise(tokens, spec),
        Objective::SpanPrediction => corrupt_span(tokens, spec),
    }
}

fn check_spans(spans: &[Span], len: usize, allow_empty: bool) -> Result<()> {
    let mut floor = 0;
    for (i, s) in spans.iter().enumerate() {
        if s.len == 0 && !allow_empty {
            return Err(ObjectiveError::Integrity(format!("span {i} is empty")));
        }
        if s.start < floor || s.end() > len {
            return Err(ObjectiveError::Integrity(format!(
                "span {i} ({}..{}) overlaps or leaves the sequence",
                s.start,
                s.end()
            )));
        }
        floor = s.end() + 1;
    }
    Ok(())
}

/// Replaces each span with one `marker(i)` token.
fn replace_spans(tokens: &[String], spans: &[Span], marker: impl Fn(usize) -> String) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + spans.len());
    let mut pos = 0;
    for (i, s) in spans.iter().enumerate() {
        out.extend_from_slice(&tokens[pos..s.start]);
        out.push(marker(i));
        pos = s.end();
    }
    out.extend_from_slice(&tokens[pos..]);
    out
}

fn permuted(tokens: &[String], order: &Option<Vec<Span>>) -> Result<Vec<String>> {
    let Some(order) = order else {
        return Ok(tokens.to_vec());
    };
    let mut covered = vec![false; tokens.len()];
    let mut out = Vec::with_capacity(tokens.len());
    for s in order {
        if s.end() > tokens.len() {
            return Err(ObjectiveError::Integrity("sentence span out of range".into()));
        }
        for (idx, c) in covered[s.start..s.end()].iter_mut().enumerate() {
            if *c {
                return Err(ObjectiveError::Integrity(format!(
                    "token {} appears in two sentences",
                    s.start + idx
                )));
            }
            *c = true;
        }
        out.extend_from_slice(&tokens[s.start..s.end()]);
    }
    if covered.iter().any(|c| !c) {
        return Err(ObjectiveError::Integrity("sentence order does not cover the sequence".into()));
    }
    Ok(out)
}

/// Applies an explicit plan to `tokens`.
pub fn apply_plan(tokens: &[String], plan: &CorruptionPlan) -> Result<CorruptionPair> {
    let (input, target) = match plan {
        CorruptionPlan::Lm => {
            if tokens.len() < 2 {
                return Err(ObjectiveError::TooShort {
                    objective: Objective::Lm,
                    need: 2,
                    got: tokens.len(),
                });
            }
            (tokens[..tokens.len() - 1].to_vec(), tokens[1..].to_vec())
        }
        CorruptionPlan::MaskedSeq2seq { span } => {
            check_spans(std::slice::from_ref(span), tokens.len(), false)?;
            let mut input = tokens.to_vec();
            for t in &mut input[span.start..span.end()] {
                *t = MASK.to_string();
            }
            (input, tokens[span.start..span.end()].to_vec())
        }
        CorruptionPlan::Denoising {
            sentence_order,
            spans,
        } => {
            let shuffled = permuted(tokens, sentence_order)?;
            check_spans(spans, shuffled.len(), true)?;
            (replace_spans(&shuffled, spans, |_| MASK.to_string()), tokens.to_vec())
        }
        CorruptionPlan::SpanPrediction { spans } => {
            check_spans(spans, tokens.len(), false)?;
            let input = replace_spans(tokens, spans, sentinel);
            let mut target = Vec::with_capacity(spans.iter().map(|s| s.len + 1).sum::<usize>() + 1);
            for (i, s) in spans.iter().enumerate() {
                target.push(sentinel(i));
                target.extend_from_slice(&tokens[s.start..s.end()]);
            }
            target.push(sentinel(spans.len()));
            (input, target)
        }
    };
    Ok(CorruptionPair {
        input: TokenSeq(input),
        target: TokenSeq(target),
        plan: plan.clone(),
    })
}

fn integrity(msg: impl Into<String>) -> ObjectiveError {
    ObjectiveError::Integrity(msg.into())
}

/// Recovers the original sequence from a pair and its plan.
pub fn reconstruct(pair: &CorruptionPair) -> Result<TokenSeq> {
    let input = &pair.input.0;
    let target = &pair.target.0;
    let original = match &pair.plan {
        CorruptionPlan::Lm => {
            if input.is_empty() || input.len() != target.len() || input[1..] != target[..target.len() - 1] {
                return Err(integrity("lm target is not the input shifted by one"));
            }
            let mut out = input.clone();
            out.push(target[target.len() - 1].clone());
            out
        }
        CorruptionPlan::MaskedSeq2seq { span } => {
            check_spans(std::slice::from_ref(span), input.len(), false)?;
            if target.len() != span.len {
                return Err(integrity("masked span length differs from target"));
            }
            let mask_positions: Vec<usize> = input
                .iter()
                .enumerate()
                .filter(|(_, t)| *t == MASK)
                .map(|(i, _)| i)
                .collect();
            if mask_positions != (span.start..span.end()).collect::<Vec<_>>() {
                return Err(integrity("mask positions differ from plan"));
            }
            let mut out = input.clone();
            out[span.start..span.end()].clone_from_slice(target);
            out
        }
        CorruptionPlan::Denoising {
            sentence_order,
            spans,
        } => {
            // Rebuild the expected input from the candidate original and
            // compare; the original is only accepted if it reproduces it.
            let shuffled = permuted(target, sentence_order)?;
            check_spans(spans, shuffled.len(), true)?;
            if input.iter().filter(|t| *t == MASK).count() != spans.len() {
                return Err(integrity("mask count differs from plan"));
            }
            let mut pos = 0;
            let mut cursor = 0;
            for s in spans {
                let kept = &shuffled[pos..s.start];
                if input.get(cursor..cursor + kept.len()) != Some(kept) {
                    return Err(integrity("unmasked tokens differ from target"));
                }
                cursor += kept.len();
                if input.get(cursor).map(String::as_str) != Some(MASK) {
                    return Err(integrity("expected a mask"));
                }
                cursor += 1;
                pos = s.end();
            }
            if input[cursor..] != shuffled[pos..] {
                return Err(integrity("trailing tokens differ from target"));
            }
            target.clone()
        }
        CorruptionPlan::SpanPrediction { spans } => {
            let mut segments: Vec<&[String]> = Vec::new();
            let mut expected = 0;
            let mut seg_start = None;
            for (i, t) in target.iter().enumerate() {
                if let Some(idx) = sentinel_index(t) {
                    if idx != expected {
                        return Err(integrity(format!("target sentinel {t} out of order; expected {}", sentinel(expected))));
                    }
                    if let Some(s) = seg_start {
                        segments.push(&target[s..i]);
                    }
                    seg_start = Some(i + 1);
                    expected += 1;
                }
            }
            let terminal_ok = target.last().and_then(|t| sentinel_index(t)) == Some(spans.len());
            if segments.len() != spans.len() || !terminal_ok {
                return Err(integrity(format!(
                    "target holds {} spans, plan has {} (terminal sentinel {})",
                    segments.len(),
                    spans.len(),
                    if terminal_ok { "present" } else { "missing" }
                )));
            }
            let mut out = Vec::with_capacity(input.len() + target.len());
            let mut next = 0;
            for t in input {
                match sentinel_index(t) {
                    Some(idx) => {
                        if idx != next {
                            return Err(integrity(format!("input sentinel {t} out of order")));
                        }
                        let seg = segments[idx];
                        if seg.len() != spans[idx].len || out.len() != spans[idx].start {
                            return Err(integrity(format!("span {idx} disagrees with plan")));
                        }
                        out.extend_from_slice(seg);
                        next += 1;
                    }
                    None => out.push(t.clone()),
                }
            }
            if next != spans.len() {
                return Err(integrity("input is missing sentinels"));
            }
            out
        }
    };
    Ok(TokenSeq(original))
}
