use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::blocking::{ngram_blocklist, NGramBlocker};
use super::{DecodeError, DecodeParams, Hypothesis, Result, Scorer, Strategy, TokenId};
use crate::parallel::with_workers;

/// Largest search space [`exhaustive_argmax`] will enumerate.
pub const EXHAUSTIVE_LIMIT: f64 = 1e6;

fn source_blocker<S: Scorer>(scorer: &S, source: &[String], params: &DecodeParams) -> Option<NGramBlocker<TokenId>> {
    if !params.block_source || params.no_repeat_ngram == 0 {
        return None;
    }
    let vocab = scorer.vocab();
    // Out-of-vocabulary source tokens can never be generated; they only
    // break windows, so they map to an id outside the vocabulary.
    let ids: Vec<TokenId> = source.iter().map(|t| vocab.id(t).unwrap_or(vocab.len())).collect();
    let mut b = NGramBlocker::new(params.no_repeat_ngram);
    b.observe(&ids);
    Some(b)
}

/// Next-token log-probabilities with BOS and repeated n-grams removed.
/// If everything is blocked EOS is re-enabled.
fn masked_dist<S: Scorer>(
    scorer: &S,
    state: &S::State,
    prefix: &[TokenId],
    params: &DecodeParams,
    source_block: Option<&NGramBlocker<TokenId>>,
) -> Vec<f64> {
    let vocab = scorer.vocab();
    let eos = vocab.eos();
    let mut dist = scorer.log_dist(state);
    if let Some(bos) = vocab.bos() {
        dist[bos] = f64::NEG_INFINITY;
    }
    if params.no_repeat_ngram > 0 {
        let eos_lp = dist[eos];
        for t in ngram_blocklist(prefix, params.no_repeat_ngram) {
            dist[t] = f64::NEG_INFINITY;
        }
        if let Some(banned) = source_block.and_then(|b| b.banned_after(prefix)) {
            for &t in banned {
                if t < dist.len() {
                    dist[t] = f64::NEG_INFINITY;
                }
            }
        }
        if dist.iter().all(|v| *v == f64::NEG_INFINITY) {
            dist[eos] = if eos_lp.is_finite() { eos_lp } else { 0.0 };
        }
    }
    dist
}

/// Highest finite entry; ties go to the lowest index.
fn argmax(dist: &[f64]) -> Option<TokenId> {
    let mut best: Option<TokenId> = None;
    for (t, &v) in dist.iter().enumerate() {
        if v > f64::NEG_INFINITY && best.is_none_or(|b| v > dist[b]) {
            best = Some(t);
        }
    }
    best
}

/// Best first: higher normalized score, then the lexicographically smaller sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| b.eos.cmp(&a.eos))
}

pub fn greedy<S: Scorer>(scorer: &S, source: &[String], params: &DecodeParams) -> Result<Hypothesis> {
    params.validate()?;
    let eos = scorer.vocab().eos();
    let source_block = source_blocker(scorer, source, params);
    let mut state = scorer.begin(source);
    let mut tokens = Vec::new();
    let mut lp = 0.0;
    let mut ended = false;
    for _ in 0..params.max_len {
        let dist = masked_dist(scorer, &state, &tokens, params, source_block.as_ref());
        let t = argmax(&dist).unwrap_or(eos);
        lp += if dist[t].is_finite() { dist[t] } else { 0.0 };
        if t == eos {
            ended = true;
            break;
        }
        tokens.push(t);
        state = scorer.extend(&state, t);
    }
    Ok(Hypothesis::new(tokens, lp, ended, params.max_len, params.length_penalty))
}

struct Live<St> {
    tokens: Vec<TokenId>,
    lp: f64,
    state: St,
}

/// Beam search returning at most `beam_size` hypotheses, best first.
///
/// Each step keeps the `beam_size` best expansions by cumulative
/// log-probability; expansions ending in EOS or reaching `max_len` move to
/// the finished pool. The search stops early once the pool is full and no
/// live prefix can still beat its worst member.
pub fn beam_search<S: Scorer>(scorer: &S, source: &[String], params: &DecodeParams) -> Result<Vec<Hypothesis>> {
    params.validate()?;
    let eos = scorer.vocab().eos();
    let alpha = params.length_penalty;
    let source_block = source_blocker(scorer, source, params);
    let mut live = vec![Live {
        tokens: Vec::new(),
        lp: 0.0,
        state: scorer.begin(source),
    }];
    let mut done: Vec<Hypothesis> = Vec::new();

    for step in 1..=params.max_len {
        let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
        for (bi, beam) in live.iter().enumerate() {
            let dist = masked_dist(scorer, &beam.state, &beam.tokens, params, source_block.as_ref());
            for (t, &v) in dist.iter().enumerate() {
                if v > f64::NEG_INFINITY {
                    candidates.push((beam.lp + v, bi, t));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(params.beam_size);

        let mut next = Vec::with_capacity(candidates.len());
        for (lp, bi, t) in candidates {
            let parent = &live[bi];
            if t == eos {
                done.push(Hypothesis::new(parent.tokens.clone(), lp, true, params.max_len, alpha));
                continue;
            }
            let mut tokens = parent.tokens.clone();
            tokens.push(t);
            if step == params.max_len {
                done.push(Hypothesis::new(tokens, lp, false, params.max_len, alpha));
            } else {
                next.push(Live {
                    tokens,
                    lp,
                    state: scorer.extend(&parent.state, t),
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if done.len() >= params.beam_size {
            done.sort_by(rank);
            done.truncate(params.beam_size);
            let worst = done[done.len() - 1].score;
            let horizon = (params.max_len as f64).powf(alpha);
            let bound = live.iter().map(|b| b.lp / horizon).fold(f64::NEG_INFINITY, f64::max);
            if bound <= worst {
                break;
            }
        }
    }
    done.sort_by(rank);
    done.truncate(params.beam_size);
    Ok(done)
}

/// Enumerates every sequence of up to `max_len` steps and returns the best
/// by normalized score (no blocking). Refuses spaces above [`EXHAUSTIVE_LIMIT`].
pub fn exhaustive_argmax<S: Scorer>(scorer: &S, source: &[String], max_len: usize, alpha: f64) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(DecodeError::InvalidParams("max_len must be >= 1".into()));
    }
    let size = (scorer.vocab().len() as f64).powi(max_len as i32);
    if size > EXHAUSTIVE_LIMIT {
        return Err(DecodeError::SearchTooLarge {
            size,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut best: Option<Hypothesis> = None;
    let mut tokens = Vec::with_capacity(max_len);
    walk(scorer, &scorer.begin(source), &mut tokens, 0.0, max_len, alpha, &mut best);
    best.ok_or_else(|| DecodeError::InvalidParams("scorer assigns zero probability to every sequence".into()))
}

fn consider(best: &mut Option<Hypothesis>, h: Hypothesis) {
    if best.as_ref().is_none_or(|b| rank(&h, b) == Ordering::Less) {
        *best = Some(h);
    }
}

fn walk<S: Scorer>(
    scorer: &S,
    state: &S::State,
    tokens: &mut Vec<TokenId>,
    lp: f64,
    max_len: usize,
    alpha: f64,
    best: &mut Option<Hypothesis>,
) {
    let vocab = scorer.vocab();
    let dist = scorer.log_dist(state);
    for t in vocab.generable() {
        let v = dist[t];
        if v == f64::NEG_INFINITY {
            continue;
        }
        if t == vocab.eos() {
            consider(best, Hypothesis::new(tokens.clone(), lp + v, true, max_len, alpha));
            continue;
        }
        tokens.push(t);
        if tokens.len() == max_len {
            consider(best, Hypothesis::new(tokens.clone(), lp + v, false, max_len, alpha));
        } else {
            let next = scorer.extend(state, t);
            walk(scorer, &next, tokens, lp + v, max_len, alpha, best);
        }
        tokens.pop();
    }
}

/// Draws one token from the temperature-scaled, truncated distribution.
fn draw(dist: &[f64], params: &DecodeParams, rng: &mut impl Rng) -> Option<TokenId> {
    let scaled: Vec<(TokenId, f64)> = dist
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > f64::NEG_INFINITY)
        .map(|(t, v)| (t, v / params.temperature))
        .collect();
    let max = scaled.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut weighted: Vec<(TokenId, f64)> = scaled.into_iter().map(|(t, x)| (t, (x - max).exp())).collect();
    weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    match params.strategy {
        Strategy::TopK => weighted.truncate(params.top_k),
        Strategy::TopP if params.top_p < 1.0 => {
            let total: f64 = weighted.iter().map(|x| x.1).sum();
            let mut cum = 0.0;
            let mut keep = weighted.len();
            for (i, (_, w)) in weighted.iter().enumerate() {
                cum += w;
                if cum / total >= params.top_p {
                    keep = i + 1;
                    break;
                }
            }
            weighted.truncate(keep);
        }
        _ => {}
    }
    let total: f64 = weighted.iter().map(|x| x.1).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(t, w) in &weighted {
        if u < w {
            return Some(t);
        }
        u -= w;
    }
    weighted.last().map(|x| x.0)
}

pub fn sample_with_rng<S: Scorer, R: Rng>(
    scorer: &S,
    source: &[String],
    params: &DecodeParams,
    rng: &mut R,
) -> Result<Hypothesis> {
    params.validate()?;
    let eos = scorer.vocab().eos();
    let source_block = source_blocker(scorer, source, params);
    let mut state = scorer.begin(source);
    let mut tokens = Vec::new();
    let mut lp = 0.0;
    let mut ended = false;
    for _ in 0..params.max_len {
        let dist = masked_dist(scorer, &state, &tokens, params, source_block.as_ref());
        let t = draw(&dist, params, rng).unwrap_or(eos);
        lp += if dist[t].is_finite() { dist[t] } else { 0.0 };
        if t == eos {
            ended = true;
            break;
        }
        tokens.push(t);
        state = scorer.extend(&state, t);
    }
    Ok(Hypothesis::new(tokens, lp, ended, params.max_len, params.length_penalty))
}

/// Top-k or nucleus sampling seeded from `params.seed`.
pub fn sample<S: Scorer>(scorer: &S, source: &[String], params: &DecodeParams) -> Result<Hypothesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    sample_with_rng(scorer, source, params, &mut rng)
}

/// Runs the configured strategy; non-beam strategies return one hypothesis.
pub fn decode<S: Scorer>(scorer: &S, source: &[String], params: &DecodeParams) -> Result<Vec<Hypothesis>> {
    match params.strategy {
        Strategy::Greedy => greedy(scorer, source, params).map(|h| vec![h]),
        Strategy::Beam => beam_search(scorer, source, params),
        Strategy::TopK | Strategy::TopP => sample(scorer, source, params).map(|h| vec![h]),
    }
}

/// Decodes many sources in parallel; output order equals input order.
/// Record `i` samples with seed `params.seed + i`.
pub fn decode_batch<S>(
    scorer: &S,
    sources: &[Vec<String>],
    params: &DecodeParams,
    workers: Option<usize>,
) -> Result<Vec<Vec<Hypothesis>>>
where
    S: Scorer + Sync,
    S::State: Send,
{
    params.validate()?;
    let run = || {
        sources
            .par_iter()
            .enumerate()
            .map(|(i, src)| {
                let p = DecodeParams {
                    seed: params.seed.wrapping_add(i as u64),
                    ..*params
                };
                decode(scorer, src, &p)
            })
            .collect::<Result<Vec<_>>>()
    };
    with_workers(workers, run).map_err(|e| DecodeError::InvalidParams(e.to_string()))?
}
