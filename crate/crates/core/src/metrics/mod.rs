//! Corpus-scale lexical, diversity and accuracy metrics.
//!
//! The free functions in the submodules work on any hashable token type and
//! are the reference definitions. [`evaluate`] is the batch entry point: it
//! tokenizes and interns every text once, builds the n-gram tables shared by
//! BLEU and ROUGE-N, and fans per-record work across a worker pool. Corpus
//! values are reduced sequentially in record order, so the result does not
//! depend on the worker count.

pub mod accuracy;
pub mod diversity;
pub mod lexical;
pub mod meteor;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use accuracy::{combined_score, exact_match, harmonic_mean, token_f1, CombinedWeights, Normalizer};
pub use diversity::{distinct_n, self_bleu, SelfBleuOptions};
pub use lexical::{bleu, lcs_len, rouge_l, rouge_n, sentence_bleu, BleuConfig, BleuStats, CorpusScore, Prf, Smoothing};
pub use meteor::{meteor, MeteorParams};

use crate::corpus::{count_windows, tokenize, TokenizerSpec};
use crate::parallel::with_workers;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("unknown metric {name:?}; valid metrics: {}", VALID_METRICS.join(", "))]
    UnknownMetric { name: String },
    #[error("record {id:?} has no references")]
    MissingReferences { id: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Accepted metric names; `N` is an order from 1 to 9.
pub const VALID_METRICS: &[&str] = &[
    "bleu",
    "bleu-N",
    "rouge-N",
    "rouge-l",
    "distinct-N",
    "self-bleu",
    "meteor",
    "exact-match",
    "token-f1",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    /// `None` uses the configured BLEU settings; `Some(n)` is uniform BLEU-n.
    Bleu(Option<usize>),
    RougeN(usize),
    RougeL,
    Distinct(usize),
    SelfBleu,
    Meteor,
    ExactMatch,
    TokenF1,
}

fn order_suffix(name: &str, prefix: &str) -> Option<usize> {
    let n: usize = name.strip_prefix(prefix)?.parse().ok()?;
    (1..=9).contains(&n).then_some(n)
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(raw: &str) -> Result<Self> {
        let name = raw.trim().to_ascii_lowercase();
        let metric = match name.as_str() {
            "bleu" => Some(Metric::Bleu(None)),
            "rouge-l" | "rougel" => Some(Metric::RougeL),
            "self-bleu" | "selfbleu" => Some(Metric::SelfBleu),
            "meteor" => Some(Metric::Meteor),
            "exact-match" | "em" => Some(Metric::ExactMatch),
            "token-f1" | "f1" => Some(Metric::TokenF1),
            other => order_suffix(other, "bleu-")
                .map(|n| Metric::Bleu(Some(n)))
                .or_else(|| order_suffix(other, "rouge-").map(Metric::RougeN))
                .or_else(|| order_suffix(other, "distinct-").map(Metric::Distinct)),
        };
        metric.ok_or(MetricError::UnknownMetric {
            name: raw.to_string(),
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Bleu(None) => f.write_str("bleu"),
            Metric::Bleu(Some(n)) => write!(f, "bleu-{n}"),
            Metric::RougeN(n) => write!(f, "rouge-{n}"),
            Metric::RougeL => f.write_str("rouge-l"),
            Metric::Distinct(n) => write!(f, "distinct-{n}"),
            Metric::SelfBleu => f.write_str("self-bleu"),
            Metric::Meteor => f.write_str("meteor"),
            Metric::ExactMatch => f.write_str("exact-match"),
            Metric::TokenF1 => f.write_str("token-f1"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn parse_metrics<S: AsRef<str>>(names: &[S]) -> Result<Vec<Metric>> {
    let mut out: Vec<Metric> = Vec::new();
    for n in names {
        let m: Metric = n.as_ref().parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

/// True when `name` is accepted by the metric registry.
pub fn is_known_metric(name: &str) -> bool {
    name.parse::<Metric>().is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub hypothesis: String,
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Corpus and per-sample scores, all on the [0, 1] scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus: BTreeMap<String, f64>,
    pub per_sample: BTreeMap<String, Vec<f64>>,
    pub n: usize,
    /// Mean and sample std across repeated runs, when aggregated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<BTreeMap<String, MeanStd>>,
}

impl MetricReport {
    pub fn corpus_score(&self, metric: &str) -> Option<f64> {
        self.corpus.get(metric).copied()
    }
}

/// Renders a [0, 1] score on the ×100 scale with two decimals.
pub fn percent(score: f64) -> String {
    format!("{:.2}", score * 100.0)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub tokenizer: TokenizerSpec,
    pub bleu: BleuConfig,
    pub meteor: MeteorParams,
    pub normalizer: Normalizer,
    pub self_bleu: SelfBleuOptions,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerSpec::default(),
            bleu: BleuConfig::default(),
            meteor: MeteorParams::default(),
            normalizer: Normalizer::Squad,
            self_bleu: SelfBleuOptions::default(),
            workers: None,
        }
    }
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
    strings: Vec<String>,
}

impl Interner {
    fn intern(&mut self, s: String) -> u32 {
        if let Some(&id) = self.ids.get(&s) {
            return id;
        }
        let id = self.strings.len() as u32;
        self.strings.push(s.clone());
        self.ids.insert(s, id);
        id
    }
}

struct Encoded {
    hyp: Vec<u32>,
    refs: Vec<Vec<u32>>,
}

#[derive(Default)]
struct RecordOut {
    values: Vec<f64>,
    bleu: Vec<Option<BleuStats>>,
}

fn bleu_config_for(metric: Metric, base: &BleuConfig) -> Option<BleuConfig> {
    match metric {
        Metric::Bleu(None) => Some(base.clone()),
        Metric::Bleu(Some(n)) => Some(BleuConfig {
            smoothing: base.smoothing,
            ..BleuConfig::uniform(n)
        }),
        _ => None,
    }
}

/// Computes every requested metric over the records in a single pass.
pub fn evaluate(records: &[GenerationRecord], metrics: &[Metric], opts: &EvalOptions) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if let Some(r) = records.iter().find(|r| r.references.is_empty()) {
        return Err(MetricError::MissingReferences { id: r.id.clone() });
    }
    let bleu_cfgs: Vec<Option<BleuConfig>> = metrics.iter().map(|&m| bleu_config_for(m, &opts.bleu)).collect();
    for cfg in bleu_cfgs.iter().flatten() {
        cfg.validate()?;
    }
    with_workers(opts.workers, || evaluate_inner(records, metrics, &bleu_cfgs, opts))
        .map_err(|e| MetricError::Pool(e.to_string()))?
}

fn evaluate_inner(
    records: &[GenerationRecord],
    metrics: &[Metric],
    bleu_cfgs: &[Option<BleuConfig>],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let spec = opts.tokenizer;
    let tokenized: Vec<(Vec<String>, Vec<Vec<String>>)> = records
        .par_iter()
        .map(|r| {
            (
                tokenize(&r.hypothesis, &spec).into_inner(),
                r.references.iter().map(|t| tokenize(t, &spec).into_inner()).collect(),
            )
        })
        .collect();

    let mut interner = Interner::default();
    let encoded: Vec<Encoded> = tokenized
        .into_iter()
        .map(|(h, rs)| Encoded {
            hyp: h.into_iter().map(|t| interner.intern(t)).collect(),
            refs: rs
                .into_iter()
                .map(|r| r.into_iter().map(|t| interner.intern(t)).collect())
                .collect(),
        })
        .collect();

    let needs_meteor = metrics.contains(&Metric::Meteor);
    let stem_class: Vec<u32> = if needs_meteor {
        let mut stems = Interner::default();
        interner
            .strings
            .iter()
            .map(|s| stems.intern(meteor::stem(s).to_string()))
            .collect()
    } else {
        Vec::new()
    };

    let max_order = metrics
        .iter()
        .zip(bleu_cfgs)
        .map(|(m, cfg)| match (m, cfg) {
            (_, Some(c)) => c.max_n,
            (Metric::RougeN(n), _) => *n,
            _ => 0,
        })
        .max()
        .unwrap_or(0);

    let outs: Vec<RecordOut> = encoded
        .par_iter()
        .zip(records.par_iter())
        .map(|(enc, rec)| score_record(enc, rec, metrics, bleu_cfgs, max_order, &stem_class, opts))
        .collect();

    let hyp_slices: Vec<&[u32]> = encoded.iter().map(|e| e.hyp.as_slice()).collect();
    let mut corpus = BTreeMap::new();
    let mut per_sample = BTreeMap::new();
    for (k, metric) in metrics.iter().enumerate() {
        let name = metric.to_string();
        let (value, samples) = match metric {
            Metric::Bleu(_) => {
                let cfg = bleu_cfgs[k].as_ref().expect("bleu metric has a config");
                let mut total = BleuStats::new(cfg.max_n);
                for o in &outs {
                    total.accumulate(o.bleu[k].as_ref().expect("bleu stats present"));
                }
                (total.score(cfg), column(&outs, k))
            }
            Metric::Distinct(n) => (distinct_n(&hyp_slices, *n)?, column(&outs, k)),
            Metric::SelfBleu => {
                let s = self_bleu(&hyp_slices, &opts.bleu, &opts.self_bleu)?;
                (s.corpus, s.per_sample)
            }
            _ => {
                let col = column(&outs, k);
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                (mean, col)
            }
        };
        corpus.insert(name.clone(), value);
        per_sample.insert(name, samples);
    }
    Ok(MetricReport {
        corpus,
        per_sample,
        n: records.len(),
        spread: None,
    })
}

fn column(outs: &[RecordOut], k: usize) -> Vec<f64> {
    outs.iter().map(|o| o.values[k]).collect()
}

fn score_record(
    enc: &Encoded,
    rec: &GenerationRecord,
    metrics: &[Metric],
    bleu_cfgs: &[Option<BleuConfig>],
    max_order: usize,
    stem_class: &[u32],
    opts: &EvalOptions,
) -> RecordOut {
    let hyp_counts: Vec<_> = (1..=max_order).map(|n| count_windows(&enc.hyp, n)).collect();
    let ref_counts: Vec<Vec<_>> = enc
        .refs
        .iter()
        .map(|r| (1..=max_order).map(|n| count_windows(r, n)).collect())
        .collect();
    let ref_lens: Vec<usize> = enc.refs.iter().map(Vec::len).collect();
    let ref_slices: Vec<&[u32]> = enc.refs.iter().map(Vec::as_slice).collect();
    let raw_refs: Vec<&str> = rec.references.iter().map(String::as_str).collect();

    let mut out = RecordOut {
        values: Vec::with_capacity(metrics.len()),
        bleu: vec![None; metrics.len()],
    };
    for (k, metric) in metrics.iter().enumerate() {
        let value = match metric {
            Metric::Bleu(_) => {
                let cfg = bleu_cfgs[k].as_ref().expect("bleu metric has a config");
                let stats = lexical::bleu_stats_cached(&hyp_counts, enc.hyp.len(), &ref_counts, &ref_lens, cfg.max_n);
                let v = stats.score(cfg);
                out.bleu[k] = Some(stats);
                v
            }
            Metric::RougeN(n) => {
                let refs: Vec<_> = ref_counts.iter().map(|r| &r[n - 1]).collect();
                lexical::rouge_n_cached(&hyp_counts[n - 1], &refs).f1
            }
            Metric::RougeL => rouge_l(&enc.hyp, &ref_slices).f1,
            Metric::Distinct(n) => diversity::distinct_n_sentence(&enc.hyp, *n),
            // Filled from the corpus-level computation.
            Metric::SelfBleu => 0.0,
            Metric::Meteor => {
                let h: Vec<u32> = enc.hyp.iter().map(|&t| stem_class[t as usize]).collect();
                let rs: Vec<Vec<u32>> = enc
                    .refs
                    .iter()
                    .map(|r| r.iter().map(|&t| stem_class[t as usize]).collect())
                    .collect();
                let rs: Vec<&[u32]> = rs.iter().map(Vec::as_slice).collect();
                meteor::meteor_classes(&h, &rs, &opts.meteor)
            }
            Metric::ExactMatch => exact_match(&rec.hypothesis, &raw_refs, opts.normalizer),
            Metric::TokenF1 => token_f1(&rec.hypothesis, &raw_refs, opts.normalizer),
        };
        out.values.push(value);
    }
    out
}

/// Parses metric names and evaluates them.
pub fn evaluate_names<S: AsRef<str>>(records: &[GenerationRecord], names: &[S], opts: &EvalOptions) -> Result<MetricReport> {
    let metrics = parse_metrics(names)?;
    evaluate(records, &metrics, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, hyp: &str, refs: &[&str]) -> GenerationRecord {
        GenerationRecord {
            id: id.into(),
            hypothesis: hyp.into(),
            references: refs.iter().map(|s| s.to_string()).collect(),
            source: None,
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for name in ["bleu", "bleu-2", "rouge-1", "rouge-l", "distinct-3", "self-bleu", "meteor", "exact-match", "token-f1"] {
            let m: Metric = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert_eq!("EM".parse::<Metric>().unwrap(), Metric::ExactMatch);
        assert!("rouge-0".parse::<Metric>().is_err());
    }

    #[test]
    fn unknown_metric_lists_valid_names() {
        let err = "bertscore".parse::<Metric>().unwrap_err().to_string();
        assert!(err.contains("bertscore"));
        assert!(err.contains("rouge-l"));
    }

    #[test]
    fn identity_corpus() {
        let records = vec![
            rec("1", "the cat sat on the mat", &["the cat sat on the mat"]),
            rec("2", "a dog barked", &["a dog barked"]),
        ];
        let report = evaluate_names(&records, &["bleu", "rouge-l", "distinct-1"], &EvalOptions::default()).unwrap();
        assert!((report.corpus["bleu"] - 1.0).abs() < 1e-12);
        assert!((report.corpus["rouge-l"] - 1.0).abs() < 1e-12);
        // 9 unigrams, "the" repeated once.
        assert!((report.corpus["distinct-1"] - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(report.per_sample["bleu"].len(), 2);
        assert_eq!(report.n, 2);
    }

    #[test]
    fn evaluate_matches_free_functions() {
        let records = vec![
            rec("1", "walking the dogs today", &["the dog walked today", "dogs walk"]),
            rec("2", "b a c", &["a b c"]),
            rec("3", "x", &["y z"]),
        ];
        let names = ["bleu", "rouge-1", "rouge-2", "rouge-l", "meteor", "token-f1", "exact-match", "self-bleu", "distinct-2"];
        let opts = EvalOptions::default();
        let report = evaluate_names(&records, &names, &opts).unwrap();
        let tok = |s: &str| tokenize(s, &opts.tokenizer).into_inner();
        let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> =
            records.iter().map(|r| (tok(&r.hypothesis), r.references.iter().map(|x| tok(x)).collect())).collect();
        let views: Vec<(&[String], Vec<&[String]>)> =
            pairs.iter().map(|(h, rs)| (h.as_slice(), rs.iter().map(Vec::as_slice).collect())).collect();
        let b = bleu(&views, &opts.bleu).unwrap();
        assert!((report.corpus["bleu"] - b.corpus).abs() < 1e-12);
        for (i, (h, rs)) in views.iter().enumerate() {
            assert!((report.per_sample["rouge-2"][i] - rouge_n(h, rs, 2).unwrap().f1).abs() < 1e-12);
            assert!((report.per_sample["rouge-l"][i] - rouge_l(h, rs).f1).abs() < 1e-12);
            assert!((report.per_sample["meteor"][i] - meteor(h, rs, &opts.meteor)).abs() < 1e-12);
        }
        let hyps: Vec<&[String]> = views.iter().map(|v| v.0).collect();
        assert!((report.corpus["distinct-2"] - distinct_n(&hyps, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let records: Vec<_> = (0..50)
            .map(|i| rec(&i.to_string(), &format!("w{} w{} w{}", i % 7, i % 5, i % 3), &[&format!("w{} w{} w{}", i % 5, i % 7, i % 2)]))
            .collect();
        let names = ["bleu", "rouge-l", "meteor", "self-bleu", "distinct-1"];
        let one = evaluate_names(&records, &names, &EvalOptions { workers: Some(1), ..EvalOptions::default() }).unwrap();
        let four = evaluate_names(&records, &names, &EvalOptions { workers: Some(4), ..EvalOptions::default() }).unwrap();
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(evaluate_names::<&str>(&[], &["bleu"], &EvalOptions::default()), Err(MetricError::EmptyCorpus)));
    }

    #[test]
    fn report_json_shape() {
        let records = vec![rec("1", "a b", &["a b"])];
        let report = evaluate_names(&records, &["rouge-l"], &EvalOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&report).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, vec!["corpus", "n", "per_sample"]);
    }

    #[test]
    fn percent_rendering() {
        assert_eq!(percent(0.44471), "44.47");
    }
}
