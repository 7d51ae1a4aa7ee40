//! Post-hoc analysis of generated texts: score distributions by input
//! length, n-gram copy rates against the source, two-model comparison,
//! per-dataset leaderboards and static reports.

mod leaderboard;
mod report;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, TokenizerSpec};
use crate::metrics::{self, EvalOptions, GenerationRecord, Metric, MetricError, MetricReport};

pub use leaderboard::{leaderboard_path, leaderboard_update, Leaderboard, LeaderboardEntry};
pub use report::{boxplot_geometry, render_report, BoxGeometry, ReportFormat};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("bucket edges must be strictly increasing and nonempty: {0:?}")]
    InvalidEdges(Vec<usize>),
    #[error("{lengths} lengths but {scores} scores")]
    LengthMismatch { lengths: usize, scores: usize },
    #[error("record ids differ; missing from {b_name}: {missing_in_b:?}; missing from {a_name}: {missing_in_a:?}")]
    Alignment {
        a_name: String,
        b_name: String,
        missing_in_a: Vec<String>,
        missing_in_b: Vec<String>,
    },
    #[error("metric {0:?} not present in the report")]
    MissingMetric(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid leaderboard entry: {0}")]
    InvalidEntry(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

pub const DEFAULT_EDGES: [usize; 5] = [0, 256, 512, 768, 1024];
pub const DEFAULT_COPY_ORDERS: [usize; 4] = [1, 2, 3, 4];

/// Order statistics of a nonempty sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample std (n-1); 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile with linear interpolation between order statistics of `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean and sample standard deviation. Empty input yields `None`.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((mean, (ss / (n - 1.0)).sqrt()))
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let (mean, std) = mean_std(values)?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            count: values.len(),
            mean,
            std,
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub lo: Option<usize>,
    /// Exclusive upper bound; `None` is unbounded.
    pub hi: Option<usize>,
    pub count: usize,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub metric: String,
    pub edges: Vec<usize>,
    pub buckets: Vec<Bucket>,
    /// Records below the first edge.
    pub overflow: Bucket,
}

impl BucketStats {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum::<usize>() + self.overflow.count
    }
}

fn check_edges(edges: &[usize]) -> Result<()> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::InvalidEdges(edges.to_vec()));
    }
    Ok(())
}

/// Index of the bucket `[edges[i], edges[i+1])` holding `len`, the last
/// bucket being unbounded above. `None` means below the first edge.
pub fn bucket_index(edges: &[usize], len: usize) -> Option<usize> {
    if len < edges[0] {
        return None;
    }
    Some(edges.partition_point(|&e| e <= len) - 1)
}

/// Groups `scores` by the matching entry of `lengths`.
pub fn bucket_scores(metric: &str, lengths: &[usize], scores: &[f64], edges: &[usize]) -> Result<BucketStats> {
    check_edges(edges)?;
    if lengths.len() != scores.len() {
        return Err(AnalysisError::LengthMismatch {
            lengths: lengths.len(),
            scores: scores.len(),
        });
    }
    let mut groups = vec![Vec::new(); edges.len()];
    let mut overflow = Vec::new();
    for (&len, &s) in lengths.iter().zip(scores) {
        match bucket_index(edges, len) {
            Some(i) => groups[i].push(s),
            None => overflow.push(s),
        }
    }
    let buckets = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let hi = edges.get(i + 1).copied();
            Bucket {
                label: match hi {
                    Some(h) => format!("[{}, {})", edges[i], h),
                    None => format!("[{}, inf)", edges[i]),
                },
                lo: Some(edges[i]),
                hi,
                count: g.len(),
                summary: Summary::of(g),
            }
        })
        .collect();
    Ok(BucketStats {
        metric: metric.to_string(),
        edges: edges.to_vec(),
        buckets,
        overflow: Bucket {
            label: "overflow".into(),
            lo: None,
            hi: Some(edges[0]),
            count: overflow.len(),
            summary: Summary::of(&overflow),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketBy {
    SourceLength,
    ReferenceLength,
}

impl FromStr for BucketBy {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source-length" => Ok(BucketBy::SourceLength),
            "reference-length" => Ok(BucketBy::ReferenceLength),
            other => Err(AnalysisError::Config(format!(
                "unknown bucket key {other:?}; expected source-length or reference-length"
            ))),
        }
    }
}

impl fmt::Display for BucketBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BucketBy::SourceLength => "source-length",
            BucketBy::ReferenceLength => "reference-length",
        })
    }
}

/// Token lengths used for bucketing. A missing source counts as length 0;
/// the reference length is that of the first reference.
pub fn record_lengths(records: &[GenerationRecord], by: BucketBy, tok: &TokenizerSpec) -> Vec<usize> {
    records
        .iter()
        .map(|r| {
            let text = match by {
                BucketBy::SourceLength => r.source.as_deref().unwrap_or(""),
                BucketBy::ReferenceLength => r.references.first().map(String::as_str).unwrap_or(""),
            };
            tokenize(text, tok).len()
        })
        .collect()
}

/// Fraction of the hypothesis n-gram positions whose n-gram occurs in the
/// source. `None` when the hypothesis has no n-gram.
pub fn copy_rate<T: Eq + Hash>(hypothesis: &[T], source: &[T], n: usize) -> Option<f64> {
    if n == 0 || hypothesis.len() < n {
        return None;
    }
    let present: HashSet<&[T]> = if source.len() >= n {
        source.windows(n).collect()
    } else {
        HashSet::new()
    };
    let windows = hypothesis.len() - n + 1;
    let hits = hypothesis.windows(n).filter(|w| present.contains(w)).count();
    Some(hits as f64 / windows as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopyPoint {
    pub n: usize,
    /// Mean over texts with a defined rate; `None` when no text has one.
    pub mean: Option<f64>,
    pub defined: usize,
}

/// Mean copy rate at each order, skipping undefined rates.
pub fn copy_rate_curve<S: AsRef<[String]>>(texts: &[S], sources: &[S], orders: &[usize]) -> Vec<CopyPoint> {
    orders
        .iter()
        .map(|&n| {
            let rates: Vec<f64> = texts
                .iter()
                .zip(sources)
                .filter_map(|(t, s)| copy_rate(t.as_ref(), s.as_ref(), n))
                .collect();
            CopyPoint {
                n,
                mean: mean_std(&rates).map(|(m, _)| m),
                defined: rates.len(),
            }
        })
        .collect()
}

struct Tokenized {
    hyps: Vec<Vec<String>>,
    refs: Vec<Vec<String>>,
    sources: Vec<Vec<String>>,
}

fn tokenize_records(records: &[GenerationRecord], tok: &TokenizerSpec) -> Tokenized {
    let t = |s: &str| tokenize(s, tok).into_inner();
    Tokenized {
        hyps: records.iter().map(|r| t(&r.hypothesis)).collect(),
        refs: records
            .iter()
            .map(|r| r.references.first().map(|x| t(x)).unwrap_or_default())
            .collect(),
        sources: records.iter().map(|r| t(r.source.as_deref().unwrap_or(""))).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub metric: Metric,
    pub edges: Vec<usize>,
    pub bucket_by: BucketBy,
    pub copy_orders: Vec<usize>,
    pub eval: EvalOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            metric: Metric::RougeL,
            edges: DEFAULT_EDGES.to_vec(),
            bucket_by: BucketBy::SourceLength,
            copy_orders: DEFAULT_COPY_ORDERS.to_vec(),
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub name: String,
    pub n: usize,
    pub corpus: BTreeMap<String, f64>,
    pub buckets: BucketStats,
    pub copy: Vec<CopyPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub per_sample: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinnerCount {
    pub bucket: String,
    pub a: usize,
    pub b: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model_a: String,
    pub model_b: String,
    pub ids: Vec<String>,
    pub deltas: BTreeMap<String, MetricDelta>,
    pub winners: BTreeMap<String, Vec<WinnerCount>>,
    pub copy_a: Vec<CopyPoint>,
    pub copy_b: Vec<CopyPoint>,
    pub copy_reference: Vec<CopyPoint>,
    /// True when the model's copy rate exceeds the reference's at every order.
    pub copying_a: bool,
    pub copying_b: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub metric: String,
    pub bucket_by: BucketBy,
    pub models: Vec<ModelAnalysis>,
    pub reference_copy: Vec<CopyPoint>,
    pub comparison: Option<Comparison>,
}

impl Analysis {
    pub fn empty(metric: &str) -> Self {
        Self {
            metric: metric.to_string(),
            bucket_by: BucketBy::SourceLength,
            models: Vec::new(),
            reference_copy: Vec::new(),
            comparison: None,
        }
    }
}

/// Copying holds when every order has both rates and the model's is higher.
pub fn is_copying(model: &[CopyPoint], reference: &[CopyPoint]) -> bool {
    !model.is_empty()
        && model.len() == reference.len()
        && model.iter().zip(reference).all(|(m, r)| match (m.mean, r.mean) {
            (Some(m), Some(r)) => m > r,
            _ => false,
        })
}

fn per_sample<'a>(report: &'a MetricReport, metric: &str) -> Result<&'a [f64]> {
    report
        .per_sample
        .get(metric)
        .map(Vec::as_slice)
        .ok_or_else(|| AnalysisError::MissingMetric(metric.to_string()))
}

/// Reorders `b` to follow the id order of `a`.
pub fn align_records(
    a_name: &str,
    a: &[GenerationRecord],
    b_name: &str,
    b: &[GenerationRecord],
) -> Result<Vec<GenerationRecord>> {
    let by_id: HashMap<&str, &GenerationRecord> = b.iter().map(|r| (r.id.as_str(), r)).collect();
    let a_ids: HashSet<&str> = a.iter().map(|r| r.id.as_str()).collect();
    let missing_in_b: Vec<String> = a.iter().filter(|r| !by_id.contains_key(r.id.as_str())).map(|r| r.id.clone()).collect();
    let missing_in_a: Vec<String> = b.iter().filter(|r| !a_ids.contains(r.id.as_str())).map(|r| r.id.clone()).collect();
    if !missing_in_a.is_empty() || !missing_in_b.is_empty() || a.len() != b.len() {
        return Err(AnalysisError::Alignment {
            a_name: a_name.to_string(),
            b_name: b_name.to_string(),
            missing_in_a,
            missing_in_b,
        });
    }
    Ok(a.iter().map(|r| by_id[r.id.as_str()].clone()).collect())
}

/// Compares two evaluated runs over the same, identically ordered records.
#[allow(clippy::too_many_arguments)]
pub fn compare_models(
    a_name: &str,
    a: &MetricReport,
    b_name: &str,
    b: &MetricReport,
    ids: &[String],
    lengths: &[usize],
    edges: &[usize],
    copy: [&[CopyPoint]; 3],
) -> Result<Comparison> {
    check_edges(edges)?;
    let mut deltas = BTreeMap::new();
    let mut winners = BTreeMap::new();
    for (name, &va) in &a.corpus {
        let Some(&vb) = b.corpus.get(name) else {
            return Err(AnalysisError::MissingMetric(name.clone()));
        };
        let (pa, pb) = (per_sample(a, name)?, per_sample(b, name)?);
        if pa.len() != pb.len() || pa.len() != lengths.len() {
            return Err(AnalysisError::LengthMismatch {
                lengths: lengths.len(),
                scores: pa.len().max(pb.len()),
            });
        }
        deltas.insert(
            name.clone(),
            MetricDelta {
                a: va,
                b: vb,
                delta: va - vb,
                per_sample: pa.iter().zip(pb).map(|(x, y)| x - y).collect(),
            },
        );
        let stats = bucket_scores(name, lengths, pa, edges)?;
        let mut counts: Vec<WinnerCount> = stats
            .buckets
            .iter()
            .chain(std::iter::once(&stats.overflow))
            .map(|bk| WinnerCount {
                bucket: bk.label.clone(),
                a: 0,
                b: 0,
                ties: 0,
            })
            .collect();
        let overflow = counts.len() - 1;
        for ((&x, &y), &len) in pa.iter().zip(pb).zip(lengths) {
            let slot = &mut counts[bucket_index(edges, len).unwrap_or(overflow)];
            match x.total_cmp(&y) {
                std::cmp::Ordering::Greater => slot.a += 1,
                std::cmp::Ordering::Less => slot.b += 1,
                std::cmp::Ordering::Equal => slot.ties += 1,
            }
        }
        winners.insert(name.clone(), counts);
    }
    let [copy_a, copy_b, copy_reference] = copy;
    Ok(Comparison {
        model_a: a_name.to_string(),
        model_b: b_name.to_string(),
        ids: ids.to_vec(),
        deltas,
        winners,
        copying_a: is_copying(copy_a, copy_reference),
        copying_b: is_copying(copy_b, copy_reference),
        copy_a: copy_a.to_vec(),
        copy_b: copy_b.to_vec(),
        copy_reference: copy_reference.to_vec(),
    })
}

/// Evaluates one or two runs and assembles bucket, copy-rate and comparison
/// results. The second run is aligned to the first by id.
pub fn analyze(runs: &[(String, Vec<GenerationRecord>)], opts: &AnalysisOptions) -> Result<Analysis> {
    let metric = opts.metric.to_string();
    let mut out = Analysis {
        metric: metric.clone(),
        bucket_by: opts.bucket_by,
        models: Vec::new(),
        reference_copy: Vec::new(),
        comparison: None,
    };
    let Some((first_name, first)) = runs.first() else {
        return Ok(out);
    };
    if first.is_empty() {
        return Ok(out);
    }
    let lengths = record_lengths(first, opts.bucket_by, &opts.eval.tokenizer);
    let mut reports = Vec::new();
    let mut curves = Vec::new();
    for (i, (name, records)) in runs.iter().take(2).enumerate() {
        let records = if i == 0 {
            records.clone()
        } else {
            align_records(first_name, first, name, records)?
        };
        let report = metrics::evaluate(&records, &[opts.metric], &opts.eval)?;
        let tok = tokenize_records(&records, &opts.eval.tokenizer);
        if i == 0 {
            out.reference_copy = copy_rate_curve(&tok.refs, &tok.sources, &opts.copy_orders);
        }
        let copy = copy_rate_curve(&tok.hyps, &tok.sources, &opts.copy_orders);
        out.models.push(ModelAnalysis {
            name: name.clone(),
            n: report.n,
            corpus: report.corpus.clone(),
            buckets: bucket_scores(&metric, &lengths, per_sample(&report, &metric)?, &opts.edges)?,
            copy: copy.clone(),
        });
        reports.push(report);
        curves.push(copy);
    }
    if reports.len() == 2 {
        let ids: Vec<String> = first.iter().map(|r| r.id.clone()).collect();
        out.comparison = Some(compare_models(
            &runs[0].0,
            &reports[0],
            &runs[1].0,
            &reports[1],
            &ids,
            &lengths,
            &opts.edges,
            [&curves[0], &curves[1], &out.reference_copy],
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn sample_std_and_singletons() {
        let b = bucket_scores("m", &[3, 5], &[1.0, 3.0], &[0, 10]).unwrap();
        let s = b.buckets[0].summary.unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        let one = bucket_scores("m", &[3], &[0.7], &[0]).unwrap();
        let s = one.buckets[0].summary.unwrap();
        assert_eq!((s.mean, s.std), (0.7, 0.0));
    }

    #[test]
    fn intervals_are_left_closed() {
        let edges = DEFAULT_EDGES;
        assert_eq!(bucket_index(&edges, 0), Some(0));
        assert_eq!(bucket_index(&edges, 255), Some(0));
        assert_eq!(bucket_index(&edges, 256), Some(1));
        assert_eq!(bucket_index(&edges, 5000), Some(4));
        assert_eq!(bucket_index(&[10, 20], 3), None);
        let b = bucket_scores("m", &[3, 15, 40], &[0.1, 0.2, 0.3], &[10, 20]).unwrap();
        assert_eq!(b.overflow.count, 1);
        assert_eq!(b.total(), 3);
        assert!(bucket_scores("m", &[1], &[1.0], &[5, 5]).is_err());
        assert!(bucket_scores("m", &[1, 2], &[1.0], &[0]).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
    }

    #[test]
    fn copy_rate_examples() {
        let h = toks("a b c");
        assert_eq!(copy_rate(&h, &toks("a b d b c"), 2), Some(1.0));
        assert_eq!(copy_rate(&h, &toks("a b d"), 2), Some(0.5));
        assert_eq!(copy_rate(&h, &toks("x y z"), 1), Some(0.0));
        assert_eq!(copy_rate(&h, &toks("a b c"), 4), None);
    }

    #[test]
    fn copying_flag_needs_every_order() {
        let p = |v: &[f64]| -> Vec<CopyPoint> {
            v.iter()
                .enumerate()
                .map(|(i, &m)| CopyPoint { n: i + 1, mean: Some(m), defined: 1 })
                .collect()
        };
        assert!(is_copying(&p(&[0.9, 0.8]), &p(&[0.5, 0.4])));
        assert!(!is_copying(&p(&[0.9, 0.3]), &p(&[0.5, 0.4])));
    }

    fn rec(id: &str, hyp: &str, reference: &str, src: &str) -> GenerationRecord {
        GenerationRecord {
            id: id.into(),
            hypothesis: hyp.into(),
            references: vec![reference.into()],
            source: Some(src.into()),
        }
    }

    #[test]
    fn comparison_deltas_and_winners() {
        let a = vec![
            rec("1", "the cat sat", "the cat sat", "the cat sat on the mat"),
            rec("2", "a dog ran", "a dog ran far", "a dog ran far away"),
            rec("3", "birds fly", "birds fly high", "birds fly high up"),
        ];
        let b = vec![
            rec("3", "fish swim", "birds fly high", "birds fly high up"),
            rec("1", "the cat", "the cat sat", "the cat sat on the mat"),
            rec("2", "a cow", "a dog ran far", "a dog ran far away"),
        ];
        let opts = AnalysisOptions { edges: vec![0, 5], ..Default::default() };
        let out = analyze(&[("A".into(), a.clone()), ("B".into(), b)], &opts).unwrap();
        let cmp = out.comparison.unwrap();
        let d = &cmp.deltas["rouge-l"];
        let pa = out.models[0].buckets.buckets.iter().map(|b| b.count).sum::<usize>();
        assert_eq!(pa, 3);
        for x in &d.per_sample {
            assert!(*x > 0.0);
        }
        assert!((d.delta - (d.a - d.b)).abs() < 1e-15);
        let wins: usize = cmp.winners["rouge-l"].iter().map(|w| w.a).sum();
        let losses: usize = cmp.winners["rouge-l"].iter().map(|w| w.b).sum();
        assert_eq!((wins, losses), (3, 0));

        let same = analyze(&[("A".into(), a.clone()), ("A2".into(), a.clone())], &opts).unwrap();
        assert!(same.comparison.unwrap().deltas["rouge-l"].per_sample.iter().all(|&x| x == 0.0));

        let mut short = a.clone();
        short.pop();
        let err = analyze(&[("A".into(), a), ("C".into(), short)], &opts).unwrap_err();
        assert!(matches!(err, AnalysisError::Alignment { ref missing_in_b, .. } if missing_in_b == &["3".to_string()]));
    }
}
