//! Experiment runner: fit the toy scorer, decode the test split and score it
//! once per seed, plus grid and random search over configuration keys.
//!
//! Seeds are used verbatim. A seed drives the train-split subsample (when
//! `lm.train_fraction < 1`) and the sampling strategies; beam and greedy
//! decoding over the full train split are seed-independent.

pub mod config;
mod search;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::mean_std;
use crate::corpus::{load_dataset, tokenize, Dataset, Example, Split};
use crate::decode::{decode_batch, ngram_lm_fit, DecodeParams, NGramLm, Scorer};
use crate::metrics::{evaluate, EvalOptions, GenerationRecord, MeanStd, MetricReport};

pub use config::{parse_pairs, parse_seeds, ExperimentConfig, CONFIG_KEYS, DEFAULT_SEEDS};
pub use search::{
    best_cfg, config_runner, grid_assignments, grid_search, random_assignments, random_search, rank_trials, results_json,
    results_tsv, run_trials, Assignment, ParamSpec, Scale, SearchOutcome, SearchSpace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Fit,
    Decode,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Fit => "fit",
            Stage::Decode => "decode",
            Stage::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage} stage: {message}")]
    Stage { stage: Stage, message: String },
    #[error("{0}")]
    Argument(String),
    #[error("reports do not align: {0}")]
    Alignment(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn stage<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub assignment: Assignment,
    pub objective: String,
    pub seeds: Vec<u64>,
    /// Objective value per seed, in seed order.
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample std (n-1); 0 for one seed.
    pub std: f64,
    pub spread: BTreeMap<String, MeanStd>,
    pub reports: Vec<MetricReport>,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Mean and sample std of every corpus metric across reports.
pub fn aggregate_seeds(reports: &[MetricReport]) -> Result<BTreeMap<String, MeanStd>> {
    let Some(first) = reports.first() else {
        return Err(HarnessError::Argument("no reports to aggregate".into()));
    };
    for (i, r) in reports.iter().enumerate() {
        if !r.corpus.keys().eq(first.corpus.keys()) {
            let names = |r: &MetricReport| r.corpus.keys().cloned().collect::<Vec<_>>().join(",");
            return Err(HarnessError::Alignment(format!(
                "report 0 has [{}] but report {i} has [{}]",
                names(first),
                names(r)
            )));
        }
    }
    Ok(first
        .corpus
        .keys()
        .map(|k| {
            let values: Vec<f64> = reports.iter().map(|r| r.corpus[k]).collect();
            let (mean, std) = mean_std(&values).expect("nonempty");
            (k.clone(), MeanStd { mean, std })
        })
        .collect())
}

/// The examples used to fit the scorer under `seed`.
pub fn train_subset(train: &[Example], fraction: f64, seed: u64) -> Vec<&Example> {
    if fraction >= 1.0 {
        return train.iter().collect();
    }
    let keep = ((train.len() as f64 * fraction).round() as usize).clamp(1, train.len());
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(keep);
    idx.sort_unstable();
    idx.into_iter().map(|i| &train[i]).collect()
}

/// Fits the n-gram scorer on the targets of `train`.
pub fn fit_scorer(cfg: &ExperimentConfig, train: &[&Example]) -> Result<NGramLm> {
    let seqs: Vec<Vec<String>> = train
        .iter()
        .flat_map(|e| e.references.iter().map(|r| tokenize(r, &cfg.tokenizer).into_inner()))
        .collect();
    ngram_lm_fit(&seqs, cfg.lm).map_err(stage(Stage::Fit))
}

/// Decodes `examples` with `scorer`, returning the best hypothesis of each
/// with its length-normalized score.
pub fn generate(
    scorer: &NGramLm,
    cfg: &ExperimentConfig,
    params: &DecodeParams,
    examples: &[Example],
) -> Result<Vec<(GenerationRecord, f64)>> {
    let sources: Vec<Vec<String>> = examples.iter().map(|e| tokenize(&e.source, &cfg.tokenizer).into_inner()).collect();
    let hyps = decode_batch(scorer, &sources, params, None).map_err(stage(Stage::Decode))?;
    Ok(examples
        .iter()
        .zip(hyps)
        .map(|(e, hs)| {
            let best = &hs[0];
            (
                GenerationRecord {
                    id: e.id.clone(),
                    hypothesis: best.text(scorer.vocab()),
                    references: e.references.clone(),
                    source: Some(e.source.clone()),
                },
                best.score,
            )
        })
        .collect())
}

fn eval_options(cfg: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        tokenizer: cfg.tokenizer,
        ..EvalOptions::default()
    }
}

/// One seed of the pipeline.
pub fn run_seed(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<MetricReport> {
    let train = dataset
        .split(Split::Train)
        .ok_or_else(|| stage::<&str>(Stage::Fit)("dataset has no train split"))?;
    let test = dataset
        .split(Split::Test)
        .ok_or_else(|| stage::<&str>(Stage::Decode)("dataset has no test split"))?;
    let scorer = fit_scorer(cfg, &train_subset(train, cfg.train_fraction, seed))?;
    let params = DecodeParams { seed, ..cfg.decode };
    let records: Vec<GenerationRecord> = generate(&scorer, cfg, &params, test)?.into_iter().map(|(r, _)| r).collect();
    evaluate(&records, &cfg.metrics, &eval_options(cfg)).map_err(stage(Stage::Evaluate))
}

/// Runs every configured seed on an already loaded dataset.
pub fn run_trial(cfg: &ExperimentConfig, dataset: &Dataset, index: usize, assignment: Assignment) -> Result<TrialResult> {
    cfg.validate()?;
    let start = Instant::now();
    let objective = cfg.objective.to_string();
    let reports = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, dataset, s))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = reports.iter().map(|r| r.corpus[&objective]).collect();
    let (mean, std) = mean_std(&values).expect("seeds are nonempty");
    Ok(TrialResult {
        index,
        assignment,
        objective,
        seeds: cfg.seeds.clone(),
        values,
        mean,
        std,
        spread: aggregate_seeds(&reports)?,
        reports,
        wall_time: start.elapsed(),
    })
}

pub fn load_configured_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    if cfg.dataset_path.is_empty() {
        return Err(HarnessError::Config("dataset.path is not set".into()));
    }
    load_dataset(Path::new(&cfg.dataset_path), cfg.dataset_format).map_err(stage(Stage::Load))
}

/// Loads the configured dataset and runs one trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrialResult> {
    cfg.validate()?;
    let dataset = load_configured_dataset(cfg)?;
    run_trial(cfg, &dataset, 0, Assignment::new())
}


#[cfg(test)]
mod tests {
    use super::*;

    fn report(pairs: &[(&str, f64)]) -> MetricReport {
        MetricReport {
            corpus: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            per_sample: BTreeMap::new(),
            n: 1,
            spread: None,
        }
    }

    #[test]
    fn aggregation_uses_sample_std() {
        let rs: Vec<_> = [44.37, 44.47, 44.57].iter().map(|&v| report(&[("rouge-1", v)])).collect();
        let agg = aggregate_seeds(&rs).unwrap();
        assert!((agg["rouge-1"].mean - 44.47).abs() < 1e-9);
        assert!((agg["rouge-1"].std - 0.10).abs() < 1e-9);
        let one = aggregate_seeds(&rs[..1]).unwrap();
        assert_eq!(one["rouge-1"].std, 0.0);
        let bad = [report(&[("a", 1.0)]), report(&[("b", 1.0)])];
        assert!(matches!(aggregate_seeds(&bad), Err(HarnessError::Alignment(_))));
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn repeated_seeds_repeat_values() {
        let data = fixtures::dataset();
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![7, 7];
        cfg.train_fraction = 0.5;
        let t = run_trial(&cfg, &data, 0, Assignment::new()).unwrap();
        assert_eq!(t.values[0], t.values[1]);
        assert_eq!(t.std, 0.0);
        cfg.seeds = vec![7];
        assert_eq!(run_trial(&cfg, &data, 0, Assignment::new()).unwrap().std, 0.0);
    }

    #[test]
    fn missing_split_is_stage_tagged() {
        let mut data = fixtures::dataset();
        data.splits.remove(&Split::Train);
        let err = run_trial(&ExperimentConfig::default(), &data, 0, Assignment::new()).unwrap_err();
        assert!(matches!(err, HarnessError::Stage { stage: Stage::Fit, .. }));
    }

    #[test]
    fn subset_is_seeded() {
        let data = fixtures::dataset();
        let train = data.split(Split::Train).unwrap();
        let a = train_subset(train, 0.5, 1);
        assert_eq!(a.len(), 20);
        assert_eq!(a, train_subset(train, 0.5, 1));
        assert_ne!(a, train_subset(train, 0.5, 2));
    }
}
