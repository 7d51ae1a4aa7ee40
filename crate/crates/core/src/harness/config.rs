//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::corpus::{Format, TokenizerMode, TokenizerSpec};
use crate::decode::{DecodeParams, NGramLmConfig, Strategy};
use crate::metrics::{parse_metrics, Metric};
use crate::objectives::{CorruptionSpec, Objective};

pub const DEFAULT_SEEDS: [u64; 3] = [2020, 2021, 2022];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_path: String,
    pub dataset_format: Format,
    pub tokenizer: TokenizerSpec,
    pub lm: NGramLmConfig,
    /// Fraction of the train split, drawn per seed, used to fit the scorer.
    pub train_fraction: f64,
    pub decode: DecodeParams,
    pub metrics: Vec<Metric>,
    pub objective: Metric,
    pub corruption: CorruptionSpec,
    pub seeds: Vec<u64>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_path: String::new(),
            dataset_format: Format::Jsonl,
            tokenizer: TokenizerSpec::default(),
            lm: NGramLmConfig::default(),
            train_fraction: 1.0,
            decode: DecodeParams::default(),
            metrics: vec![Metric::Bleu(None), Metric::RougeN(1), Metric::RougeN(2), Metric::RougeL],
            objective: Metric::RougeL,
            corruption: CorruptionSpec::new(Objective::SpanPrediction),
            seeds: DEFAULT_SEEDS.to_vec(),
            workers: None,
        }
    }
}

/// Every settable key, in dump order.
pub const CONFIG_KEYS: &[&str] = &[
    "dataset.path",
    "dataset.format",
    "tokenizer.mode",
    "tokenizer.lowercase",
    "tokenizer.strip_punctuation",
    "lm.order",
    "lm.add_k",
    "lm.copy_weight",
    "lm.train_fraction",
    "decode.strategy",
    "decode.beam_size",
    "decode.max_len",
    "decode.no_repeat_ngram",
    "decode.length_penalty",
    "decode.top_k",
    "decode.top_p",
    "decode.temperature",
    "decode.block_source",
    "decode.seed",
    "eval.metrics",
    "eval.objective",
    "corrupt.objective",
    "corrupt.mask_ratio",
    "corrupt.mean_span",
    "corrupt.permute_sentences",
    "corrupt.seed",
    "run.seeds",
    "run.workers",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| HarnessError::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    list(value).map(|s| parse("run.seeds", s)).collect()
}

impl ExperimentConfig {
    /// Sets one dotted key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset.path" => self.dataset_path = v.to_string(),
            "dataset.format" => self.dataset_format = parse(key, v)?,
            "tokenizer.mode" => self.tokenizer.mode = parse::<TokenizerMode>(key, v)?,
            "tokenizer.lowercase" => self.tokenizer.lowercase = parse_bool(key, v)?,
            "tokenizer.strip_punctuation" => self.tokenizer.strip_punctuation = parse_bool(key, v)?,
            "lm.order" => self.lm.order = parse(key, v)?,
            "lm.add_k" => self.lm.add_k = parse(key, v)?,
            "lm.copy_weight" => self.lm.copy_weight = parse(key, v)?,
            "lm.train_fraction" => self.train_fraction = parse(key, v)?,
            "decode.strategy" => self.decode.strategy = parse::<Strategy>(key, v)?,
            "decode.beam_size" => self.decode.beam_size = parse(key, v)?,
            "decode.max_len" => self.decode.max_len = parse(key, v)?,
            "decode.no_repeat_ngram" => self.decode.no_repeat_ngram = parse(key, v)?,
            "decode.length_penalty" => self.decode.length_penalty = parse(key, v)?,
            "decode.top_k" => self.decode.top_k = parse(key, v)?,
            "decode.top_p" => self.decode.top_p = parse(key, v)?,
            "decode.temperature" => self.decode.temperature = parse(key, v)?,
            "decode.block_source" => self.decode.block_source = parse_bool(key, v)?,
            "decode.seed" => self.decode.seed = parse(key, v)?,
            "eval.metrics" => {
                let names: Vec<&str> = list(v).collect();
                self.metrics = parse_metrics(&names).map_err(|e| HarnessError::Config(format!("{key}: {e}")))?;
            }
            "eval.objective" => self.objective = parse(key, v)?,
            "corrupt.objective" => {
                let objective: Objective = parse(key, v)?;
                if objective != self.corruption.objective {
                    let seed = self.corruption.seed;
                    self.corruption = CorruptionSpec::new(objective).with_seed(seed);
                }
            }
            "corrupt.mask_ratio" => self.corruption.mask_ratio = parse(key, v)?,
            "corrupt.mean_span" => self.corruption.mean_span = parse(key, v)?,
            "corrupt.permute_sentences" => self.corruption.permute_sentences = parse_bool(key, v)?,
            "corrupt.seed" => self.corruption.seed = parse(key, v)?,
            "run.seeds" => self.seeds = parse_seeds(v)?,
            "run.workers" => {
                self.workers = match v {
                    "" | "auto" => None,
                    n => Some(parse(key, n)?),
                }
            }
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown configuration key {other:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let join = |xs: Vec<String>| xs.join(",");
        Some(match key {
            "dataset.path" => self.dataset_path.clone(),
            "dataset.format" => self.dataset_format.to_string(),
            "tokenizer.mode" => self.tokenizer.mode.to_string(),
            "tokenizer.lowercase" => self.tokenizer.lowercase.to_string(),
            "tokenizer.strip_punctuation" => self.tokenizer.strip_punctuation.to_string(),
            "lm.order" => self.lm.order.to_string(),
            "lm.add_k" => self.lm.add_k.to_string(),
            "lm.copy_weight" => self.lm.copy_weight.to_string(),
            "lm.train_fraction" => self.train_fraction.to_string(),
            "decode.strategy" => self.decode.strategy.to_string(),
            "decode.beam_size" => self.decode.beam_size.to_string(),
            "decode.max_len" => self.decode.max_len.to_string(),
            "decode.no_repeat_ngram" => self.decode.no_repeat_ngram.to_string(),
            "decode.length_penalty" => self.decode.length_penalty.to_string(),
            "decode.top_k" => self.decode.top_k.to_string(),
            "decode.top_p" => self.decode.top_p.to_string(),
            "decode.temperature" => self.decode.temperature.to_string(),
            "decode.block_source" => self.decode.block_source.to_string(),
            "decode.seed" => self.decode.seed.to_string(),
            "eval.metrics" => join(self.metrics.iter().map(ToString::to_string).collect()),
            "eval.objective" => self.objective.to_string(),
            "corrupt.objective" => self.corruption.objective.to_string(),
            "corrupt.mask_ratio" => self.corruption.mask_ratio.to_string(),
            "corrupt.mean_span" => self.corruption.mean_span.to_string(),
            "corrupt.permute_sentences" => self.corruption.permute_sentences.to_string(),
            "corrupt.seed" => self.corruption.seed.to_string(),
            "run.seeds" => join(self.seeds.iter().map(ToString::to_string).collect()),
            "run.workers" => self.workers.map_or("auto".to_string(), |w| w.to_string()),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_pairs(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn apply_overrides<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k.as_ref(), v.as_ref())?;
        }
        Ok(())
    }

    /// The fully resolved configuration in the same format `apply_text` reads.
    pub fn dump(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("every listed key resolves")))
            .collect()
    }

    /// Full check for seeded experiments and searches.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return cfg("run.seeds must not be empty".into());
        }
        if !self.metrics.contains(&self.objective) {
            return cfg(format!("eval.objective {} is not among eval.metrics", self.objective));
        }
        self.validate_stages()
    }

    /// Checks the per-stage settings only; enough for single-stage commands.
    pub fn validate_stages(&self) -> Result<()> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if self.metrics.is_empty() {
            return cfg("eval.metrics must not be empty".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return cfg("lm.train_fraction must lie in (0, 1]".into());
        }
        if self.workers == Some(0) {
            return cfg("run.workers must be positive".into());
        }
        self.lm.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.decode.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.corruption.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Splits `key = value` lines, rejecting malformed ones and duplicate keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HarnessError::Config(format!("line {}: expected key = value", i + 1)));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(HarnessError::Config(format!("line {}: empty key", i + 1)));
        }
        if seen.insert(key.clone(), i + 1).is_some() {
            return Err(HarnessError::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# comment\ndecode.beam_size = 3\neval.metrics = bleu, rouge-l\nrun.seeds = 1,2\n").unwrap();
        assert_eq!(cfg.decode.beam_size, 3);
        assert_eq!(cfg.seeds, vec![1, 2]);
        let mut again = ExperimentConfig::default();
        again.apply_text(&cfg.dump()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.dump(), cfg.dump());
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.seeds, vec![2020, 2021, 2022]);
        assert_eq!((cfg.decode.beam_size, cfg.decode.no_repeat_ngram), (5, 3));
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("decode.beam", "3").is_err());
        assert!(cfg.set("decode.beam_size", "x").is_err());
        assert!(cfg.apply_text("a = 1\na = 2").is_err());
        assert!(cfg.apply_text("novalue").is_err());
        cfg.set("eval.objective", "meteor").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("eval.objective", "rouge-l").unwrap();
        cfg.set("run.seeds", "").unwrap();
        assert!(cfg.validate().is_err());
    }
}
