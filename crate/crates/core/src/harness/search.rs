use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::parse_pairs;
use super::{run_trial, ExperimentConfig, HarnessError, Result, TrialResult};
use crate::corpus::Dataset;
use crate::parallel::with_workers;

/// Parameter name to value, rendered as config strings.
pub type Assignment = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamSpec {
    Values(Vec<String>),
    Range { lo: f64, hi: f64, scale: Scale },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamSpec>,
}

fn arg(msg: String) -> HarnessError {
    HarnessError::Argument(msg)
}

impl SearchSpace {
    /// Reads `key = v1, v2` and `key = range(lo, hi[, linear|log])` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (key, value) in parse_pairs(text)? {
            let spec = match value.strip_prefix("range(").and_then(|v| v.strip_suffix(')')) {
                Some(inner) => {
                    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
                    let num = |s: &str| s.parse::<f64>().map_err(|e| arg(format!("{key}: {s:?}: {e}")));
                    let scale = match parts.get(2).copied() {
                        None | Some("linear") => Scale::Linear,
                        Some("log") => Scale::Log,
                        Some(other) => return Err(arg(format!("{key}: unknown scale {other:?}"))),
                    };
                    if parts.len() < 2 || parts.len() > 3 {
                        return Err(arg(format!("{key}: expected range(lo, hi[, scale])")));
                    }
                    ParamSpec::Range {
                        lo: num(parts[0])?,
                        hi: num(parts[1])?,
                        scale,
                    }
                }
                None => ParamSpec::Values(value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()),
            };
            params.insert(key, spec);
        }
        let space = Self { params };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, spec) in &self.params {
            match spec {
                ParamSpec::Values(v) if v.is_empty() => return Err(arg(format!("{key}: empty value list"))),
                ParamSpec::Range { lo, hi, scale } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(arg(format!("{key}: range needs finite lo < hi")));
                    }
                    if *scale == Scale::Log && *lo <= 0.0 {
                        return Err(arg(format!("{key}: log range needs lo > 0")));
                    }
                }
                ParamSpec::Values(_) => {}
            }
        }
        Ok(())
    }
}

/// The full Cartesian product, last key varying fastest.
pub fn grid_assignments(space: &SearchSpace) -> Result<Vec<Assignment>> {
    space.validate()?;
    if space.params.is_empty() {
        return Err(arg("grid search over an empty space".into()));
    }
    let mut out = vec![Assignment::new()];
    for (key, spec) in &space.params {
        let ParamSpec::Values(values) = spec else {
            return Err(arg(format!("{key}: grid search needs a value list, not a range")));
        };
        out = out
            .into_iter()
            .flat_map(|a| {
                values.iter().map(move |v| {
                    let mut next = a.clone();
                    next.insert(key.clone(), v.clone());
                    next
                })
            })
            .collect();
    }
    Ok(out)
}

/// `budget` seeded draws: lists uniformly, ranges uniformly on their scale.
pub fn random_assignments(space: &SearchSpace, budget: usize, seed: u64) -> Result<Vec<Assignment>> {
    space.validate()?;
    if budget == 0 {
        return Err(arg("budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..budget)
        .map(|_| {
            space
                .params
                .iter()
                .map(|(key, spec)| {
                    let value = match spec {
                        ParamSpec::Values(v) => v[rng.gen_range(0..v.len())].clone(),
                        ParamSpec::Range { lo, hi, scale } => {
                            let u: f64 = rng.gen();
                            let x = match scale {
                                Scale::Linear => lo + u * (hi - lo),
                                Scale::Log => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
                            };
                            x.clamp(*lo, *hi).to_string()
                        }
                    };
                    (key.clone(), value)
                })
                .collect()
        })
        .collect())
}

/// Runs every assignment on a bounded pool. Results keep assignment order;
/// the error of the lowest failing index wins.
pub fn run_trials<F>(assignments: &[Assignment], runner: F, workers: Option<usize>) -> Result<Vec<TrialResult>>
where
    F: Fn(usize, &Assignment) -> Result<TrialResult> + Sync,
{
    let run = || {
        assignments
            .par_iter()
            .enumerate()
            .map(|(i, a)| runner(i, a))
            .collect::<Vec<_>>()
    };
    with_workers(workers, run)
        .map_err(|e| HarnessError::Pool(e.to_string()))?
        .into_iter()
        .collect()
}

/// Mean descending, then std ascending, then assignment order.
pub fn rank_trials(trials: &mut [TrialResult]) {
    trials.sort_by(|a, b| {
        b.mean
            .total_cmp(&a.mean)
            .then(a.std.total_cmp(&b.std))
            .then_with(|| a.assignment.cmp(&b.assignment))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Ranked, best first.
    pub trials: Vec<TrialResult>,
    pub best: Assignment,
}

fn outcome(mut trials: Vec<TrialResult>) -> Result<SearchOutcome> {
    rank_trials(&mut trials);
    let best = trials.first().map(|t| t.assignment.clone()).ok_or_else(|| arg("no trials ran".into()))?;
    Ok(SearchOutcome { trials, best })
}

pub fn grid_search<F>(space: &SearchSpace, runner: F, workers: Option<usize>) -> Result<SearchOutcome>
where
    F: Fn(usize, &Assignment) -> Result<TrialResult> + Sync,
{
    outcome(run_trials(&grid_assignments(space)?, runner, workers)?)
}

pub fn random_search<F>(space: &SearchSpace, budget: usize, seed: u64, runner: F, workers: Option<usize>) -> Result<SearchOutcome>
where
    F: Fn(usize, &Assignment) -> Result<TrialResult> + Sync,
{
    outcome(run_trials(&random_assignments(space, budget, seed)?, runner, workers)?)
}

/// Runner that overlays each assignment on `base` as configuration keys.
pub fn config_runner<'a>(
    base: &'a ExperimentConfig,
    dataset: &'a Dataset,
) -> impl Fn(usize, &Assignment) -> Result<TrialResult> + Sync + 'a {
    move |i, a| {
        let mut cfg = base.clone();
        for (k, v) in a {
            cfg.set(k, v)?;
        }
        run_trial(&cfg, dataset, i, a.clone())
    }
}

/// Tab-separated table, one ranked trial per row. Wall time is omitted.
pub fn results_tsv(outcome: &SearchOutcome) -> String {
    let keys: BTreeSet<&str> = outcome.trials.iter().flat_map(|t| t.assignment.keys().map(String::as_str)).collect();
    let seeds: Vec<u64> = outcome.trials.first().map(|t| t.seeds.clone()).unwrap_or_default();
    let mut out = String::from("rank\ttrial");
    for k in &keys {
        let _ = write!(out, "\t{k}");
    }
    out.push_str("\tobjective\tmean\tstd");
    for s in &seeds {
        let _ = write!(out, "\tseed_{s}");
    }
    out.push('\n');
    for (rank, t) in outcome.trials.iter().enumerate() {
        let _ = write!(out, "{}\t{}", rank + 1, t.index);
        for k in &keys {
            let _ = write!(out, "\t{}", t.assignment.get(*k).map_or("", String::as_str));
        }
        let _ = write!(out, "\t{}\t{}\t{}", t.objective, t.mean, t.std);
        for v in &t.values {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

/// JSON form of the outcome with sorted keys.
pub fn results_json(outcome: &SearchOutcome) -> String {
    let value = serde_json::to_value(outcome).expect("outcome serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

/// The resolved configuration of `base` with `best` applied, workers unset.
pub fn best_cfg(base: &ExperimentConfig, best: &Assignment) -> Result<String> {
    let mut cfg = base.clone();
    for (k, v) in best {
        cfg.set(k, v)?;
    }
    // Results do not depend on the worker count.
    cfg.workers = None;
    Ok(cfg.dump())
}
