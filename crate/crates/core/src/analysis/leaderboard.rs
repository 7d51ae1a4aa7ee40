use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::metrics::is_known_metric;

/// One model's published scores on a dataset, in display units (x100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub model: String,
    pub dataset: String,
    pub scores: BTreeMap<String, f64>,
    /// Citation string or run id.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<PathBuf>,
    /// Score names accepted even though the metric registry does not know them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_metrics: Vec<String>,
}

impl LeaderboardEntry {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AnalysisError::InvalidEntry(m));
        if self.model.trim().is_empty() {
            return bad("empty model name".into());
        }
        if self.dataset.trim().is_empty() || self.dataset.contains(['/', '\\']) {
            return bad(format!("invalid dataset name {:?}", self.dataset));
        }
        if self.scores.is_empty() {
            return bad(format!("{} has no scores", self.model));
        }
        for (name, v) in &self.scores {
            if !is_known_metric(name) && !self.external_metrics.contains(name) {
                return bad(format!("metric {name:?} is neither registered nor declared external"));
            }
            if !v.is_finite() {
                return bad(format!("score {name} is not finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub dataset: String,
    pub entries: Vec<LeaderboardEntry>,
}

pub fn leaderboard_path(dir: &Path, dataset: &str) -> PathBuf {
    dir.join(format!("{dataset}.json"))
}

fn io_err(path: &Path, source: std::io::Error) -> AnalysisError {
    AnalysisError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Leaderboard {
    pub fn new(dataset: &str) -> Self {
        Self {
            dataset: dataset.to_string(),
            entries: Vec::new(),
        }
    }

    /// Reads `<dir>/<dataset>.json`; a missing file is an empty board.
    pub fn load(dir: &Path, dataset: &str) -> Result<Self> {
        let path = leaderboard_path(dir, dataset);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::new(dataset)),
            Err(e) => return Err(io_err(&path, e)),
        };
        let board: Leaderboard = serde_json::from_str(&text).map_err(|e| AnalysisError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if board.dataset != dataset {
            return Err(AnalysisError::Parse {
                path: path.display().to_string(),
                message: format!("file holds dataset {:?}", board.dataset),
            });
        }
        Ok(board)
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = leaderboard_path(dir, &self.dataset);
        let tmp = dir.join(format!(".{}.json.tmp{}", self.dataset, std::process::id()));
        let mut text = serde_json::to_string_pretty(self).expect("leaderboard serializes");
        text.push('\n');
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            io_err(&path, e)
        })?;
        Ok(path)
    }

    /// Inserts or replaces the entry for `entry.model`.
    pub fn upsert(&mut self, entry: LeaderboardEntry) -> Result<()> {
        entry.validate()?;
        if entry.dataset != self.dataset {
            return Err(AnalysisError::InvalidEntry(format!(
                "entry for {:?} added to the {:?} leaderboard",
                entry.dataset, self.dataset
            )));
        }
        match self.entries.iter_mut().find(|e| e.model == entry.model) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
        Ok(())
    }

    fn metric_names(&self) -> BTreeSet<&str> {
        self.entries.iter().flat_map(|e| e.scores.keys().map(String::as_str)).collect()
    }

    /// Entries sorted by `primary` descending; missing scores sort last, ties by model name.
    pub fn ranked(&self, primary: &str) -> Result<Vec<&LeaderboardEntry>> {
        let external = self.entries.iter().any(|e| e.external_metrics.iter().any(|m| m == primary));
        if !is_known_metric(primary) && !external {
            return Err(AnalysisError::Config(format!("unknown primary metric {primary:?}")));
        }
        let mut rows: Vec<&LeaderboardEntry> = self.entries.iter().collect();
        rows.sort_by(|a, b| {
            let key = |e: &LeaderboardEntry| e.scores.get(primary).copied();
            match (key(a), key(b)) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
            .then_with(|| a.model.cmp(&b.model))
        });
        Ok(rows)
    }

    /// Markdown table with the primary metric first, remaining metrics sorted.
    pub fn render(&self, primary: &str) -> Result<String> {
        let rows = self.ranked(primary)?;
        let mut cols: Vec<&str> = vec![primary];
        cols.extend(self.metric_names().into_iter().filter(|m| *m != primary));
        let mut out = format!("# {}\n\n| rank | model | {} | source |\n", self.dataset, cols.join(" | "));
        out.push_str(&format!("|---|---|{}---|\n", "---|".repeat(cols.len())));
        for (i, e) in rows.iter().enumerate() {
            let cells: Vec<String> = cols
                .iter()
                .map(|c| e.scores.get(*c).map_or("-".to_string(), |v| format!("{v:.2}")))
                .collect();
            out.push_str(&format!("| {} | {} | {} | {} |\n", i + 1, e.model, cells.join(" | "), e.source));
        }
        Ok(out)
    }
}

/// Loads the board for `entry.dataset`, upserts and saves it atomically.
pub fn leaderboard_update(dir: &Path, entry: LeaderboardEntry) -> Result<Leaderboard> {
    let mut board = Leaderboard::load(dir, &entry.dataset)?;
    board.upsert(entry)?;
    board.save(dir)?;
    Ok(board)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(model: &str, r: [f64; 3], source: &str) -> LeaderboardEntry {
        LeaderboardEntry {
            model: model.into(),
            dataset: "cnndm".into(),
            scores: BTreeMap::from([
                ("rouge-1".to_string(), r[0]),
                ("rouge-2".to_string(), r[1]),
                ("rouge-l".to_string(), r[2]),
            ]),
            source: source.into(),
            generated: None,
            external_metrics: vec![],
        }
    }

    #[test]
    fn upsert_and_rank_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        leaderboard_update(dir.path(), entry("BART", [44.16, 21.28, 40.90], "published")).unwrap();
        leaderboard_update(dir.path(), entry("BART (ours)", [44.47, 21.50, 41.35], "run-2020")).unwrap();
        let board = Leaderboard::load(dir.path(), "cnndm").unwrap();
        let ranked = board.ranked("rouge-1").unwrap();
        assert_eq!(ranked[0].model, "BART (ours)");
        assert_eq!(ranked.len(), 2);

        leaderboard_update(dir.path(), entry("BART", [45.0, 22.0, 42.0], "rerun")).unwrap();
        let board = Leaderboard::load(dir.path(), "cnndm").unwrap();
        assert_eq!(board.entries.len(), 2);
        assert_eq!(board.ranked("rouge-1").unwrap()[0].source, "rerun");
        let table = board.render("rouge-1").unwrap();
        assert!(table.contains("| 1 | BART | 45.00 | 22.00 | 42.00 | rerun |"), "{table}");
        assert!(fs::read_dir(dir.path()).unwrap().count() == 1);
    }

    #[test]
    fn unknown_metrics_are_rejected() {
        let board = Leaderboard::new("cnndm");
        assert!(matches!(board.ranked("bogus"), Err(AnalysisError::Config(_))));
        let mut e = entry("m", [1.0, 2.0, 3.0], "x");
        e.scores.insert("human-eval".into(), 3.0);
        assert!(e.validate().is_err());
        e.external_metrics.push("human-eval".into());
        e.validate().unwrap();
        let mut board = Leaderboard::new("cnndm");
        board.upsert(e).unwrap();
        assert!(board.ranked("human-eval").is_ok());
    }
}
