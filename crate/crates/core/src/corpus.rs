//! Unified text-to-text corpus model.
//!
//! Every task is reduced to `(source, [target, ...])` records. This module
//! owns loading and validation of those records, the tokenizers shared by
//! the metric and decoding engines, and n-gram extraction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::hash::Hash;
use std::io::{self, BufRead, BufReader, Write};
use std::ops::Deref;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset is empty: {0}")]
    Empty(String),
    #[error("duplicate ids in split {split}: {}", .ids.join(", "))]
    DuplicateIds { split: String, ids: Vec<String> },
    #[error("record {id:?} has an empty reference")]
    EmptyReference { id: String },
    #[error("no split files found in {0}")]
    NoSplits(PathBuf),
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("unknown {kind} {value:?}")]
    UnknownName { kind: &'static str, value: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// One source text paired with one or more reference targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub source: String,
    #[serde(rename = "target")]
    pub references: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "dev" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(CorpusError::UnknownName {
                kind: "split",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Tsv,
}

impl FromStr for Format {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "tsv" => Ok(Format::Tsv),
            _ => Err(CorpusError::UnknownName {
                kind: "format",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Jsonl => "jsonl",
            Format::Tsv => "tsv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub splits: BTreeMap<Split, Vec<Example>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Option<&[Example]> {
        self.splits.get(&split).map(Vec::as_slice)
    }

    /// Checks the per-split invariants: nonempty, unique ids, nonempty references.
    pub fn validate(&self) -> Result<()> {
        if self.splits.values().all(Vec::is_empty) {
            return Err(CorpusError::Empty(self.name.clone()));
        }
        for (split, examples) in &self.splits {
            validate_examples(split.as_str(), examples)?;
        }
        Ok(())
    }

    /// Writes `<dir>/<name>.<split>.jsonl` for every split.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (split, examples) in &self.splits {
            let path = dir.join(format!("{}.{}.jsonl", self.name, split));
            let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut out = io::BufWriter::new(file);
            write_jsonl(&mut out, examples).map_err(|e| io_err(&path, e))?;
            out.flush().map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, source: io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn validate_examples(split: &str, examples: &[Example]) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for ex in examples {
        if ex.id.is_empty() {
            return Err(CorpusError::Parse {
                line: 0,
                message: "empty id".into(),
            });
        }
        if !seen.insert(ex.id.as_str()) {
            dups.insert(ex.id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(CorpusError::DuplicateIds {
            split: split.to_string(),
            ids: dups.into_iter().collect(),
        });
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    source: Option<String>,
    target: Option<TargetField>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TargetField {
    One(String),
    Many(Vec<String>),
}

fn parse_jsonl_line(line: &str, lineno: usize) -> Result<Example> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let missing = |field: &str| CorpusError::Parse {
        line: lineno,
        message: format!("missing field `{field}`"),
    };
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => {
            return Err(CorpusError::Parse {
                line: lineno,
                message: "`id` must be a string".into(),
            })
        }
        None => lineno.to_string(),
    };
    let source = raw.source.ok_or_else(|| missing("source"))?;
    let references = match raw.target.ok_or_else(|| missing("target"))? {
        TargetField::One(s) => vec![s],
        TargetField::Many(v) => v,
    };
    check_references(&id, &references, lineno)?;
    Ok(Example {
        id,
        source,
        references,
    })
}

fn check_references(id: &str, references: &[String], lineno: usize) -> Result<()> {
    if references.is_empty() {
        return Err(CorpusError::Parse {
            line: lineno,
            message: "`target` must hold at least one reference".into(),
        });
    }
    if references.iter().any(|r| r.trim().is_empty()) {
        return Err(CorpusError::EmptyReference { id: id.to_string() });
    }
    Ok(())
}

fn parse_tsv_line(line: &str, lineno: usize) -> Result<Example> {
    let mut fields = line.split('\t');
    let source = fields.next().unwrap_or_default().to_string();
    let references: Vec<String> = fields.map(str::to_string).collect();
    let id = lineno.to_string();
    if references.is_empty() {
        return Err(CorpusError::Parse {
            line: lineno,
            message: "expected source<TAB>target".into(),
        });
    }
    check_references(&id, &references, lineno)?;
    Ok(Example {
        id,
        source,
        references,
    })
}

/// Parses records from a reader; blank lines are skipped but still counted.
pub fn read_examples<R: BufRead>(reader: R, format: Format) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        out.push(match format {
            Format::Jsonl => parse_jsonl_line(line, lineno)?,
            Format::Tsv => parse_tsv_line(line, lineno)?,
        });
    }
    Ok(out)
}

pub fn read_examples_file(path: &Path, format: Format) -> Result<Vec<Example>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_examples(BufReader::new(file), format)
}

/// Serializes records in the canonical JSONL form, one LF-terminated object per line.
pub fn write_jsonl<W: Write>(out: &mut W, examples: &[Example]) -> io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut *out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Splits a file name such as `cnndm.test.jsonl` into (`cnndm`, Some(Test)).
fn split_file_name(path: &Path) -> (String, Option<Split>) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rsplit_once('.') {
        Some((name, tail)) => match tail.parse::<Split>() {
            Ok(split) => (name.to_string(), Some(split)),
            Err(_) => (stem.clone(), None),
        },
        None => (stem, None),
    }
}

/// Loads a dataset from a directory of `<name>.<split>.<ext>` files or from
/// a single file. A single file without a split infix becomes the test split.
pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let meta = fs::metadata(path).map_err(|e| io_err(path, e))?;
    let mut dataset = if meta.is_dir() {
        load_dir(path, format)?
    } else {
        let (name, split) = split_file_name(path);
        let examples = read_examples_file(path, format)?;
        let mut splits = BTreeMap::new();
        splits.insert(split.unwrap_or(Split::Test), examples);
        Dataset { name, splits }
    };
    dataset.splits.retain(|_, v| !v.is_empty());
    if dataset.splits.is_empty() {
        return Err(CorpusError::Empty(path.display().to_string()));
    }
    dataset.validate()?;
    Ok(dataset)
}

fn load_dir(dir: &Path, format: Format) -> Result<Dataset> {
    let ext = format.extension();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    entries.sort();

    let mut name = None;
    let mut splits = BTreeMap::new();
    for path in entries {
        let (stem, split) = split_file_name(&path);
        let Some(split) = split else { continue };
        if name.is_none() {
            name = Some(stem);
        }
        splits.insert(split, read_examples_file(&path, format)?);
    }
    let name = name.ok_or_else(|| CorpusError::NoSplits(dir.to_path_buf()))?;
    Ok(Dataset { name, splits })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    Whitespace,
    /// Runs of alphanumeric characters; every other visible character is its own token.
    #[default]
    UnicodeWordPunct,
    Character,
}

impl FromStr for TokenizerMode {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" | "space" => Ok(TokenizerMode::Whitespace),
            "unicode-word+punct" | "word" | "word+punct" => Ok(TokenizerMode::UnicodeWordPunct),
            "character" | "char" => Ok(TokenizerMode::Character),
            _ => Err(CorpusError::UnknownName {
                kind: "tokenizer mode",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerMode::Whitespace => "whitespace",
            TokenizerMode::UnicodeWordPunct => "unicode-word+punct",
            TokenizerMode::Character => "character",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub mode: TokenizerMode,
    pub lowercase: bool,
    /// Ignored in character mode.
    pub strip_punctuation: bool,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        Self {
            mode: TokenizerMode::UnicodeWordPunct,
            lowercase: true,
            strip_punctuation: false,
        }
    }
}

impl TokenizerSpec {
    pub fn whitespace() -> Self {
        Self {
            mode: TokenizerMode::Whitespace,
            lowercase: false,
            strip_punctuation: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn joined(&self) -> String {
        self.0.join(" ")
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl From<Vec<String>> for TokenSeq {
    fn from(v: Vec<String>) -> Self {
        TokenSeq(v)
    }
}

impl<'a> From<&[&'a str]> for TokenSeq {
    fn from(v: &[&'a str]) -> Self {
        TokenSeq(v.iter().map(|s| s.to_string()).collect())
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn push_cased(out: &mut Vec<String>, token: &str, lowercase: bool) {
    if token.is_empty() {
        return;
    }
    if lowercase {
        out.push(token.to_lowercase());
    } else {
        out.push(token.to_string());
    }
}

pub fn tokenize(text: &str, spec: &TokenizerSpec) -> TokenSeq {
    let mut out = Vec::new();
    match spec.mode {
        TokenizerMode::Whitespace => {
            for word in text.split_whitespace() {
                if spec.strip_punctuation {
                    let kept: String = word.chars().filter(|c| !is_punct(*c)).collect();
                    push_cased(&mut out, &kept, spec.lowercase);
                } else {
                    push_cased(&mut out, word, spec.lowercase);
                }
            }
        }
        TokenizerMode::UnicodeWordPunct => {
            let mut start = None;
            for (i, c) in text.char_indices() {
                if c.is_alphanumeric() {
                    start.get_or_insert(i);
                    continue;
                }
                if let Some(s) = start.take() {
                    push_cased(&mut out, &text[s..i], spec.lowercase);
                }
                if !c.is_whitespace() && !spec.strip_punctuation {
                    push_cased(&mut out, &text[i..i + c.len_utf8()], spec.lowercase);
                }
            }
            if let Some(s) = start {
                push_cased(&mut out, &text[s..], spec.lowercase);
            }
        }
        TokenizerMode::Character => {
            for (i, c) in text.char_indices() {
                if !c.is_whitespace() {
                    push_cased(&mut out, &text[i..i + c.len_utf8()], spec.lowercase);
                }
            }
        }
    }
    TokenSeq(out)
}

/// Multiset of the order-`n` windows of a borrowed sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts<'a, T: Eq + Hash> {
    pub n: usize,
    pub counts: HashMap<&'a [T], usize>,
}

impl<'a, T: Eq + Hash> NGramCounts<'a, T> {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, gram: &[T]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub fn ngrams<T: Eq + Hash>(seq: &[T], n: usize) -> Result<NGramCounts<'_, T>> {
    if n == 0 {
        return Err(CorpusError::ZeroOrder);
    }
    Ok(count_windows(seq, n))
}

/// Infallible core of [`ngrams`]; callers guarantee `n >= 1`.
pub(crate) fn count_windows<T: Eq + Hash>(seq: &[T], n: usize) -> NGramCounts<'_, T> {
    let mut counts = HashMap::with_capacity(seq.len().saturating_sub(n - 1));
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    NGramCounts { n, counts }
}
