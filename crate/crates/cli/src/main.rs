use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use serde::Deserialize;

use genforge::analysis::{self, AnalysisOptions, BucketBy, Leaderboard, LeaderboardEntry, ReportFormat};
use genforge::corpus::{load_dataset, read_examples_file, tokenize, Example, Format, Split};
use genforge::harness::{self, ExperimentConfig, SearchOutcome, SearchSpace};
use genforge::metrics::{self, combined_score, EvalOptions, GenerationRecord, Metric};
use genforge::objectives::{corrupt, CorruptionSpec};
use genforge::parallel::env_workers;

#[derive(Parser, Debug)]
#[command(name = "genforge", version, about = "Text-generation evaluation, decoding, corruption and experiment tooling")]
#[command(after_help = "Any configuration key can be overridden as `--<key> <value>`, e.g. `--decode.beam_size 5`.")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Worker threads (default: GENFORGE_WORKERS or all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score hypotheses against references.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Comma-separated metric names.
        #[arg(long)]
        metrics: Option<String>,
        /// JSON file with `inform` and `success` percentages; adds a `combined` score.
        #[arg(long)]
        side_scores: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the n-gram scorer on the train split and decode another split.
    Decode {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "ngram", value_parser = ["ngram"])]
        scorer: String,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        no_repeat_ngram: Option<usize>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn examples into pre-training (input, target) pairs.
    Corrupt {
        /// Examples file; the source text is corrupted.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        mask_ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline once per configured seed.
    Run {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid or random search over configuration keys.
    Search {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Random search with this many trials; grid search when absent.
        #[arg(long)]
        budget: Option<usize>,
        /// Seed for random-search draws.
        #[arg(long, default_value_t = 2020)]
        search_seed: u64,
        #[arg(long)]
        seeds: Option<String>,
        /// Directory for results.tsv, results.json and best.cfg.
        #[arg(long, default_value = "search-out")]
        out_dir: PathBuf,
    },
    /// Bucket statistics, copy rates and model comparison.
    Analyze {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        hyp2: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "rouge-l")]
        metric: String,
        #[arg(long, default_value = "source-length")]
        bucket_by: String,
        /// Comma-separated bucket edges.
        #[arg(long)]
        edges: Option<String>,
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maintain per-dataset leaderboards.
    Leaderboard {
        #[command(subcommand)]
        action: BoardAction,
    },
}

#[derive(Subcommand, Debug)]
enum BoardAction {
    /// Insert or replace a model's scores.
    Add {
        #[arg(long, default_value = "leaderboards")]
        dir: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        model: String,
        /// `metric=value` pairs, comma-separated.
        #[arg(long)]
        scores: String,
        #[arg(long)]
        source: String,
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Score names outside the metric registry.
        #[arg(long)]
        external: Option<String>,
    },
    /// Print a leaderboard sorted by a primary metric.
    Show {
        #[arg(long, default_value = "leaderboards")]
        dir: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        primary: String,
    },
}

enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Pulls `--a.b value` and `--a.b=value` pairs out of argv.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|k| k.split('=').next().is_some_and(|k| k.contains('.') && !k.starts_with('.')));
        match dotted {
            Some(body) => match body.split_once('=') {
                Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
                None => {
                    let value = it.next().ok_or_else(|| format!("--{body} needs a value"))?;
                    overrides.push((body.to_string(), value));
                }
            },
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

fn open_out(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    let mut out = open_out(path)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct HypLine {
    id: String,
    hypothesis: String,
}

fn read_hypotheses(path: &Path) -> anyhow::Result<Vec<HypLine>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    if out.is_empty() {
        bail!("{} holds no hypotheses", path.display());
    }
    Ok(out)
}

/// Pairs hypotheses with examples by id, in hypothesis order.
fn join_records(hyps: Vec<HypLine>, examples: &[Example], what: &Path) -> anyhow::Result<Vec<GenerationRecord>> {
    let by_id: HashMap<&str, &Example> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let missing: Vec<&str> = hyps.iter().filter(|h| !by_id.contains_key(h.id.as_str())).map(|h| h.id.as_str()).collect();
    if !missing.is_empty() {
        bail!("{}: no reference for ids {missing:?}", what.display());
    }
    Ok(hyps
        .into_iter()
        .map(|h| {
            let e = by_id[h.id.as_str()];
            GenerationRecord {
                id: h.id,
                hypothesis: h.hypothesis,
                references: e.references.clone(),
                source: Some(e.source.clone()),
            }
        })
        .collect())
}

fn eval_options(cfg: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        tokenizer: cfg.tokenizer,
        workers: cfg.workers,
        ..EvalOptions::default()
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn set(cfg: &mut ExperimentConfig, key: &str, value: Option<String>) -> CmdResult {
    if let Some(v) = value {
        cfg.set(key, &v).map_err(usage)?;
    }
    Ok(())
}

fn split_of(dataset: &genforge::corpus::Dataset, split: Split) -> anyhow::Result<&[Example]> {
    dataset
        .split(split)
        .ok_or_else(|| anyhow!("dataset {} has no {split} split", dataset.name))
}

fn cmd_eval(
    cfg: &ExperimentConfig,
    hyp: &Path,
    reference: &Path,
    side_scores: Option<&Path>,
    out: Option<&Path>,
) -> CmdResult {
    let examples = read_examples_file(reference, Format::Jsonl).map_err(anyhow::Error::from)?;
    let records = join_records(read_hypotheses(hyp)?, &examples, hyp)?;
    let mut report = metrics::evaluate(&records, &cfg.metrics, &eval_options(cfg)).map_err(anyhow::Error::from)?;
    if let Some(path) = side_scores {
        #[derive(Deserialize)]
        struct Side {
            inform: f64,
            success: f64,
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let side: Side = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let bleu = report
            .corpus
            .get("bleu")
            .copied()
            .ok_or_else(|| anyhow!("--side-scores needs bleu among the metrics"))?;
        report
            .corpus
            .insert("combined".into(), combined_score(side.inform, side.success, bleu * 100.0) / 100.0);
    }
    let mut text = serde_json::to_string(&report).map_err(anyhow::Error::from)?;
    text.push('\n');
    emit(out, &text)?;
    Ok(())
}

fn cmd_decode(cfg: &ExperimentConfig, split: Split, out: Option<&Path>) -> CmdResult {
    let dataset = harness::load_configured_dataset(cfg).map_err(anyhow::Error::from)?;
    let train = split_of(&dataset, Split::Train)?;
    let target = split_of(&dataset, split)?;
    let scorer = harness::fit_scorer(cfg, &train.iter().collect::<Vec<_>>()).map_err(anyhow::Error::from)?;
    let generated = harness::generate(&scorer, cfg, &cfg.decode, target).map_err(anyhow::Error::from)?;
    let mut w = open_out(out)?;
    for (rec, score) in generated {
        let line = serde_json::json!({"id": rec.id, "hypothesis": rec.hypothesis, "score": score});
        writeln!(w, "{line}").map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    Ok(())
}

fn cmd_corrupt(cfg: &ExperimentConfig, input: &Path, out: Option<&Path>) -> CmdResult {
    let examples = read_examples_file(input, Format::Jsonl).map_err(anyhow::Error::from)?;
    let mut w = open_out(out)?;
    for (i, e) in examples.iter().enumerate() {
        let tokens = tokenize(&e.source, &cfg.tokenizer).into_inner();
        let spec = CorruptionSpec {
            seed: cfg.corruption.seed.wrapping_add(i as u64),
            ..cfg.corruption
        };
        let pair = corrupt(&tokens, &spec).with_context(|| format!("record {}", e.id))?;
        let line = serde_json::json!({"id": e.id, "input": pair.input.0, "target": pair.target.0, "plan": pair.plan});
        writeln!(w, "{line}").map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    Ok(())
}

fn write_search(dir: &Path, cfg: &ExperimentConfig, outcome: &SearchOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tsv = harness::results_tsv(outcome);
    fs::write(dir.join("results.tsv"), &tsv)?;
    fs::write(dir.join("results.json"), harness::results_json(outcome))?;
    fs::write(dir.join("best.cfg"), harness::best_cfg(cfg, &outcome.best)?)?;
    emit(None, &tsv)
}

fn cmd_analyze(cfg: &ExperimentConfig, a: AnalyzeArgs) -> CmdResult {
    let metric: Metric = a.metric.parse().map_err(usage)?;
    let bucket_by: BucketBy = a.bucket_by.parse().map_err(usage)?;
    let format: ReportFormat = a.format.parse().map_err(usage)?;
    let edges = match a.edges {
        Some(s) => s
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| usage(format!("--edges: {e}")))?,
        None => analysis::DEFAULT_EDGES.to_vec(),
    };
    let dataset = load_dataset(&a.dataset, cfg.dataset_format).map_err(anyhow::Error::from)?;
    let examples = split_of(&dataset, a.split)?;
    let mut runs = Vec::new();
    for path in std::iter::once(&a.hyp).chain(a.hyp2.as_ref()) {
        let name = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
        runs.push((name, join_records(read_hypotheses(path)?, examples, path)?));
    }
    if runs.len() == 2 && runs[0].0 == runs[1].0 {
        runs[1].0.push_str(" (2)");
    }
    let opts = AnalysisOptions {
        metric,
        edges,
        bucket_by,
        eval: eval_options(cfg),
        ..AnalysisOptions::default()
    };
    let result = analysis::analyze(&runs, &opts).map_err(anyhow::Error::from)?;
    emit(a.out.as_deref(), &analysis::render_report(&result, format))?;
    Ok(())
}

struct AnalyzeArgs {
    hyp: PathBuf,
    hyp2: Option<PathBuf>,
    dataset: PathBuf,
    split: Split,
    metric: String,
    bucket_by: String,
    edges: Option<String>,
    format: String,
    out: Option<PathBuf>,
}

fn cmd_board(action: BoardAction) -> CmdResult {
    match action {
        BoardAction::Add {
            dir,
            dataset,
            model,
            scores,
            source,
            generated,
            external,
        } => {
            let mut parsed = BTreeMap::new();
            for pair in scores.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (k, v) = pair.split_once('=').ok_or_else(|| usage(format!("--scores: expected metric=value, got {pair:?}")))?;
                let v: f64 = v.trim().parse().map_err(|e| usage(format!("--scores {k}: {e}")))?;
                parsed.insert(k.trim().to_string(), v);
            }
            let entry = LeaderboardEntry {
                model,
                dataset,
                scores: parsed,
                source,
                generated,
                external_metrics: external
                    .map(|s| s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
                    .unwrap_or_default(),
            };
            let board = analysis::leaderboard_update(&dir, entry).map_err(anyhow::Error::from)?;
            eprintln!("{} now has {} entries", analysis::leaderboard_path(&dir, &board.dataset).display(), board.entries.len());
            Ok(())
        }
        BoardAction::Show { dir, dataset, primary } => {
            let board = Leaderboard::load(&dir, &dataset).map_err(anyhow::Error::from)?;
            emit(None, &board.render(&primary).map_err(|e| match e {
                analysis::AnalysisError::Config(m) => usage(m),
                other => Failure::Domain(other.into()),
            })?)?;
            Ok(())
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    if cfg.workers.is_none() {
        cfg.workers = env_workers();
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    Ok(cfg)
}

fn apply_command_flags(cfg: &mut ExperimentConfig, command: &Command) -> CmdResult {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    match command {
        Command::Eval { metrics, .. } => set(cfg, "eval.metrics", metrics.clone())?,
        Command::Decode {
            dataset,
            order,
            beam,
            max_len,
            no_repeat_ngram,
            strategy,
            seed,
            ..
        } => {
            set(cfg, "dataset.path", path(dataset))?;
            set(cfg, "lm.order", order.map(|v| v.to_string()))?;
            set(cfg, "decode.beam_size", beam.map(|v| v.to_string()))?;
            set(cfg, "decode.max_len", max_len.map(|v| v.to_string()))?;
            set(cfg, "decode.no_repeat_ngram", no_repeat_ngram.map(|v| v.to_string()))?;
            set(cfg, "decode.strategy", strategy.clone())?;
            set(cfg, "decode.seed", seed.map(|v| v.to_string()))?;
        }
        Command::Corrupt {
            objective,
            mask_ratio,
            seed,
            ..
        } => {
            set(cfg, "corrupt.objective", objective.clone())?;
            set(cfg, "corrupt.mask_ratio", mask_ratio.map(|v| v.to_string()))?;
            set(cfg, "corrupt.seed", seed.map(|v| v.to_string()))?;
        }
        Command::Run { dataset, seeds, .. } | Command::Search { dataset, seeds, .. } => {
            set(cfg, "dataset.path", path(dataset))?;
            set(cfg, "run.seeds", seeds.clone())?;
        }
        Command::Analyze { .. } | Command::Leaderboard { .. } => {}
    }
    Ok(())
}

fn dispatch(cli: Cli, cfg: ExperimentConfig) -> CmdResult {
    let Some(command) = cli.command else {
        return Err(Failure::Usage("no subcommand given".into()));
    };
    match command {
        Command::Run { .. } | Command::Search { .. } => cfg.validate().map_err(usage)?,
        Command::Leaderboard { .. } => {}
        _ => cfg.validate_stages().map_err(usage)?,
    }
    match command {
        Command::Eval {
            hyp,
            reference,
            side_scores,
            out,
            ..
        } => cmd_eval(&cfg, &hyp, &reference, side_scores.as_deref(), out.as_deref()),
        Command::Decode { split, out, .. } => cmd_decode(&cfg, split, out.as_deref()),
        Command::Corrupt { input, out, .. } => cmd_corrupt(&cfg, &input, out.as_deref()),
        Command::Run { out, .. } => {
            let result = harness::run_experiment(&cfg).map_err(anyhow::Error::from)?;
            let mut text = serde_json::to_string_pretty(&serde_json::to_value(&result).map_err(anyhow::Error::from)?)
                .map_err(anyhow::Error::from)?;
            text.push('\n');
            emit(out.as_deref(), &text)?;
            Ok(())
        }
        Command::Search {
            space,
            budget,
            search_seed,
            out_dir,
            ..
        } => {
            let text = fs::read_to_string(&space).map_err(|e| usage(format!("--space {}: {e}", space.display())))?;
            let space = SearchSpace::parse(&text).map_err(usage)?;
            let dataset = harness::load_configured_dataset(&cfg).map_err(anyhow::Error::from)?;
            let runner = harness::config_runner(&cfg, &dataset);
            let outcome = match budget {
                Some(b) => harness::random_search(&space, b, search_seed, runner, cfg.workers),
                None => harness::grid_search(&space, runner, cfg.workers),
            }
            .map_err(|e| match e {
                harness::HarnessError::Argument(m) => usage(m),
                other => Failure::Domain(other.into()),
            })?;
            write_search(&out_dir, &cfg, &outcome)?;
            Ok(())
        }
        Command::Analyze {
            hyp,
            hyp2,
            dataset,
            split,
            metric,
            bucket_by,
            edges,
            format,
            out,
        } => cmd_analyze(
            &cfg,
            AnalyzeArgs {
                hyp,
                hyp2,
                dataset,
                split,
                metric,
                bucket_by,
                edges,
                format,
                out,
            },
        ),
        Command::Leaderboard { action } => cmd_board(action),
    }
}

fn run(args: Vec<String>) -> CmdResult {
    let (argv, overrides) = split_overrides(args).map_err(Failure::Usage)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if e.kind() == ErrorKind::InvalidSubcommand {
                let _ = Cli::command().print_help();
            }
            let _ = e.print();
            return if code == 0 { Ok(()) } else { Err(Failure::Usage(String::new())) };
        }
    };
    let mut cfg = resolve_config(&cli)?;
    if let Some(command) = &cli.command {
        apply_command_flags(&mut cfg, command)?;
    }
    cfg.apply_overrides(&overrides).map_err(usage)?;
    if cli.dump_config {
        emit(None, &cfg.dump())?;
        return Ok(());
    }
    if cli.command.is_none() {
        let _ = Cli::command().print_help();
        return Err(Failure::Usage(String::new()));
    }
    dispatch(cli, cfg)
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
