use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn genforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genforge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GENFORGE_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

const WORDS: [&str; 10] = ["the", "cat", "dog", "sat", "ran", "on", "mat", "far", "a", "big"];

fn example(i: usize) -> String {
    let pick = |j: usize| WORDS[(i * 7 + j * 3) % WORDS.len()];
    let target = format!("{} {} {} {}", pick(0), pick(1), pick(2), pick(3));
    serde_json::json!({"id": format!("r{i}"), "source": format!("{target} {} {}", pick(4), pick(5)), "target": [target]})
        .to_string()
}

/// A dataset directory `data/` with train/valid/test splits plus hypothesis files.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let lines = |r: std::ops::Range<usize>| r.map(example).collect::<Vec<_>>().join("\n") + "\n";
    fs::write(data.join("toy.train.jsonl"), lines(0..40)).unwrap();
    fs::write(data.join("toy.valid.jsonl"), lines(40..45)).unwrap();
    fs::write(data.join("toy.test.jsonl"), lines(100..106)).unwrap();
    fs::write(dir.path().join("refs.jsonl"), lines(100..106)).unwrap();

    let hyps = |f: &dyn Fn(&str) -> String| -> String {
        (100..106)
            .map(|i| {
                let v: Value = serde_json::from_str(&example(i)).unwrap();
                let t = v["target"][0].as_str().unwrap();
                serde_json::json!({"id": format!("r{i}"), "hypothesis": f(t)}).to_string() + "\n"
            })
            .collect()
    };
    fs::write(dir.path().join("exact.jsonl"), hyps(&|t| t.to_string())).unwrap();
    fs::write(dir.path().join("partial.jsonl"), hyps(&|t| t.split(' ').take(2).collect::<Vec<_>>().join(" "))).unwrap();
    fs::write(dir.path().join("space.cfg"), "lm.order = 1, 2\ndecode.beam_size = 1, 3\n").unwrap();
    fs::write(dir.path().join("side.json"), r#"{"inform": 84.88, "success": 74.91}"#).unwrap();
    dir
}

#[test]
fn exit_code_matrix() {
    let ws = workspace();
    let p = ws.path();
    let cases: &[(&[&str], i32)] = &[
        (&["eval", "--hyp", "exact.jsonl", "--ref", "refs.jsonl", "--metrics", "bleu,rouge-l"], 0),
        (&["eval", "--hyp", "exact.jsonl"], 2),
        (&["eval", "--hyp", "exact.jsonl", "--ref", "refs.jsonl", "--metrics", "bogus"], 2),
        (&["eval", "--hyp", "missing.jsonl", "--ref", "refs.jsonl"], 1),
        (&["eval", "--hyp", "exact.jsonl", "--ref", "refs.jsonl", "--decode.beam", "3"], 2),
        (&["frobnicate"], 2),
        (&[], 2),
        (&["--version"], 0),
        (&["--help"], 0),
        (&["decode", "--dataset", "data", "--beam", "2", "--max-len", "8"], 0),
        (&["decode", "--dataset", "nowhere"], 1),
        (&["decode", "--dataset", "data", "--strategy", "sideways"], 2),
        (&["corrupt", "--input", "refs.jsonl", "--objective", "denoising"], 0),
        (&["corrupt", "--input", "refs.jsonl", "--objective", "shuffle"], 2),
        (&["corrupt", "--input", "nope.jsonl"], 1),
        (&["run", "--dataset", "data", "--seeds", "1"], 0),
        (&["run", "--dataset", "data", "--seeds", ""], 2),
        (&["search", "--space", "space.cfg", "--dataset", "data", "--seeds", "1,2", "--out-dir", "s1"], 0),
        (&["search", "--space", "nope.cfg", "--dataset", "data"], 2),
        (&["analyze", "--hyp", "exact.jsonl", "--dataset", "data", "--format", "html"], 0),
        (&["analyze", "--hyp", "exact.jsonl", "--dataset", "data", "--format", "pdf"], 2),
        (&["analyze", "--hyp", "exact.jsonl", "--dataset", "empty-dir"], 1),
        (&["leaderboard", "add", "--dataset", "toy", "--model", "m", "--scores", "rouge-1=40", "--source", "x"], 0),
        (&["leaderboard", "add", "--dataset", "toy", "--model", "m", "--scores", "what=40", "--source", "x"], 1),
        (&["leaderboard", "show", "--dataset", "toy", "--primary", "rouge-1"], 0),
        (&["leaderboard", "show", "--dataset", "toy", "--primary", "bogus"], 2),
        (&["--dump-config"], 0),
    ];
    for (args, want) in cases {
        let out = genforge(args, p);
        assert_eq!(code(&out), *want, "{args:?}\nstdout: {}\nstderr: {}", stdout(&out), stderr(&out));
    }
}

#[test]
fn eval_reports_json_on_stdout() {
    let ws = workspace();
    let out = genforge(&["eval", "--hyp", "exact.jsonl", "--ref", "refs.jsonl", "--metrics", "bleu,rouge-l"], ws.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["corpus", "n", "per_sample"]);
    assert_eq!(v["n"], 6);
    assert!((v["corpus"]["bleu"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["corpus"]["rouge-l"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let out = genforge(
        &["eval", "--hyp", "exact.jsonl", "--ref", "refs.jsonl", "--metrics", "bleu", "--side-scores", "side.json"],
        ws.path(),
    );
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let combined = v["corpus"]["combined"].as_f64().unwrap();
    assert!((combined - (84.88 + 74.91) / 200.0 - 1.0).abs() < 1e-12);
}

#[test]
fn missing_ref_is_named() {
    let ws = workspace();
    let out = genforge(&["eval", "--hyp", "exact.jsonl"], ws.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--ref"));
}

#[test]
fn unknown_subcommand_prints_help() {
    let ws = workspace();
    let out = genforge(&["frobnicate"], ws.path());
    assert_eq!(code(&out), 2);
    let all = stdout(&out) + &stderr(&out);
    for sub in ["eval", "decode", "corrupt", "search", "analyze", "leaderboard"] {
        assert!(all.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn identical_invocations_are_byte_identical() {
    let ws = workspace();
    let p = ws.path();
    for args in [
        &["decode", "--dataset", "data", "--strategy", "topk", "--seed", "5", "--max-len", "10"][..],
        &["corrupt", "--input", "refs.jsonl", "--seed", "9"][..],
        &["run", "--dataset", "data", "--lm.train_fraction", "0.5"][..],
        &["analyze", "--hyp", "exact.jsonl", "--hyp2", "partial.jsonl", "--dataset", "data", "--format", "html"][..],
    ] {
        let a = genforge(args, p);
        let b = genforge(args, p);
        assert_eq!(code(&a), 0, "{args:?}: {}", stderr(&a));
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn decode_emits_one_line_per_record() {
    let ws = workspace();
    let out = genforge(&["decode", "--dataset", "data", "--order", "2", "--beam", "3", "--no-repeat-ngram", "2"], ws.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    for l in &lines {
        assert!(l["id"].is_string() && l["hypothesis"].is_string() && l["score"].is_number());
        let toks: Vec<&str> = l["hypothesis"].as_str().unwrap().split(' ').collect();
        let mut bigrams: Vec<_> = toks.windows(2).collect();
        let total = bigrams.len();
        bigrams.sort();
        bigrams.dedup();
        assert_eq!(bigrams.len(), total);
    }
}

#[test]
fn corrupt_streams_pairs_with_plans() {
    let ws = workspace();
    let out = genforge(&["corrupt", "--input", "refs.jsonl", "--objective", "span-prediction"], ws.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for line in stdout(&out).lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["plan"]["objective"], "span-prediction");
        assert!(v["input"].as_array().unwrap().iter().any(|t| t == "<s0>"));
    }
}

#[test]
fn search_writes_tables_and_best_config() {
    let ws = workspace();
    let p = ws.path();
    for (dir, workers) in [("one", "1"), ("four", "4")] {
        let out = genforge(
            &["search", "--space", "space.cfg", "--dataset", "data", "--out-dir", dir, "--workers", workers, "--lm.train_fraction", "0.5"],
            p,
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let tsv = fs::read_to_string(p.join("one/results.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 5);
    assert!(tsv.starts_with("rank\ttrial\tdecode.beam_size\tlm.order\tobjective\tmean\tstd\tseed_2020\tseed_2021\tseed_2022\n"));
    for f in ["results.tsv", "results.json", "best.cfg"] {
        assert_eq!(fs::read(p.join("one").join(f)).unwrap(), fs::read(p.join("four").join(f)).unwrap(), "{f}");
    }
    let best = fs::read_to_string(p.join("one/best.cfg")).unwrap();
    let out = genforge(&["--config", "one/best.cfg", "--dump-config"], p);
    assert_eq!(stdout(&out), best);

    let out = genforge(&["search", "--space", "space.cfg", "--dataset", "data", "--budget", "3", "--out-dir", "r"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(p.join("r/results.tsv")).unwrap().lines().count(), 4);
}

#[test]
fn config_precedence() {
    let ws = workspace();
    let p = ws.path();
    fs::write(p.join("base.cfg"), "decode.beam_size = 7\nlm.order = 3\n").unwrap();
    let out = genforge(&["--config", "base.cfg", "--dump-config", "--decode.beam_size", "2"], p);
    let text = stdout(&out);
    assert!(text.contains("decode.beam_size = 2\n"));
    assert!(text.contains("lm.order = 3\n"));
    assert!(text.contains("run.seeds = 2020,2021,2022\n"));
    let out = genforge(&["--config", "base.cfg", "--dump-config", "--decode.beam_size=4"], p);
    assert!(stdout(&out).contains("decode.beam_size = 4\n"));
    let out = Command::new(env!("CARGO_BIN_EXE_genforge"))
        .args(["--dump-config"])
        .env("GENFORGE_WORKERS", "3")
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("run.workers = 3\n"));
}

#[test]
fn analyze_compares_two_models() {
    let ws = workspace();
    let out = genforge(
        &["analyze", "--hyp", "exact.jsonl", "--hyp2", "partial.jsonl", "--dataset", "data", "--edges", "0,7"],
        ws.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let cmp = &v["comparison"];
    assert_eq!(cmp["model_a"], "exact");
    let wins: u64 = cmp["winners"]["rouge-l"].as_array().unwrap().iter().map(|w| w["a"].as_u64().unwrap()).sum();
    assert_eq!(wins, 6);
    assert!(cmp["deltas"]["rouge-l"]["delta"].as_f64().unwrap() > 0.0);
}

#[test]
fn leaderboard_orders_by_primary() {
    let ws = workspace();
    let p = ws.path();
    let add = |model: &str, scores: &str| {
        let out = genforge(&["leaderboard", "add", "--dataset", "cnndm", "--model", model, "--scores", scores, "--source", "s"], p);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    };
    add("BART", "rouge-1=44.16,rouge-2=21.28,rouge-l=40.90");
    add("BART (ours)", "rouge-1=44.47,rouge-2=21.50,rouge-l=41.35");
    let out = genforge(&["leaderboard", "show", "--dataset", "cnndm", "--primary", "rouge-1"], p);
    let text = stdout(&out);
    let ours = text.find("BART (ours)").unwrap();
    let theirs = text.find("| BART |").unwrap();
    assert!(ours < theirs, "{text}");
    assert!(p.join("leaderboards/cnndm.json").exists());
}
