use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use medrag_core::corpus::{Corpus, DialogueSession, DialogueTurn, Role, Split};
use medrag_core::generation::CompletionRequest;
use medrag_core::pipeline::{
    chat_repl, eval_targets, evaluate_files, evaluate_run, read_records, run_experiment, Pipeline, PipelineError,
    Providers, RecordEntry, RunConfig, RECORDS_FILE, REPORT_FILE,
};
use medrag_core::promptgen::PromptStrategy;
use medrag_core::provider::mock::RuleIntentClassifier;
use medrag_core::provider::{CompletionProvider, ProviderError};

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

fn toy_config() -> RunConfig {
    RunConfig::load(toy_dir().join("config.json")).unwrap()
}

fn run(config: &RunConfig, out: &Path) -> medrag_core::pipeline::RunSummary {
    run_experiment(config, Providers::from_config(config), out).unwrap()
}

#[test]
fn toy_run_is_byte_identical_and_self_consistent() {
    let config = toy_config();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let summary = run(&config, &a);
    run(&config, &b);
    for f in ["config.json", RECORDS_FILE, REPORT_FILE, "log.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(summary.report.samples, 4);
    assert_eq!(summary.report.skipped, 0);
    let wins: f64 = summary.report.strategy_wins.values().sum();
    assert!((wins - 1.0).abs() < 1e-12);

    let again = evaluate_run(&a, &config, &RuleIntentClassifier).unwrap();
    assert_eq!(again, summary.report);
    let text = serde_json::to_string_pretty(&again).unwrap() + "\n";
    assert_eq!(text.as_bytes(), fs::read(a.join(REPORT_FILE)).unwrap());
}

#[test]
fn records_hold_invariants() {
    let config = toy_config();
    let tmp = tempfile::tempdir().unwrap();
    run(&config, tmp.path());
    let corpus = Corpus::load(&config.corpus).unwrap();
    let (entries, truncated) = read_records(&tmp.path().join(RECORDS_FILE)).unwrap();
    assert!(!truncated);
    let ids: Vec<&str> = entries.iter().map(|e| e.id()).collect();
    assert_eq!(ids, ["v01", "v02", "s01", "s02"]);
    for entry in &entries {
        let RecordEntry::Ok(r) = entry else {
            panic!("skipped {entry:?}")
        };
        let session = corpus.get(&r.id).unwrap();
        assert_eq!(&r.gold, &session.turns.last().unwrap().text);
        assert_eq!(r.prompts.len(), 4);
        assert!(r.candidates.len() <= 4);
        assert_eq!(r.candidates[0].rank, 1);
        assert_eq!(r.selected, r.candidates[0].candidate.text);
        assert_eq!(r.selected_strategy, r.candidates[0].candidate.strategy);
        for w in r.candidates.windows(2) {
            assert!(w[0].score <= w[1].score);
        }
        for e in &r.exemplars {
            assert!(corpus.is_train(&e.session_id), "leak {}", e.session_id);
        }
        for p in &r.prompts {
            assert!(!p.text.contains(&r.gold), "gold leaked into {} prompt", p.strategy);
        }
    }
}

#[test]
fn resume_appends_only_missing_ids() {
    let config = toy_config();
    let tmp = tempfile::tempdir().unwrap();
    let (fresh, partial) = (tmp.path().join("fresh"), tmp.path().join("partial"));
    run(&config, &fresh);
    run(&config, &partial);
    // keep two records plus half a line, as after a crash
    let text = fs::read_to_string(partial.join(RECORDS_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = format!("{}\n{}\n{}", lines[0], lines[1], &lines[2][..20]);
    fs::write(partial.join(RECORDS_FILE), cut).unwrap();
    fs::remove_file(partial.join(REPORT_FILE)).unwrap();

    let summary = run(&config, &partial);
    assert_eq!(summary.resumed, 2);
    assert_eq!(summary.processed, 2);
    for f in [RECORDS_FILE, REPORT_FILE] {
        assert_eq!(
            fs::read(fresh.join(f)).unwrap(),
            fs::read(partial.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn rerun_with_other_config_is_refused() {
    let config = toy_config();
    let tmp = tempfile::tempdir().unwrap();
    run(&config, tmp.path());
    let other = RunConfig { seed: 8, ..config };
    let err = run_experiment(&other, Providers::from_config(&other), tmp.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

struct Down;

impl CompletionProvider for Down {
    fn name(&self) -> &str {
        "down"
    }
    fn complete(&self, _: &CompletionRequest) -> Result<String, ProviderError> {
        Err(ProviderError::Rejected {
            status: 400,
            message: "no".into(),
        })
    }
}

#[test]
fn provider_failures_skip_samples_and_respect_budget() {
    let config = RunConfig {
        failure_budget: None,
        ..toy_config()
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut providers = Providers::from_config(&config);
    providers.completion = Box::new(Down);
    // every sample skipped leaves nothing to score
    let err = run_experiment(&config, providers, tmp.path()).unwrap_err();
    assert!(matches!(err, PipelineError::Metric(_)), "{err}");
    let (entries, _) = read_records(&tmp.path().join(RECORDS_FILE)).unwrap();
    assert_eq!(entries.len(), 4);
    assert!(entries.iter().all(|e| matches!(e, RecordEntry::Skipped(_))));

    let budgeted = RunConfig {
        failure_budget: Some(1),
        workers: 1,
        ..toy_config()
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut providers = Providers::from_config(&budgeted);
    providers.completion = Box::new(Down);
    let err = run_experiment(&budgeted, providers, tmp.path()).unwrap_err();
    assert!(matches!(err, PipelineError::FailureBudget { budget: 1, .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn missing_glossary_fails_before_running() {
    let config = RunConfig {
        glossary: Some(toy_dir().join("absent.txt")),
        ..toy_config()
    };
    let tmp = tempfile::tempdir().unwrap();
    let err = run_experiment(&config, Providers::from_config(&config), tmp.path()).unwrap_err();
    assert!(matches!(err, PipelineError::MissingGlossary(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn precomputed_vectors_without_embedder() {
    let config = toy_config();
    let mut providers = Providers::from_config(&config);
    providers.embedder = None;
    let corpus = Corpus::load(&config.corpus).unwrap();
    assert!(matches!(
        Pipeline::new(config, corpus, providers),
        Err(PipelineError::MissingVector { kind: "history", .. })
    ));
}

fn write_pairs(path: &Path, rows: &[(&str, &str)]) {
    let text: String = rows
        .iter()
        .map(|(id, text)| serde_json::json!({"id": id, "text": text, "history": "患者：你好\n"}).to_string() + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

#[test]
fn evaluate_identity_and_mismatch() {
    let config = toy_config();
    let tmp = tempfile::tempdir().unwrap();
    let gold = tmp.path().join("gold.jsonl");
    write_pairs(
        &gold,
        &[
            ("a", "建议做胃镜，吃奥美拉唑。"),
            ("b", "多喝水，吃蒙脱石散。"),
            ("c", "有没有发烧？"),
        ],
    );
    let r = evaluate_files(&gold, &gold, &config, &RuleIntentClassifier).unwrap();
    assert_eq!(r.rouge_l, 1.0);
    assert_eq!(r.tnm_f1["T1M"].f1, 1.0);
    assert_eq!(r.int, 1.0);

    let pred = tmp.path().join("pred.jsonl");
    write_pairs(&pred, &[("a", "x"), ("z", "y"), ("c", "w")]);
    assert!(matches!(
        evaluate_files(&pred, &gold, &config, &RuleIntentClassifier),
        Err(PipelineError::IdMismatch(_))
    ));
    let no_glossary = RunConfig {
        glossary: None,
        ..config
    };
    assert!(matches!(
        evaluate_files(&gold, &gold, &no_glossary, &RuleIntentClassifier),
        Err(PipelineError::MissingGlossary(_))
    ));
}

#[test]
fn evaluate_three_pair_fixture_matches_hand_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("terms.txt"), "胃镜\n肠镜\n喝水\n补液\n蒙脱石散\n奥美拉唑\n").unwrap();
    let vectors = [
        ("胃镜", [1.0, 0.0]),
        ("肠镜", [0.9, 0.1]),
        ("喝水", [0.0, 1.0]),
        ("补液", [0.15, 0.85]),
        ("蒙脱石散", [1.0, 1.0]),
        ("奥美拉唑", [1.0, -0.5]),
    ];
    let jsonl: String = vectors
        .iter()
        .map(|(k, v)| serde_json::json!({"key": k, "vector": v}).to_string() + "\n")
        .collect();
    fs::write(d.join("vectors.jsonl"), jsonl).unwrap();
    write_pairs(
        &d.join("pred.jsonl"),
        &[("1", "建议胃镜，加奥美拉唑。"), ("2", "多喝水。"), ("3", "查个肠镜。")],
    );
    write_pairs(
        &d.join("gold.jsonl"),
        &[
            ("1", "做个胃镜，吃奥美拉唑。"),
            ("2", "注意补液，吃蒙脱石散。"),
            ("3", "需要做胃镜。"),
        ],
    );
    let config = RunConfig {
        corpus: "unused".into(),
        glossary: Some(d.join("terms.txt")),
        term_vectors: Some(d.join("vectors.jsonl")),
        tnm_ns: vec![1, 3],
        ..RunConfig::default()
    };
    let r = evaluate_files(
        &d.join("pred.jsonl"),
        &d.join("gold.jsonl"),
        &config,
        &RuleIntentClassifier,
    )
    .unwrap();
    // exact match: TP 2, FP 2, FN 3
    let t1 = &r.tnm_f1["T1M"];
    assert_eq!((t1.tp, t1.fp, t1.fn_), (2, 2, 3));
    assert!((t1.precision - 0.5).abs() < 1e-12);
    assert!((t1.recall - 0.4).abs() < 1e-12);
    assert!((t1.f1 - 4.0 / 9.0).abs() < 1e-12);
    // top-3 neighbourhoods: 喝水 {喝水,补液,蒙脱石散} covers both gold terms of
    // pair 2; 肠镜 {肠镜,胃镜,奥美拉唑} meets 胃镜
    let t3 = &r.tnm_f1["T3M"];
    assert_eq!((t3.tp, t3.fp, t3.fn_), (4, 0, 0));
    assert_eq!(t3.f1, 1.0);
}

#[test]
fn chat_reply_is_deterministic_and_replays_through_run() {
    let config = toy_config();
    let corpus = Corpus::load(&config.corpus).unwrap();
    let pipeline = Pipeline::new(config.clone(), corpus.clone(), Providers::from_config(&config)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let input = "胃痛好几天了，还反酸。\n\n饭后更明显。\n/quit\n";
    let mut out = Vec::new();
    let path = tmp.path().join("transcript.json");
    let transcript = chat_repl(&pipeline, Cursor::new(input), &mut out, &path).unwrap();
    assert_eq!(transcript.replies.len(), 2);
    assert_eq!(transcript.turns.len(), 4);
    let saved: medrag_core::pipeline::ChatTranscript =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(saved, transcript);
    let printed = String::from_utf8(out).unwrap();
    assert!(printed.contains(&transcript.replies[0].doctor));

    let mut out2 = Vec::new();
    let again = chat_repl(&pipeline, Cursor::new(input), &mut out2, &tmp.path().join("t2.json")).unwrap();
    assert_eq!(again, transcript);

    // each reply becomes a test session whose gold is that reply
    let mut sessions: Vec<DialogueSession> = corpus
        .sessions()
        .iter()
        .filter(|s| s.split == Split::Train)
        .cloned()
        .collect();
    for (i, reply) in transcript.replies.iter().enumerate() {
        let upto = 2 * i + 2;
        sessions.push(DialogueSession {
            id: format!("replay{i}"),
            split: Split::Test,
            chief_complaint: None,
            turns: transcript.turns[..upto].to_vec(),
        });
        assert_eq!(
            transcript.turns[upto - 1],
            DialogueTurn::new(Role::Doctor, reply.doctor.clone())
        );
    }
    let replay_corpus = tmp.path().join("replay.jsonl");
    let mut buf = Vec::new();
    Corpus::from_sessions(sessions).unwrap().write_jsonl(&mut buf).unwrap();
    fs::write(&replay_corpus, buf).unwrap();
    let replay_config = RunConfig {
        corpus: replay_corpus,
        eval_splits: vec![Split::Test],
        ..config
    };
    run(&replay_config, &tmp.path().join("run"));
    let (entries, _) = read_records(&tmp.path().join("run").join(RECORDS_FILE)).unwrap();
    assert_eq!(entries.len(), transcript.replies.len());
    for (entry, reply) in entries.iter().zip(&transcript.replies) {
        let RecordEntry::Ok(r) = entry else { panic!("skipped") };
        assert_eq!(r.selected, reply.doctor);
        assert_eq!(r.selected_strategy, reply.strategy);
        assert_eq!(r.selected_score, reply.score);
    }
}

struct Flaky(std::sync::atomic::AtomicUsize);

impl CompletionProvider for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }
    fn complete(&self, _: &CompletionRequest) -> Result<String, ProviderError> {
        let n = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if n < 4 {
            Err(ProviderError::Rejected {
                status: 400,
                message: "first round fails".into(),
            })
        } else {
            Ok("好的。".into())
        }
    }
}

#[test]
fn chat_retry_and_skip() {
    let config = toy_config();
    let corpus = Corpus::load(&config.corpus).unwrap();
    let mut providers = Providers::from_config(&config);
    providers.completion = Box::new(Flaky(Default::default()));
    let pipeline = Pipeline::new(config, corpus, providers).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut out = Vec::new();
    let t = chat_repl(
        &pipeline,
        Cursor::new("胃痛\nr\n"),
        &mut out,
        &tmp.path().join("t.json"),
    )
    .unwrap();
    assert_eq!(t.replies.len(), 1);
    assert_eq!(t.replies[0].doctor, "好的。");
    assert!(String::from_utf8(out).unwrap().contains("[r]etry"));

    let mut providers = Providers::from_config(&toy_config());
    providers.completion = Box::new(Down);
    let config = toy_config();
    let pipeline = Pipeline::new(config.clone(), Corpus::load(&config.corpus).unwrap(), providers).unwrap();
    let t = chat_repl(
        &pipeline,
        Cursor::new("胃痛\ns\n/quit\n"),
        Vec::new(),
        &tmp.path().join("t2.json"),
    )
    .unwrap();
    assert!(t.turns.is_empty());
    assert!(t.replies.is_empty());
}

#[test]
fn targets_are_valid_and_test_sessions() {
    let config = toy_config();
    let corpus = Corpus::load(&config.corpus).unwrap();
    let ids: Vec<&str> = eval_targets(&corpus, &config.eval_splits)
        .iter()
        .map(|s| s.id.as_str())
        .collect();
    assert_eq!(ids, ["v01", "v02", "s01", "s02"]);
    assert_eq!(config.strategy_set(), PromptStrategy::ALL);
}
