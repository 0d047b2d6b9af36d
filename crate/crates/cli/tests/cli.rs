use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

fn medrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medrag")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_then_eval_reproduces_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy().join("config.json");
    let run_dir = tmp.path().join("run");
    let out = medrag(&["--config", s(&cfg), "--out", s(&run_dir), "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "records.jsonl", "report.json", "log.txt"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let eval_dir = tmp.path().join("eval");
    let out = medrag(&["--config", s(&cfg), "--out", s(&eval_dir), "eval", "--run", s(&run_dir)]);
    assert!(out.status.success());
    assert_eq!(
        fs::read(run_dir.join("report.json")).unwrap(),
        fs::read(eval_dir.join("report.json")).unwrap()
    );
    let out = medrag(&["report", s(&run_dir.join("report.json"))]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("T3M"));
}

#[test]
fn precomputed_vectors_and_index_match_on_the_fly_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy().join("config.json");
    let vectors = tmp.path().join("vectors");
    let index = tmp.path().join("index.json");
    assert!(medrag(&["--config", s(&cfg), "--out", s(&vectors), "embed"])
        .status
        .success());
    assert!(medrag(&["--config", s(&cfg), "--out", s(&index), "index"])
        .status
        .success());

    let mut config: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    let toy_dir = toy();
    for key in ["corpus", "glossary", "term_vectors"] {
        let rel = config[key].as_str().unwrap().to_string();
        config[key] = toy_dir.join(rel).to_str().unwrap().into();
    }
    config["vectors"] = serde_json::json!({
        "history": vectors.join("history.jsonl"),
        "complaint": vectors.join("complaint.jsonl"),
        "recent": vectors.join("recent.jsonl"),
    });
    config["index"] = s(&index).into();
    let pre_cfg = tmp.path().join("pre.json");
    fs::write(&pre_cfg, config.to_string()).unwrap();

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(medrag(&["--config", s(&cfg), "--out", s(&a), "run"]).status.success());
    let out = medrag(&["--config", s(&pre_cfg), "--out", s(&b), "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(a.join("records.jsonl")).unwrap(),
        fs::read(b.join("records.jsonl")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy().join("config.json");

    assert_eq!(medrag(&["run"]).status.code(), Some(1));
    assert_eq!(medrag(&["--providers", "bogus", "run"]).status.code(), Some(1));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"corpus": "x", "exemplar_count": 0}"#).unwrap();
    assert_eq!(
        medrag(&["--config", s(&bad), "--out", s(tmp.path()), "run"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        medrag(&[
            "--config",
            s(&cfg),
            "--providers",
            "http",
            "--out",
            s(tmp.path()),
            "run"
        ])
        .status
        .code(),
        Some(1)
    );

    let missing = tmp.path().join("nothing.jsonl");
    assert_eq!(medrag(&["ingest", s(&missing)]).status.code(), Some(2));
    let broken = tmp.path().join("broken.jsonl");
    fs::write(&broken, "{not json}\n").unwrap();
    assert_eq!(medrag(&["ingest", s(&broken)]).status.code(), Some(2));

    let pred = tmp.path().join("pred.jsonl");
    let gold = tmp.path().join("gold.jsonl");
    fs::write(&pred, "{\"id\":\"a\",\"text\":\"x\"}\n").unwrap();
    fs::write(&gold, "{\"id\":\"b\",\"text\":\"x\"}\n").unwrap();
    let out = medrag(&["--config", s(&cfg), "eval", "--pred", s(&pred), "--gold", s(&gold)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("id mismatch"));

    // nothing listens on port 9: every provider call fails
    let out = medrag(&[
        "--config",
        s(&cfg),
        "--providers",
        "http",
        "--endpoint",
        "http://127.0.0.1:9",
        "--out",
        s(&tmp.path().join("http")),
        "run",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ingest_prints_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let out = medrag(&["--out", s(tmp.path()), "ingest", s(&toy().join("corpus.jsonl"))]);
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["total"], 12);
    assert_eq!(stats["counts"]["train"], 8);
    assert_eq!(
        fs::read_to_string(tmp.path().join("corpus.jsonl")).unwrap(),
        fs::read_to_string(toy().join("corpus.jsonl"))
            .unwrap()
            .replace(", ", ",")
            .replace(": ", ":")
    );
}

#[test]
fn chat_quits_and_writes_transcript() {
    let tmp = tempfile::tempdir().unwrap();
    let transcript = tmp.path().join("t.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_medrag"))
        .args([
            "--config",
            s(&toy().join("config.json")),
            "--out",
            s(&transcript),
            "chat",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all("拉肚子两天了。\n/quit\n".as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&transcript).unwrap()).unwrap();
    assert_eq!(t["turns"].as_array().unwrap().len(), 2);
    let reply = t["replies"][0]["doctor"].as_str().unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains(reply));
}
