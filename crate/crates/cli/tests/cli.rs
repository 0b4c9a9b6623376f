use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn hsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsd")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy(dir: &Path) {
    assert!(hsd(&["gen-toy", "--out", dir.to_str().unwrap()]).status.success());
}

fn run(dir: &Path, config: &str, stage: &str) -> Output {
    hsd(&[
        stage,
        "--config",
        dir.join(config).to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ])
}

#[test]
fn missing_stopword_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let config = std::fs::read_to_string(dir.path().join("hsd.toml")).unwrap();
    let config = config.replace(
        "[split]",
        "[preprocess]\nstopwords = { ur = \"lists/ur_extra.txt\" }\n\n[split]",
    );
    std::fs::write(dir.path().join("bad.toml"), config).unwrap();
    let out = run(dir.path(), "bad.toml", "preprocess");
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=config exit=1:"), "{err}");
    assert!(err.contains("ur_extra.txt"), "{err}");
}

#[test]
fn config_validation_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        r#"version = 1
classifiers = ["svm", "forest"]
[paths]
english = "en.csv"
urdu = "ur.csv"
spanish = "es.csv"
[attention]
heads = 0
"#,
    )
    .unwrap();
    let out = run(dir.path(), "c.toml", "ingest");
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("5 problems"), "{err}");
    for needle in ["en.csv", "ur.csv", "es.csv", "forest", "heads"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
}

#[test]
fn secrets_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let config = std::fs::read_to_string(dir.path().join("hsd.toml")).unwrap();
    let config = config.replace("[llm]\n", "[llm]\napi_key = \"${HSD_TEST_UNSET_VARIABLE}\"\n");
    std::fs::write(dir.path().join("env.toml"), config).unwrap();
    let err = stderr(&run(dir.path(), "env.toml", "ingest"));
    assert!(err.contains("HSD_TEST_UNSET_VARIABLE"), "{err}");
}

#[test]
fn usage_and_stage_order_errors() {
    let out = hsd(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error kind=usage"));

    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let out = run(dir.path(), "hsd.toml", "align");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("hsd ingest"), "{}", stderr(&out));
}

#[test]
fn live_provider_without_key_is_a_provider_error() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    assert!(run(dir.path(), "hsd.toml", "ingest").status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_hsd"))
        .args(["translate", "--provider", "live", "--config"])
        .arg(dir.path().join("hsd.toml"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .env_remove("HSD_TRANSLATE_API_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.display().to_string(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn stages_leave_inputs_untouched_and_seed_reaches_metadata() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let before = snapshot(dir.path());
    for stage in ["ingest", "kappa", "translate", "align", "split"] {
        let out = hsd(&[
            stage,
            "--config",
            dir.path().join("hsd.toml").to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
            "--seed",
            "41",
        ]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    assert_eq!(before, snapshot(dir.path()));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/meta/split.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 41);
    assert_eq!(meta["inputs"].as_object().unwrap().len(), 4);
}

fn http(addr: &str, request: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn annotate_serve_answers_on_an_ephemeral_port() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let config = std::fs::read_to_string(dir.path().join("hsd.toml")).unwrap();
    std::fs::write(dir.path().join("serve.toml"), config.replace("port = 8080", "port = 0")).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_hsd"))
        .arg("annotate-serve")
        .arg("--config")
        .arg(dir.path().join("serve.toml"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();

    let task = http(
        &addr,
        "GET /api/tasks/next?annotator=ann9 HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n",
    );
    assert!(task.starts_with("HTTP/1.1 200"), "{task}");
    assert!(task.contains("\"guidelines\""));

    let body = r#"{"tweet_id":"en-01","annotator_id":"ann9","label":"Hateful"}"#;
    let post = format!(
        "POST /api/labels HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let reply = http(&addr, &post);
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 201"), "{reply}");
    let log = std::fs::read_to_string(dir.path().join("out/annotations/labels.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}
