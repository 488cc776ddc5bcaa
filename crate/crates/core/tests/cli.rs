//! The `audiopedia` binary: exit codes, outputs and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use audiopedia::adapters::conformance::LocalStub;
use audiopedia::kb::load_kb;
use audiopedia::pipeline::MockOracleAnswerer;
use audiopedia::synth::Equivalence;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> String {
    root()
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audiopedia"))
        .args(args)
        .env_remove("AUDIOPEDIA_ENDPOINTS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(out: &Path, seed: &str) -> Output {
    run(&[
        "synth",
        "--kb",
        &fixture("restaurants.tsv"),
        "--templates",
        &fixture("templates.toml"),
        "--seed",
        seed,
        "--text-proxy",
        "--out",
        p(out),
    ])
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn ingest_counts() {
    let o = run(&["ingest", "--kb", &fixture("restaurants.tsv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("entities 12"));
    assert!(stdout(&o).contains("triplets 60"));
    assert!(stdout(&o).contains("duplicates dropped 0"));
}

#[test]
fn ingest_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "KFC\tserves\tchicken\nbroken row\n").unwrap();
    let o = run(&["ingest", "--kb", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["ingest", "--kb", p(&empty)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    let o = run(&["ingest", "--kb", p(&dir.path().join("missing.tsv"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_2() {
    let o = run(&["eval", "--bogus"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["eval", "--threshold", "3"])), 2);
    assert_eq!(code(&run(&["eval", "--knowledge", "partial=1.5"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "synth",
        "--kb",
        &fixture("restaurants.tsv"),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 2, "seed is required");
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn synth_writes_three_datasets_and_manifest_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    assert_eq!(code(&synth(&a, "11")), 0);
    assert_eq!(code(&synth(&b, "11")), 0);
    assert_eq!(code(&synth(&c, "12")), 0);
    let files = read_dir_bytes(&a);
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["m_aqa.jsonl", "manifest.json", "r_aqa.jsonl", "s_aqa.jsonl"]
    );
    assert_eq!(files, read_dir_bytes(&b));
    assert_ne!(files, read_dir_bytes(&c));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let datasets = manifest["datasets"].as_array().unwrap();
    assert_eq!(datasets.len(), 3);
    for key in ["samples", "answer_type", "unique_answers"] {
        assert!(datasets.iter().all(|d| !d[key].is_null()), "{key}");
    }
}

#[test]
fn run_config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "kb = {:?}\nseed = 5\ntask = \"s\"\nout = {:?}\n",
            fixture("restaurants.tsv"),
            p(&dir.path().join("from_file"))
        ),
    )
    .unwrap();
    let o = run(&["--config", p(&cfg), "synth"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("from_file/s_aqa.jsonl").exists());
    assert!(!dir.path().join("from_file/m_aqa.jsonl").exists());
    let flag_out = dir.path().join("from_flag");
    let o = run(&[
        "--config",
        p(&cfg),
        "synth",
        "--task",
        "r",
        "--out",
        p(&flag_out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(flag_out.join("r_aqa.jsonl").exists());

    std::fs::write(&cfg, "kb = 3\n").unwrap();
    assert_eq!(code(&run(&["--config", p(&cfg), "synth"])), 2);
}

#[test]
fn oracle_eval_hits_ceiling_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&synth(&data, "3")), 0);
    let kb = fixture("restaurants.tsv");
    let eval = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "eval",
            "--kb",
            &kb,
            "--dataset",
            p(&data),
            "--text-proxy",
            "--out",
            p(out),
        ];
        args.extend_from_slice(extra);
        run(&args)
    };
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    let o = eval(&e1, &["--linking", "oracle", "--threshold", "gold"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    let row = table.lines().nth(2).unwrap();
    assert_eq!(row.matches("1.000").count(), 5, "{table}");
    assert_eq!(
        code(&eval(&e2, &["--linking", "oracle", "--threshold", "gold"])),
        0
    );
    assert_eq!(read_dir_bytes(&e1), read_dir_bytes(&e2));

    let off = dir.path().join("off");
    let o = eval(&off, &["--no-knowledge", "--task", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(off.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["tasks"][0]["accuracy"], 0.0);
    assert_eq!(report["report"]["config"]["knowledge_label"], "None");

    let o = run(&["report", p(&e1), p(&off)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn predicted_pipeline_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&synth(&data, "4")), 0);
    let (kb, templates) = (fixture("restaurants.tsv"), fixture("templates.toml"));
    let common = |cmd: &'static str, out: &Path, extra: &[&str]| {
        let mut args = vec![
            cmd,
            "--kb",
            &kb,
            "--dataset",
            p(&data),
            "--text-proxy",
            "--seed",
            "4",
            "--templates",
            &templates,
            "--out",
            p(out),
        ];
        args.extend_from_slice(extra);
        run(&args)
    };
    let link = dir.path().join("link");
    let o = common("link", &link, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("AEL accuracy 1.000"), "{}", stdout(&o));
    assert!(link.join("link_trace.jsonl").exists());

    let ret = dir.path().join("ret");
    let o = common("retrieve", &ret, &["--threshold", "calibrate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ret.join("retrieval_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["calibrated"], true);
    assert!(summary["mean_f1"].as_f64().unwrap() > 0.5);

    let noisy = dir.path().join("noisy");
    let o = common("link", &noisy, &["--noise-rate", "1.0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!stdout(&o).contains("AEL accuracy 1.000"), "{}", stdout(&o));
    assert_eq!(code(&common("link", &noisy, &["--noise-rate", "2"])), 2);
}

#[test]
fn ablate_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&[
        "synth",
        "--kb",
        &fixture("discriminative.tsv"),
        "--templates",
        &fixture("templates.toml"),
        "--seed",
        "1",
        "--task",
        "s",
        "--text-proxy",
        "--out",
        p(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("ab");
    let o = run(&[
        "ablate",
        "--kb",
        &fixture("discriminative.tsv"),
        "--dataset",
        p(&data),
        "--text-proxy",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let labels: Vec<String> = stdout(&o)
        .lines()
        .skip(2)
        .map(|l| l.split("  ").next().unwrap().trim().to_string())
        .collect();
    assert_eq!(
        labels,
        ["Entity-name", "20% knowledge", "Full knowledge", "Oracle"]
    );
    let acc: Vec<f64> = stdout(&o)
        .lines()
        .skip(2)
        .map(|l| l.split_whitespace().rev().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(
        acc[2] >= acc[1] && acc[1] >= acc[0] && acc[2] > acc[0],
        "{acc:?}"
    );
    assert!(out.join("ablation.json").exists());
    let o = run(&["report", p(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("Oracle"));
}

/// Remote answerer and recognizer served over HTTP by the local stub give
/// the same report as the in-process backends.
#[test]
fn remote_backends_match_in_process() {
    let (kb, _) = load_kb(fixture("restaurants.tsv")).unwrap();
    let stub = Arc::new(LocalStub::new(Some(Box::new(MockOracleAnswerer::from_kb(
        &kb,
        Equivalence::ExactObject,
    )))));
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = Vec::new();
            req.as_reader().read_to_end(&mut body).unwrap();
            let (status, text) = stub.handle(req.method().as_str(), req.url(), &body);
            let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status));
        }
    });

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&synth(&data, "9")), 0);
    let endpoints = dir.path().join("endpoints.toml");
    std::fs::write(
        &endpoints,
        format!("[defaults]\nbase_url = {url:?}\n[asr]\n[answer]\n"),
    )
    .unwrap();
    let base = |out: &Path| {
        vec![
            "eval".to_string(),
            "--kb".into(),
            fixture("restaurants.tsv"),
            "--dataset".into(),
            p(&data).into(),
            "--linking".into(),
            "oracle".into(),
            "--threshold".into(),
            "gold".into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let local = dir.path().join("local");
    let mut args = base(&local);
    args.push("--text-proxy".into());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(code(&run(&args)), 0);

    let remote = dir.path().join("remote");
    let mut args = base(&remote);
    args.extend([
        "--answerer".into(),
        "remote".into(),
        "--endpoints".into(),
        p(&endpoints).into(),
    ]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let report = |d: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
        v["label"] = serde_json::Value::Null;
        v
    };
    assert_eq!(report(&local), report(&remote));
    assert_eq!(
        std::fs::read(local.join("answers.jsonl")).unwrap(),
        std::fs::read(remote.join("answers.jsonl")).unwrap()
    );

    std::fs::write(
        &endpoints,
        "[defaults]\nbase_url = \"http://127.0.0.1:9\"\nmax_attempts = 1\n[asr]\n[answer]\n",
    )
    .unwrap();
    let o = run(&args);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
