mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

use tgm_eval::mockstub::{serve, BehaviorScript};

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgm-eval"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("TGM_EVAL_CACHE_PATH")
        .env_remove("TGM_EVAL_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn describe(out: &Output) -> String {
    format!(
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn fixture_script() -> BehaviorScript {
    let text = fs::read_to_string(common::fixtures_dir().join("mock-script.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn missing_inputs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&dir.path().join("nope.toml"), &["ingest"]);
    assert_eq!(code(&out), 2, "{}", describe(&out));

    let config = dir.path().join("harness.toml");
    fs::write(
        &config,
        r#"
[[datasets]]
name = "qald-9-train"
family = "qald"
order_index = 9
path = "missing.json"
format = "qald_json"
"#,
    )
    .unwrap();
    let out = run(&config, &["ingest"]);
    assert_eq!(code(&out), 2, "{}", describe(&out));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    fs::write(&config, "concurrency = 0\n").unwrap();
    let out = run(&config, &["ingest"]);
    assert_eq!(code(&out), 2, "{}", describe(&out));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_pipeline_through_the_binary() {
    let mock = serve(fixture_script(), common::localhost()).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("harness.toml");
    fs::write(&config, common::fixture_config_toml(dir.path(), &mock.url())).unwrap();
    let out_dir = dir.path().join("out");

    // Evaluating before anything was fetched is a coverage gap.
    let out = run(&config, &["ingest"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    assert!(String::from_utf8_lossy(&out.stderr).contains("excluded qald-5-hybrid-train"));
    let out = run(&config, &["evaluate"]);
    assert_eq!(code(&out), 3, "{}", describe(&out));
    let out = run(&config, &["fetch", "--mode", "replay"]);
    assert_eq!(code(&out), 3, "{}", describe(&out));

    for args in [
        &["fetch", "--mode", "record"][..],
        &["evaluate"],
        &["report", "--format", "text,json,csv", "--dump-false-cases", "all"],
    ] {
        let out = run(&config, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", describe(&out));
    }
    let requests = mock.gauges().requests();
    assert!(requests > 0);

    for file in ["corpus.jsonl", "corpus_stats.json", "verdicts/mock.jsonl", "report.txt", "report.json", "report.csv", "false_cases.jsonl"] {
        assert!(out_dir.join(file).is_file(), "{file} missing");
    }
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("tgm,criterion,ordinal,severity,count,total\n"), "{csv}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(report.to_string().contains("\"mock\""));

    // Replay reproduces the verdicts byte for byte without network traffic.
    let first = fs::read(out_dir.join("verdicts/mock.jsonl")).unwrap();
    let out = run(&config, &["fetch", "--mode", "replay"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    let out = run(&config, &["evaluate"]);
    assert_eq!(code(&out), 0, "{}", describe(&out));
    assert_eq!(fs::read(out_dir.join("verdicts/mock.jsonl")).unwrap(), first);
    assert_eq!(mock.gauges().requests(), requests);

    let out = run(&config, &["report", "--dump-false-cases", "not-a-criterion"]);
    assert_eq!(code(&out), 2, "{}", describe(&out));
    mock.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serve_mock_subcommand_answers_requests() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_tgm-eval"))
        .arg("--config")
        .arg(dir.path().join("unused.toml"))
        .args(["serve-mock", "--port", &port.to_string(), "--script"])
        .arg(common::fixtures_dir().join("mock-script.json"))
        .spawn()
        .unwrap();
    let client = reqwest::Client::new();
    let url = format!("http://127.0.0.1:{port}/tgm");
    let mut body = None;
    for _ in 0..100 {
        if let Ok(resp) = client
            .post(&url)
            .json(&serde_json::json!({"string": "Is Berlin a city?", "language": "en"}))
            .send()
            .await
        {
            body = Some(resp.json::<serde_json::Value>().await.unwrap());
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let body = body.expect("mock never came up");
    assert_eq!(body[0]["query"], "ASK WHERE { ?x ?p ?y . }");
}
