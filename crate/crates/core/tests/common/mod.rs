#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};

use tgm_eval::corpus::{DatasetDescriptor, DatasetFormat, Family};
use tgm_eval::pipeline::HarnessConfig;
use tgm_eval::tgm_client::EndpointConfig;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_datasets() -> Vec<DatasetDescriptor> {
    let dir = fixtures_dir();
    let qald = |name: &str, order_index| DatasetDescriptor {
        name: name.into(),
        family: Family::Qald,
        order_index,
        path: dir.join("qald").join(format!("{name}.json")),
        format: DatasetFormat::QaldJson,
        used: true,
    };
    vec![
        qald("qald-3-dbpedia-train", 3),
        qald("qald-5-multilingual-train", 5),
        qald("qald-5-hybrid-train", 105),
        DatasetDescriptor {
            name: "lcquad-train".into(),
            family: Family::LcQuad,
            order_index: 1,
            path: dir.join("lcquad/lcquad-train.json"),
            format: DatasetFormat::LcQuadJson,
            used: true,
        },
    ]
}

/// Config over the bundled fixtures with all outputs under `work`.
pub fn fixture_config(work: &Path, endpoints: Vec<EndpointConfig>) -> HarnessConfig {
    HarnessConfig {
        datasets: fixture_datasets(),
        endpoints,
        cache_path: work.join("cache/templates.jsonl"),
        output_dir: work.join("out"),
        ..HarnessConfig::default()
    }
}

/// Same as [`fixture_config`], rendered as TOML for the binary.
pub fn fixture_config_toml(work: &Path, endpoint_url: &str) -> String {
    let config = fixture_config(work, vec![EndpointConfig::new("mock", endpoint_url)]);
    toml::to_string(&config).expect("config serializes")
}

/// Build corpus questions from `(question, gold query)` pairs.
pub fn questions(pairs: &[(&str, &str)]) -> Vec<tgm_eval::corpus::Question> {
    use tgm_eval::corpus::{build_corpus, RawEntry};
    let source = DatasetDescriptor {
        name: "inline".into(),
        family: Family::Qald,
        order_index: 1,
        path: PathBuf::from("inline.json"),
        format: DatasetFormat::QaldJson,
        used: true,
    };
    let entries: Vec<RawEntry> = pairs
        .iter()
        .enumerate()
        .map(|(i, (nl, gold))| RawEntry {
            source: source.clone(),
            question_id: (i + 1).to_string(),
            language: "en".into(),
            nl_text: (*nl).to_owned(),
            gold_text: (*gold).to_owned(),
        })
        .collect();
    let (qs, stats) = build_corpus(
        &entries,
        &tgm_eval::normalize::default_rules(),
        &tgm_eval::sparql::PrefixEnv::with_defaults(),
    );
    assert!(stats.skipped.is_empty(), "{:?}", stats.skipped);
    assert_eq!(qs.len(), pairs.len(), "questions must be distinct");
    qs
}

pub fn localhost() -> std::net::SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}
