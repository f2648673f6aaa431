//! HTTP client for template-generation services with a record/replay cache.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Question;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestShape {
    pub text_field: String,
    pub language_field: String,
}

impl Default for RequestShape {
    fn default() -> Self {
        RequestShape {
            text_field: "string".into(),
            language_field: "language".into(),
        }
    }
}

/// Where the template list and its fields live in a 200 response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseShape {
    /// Dotted path to the template array; empty means the body itself.
    pub templates_path: String,
    pub query_field: String,
    pub slots_field: String,
    pub score_field: String,
}

impl Default for ResponseShape {
    fn default() -> Self {
        ResponseShape {
            templates_path: String::new(),
            query_field: "query".into(),
            slots_field: "slots".into(),
            score_field: "score".into(),
        }
    }
}

fn default_language() -> String {
    "en".into()
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub id: String,
    pub url: String,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default)]
    pub request_shape: RequestShape,
    #[serde(default)]
    pub response_shape: ResponseShape,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

impl EndpointConfig {
    pub fn new(id: impl Into<String>, url: impl Into<String>) -> Self {
        EndpointConfig {
            id: id.into(),
            url: url.into(),
            language: default_language(),
            request_shape: RequestShape::default(),
            response_shape: ResponseShape::default(),
            timeout_ms: default_timeout_ms(),
            max_concurrency: default_concurrency(),
        }
    }

    pub fn validate(&self) -> Result<(), FetchError> {
        let bad = |message: &str| {
            Err(FetchError::InvalidEndpoint {
                id: self.id.clone(),
                message: message.to_owned(),
            })
        };
        if self.id.is_empty() {
            return bad("empty id");
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be positive");
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be at least 1");
        }
        if url::Url::parse(&self.url).is_err() {
            return bad("url is not absolute");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateCandidate {
    pub query_text: String,
    /// Carried verbatim.
    #[serde(default)]
    pub slots: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HttpFailure {
    Status { code: u16 },
    /// `timeout`, `connect`, `request` or `body`.
    Transport { tag: String },
    /// A 200 response whose body does not have the configured shape.
    MalformedBody { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TgmOutcome {
    HttpFailure { failure: HttpFailure },
    Templates { templates: Vec<TemplateCandidate> },
}

impl TgmOutcome {
    pub fn failure(failure: HttpFailure) -> Self {
        TgmOutcome::HttpFailure { failure }
    }

    pub fn templates(templates: Vec<TemplateCandidate>) -> Self {
        TgmOutcome::Templates { templates }
    }

    /// Only the first candidate is evaluated.
    pub fn first_template(&self) -> Option<&TemplateCandidate> {
        match self {
            TgmOutcome::Templates { templates } => templates.first(),
            TgmOutcome::HttpFailure { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub endpoint_id: String,
    pub question_uid: String,
    pub request_digest: String,
    pub outcome: TgmOutcome,
    pub fetched_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchMode {
    /// Query every question live and store the outcomes.
    Record,
    /// Serve every question from the cache; a miss is an error.
    Replay,
    /// Serve cache hits; fetch and store only the misses.
    Passthrough,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("endpoint '{id}': {message}")]
    InvalidEndpoint { id: String, message: String },
    #[error("cannot build HTTP client: {0}")]
    Client(#[source] reqwest::Error),
    #[error("replay cache has no entry for endpoint '{endpoint}' and {} question(s): {}", uids.len(), uids.join(", "))]
    ReplayMiss { endpoint: String, uids: Vec<String> },
    #[error("cache {}: {source}", path.display())]
    CacheIo { path: PathBuf, source: io::Error },
    #[error("cache {}:{line}: {message}", path.display())]
    CacheRecord { path: PathBuf, line: usize, message: String },
}

pub fn request_body(endpoint: &EndpointConfig, nl_text: &str) -> Value {
    let mut body = Map::new();
    body.insert(endpoint.request_shape.text_field.clone(), Value::String(nl_text.to_owned()));
    body.insert(
        endpoint.request_shape.language_field.clone(),
        Value::String(endpoint.language.clone()),
    );
    Value::Object(body)
}

/// Hex SHA-256 of the serialized request body. Object keys serialize in
/// sorted order, so the digest is stable.
pub fn request_digest(body: &Value) -> String {
    let bytes = serde_json::to_vec(body).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Decode a 200 body according to `shape`.
pub fn parse_templates(shape: &ResponseShape, body: &Value) -> Result<Vec<TemplateCandidate>, String> {
    let mut list = body;
    if !shape.templates_path.is_empty() {
        for segment in shape.templates_path.split('.') {
            list = list
                .get(segment)
                .ok_or_else(|| format!("missing field '{segment}' on the way to '{}'", shape.templates_path))?;
        }
    }
    let items = list
        .as_array()
        .ok_or_else(|| "template list is not an array".to_owned())?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let query_text = item
                .get(&shape.query_field)
                .and_then(Value::as_str)
                .ok_or_else(|| format!("template {i}: missing string field '{}'", shape.query_field))?;
            let score = match item.get(&shape.score_field) {
                None | Some(Value::Null) => None,
                Some(v) => Some(
                    v.as_f64()
                        .ok_or_else(|| format!("template {i}: '{}' is not a number", shape.score_field))?,
                ),
            };
            Ok(TemplateCandidate {
                query_text: query_text.to_owned(),
                slots: item.get(&shape.slots_field).cloned().unwrap_or(Value::Null),
                score,
            })
        })
        .collect()
}

pub fn build_client(endpoint: &EndpointConfig) -> Result<reqwest::Client, FetchError> {
    reqwest::Client::builder()
        .timeout(Duration::from_millis(endpoint.timeout_ms))
        .build()
        .map_err(FetchError::Client)
}

fn transport_tag(e: &reqwest::Error) -> &'static str {
    if e.is_timeout() {
        "timeout"
    } else if e.is_connect() {
        "connect"
    } else if e.is_body() || e.is_decode() {
        "body"
    } else {
        "request"
    }
}

/// One POST, no retries. Every failure is returned as a value.
pub async fn fetch_template(client: &reqwest::Client, endpoint: &EndpointConfig, nl_text: &str) -> TgmOutcome {
    let body = request_body(endpoint, nl_text);
    let response = match client.post(&endpoint.url).json(&body).send().await {
        Ok(r) => r,
        Err(e) => {
            tracing::debug!(endpoint = %endpoint.id, error = %e, "transport failure");
            return TgmOutcome::failure(HttpFailure::Transport {
                tag: transport_tag(&e).into(),
            });
        }
    };
    let status = response.status();
    if status != reqwest::StatusCode::OK {
        return TgmOutcome::failure(HttpFailure::Status { code: status.as_u16() });
    }
    let bytes = match response.bytes().await {
        Ok(b) => b,
        Err(e) => {
            return TgmOutcome::failure(HttpFailure::Transport {
                tag: transport_tag(&e).into(),
            })
        }
    };
    let decoded = serde_json::from_slice::<Value>(&bytes)
        .map_err(|e| format!("invalid JSON: {e}"))
        .and_then(|v| parse_templates(&endpoint.response_shape, &v));
    match decoded {
        Ok(templates) => TgmOutcome::templates(templates),
        Err(message) => TgmOutcome::failure(HttpFailure::MalformedBody { message }),
    }
}

type CacheKey = (String, String, String);

/// Outcome cache keyed by `(endpoint_id, question_uid, request_digest)`,
/// stored as JSON lines in key order.
#[derive(Debug, Clone, Default)]
pub struct TemplateCache {
    path: Option<PathBuf>,
    records: BTreeMap<CacheKey, CacheRecord>,
}

impl TemplateCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open a cache file; a missing file yields an empty cache bound to `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, FetchError> {
        let path = path.into();
        let mut cache = TemplateCache {
            path: Some(path.clone()),
            records: BTreeMap::new(),
        };
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(cache),
            Err(source) => return Err(FetchError::CacheIo { path, source }),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| FetchError::CacheIo {
                path: path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord = serde_json::from_str(&line).map_err(|e| FetchError::CacheRecord {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            cache.insert(record);
        }
        Ok(cache)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, record: CacheRecord) {
        let key = (
            record.endpoint_id.clone(),
            record.question_uid.clone(),
            record.request_digest.clone(),
        );
        self.records.insert(key, record);
    }

    pub fn get(&self, endpoint_id: &str, question_uid: &str, digest: &str) -> Option<&CacheRecord> {
        self.records
            .get(&(endpoint_id.to_owned(), question_uid.to_owned(), digest.to_owned()))
    }

    pub fn records(&self) -> impl Iterator<Item = &CacheRecord> {
        self.records.values()
    }

    pub fn write_to(&self, mut out: impl Write) -> io::Result<()> {
        for record in self.records.values() {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Write to the bound path through a temporary file and a rename.
    pub fn save(&self) -> Result<(), FetchError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let io_err = |source| FetchError::CacheIo {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let mut tmp = path.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let file = fs::File::create(&tmp).map_err(io_err)?;
            self.write_to(io::BufWriter::new(file)).map_err(io_err)?;
        }
        fs::rename(&tmp, path).map_err(io_err)
    }
}

/// Fetch outcomes for every question. The map is keyed by uid, so its
/// order never depends on completion order. In-flight requests are bounded by
/// `endpoint.max_concurrency`. The cache is updated but not saved.
pub async fn fetch_all(
    endpoint: &EndpointConfig,
    questions: &[Question],
    cache: &mut TemplateCache,
    mode: FetchMode,
) -> Result<BTreeMap<String, TgmOutcome>, FetchError> {
    endpoint.validate()?;
    let keyed: Vec<(&Question, String)> = questions
        .iter()
        .map(|q| (q, request_digest(&request_body(endpoint, &q.nl_text))))
        .collect();

    if mode == FetchMode::Replay {
        let mut out = BTreeMap::new();
        let mut missing = Vec::new();
        for (q, digest) in &keyed {
            match cache.get(&endpoint.id, &q.uid, digest) {
                Some(record) => {
                    out.insert(q.uid.clone(), record.outcome.clone());
                }
                None => missing.push(q.uid.clone()),
            }
        }
        if !missing.is_empty() {
            missing.sort();
            return Err(FetchError::ReplayMiss {
                endpoint: endpoint.id.clone(),
                uids: missing,
            });
        }
        return Ok(out);
    }

    let mut out = BTreeMap::new();
    let mut pending = Vec::new();
    for (q, digest) in keyed {
        match (mode, cache.get(&endpoint.id, &q.uid, &digest)) {
            (FetchMode::Passthrough, Some(record)) => {
                out.insert(q.uid.clone(), record.outcome.clone());
            }
            _ => pending.push((q, digest)),
        }
    }
    if pending.is_empty() {
        return Ok(out);
    }

    let client = build_client(endpoint)?;
    let fetched: Vec<(&Question, String, TgmOutcome)> = stream::iter(pending)
        .map(|(q, digest)| {
            let client = &client;
            async move {
                let outcome = fetch_template(client, endpoint, &q.nl_text).await;
                (q, digest, outcome)
            }
        })
        .buffer_unordered(endpoint.max_concurrency)
        .collect()
        .await;

    let fetched_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    for (q, digest, outcome) in fetched {
        cache.insert(CacheRecord {
            endpoint_id: endpoint.id.clone(),
            question_uid: q.uid.clone(),
            request_digest: digest,
            outcome: outcome.clone(),
            fetched_at: fetched_at.clone(),
        });
        out.insert(q.uid.clone(), outcome);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn default_request_body() {
        let e = EndpointConfig::new("tgm", "http://localhost:1/");
        assert_eq!(
            request_body(&e, "What is the capital of Japan?"),
            json!({"string": "What is the capital of Japan?", "language": "en"})
        );
    }

    #[test]
    fn digest_is_stable_and_content_addressed() {
        let a = request_digest(&json!({"string": "x", "language": "en"}));
        let b = request_digest(&json!({"language": "en", "string": "x"}));
        let c = request_digest(&json!({"language": "en", "string": "y"}));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn response_shapes() {
        let default = ResponseShape::default();
        let body = json!([{"query": "SELECT ?v1 WHERE { ?v1 ?v2 ?v3 . }", "slots": [{"s": "v2"}], "score": 0.5}]);
        let t = parse_templates(&default, &body).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].score, Some(0.5));
        assert_eq!(t[0].slots, json!([{"s": "v2"}]));

        let nested = ResponseShape {
            templates_path: "result.templates".into(),
            query_field: "sparql".into(),
            ..ResponseShape::default()
        };
        let body = json!({"result": {"templates": [{"sparql": "ASK { ?a ?b ?c }"}]}});
        assert_eq!(parse_templates(&nested, &body).unwrap()[0].score, None);
        assert!(parse_templates(&nested, &json!({"result": {}})).is_err());
        assert!(parse_templates(&default, &json!([{"q": 1}])).is_err());
        assert!(parse_templates(&default, &json!([])).unwrap().is_empty());
    }

    #[test]
    fn endpoint_validation() {
        let mut e = EndpointConfig::new("x", "http://localhost:1/");
        assert!(e.validate().is_ok());
        e.max_concurrency = 0;
        assert!(e.validate().is_err());
        e.max_concurrency = 1;
        e.timeout_ms = 0;
        assert!(e.validate().is_err());
        e.timeout_ms = 1;
        e.url = "not a url".into();
        assert!(e.validate().is_err());
    }

    #[test]
    fn outcome_json_shape() {
        let o = TgmOutcome::failure(HttpFailure::Status { code: 500 });
        assert_eq!(
            serde_json::to_value(&o).unwrap(),
            json!({"kind": "http_failure", "failure": {"type": "status", "code": 500}})
        );
        assert_eq!(o.first_template(), None);
    }

    #[test]
    fn cache_save_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        let mut cache = TemplateCache::open(&path).unwrap();
        assert!(cache.is_empty());
        for uid in ["b", "a"] {
            cache.insert(CacheRecord {
                endpoint_id: "e".into(),
                question_uid: uid.into(),
                request_digest: "d".into(),
                outcome: TgmOutcome::templates(vec![]),
                fetched_at: "2018-01-01T00:00:00Z".into(),
            });
        }
        cache.save().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
        let reopened = TemplateCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        assert!(reopened.get("e", "a", "d").is_some());
    }
}
