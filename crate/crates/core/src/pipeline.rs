//! Harness configuration and the file-based pipeline stages:
//! ingest, fetch, evaluate and report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, build_corpus, read_corpus, write_corpus, DatasetDescriptor, Question};
use crate::criteria::{evaluate_one, Criterion, Verdict};
use crate::normalize::{default_rules, RewriteRule};
use crate::report::{dump_false_cases, emit, Report, ReportFormat, TgmReport};
use crate::sparql::PrefixEnv;
use crate::tgm_client::{fetch_all, EndpointConfig, FetchError, FetchMode, TemplateCache};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const STATS_FILE: &str = "corpus_stats.json";
pub const VERDICTS_DIR: &str = "verdicts";
pub const FALSE_CASES_FILE: &str = "false_cases.jsonl";

fn default_concurrency() -> usize {
    4
}

fn default_cache_path() -> PathBuf {
    PathBuf::from("cache/templates.jsonl")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

/// Declarative harness configuration, normally read from TOML. Relative
/// paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default)]
    pub datasets: Vec<DatasetDescriptor>,
    #[serde(default)]
    pub endpoints: Vec<EndpointConfig>,
    /// Appended after the built-in rules (or used alone when
    /// `default_rules` is false).
    #[serde(default)]
    pub rewrite_rules: Vec<RewriteRule>,
    #[serde(default = "default_true")]
    pub default_rules: bool,
    /// Extra or overriding namespace mappings on top of the built-in table.
    #[serde(default)]
    pub prefix_env: BTreeMap<String, String>,
    /// Upper bound on in-flight requests per endpoint.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_cache_path")]
    pub cache_path: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            datasets: Vec::new(),
            endpoints: Vec::new(),
            rewrite_rules: Vec::new(),
            default_rules: true,
            prefix_env: BTreeMap::new(),
            concurrency: default_concurrency(),
            cache_path: default_cache_path(),
            output_dir: default_output_dir(),
        }
    }
}

/// Failures classified by the exit code they map to.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// Missing or malformed input; exit code 2.
    #[error("{0}")]
    Input(String),
    /// Cache or verdict coverage gap; exit code 3.
    #[error("{0}")]
    Coverage(String),
    /// Anything else; exit code 1.
    #[error("{0}")]
    Internal(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Input(_) => 2,
            HarnessError::Coverage(_) => 3,
            HarnessError::Internal(_) => 1,
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> HarnessError {
    HarnessError::Internal(format!("{}: {e}", path.display()))
}

impl HarnessConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let de = toml::Deserializer::parse(text).map_err(|e| HarnessError::Input(format!("config: {e}")))?;
        let mut config: HarnessConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| HarnessError::Input(format!("config: at '{}': {}", e.path(), e.inner())))?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut self.datasets {
            fix(&mut d.path);
        }
        fix(&mut self.cache_path);
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Input(format!("config: {m}")));
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        let mut ids = BTreeSet::new();
        for e in &self.endpoints {
            if !ids.insert(e.id.as_str()) {
                return bad(format!("duplicate endpoint id '{}'", e.id));
            }
            e.validate().map_err(|e| HarnessError::Input(format!("config: {e}")))?;
        }
        let mut slots = BTreeSet::new();
        for d in &self.datasets {
            if !slots.insert((d.family, d.order_index)) {
                return bad(format!(
                    "dataset '{}' reuses order_index {} within its family",
                    d.name, d.order_index
                ));
            }
        }
        for r in &self.rewrite_rules {
            r.validate().map_err(|e| HarnessError::Input(format!("config: {e}")))?;
        }
        self.prefix_env()?;
        Ok(())
    }

    pub fn prefix_env(&self) -> Result<PrefixEnv, HarnessError> {
        let mut extra = PrefixEnv::empty();
        for (k, v) in &self.prefix_env {
            extra
                .insert(k.clone(), v.clone())
                .map_err(|e| HarnessError::Input(format!("config: {e}")))?;
        }
        Ok(PrefixEnv::with_defaults().merged(&extra))
    }

    pub fn rules(&self) -> Vec<RewriteRule> {
        let mut rules = if self.default_rules { default_rules() } else { Vec::new() };
        rules.extend(self.rewrite_rules.iter().cloned());
        rules
    }

    /// Endpoint settings with the global concurrency cap applied.
    pub fn effective_endpoints(&self) -> Vec<EndpointConfig> {
        self.endpoints
            .iter()
            .cloned()
            .map(|mut e| {
                e.max_concurrency = e.max_concurrency.min(self.concurrency);
                e
            })
            .collect()
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.output_dir.join(CORPUS_FILE)
    }

    pub fn verdicts_path(&self, endpoint_id: &str) -> PathBuf {
        self.output_dir.join(VERDICTS_DIR).join(format!("{endpoint_id}.jsonl"))
    }
}

/// Write `contents` through a temporary file so partial output never
/// replaces a good file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let file = fs::File::create(&tmp).map_err(|e| io_error(&tmp, e))?;
        let mut w = BufWriter::new(file);
        write(&mut w).map_err(|e| io_error(&tmp, e))?;
        w.flush().map_err(|e| io_error(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub questions: usize,
    pub stats: corpus::CorpusStats,
    /// Datasets skipped by the exclusion policy, with the reason.
    pub excluded: Vec<(String, String)>,
}

/// Load every dataset, build the corpus and write it with its stats. Any
/// load error aborts before anything is written.
pub fn ingest(config: &HarnessConfig) -> Result<IngestSummary, HarnessError> {
    let env = config.prefix_env()?;
    let mut entries = Vec::new();
    let mut loader_skips = Vec::new();
    let mut errors = Vec::new();
    let mut excluded = Vec::new();
    for d in &config.datasets {
        if let Some(reason) = d.exclusion() {
            tracing::info!(dataset = %d.name, %reason, "dataset excluded");
            excluded.push((d.name.clone(), reason));
            continue;
        }
        match corpus::load(d) {
            Ok(out) => {
                entries.extend(out.entries);
                loader_skips.extend(out.skipped);
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        return Err(HarnessError::Input(errors.join("\n")));
    }
    let (questions, mut stats) = build_corpus(&entries, &config.rules(), &env);
    loader_skips.extend(std::mem::take(&mut stats.skipped));
    stats.skipped = loader_skips;

    write_atomic(&config.corpus_path(), |w| write_corpus(w, &questions))?;
    let stats_path = config.output_dir.join(STATS_FILE);
    write_atomic(&stats_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &stats.to_json())?;
        w.write_all(b"\n")
    })?;
    Ok(IngestSummary {
        questions: questions.len(),
        stats,
        excluded,
    })
}

pub fn load_corpus(config: &HarnessConfig) -> Result<Vec<Question>, HarnessError> {
    let env = config.prefix_env()?;
    read_corpus(&config.corpus_path(), &env).map_err(|e| HarnessError::Input(e.to_string()))
}

fn fetch_error(e: FetchError) -> HarnessError {
    match e {
        FetchError::ReplayMiss { .. } => HarnessError::Coverage(e.to_string()),
        FetchError::InvalidEndpoint { .. } | FetchError::CacheRecord { .. } => HarnessError::Input(e.to_string()),
        _ => HarnessError::Internal(e.to_string()),
    }
}

/// Per-endpoint count of outcomes obtained.
pub async fn fetch(config: &HarnessConfig, mode: FetchMode) -> Result<BTreeMap<String, usize>, HarnessError> {
    let questions = load_corpus(config)?;
    let mut cache = TemplateCache::open(&config.cache_path).map_err(fetch_error)?;
    let mut counts = BTreeMap::new();
    for endpoint in config.effective_endpoints() {
        let outcomes = fetch_all(&endpoint, &questions, &mut cache, mode)
            .await
            .map_err(fetch_error)?;
        counts.insert(endpoint.id.clone(), outcomes.len());
        if mode != FetchMode::Replay {
            cache.save().map_err(fetch_error)?;
        }
    }
    Ok(counts)
}

/// Evaluate every endpoint's cached outcomes; returns verdict file paths.
pub async fn evaluate(config: &HarnessConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let env = config.prefix_env()?;
    let questions = load_corpus(config)?;
    let mut cache = TemplateCache::open(&config.cache_path).map_err(fetch_error)?;
    let mut written = Vec::new();
    for endpoint in config.effective_endpoints() {
        let outcomes = fetch_all(&endpoint, &questions, &mut cache, FetchMode::Replay)
            .await
            .map_err(fetch_error)?;
        let mut verdicts: Vec<Verdict> = questions
            .iter()
            .map(|q| evaluate_one(&q.uid, &q.gold_ast, &outcomes[&q.uid], &env))
            .collect();
        verdicts.sort_by(|a, b| a.question_uid.cmp(&b.question_uid));
        let path = config.verdicts_path(&endpoint.id);
        write_atomic(&path, |w| write_jsonl(w, &verdicts))?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_jsonl<T: Serialize>(w: &mut dyn Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>, HarnessError> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => HarnessError::Coverage(format!("no verdicts at {}; run evaluate first", path.display())),
        _ => io_error(path, e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| HarnessError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRequest {
    pub formats: Vec<ReportFormat>,
    /// Criteria whose first errors are dumped; `None` disables the dump.
    pub dump: Option<BTreeSet<Criterion>>,
}

pub fn build_report(config: &HarnessConfig, questions: &[Question]) -> Result<Report, HarnessError> {
    let mut report = Report::default();
    for endpoint in &config.endpoints {
        let verdicts = read_verdicts(&config.verdicts_path(&endpoint.id))?;
        let known: BTreeSet<&str> = verdicts.iter().map(|v| v.question_uid.as_str()).collect();
        if let Some(missing) = questions.iter().find(|q| !known.contains(q.uid.as_str())) {
            return Err(HarnessError::Coverage(format!(
                "verdicts for '{}' do not cover question {}",
                endpoint.id, missing.uid
            )));
        }
        let tgm = TgmReport::build(&endpoint.id, &verdicts, Some(questions))
            .map_err(|e| HarnessError::Input(format!("{}: {e}", endpoint.id)))?;
        report.tgms.push(tgm);
    }
    Ok(report)
}

/// Emit the requested formats (and the optional false-case dump) into the
/// output directory; returns the files written.
pub fn report(config: &HarnessConfig, request: &ReportRequest) -> Result<Vec<PathBuf>, HarnessError> {
    let env = config.prefix_env()?;
    let questions = load_corpus(config)?;
    let report = build_report(config, &questions)?;
    let mut written = Vec::new();
    for format in &request.formats {
        let path = config.output_dir.join(format!("report.{}", format.extension()));
        write_atomic(&path, |w| emit(&report, *format, w))?;
        written.push(path);
    }
    if let Some(filter) = &request.dump {
        let mut cases = Vec::new();
        for endpoint in &config.endpoints {
            let verdicts = read_verdicts(&config.verdicts_path(&endpoint.id))?;
            for case in dump_false_cases(&verdicts, &questions, filter, &env) {
                cases.push(serde_json::json!({"tgm": endpoint.id, "case": case}));
            }
        }
        let path = config.output_dir.join(FALSE_CASES_FILE);
        write_atomic(&path, |w| write_jsonl(w, &cases))?;
        written.push(path);
    }
    Ok(written)
}

/// Parse a comma-separated criterion list; `all` selects every criterion.
pub fn parse_criteria(list: &str) -> Result<BTreeSet<Criterion>, HarnessError> {
    let mut out = BTreeSet::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item.eq_ignore_ascii_case("all") {
            out.extend(Criterion::ALL);
        } else {
            out.insert(item.parse().map_err(HarnessError::Input)?);
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Input("empty criterion list".into()));
    }
    Ok(out)
}
