//! Benchmark loading, duplicate removal, gold-query normalization and
//! question classification.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::normalize::{normalize_query, RewriteRule};
use crate::ratio::Fraction;
use crate::sparql::{parse_query, range_of, FormKind, PrefixEnv, QueryAst};

/// Dataset name fragments that are never evaluated: pseudo-query hybrid sets,
/// extended-syntax datacube sets and the generated large-scale test set.
pub const EXCLUDED_DATASETS: &[&str] = &["hybrid", "datacube", "largescale-test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Qald,
    #[serde(rename = "lcquad")]
    LcQuad,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Qald => "qald",
            Family::LcQuad => "lcquad",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    QaldJson,
    LcQuadJson,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub family: Family,
    /// Increases with challenge edition; the higher index wins on duplicates.
    pub order_index: u32,
    pub path: PathBuf,
    pub format: DatasetFormat,
    /// Set to false to keep a dataset listed but unused.
    #[serde(default = "default_true")]
    pub used: bool,
}

impl DatasetDescriptor {
    /// Why this dataset may not be loaded, if it is excluded.
    pub fn exclusion(&self) -> Option<String> {
        if !self.used {
            return Some("marked unused".into());
        }
        let lower = self.name.to_ascii_lowercase();
        EXCLUDED_DATASETS
            .iter()
            .find(|frag| lower.contains(*frag))
            .map(|frag| format!("'{frag}' datasets are excluded from evaluation"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub family: Family,
    pub order_index: u32,
    pub question_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntry {
    pub source: DatasetDescriptor,
    pub question_id: String,
    pub language: String,
    pub nl_text: String,
    pub gold_text: String,
}

impl RawEntry {
    pub fn uid(&self) -> String {
        format!("{}/{}/{}", self.source.family, self.source.order_index, self.question_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionClass {
    YesNo,
    Factoid,
    /// `length` is `None` when only OFFSET is given.
    RangeFactoid { length: Option<u64>, start: u64 },
}

impl QuestionClass {
    pub fn label(&self) -> &'static str {
        match self {
            QuestionClass::YesNo => "yes_no",
            QuestionClass::Factoid => "factoid",
            QuestionClass::RangeFactoid { .. } => "range_factoid",
        }
    }

    pub fn is_factoid(&self) -> bool {
        !matches!(self, QuestionClass::YesNo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub uid: String,
    pub nl_text: String,
    pub gold_text: String,
    pub gold_ast: QueryAst,
    pub klass: QuestionClass,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub dataset: String,
    pub question_id: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub const SKIP_NO_QUERY: &str = "no-sparql-query";
pub const SKIP_NO_ENGLISH: &str = "no-english-question";
pub const SKIP_EMPTY_QUESTION: &str = "empty-question";
pub const SKIP_GOLD_PARSE: &str = "gold-parse-failure";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOutput {
    pub entries: Vec<RawEntry>,
    pub skipped: Vec<SkippedEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub total: u64,
    pub yes_no: u64,
    pub factoid: u64,
    pub range_specified: u64,
    /// Entries dropped because a newer or earlier copy of the question was kept.
    pub duplicates: u64,
    pub skipped: Vec<SkippedEntry>,
}

impl CorpusStats {
    pub fn yes_no_ratio(&self) -> Fraction {
        Fraction::new(self.yes_no, self.total)
    }

    pub fn range_ratio_of_factoid(&self) -> Fraction {
        Fraction::new(self.range_specified, self.factoid)
    }

    pub fn skipped_by_reason(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for s in &self.skipped {
            *out.entry(s.reason.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "total": self.total,
            "yes_no": self.yes_no,
            "yes_no_percent": self.yes_no_ratio().percent_or_na(),
            "factoid": self.factoid,
            "range_specified": self.range_specified,
            "range_specified_percent_of_factoid": self.range_ratio_of_factoid().percent_or_na(),
            "duplicates_removed": self.duplicates,
            "skipped_by_reason": self.skipped_by_reason(),
            "skipped": self.skipped,
        })
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset file not found: {}", path.display())]
    NotFound { path: PathBuf },
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: schema mismatch at '{at}': {message}", path.display())]
    Schema { path: PathBuf, at: String, message: String },
    #[error("dataset '{name}' refused: {reason}")]
    Excluded { name: String, reason: String },
    #[error("dataset '{name}' has format {found:?}, expected {expected:?}")]
    WrongFormat {
        name: String,
        found: DatasetFormat,
        expected: DatasetFormat,
    },
    #[error("{}:{line}: bad corpus record: {message}", path.display())]
    BadRecord { path: PathBuf, line: usize, message: String },
}

/// Identifiers are strings in some releases and numbers in others.
fn flexible_id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

#[derive(Deserialize)]
struct QaldFile {
    questions: Vec<QaldQuestion>,
}

#[derive(Deserialize)]
struct QaldQuestion {
    #[serde(deserialize_with = "flexible_id")]
    id: String,
    #[serde(default)]
    question: Vec<QaldString>,
    #[serde(default)]
    query: Option<QaldQuery>,
}

#[derive(Deserialize)]
struct QaldString {
    language: String,
    #[serde(default)]
    string: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum QaldQuery {
    Object {
        #[serde(default)]
        sparql: Option<String>,
    },
    Text(String),
}

impl QaldQuery {
    fn sparql(&self) -> Option<&str> {
        match self {
            QaldQuery::Object { sparql } => sparql.as_deref(),
            QaldQuery::Text(t) => Some(t),
        }
    }
}

#[derive(Deserialize)]
struct LcQuadItem {
    #[serde(rename = "_id", deserialize_with = "flexible_id")]
    id: String,
    #[serde(default)]
    corrected_question: Option<String>,
    #[serde(default)]
    sparql_query: Option<String>,
}

fn read_source(descriptor: &DatasetDescriptor, expected: DatasetFormat) -> Result<String, CorpusError> {
    if let Some(reason) = descriptor.exclusion() {
        return Err(CorpusError::Excluded {
            name: descriptor.name.clone(),
            reason,
        });
    }
    if descriptor.format != expected {
        return Err(CorpusError::WrongFormat {
            name: descriptor.name.clone(),
            found: descriptor.format,
            expected,
        });
    }
    fs::read_to_string(&descriptor.path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => CorpusError::NotFound {
            path: descriptor.path.clone(),
        },
        _ => CorpusError::Io {
            path: descriptor.path.clone(),
            source,
        },
    })
}

fn decode<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, CorpusError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CorpusError::Schema {
        path: path.to_owned(),
        at: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn skip(descriptor: &DatasetDescriptor, id: &str, reason: &str, detail: Option<String>) -> SkippedEntry {
    SkippedEntry {
        dataset: descriptor.name.clone(),
        question_id: id.to_owned(),
        reason: reason.to_owned(),
        detail,
    }
}

pub fn load_qald(descriptor: &DatasetDescriptor) -> Result<LoadOutput, CorpusError> {
    let text = read_source(descriptor, DatasetFormat::QaldJson)?;
    let file: QaldFile = decode(&descriptor.path, &text)?;
    let mut out = LoadOutput::default();
    for q in file.questions {
        let Some(gold) = q.query.as_ref().and_then(QaldQuery::sparql).filter(|s| !s.trim().is_empty()) else {
            out.skipped.push(skip(descriptor, &q.id, SKIP_NO_QUERY, None));
            continue;
        };
        let english: Vec<&str> = q
            .question
            .iter()
            .filter(|s| s.language.eq_ignore_ascii_case("en"))
            .filter_map(|s| s.string.as_deref())
            .filter(|s| !s.trim().is_empty())
            .collect();
        if english.is_empty() {
            out.skipped.push(skip(descriptor, &q.id, SKIP_NO_ENGLISH, None));
            continue;
        }
        let multiple = english.len() > 1;
        for (i, nl) in english.into_iter().enumerate() {
            let question_id = if multiple { format!("{}.{}", q.id, i + 1) } else { q.id.clone() };
            out.entries.push(RawEntry {
                source: descriptor.clone(),
                question_id,
                language: "en".into(),
                nl_text: nl.trim().to_owned(),
                gold_text: gold.to_owned(),
            });
        }
    }
    Ok(out)
}

pub fn load_lcquad(descriptor: &DatasetDescriptor) -> Result<LoadOutput, CorpusError> {
    let text = read_source(descriptor, DatasetFormat::LcQuadJson)?;
    let items: Vec<LcQuadItem> = decode(&descriptor.path, &text)?;
    let mut out = LoadOutput::default();
    for item in items {
        let Some(gold) = item.sparql_query.filter(|s| !s.trim().is_empty()) else {
            out.skipped.push(skip(descriptor, &item.id, SKIP_NO_QUERY, None));
            continue;
        };
        let Some(nl) = item.corrected_question.filter(|s| !s.trim().is_empty()) else {
            out.skipped.push(skip(descriptor, &item.id, SKIP_EMPTY_QUESTION, None));
            continue;
        };
        out.entries.push(RawEntry {
            source: descriptor.clone(),
            question_id: item.id,
            language: "en".into(),
            nl_text: nl.trim().to_owned(),
            gold_text: gold,
        });
    }
    Ok(out)
}

/// Dispatch on the descriptor's format.
pub fn load(descriptor: &DatasetDescriptor) -> Result<LoadOutput, CorpusError> {
    match descriptor.format {
        DatasetFormat::QaldJson => load_qald(descriptor),
        DatasetFormat::LcQuadJson => load_lcquad(descriptor),
    }
}

/// Lowercase, collapse whitespace runs, strip trailing `?` and `.`.
pub fn dedup_key(nl_text: &str) -> String {
    let collapsed = nl_text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c == '?' || c == '.' || c.is_whitespace())
        .to_owned()
}

pub fn classify(gold_ast: &QueryAst) -> QuestionClass {
    match gold_ast.form_kind() {
        FormKind::Ask => QuestionClass::YesNo,
        FormKind::Select => match range_of(gold_ast) {
            None => QuestionClass::Factoid,
            Some(r) => QuestionClass::RangeFactoid {
                length: r.length,
                start: r.start,
            },
        },
    }
}

/// Numeric ids sort numerically, others after them lexically.
fn id_order(id: &str) -> (u64, &str) {
    (id.parse::<u64>().unwrap_or(u64::MAX), id)
}

/// Deduplicate, normalize, parse and classify.
///
/// Entries are sorted by `(family, order_index, question_id)` first, so the
/// result does not depend on input order. Among duplicates within a family the
/// entry with the highest `order_index` is kept; within one dataset the first
/// id wins.
pub fn build_corpus(
    entries: &[RawEntry],
    rules: &[RewriteRule],
    env: &PrefixEnv,
) -> (Vec<Question>, CorpusStats) {
    let mut sorted: Vec<&RawEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        (a.source.family, a.source.order_index, id_order(&a.question_id), &a.source.name).cmp(&(
            b.source.family,
            b.source.order_index,
            id_order(&b.question_id),
            &b.source.name,
        ))
    });

    let mut chosen: HashMap<(Family, String), &RawEntry> = HashMap::new();
    let mut duplicates = 0u64;
    for entry in &sorted {
        let key = (entry.source.family, dedup_key(&entry.nl_text));
        match chosen.get(&key) {
            Some(kept) if kept.source.order_index >= entry.source.order_index => duplicates += 1,
            Some(_) => {
                duplicates += 1;
                chosen.insert(key, entry);
            }
            None => {
                chosen.insert(key, entry);
            }
        }
    }
    let mut survivors: Vec<&RawEntry> = chosen.into_values().collect();
    survivors.sort_by(|a, b| {
        (a.source.family, a.source.order_index, id_order(&a.question_id))
            .cmp(&(b.source.family, b.source.order_index, id_order(&b.question_id)))
    });

    let mut questions = Vec::with_capacity(survivors.len());
    let mut skipped = Vec::new();
    for entry in survivors {
        let normalized = normalize_query(&entry.gold_text, rules);
        match parse_query(&normalized.text, env) {
            Ok(ast) => questions.push(Question {
                uid: entry.uid(),
                nl_text: entry.nl_text.clone(),
                klass: classify(&ast),
                gold_text: normalized.text,
                gold_ast: ast,
                provenance: Provenance {
                    dataset: entry.source.name.clone(),
                    family: entry.source.family,
                    order_index: entry.source.order_index,
                    question_id: entry.question_id.clone(),
                },
            }),
            Err(e) => skipped.push(skip(&entry.source, &entry.question_id, SKIP_GOLD_PARSE, Some(e.to_string()))),
        }
    }
    let mut stats = corpus_stats(&questions);
    stats.duplicates = duplicates;
    stats.skipped = skipped;
    (questions, stats)
}

pub fn corpus_stats(questions: &[Question]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for q in questions {
        stats.total += 1;
        match q.klass {
            QuestionClass::YesNo => stats.yes_no += 1,
            QuestionClass::Factoid => stats.factoid += 1,
            QuestionClass::RangeFactoid { .. } => {
                stats.factoid += 1;
                stats.range_specified += 1;
            }
        }
    }
    stats
}

#[derive(Serialize, Deserialize)]
struct CorpusRecord {
    uid: String,
    nl: String,
    gold: String,
    class: QuestionClass,
    provenance: Provenance,
}

pub fn write_corpus(mut out: impl Write, questions: &[Question]) -> io::Result<()> {
    for q in questions {
        let record = CorpusRecord {
            uid: q.uid.clone(),
            nl: q.nl_text.clone(),
            gold: q.gold_text.clone(),
            class: q.klass,
            provenance: q.provenance.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Read a corpus file back, reparsing every gold query.
pub fn read_corpus(path: &Path, env: &PrefixEnv) -> Result<Vec<Question>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => CorpusError::NotFound { path: path.to_owned() },
        _ => CorpusError::Io {
            path: path.to_owned(),
            source,
        },
    })?;
    let mut questions = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::BadRecord {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let ast = parse_query(&record.gold, env).map_err(|e| bad(format!("gold query: {e}")))?;
        questions.push(Question {
            uid: record.uid,
            nl_text: record.nl,
            gold_text: record.gold,
            klass: classify(&ast),
            gold_ast: ast,
            provenance: record.provenance,
        });
    }
    Ok(questions)
}
